"""Command-line entry point.

Subcommands: train, eval, sr, solve, gradcheck, prox-table.  All runs are
seeded; --threads 1 (the default) is the bit-deterministic reference
mode.  Usage errors exit 2 (argparse), operational failures exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .checkpoint import checkpoint_load
from .config import TrainConfig, config_load
from .data import (
    bicubic_resize,
    build_patch_dataset,
    load_image,
    load_manifest,
    load_pair,
    rgb_to_luminance,
    save_image_pgm,
)
from .gradcheck import tiny_gradcheck
from .metrics import evaluate_pairs, metrics_csv
from .network import network_forward
from .prox import ProxParams, prox_l1l1_oracle, prox_l1l1_scalar
from .solver import CSCProblem, generate_synthetic_coupled, solve_coupled_csc
from .training import train


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _model_fn(params):
    def fn(lr_up, guidance):
        trace = network_forward(
            lr_up.astype(np.float32), guidance.astype(np.float32), params
        )
        return trace.Yhat.astype(np.float64)

    return fn


def _as_luminance(img):
    return rgb_to_luminance(img) if img.shape[0] == 3 else img


def cmd_train(args) -> int:
    cfg = config_load(args.config) if args.config else TrainConfig()
    overrides = {}
    for name in ("steps", "seed", "threads", "manifest_path", "output_dir"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    if not cfg.manifest_path:
        raise ValueError("train needs a manifest (config manifest_path or --manifest-path)")
    if not cfg.output_dir:
        raise ValueError("train needs an output directory (config output_dir or --output-dir)")
    entries = load_manifest(cfg.manifest_path)
    dataset = build_patch_dataset(
        entries, cfg.scale, cfg.patch_size, cfg.patches_total, cfg.seed
    )
    ck, log = train(cfg, dataset)
    last = log.records[-1] if log.records else None
    print(f"trained {last.step if last else 0} steps; "
          f"best checkpoint at step {ck.step} -> {cfg.output_dir}")
    return 0


def cmd_eval(args) -> int:
    ck = checkpoint_load(args.checkpoint)
    cfg = ck.train_config()
    entries = load_manifest(args.manifest)
    pairs = [load_pair(e, cfg.scale) for e in entries if e.split == "test"]
    if not pairs:
        raise ValueError(f"{args.manifest}: no test entries")
    method = (lambda lr, g: lr) if args.method == "bicubic" else _model_fn(ck.network_params())
    _write_text(args.output, metrics_csv(evaluate_pairs(method, pairs)))
    return 0


def cmd_sr(args) -> int:
    ck = checkpoint_load(args.checkpoint)
    params = ck.network_params()
    target = _as_luminance(load_image(args.target))
    guidance = _as_luminance(load_image(args.guidance))
    if target.shape != guidance.shape:
        target = bicubic_resize(target, guidance.shape[1:])
    result = _model_fn(params)(target, guidance)
    save_image_pgm(np.clip(result, 0.0, 1.0), args.output)
    return 0


def cmd_solve(args) -> int:
    if args.image:
        Y = _as_luminance(load_image(args.image))
        rng = np.random.default_rng(args.seed)
        D = rng.standard_normal((1, args.k, args.kernel_size, args.kernel_size))
        for i in range(args.k):
            D[0, i] /= np.linalg.norm(D[0, i])
        Z = np.zeros((args.k,) + Y.shape[1:])
    else:
        Y, _, _, Zstar, D, _ = generate_synthetic_coupled(
            args.k,
            (args.size, args.size),
            args.density,
            args.overlap,
            args.seed,
            kernel_size=args.kernel_size,
        )
        Z = np.zeros_like(Zstar) if args.no_side_info else Zstar
    trace = solve_coupled_csc(CSCProblem(Y=Y, D=D, Z=Z, lam=args.lam), args.iters)
    lines = ["iter,objective"]
    lines += [f"{i},{obj!r}" for i, obj in enumerate(trace.objectives)]
    _write_text(args.output, "\n".join(lines) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    ok = True
    for i in range(args.seeds):
        result = tiny_gradcheck(args.seed + i)
        status = "PASS" if result.passed else "FAIL"
        print(
            f"seed {args.seed + i}: max rel err {result.max_rel_err:.3e} "
            f"(margin {result.margin:.2e}, attempts {result.attempts}) {status}"
        )
        ok = ok and result.passed
    return 0 if ok else 1


def cmd_prox_table(args) -> int:
    p = ProxParams(mu=args.mu)
    vs = np.linspace(args.vmin, args.vmax, args.num)
    lines = ["v,s,mu,prox,oracle"]
    for v in vs:
        closed = prox_l1l1_scalar(float(v), args.s, p)
        oracle = prox_l1l1_oracle(float(v), args.s, p)
        lines.append(f"{float(v)!r},{args.s!r},{args.mu!r},{closed!r},{oracle!r}")
    _write_text(args.output, "\n".join(lines) + "\n")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmcsc",
        description="Guided image super-resolution via learned multimodal "
        "convolutional sparse coding",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file and manifest")
    p.add_argument("--config", help="YAML config file (defaults apply when omitted)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--manifest-path", dest="manifest_path", default=None)
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the manifest test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", choices=("model", "bicubic"), default="model")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sr", help="super-resolve one (target, guidance) pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", required=True, help="low-resolution target (PGM/PPM)")
    p.add_argument("--guidance", required=True, help="guidance image (PGM/PPM)")
    p.add_argument("--output", required=True, help="output PGM path")
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("solve", help="run the iterative solver, dump objective CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--kernel-size", dest="kernel_size", type=int, default=5)
    p.add_argument("--density", type=float, default=0.05)
    p.add_argument("--overlap", type=float, default=0.9)
    p.add_argument("--lam", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--no-side-info", action="store_true")
    p.add_argument("--image", help="solve codes of this image instead of a synthetic one")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=10, help="number of seeds to check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("prox-table", help="dump shrinkage samples vs the oracle as CSV")
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--s", type=float, default=2.0)
    p.add_argument("--vmin", type=float, default=-4.0)
    p.add_argument("--vmax", type=float, default=4.0)
    p.add_argument("--num", type=int, default=81)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_prox_table)

    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
