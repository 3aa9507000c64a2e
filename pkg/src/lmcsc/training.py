"""End-to-end training of the unfolded network.

Gradients are exact reverse-mode derivatives propagated by hand through
the unrolled graph: convolution VJPs from :mod:`lmcsc.conv` plus the
piecewise shrinkage derivatives from :mod:`lmcsc.prox` (flat-side
convention at breakpoints).  A finite-difference oracle doubles every
gradient path in the tests.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, checkpoint_save
from .config import TrainConfig, config_dumps
from .conv import conv2d_kernel_grad, conv2d_vjp
from .errors import ShapeError, TrainingDiverged
from .network import (
    ForwardTrace,
    NetworkParams,
    init_params,
    named_parameters,
    network_forward,
    params_from_named,
)
from .prox import ProxParams, prox_l1l1_map_vjp, soft_threshold_vjp

__all__ = [
    "mse_loss",
    "mse_loss_grad",
    "network_backward",
    "finite_diff_grad",
    "AdamHyper",
    "AdamState",
    "adam_init",
    "adam_step",
    "clamp_thresholds",
    "TrainLog",
    "train",
]


def mse_loss(Yhat: np.ndarray, Ygt: np.ndarray) -> float:
    """Mean of squared elementwise differences."""
    if Yhat.shape != Ygt.shape:
        raise ShapeError(f"shape mismatch: {Yhat.shape} vs {Ygt.shape}")
    return float(np.mean((Yhat - Ygt) ** 2))


def mse_loss_grad(Yhat: np.ndarray, Ygt: np.ndarray) -> np.ndarray:
    """d mse_loss / d Yhat."""
    if Yhat.shape != Ygt.shape:
        raise ShapeError(f"shape mismatch: {Yhat.shape} vs {Ygt.shape}")
    return (2.0 / Yhat.size) * (Yhat - Ygt)


def network_backward(
    trace: ForwardTrace, params: NetworkParams, loss_grad: np.ndarray
) -> NetworkParams:
    """Reverse-mode gradients of a scalar loss w.r.t. every parameter.

    ``loss_grad`` is d loss / d Yhat.  Returns a NetworkParams-shaped
    container of gradients; with tied weights the per-step contributions
    accumulate into the single shared stage.
    """
    if len(trace.U_iterates) != params.lmcsc_steps:
        raise ValueError("trace does not match params: wrong number of coupled stages")
    if not trace.side_info_external and len(trace.Z_iterates) != params.guidance_steps:
        raise ValueError("trace does not match params: wrong number of guidance stages")
    if loss_grad.shape != trace.Yhat.shape:
        raise ShapeError(f"loss_grad shape {loss_grad.shape} != Yhat shape {trace.Yhat.shape}")

    grads = {name: np.zeros_like(arr) for name, arr in named_parameters(params).items()}
    k = params.k
    spatial = trace.Ylr.shape[1:]
    zeros_codes = np.zeros((k,) + spatial, dtype=trace.Ylr.dtype)

    # decoder
    dU, d_dec = conv2d_vjp(trace.U_iterates[-1], params.decoder, loss_grad)
    grads["decoder"] += d_dec

    # coupled encoder, last stage first
    dZ = np.zeros_like(trace.Z)
    n_lm = len(params.lmcsc_stages)
    for t in reversed(range(params.lmcsc_steps)):
        sp = params.lmcsc_stage(t)
        idx = min(t, n_lm - 1)
        U_prev = trace.U_iterates[t - 1] if t > 0 else zeros_codes
        d_pre, d_z, d_mu = prox_l1l1_map_vjp(
            trace.lmcsc_pre[t], trace.Z, ProxParams(sp.mu), dU
        )
        dZ += d_z
        grads[f"lmcsc.{idx}.mu"] += d_mu
        d_mid, d_Q = conv2d_vjp(trace.lmcsc_mid[t], sp.Q, -d_pre)
        grads[f"lmcsc.{idx}.Q"] += d_Q
        dU_through_R, d_R = conv2d_vjp(U_prev, sp.R, d_mid)
        grads[f"lmcsc.{idx}.R"] += d_R
        grads[f"lmcsc.{idx}.P"] += conv2d_kernel_grad(
            trace.Ylr, d_pre, sp.P.shape[2], sp.P.shape[3]
        )
        dU = d_pre + dU_through_R

    # guidance encoder, unless the side information was supplied externally
    if not trace.side_info_external:
        n_gd = len(params.guidance_stages)
        for t in reversed(range(params.guidance_steps)):
            gp = params.guidance_stage(t)
            idx = min(t, n_gd - 1)
            Z_prev = trace.Z_iterates[t - 1] if t > 0 else zeros_codes
            d_pre, d_gamma = soft_threshold_vjp(trace.guidance_pre[t], gp.gamma, dZ)
            grads[f"guidance.{idx}.gamma"] += d_gamma
            d_mid, d_Qg = conv2d_vjp(trace.guidance_mid[t], gp.Qg, -d_pre)
            grads[f"guidance.{idx}.Qg"] += d_Qg
            dZ_through_R, d_Rg = conv2d_vjp(Z_prev, gp.Rg, d_mid)
            grads[f"guidance.{idx}.Rg"] += d_Rg
            grads[f"guidance.{idx}.Pg"] += conv2d_kernel_grad(
                trace.Omega, d_pre, gp.Pg.shape[2], gp.Pg.shape[3]
            )
            dZ = d_pre + dZ_through_R

    return params_from_named(grads, params.lmcsc_steps, params.guidance_steps)


def finite_diff_grad(loss_fn, params: NetworkParams, eps: float) -> NetworkParams:
    """Central finite differences of loss_fn per scalar parameter (test oracle)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    named = named_parameters(params)
    grads = {}
    for name, arr in named.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            plus = loss_fn(params)
            arr[idx] = orig - eps
            minus = loss_fn(params)
            arr[idx] = orig
            g[idx] = (plus - minus) / (2 * eps)
        grads[name] = g
    return params_from_named(grads, params.lmcsc_steps, params.guidance_steps)


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict
    hyper: AdamHyper


def adam_init(params: NetworkParams, hyper: AdamHyper) -> AdamState:
    named = named_parameters(params)
    return AdamState(
        step=0,
        m={k: np.zeros_like(v) for k, v in named.items()},
        v={k: np.zeros_like(v) for k, v in named.items()},
        hyper=hyper,
    )


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    h = state.hyper
    t = state.step + 1
    named_p = named_parameters(params)
    named_g = named_parameters(grads)
    if named_p.keys() != named_g.keys():
        raise ShapeError("gradient structure does not match parameters")
    bc1 = 1.0 - h.beta1**t
    bc2 = 1.0 - h.beta2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in named_p.items():
        g = named_g[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape mismatch for {name}")
        m = h.beta1 * state.m[name] + (1.0 - h.beta1) * g
        v = h.beta2 * state.v[name] + (1.0 - h.beta2) * (g * g)
        new_p[name] = p - h.lr * (m / bc1) / (np.sqrt(v / bc2) + h.eps)
        new_m[name] = m
        new_v[name] = v
    out = params_from_named(new_p, params.lmcsc_steps, params.guidance_steps)
    return out, AdamState(step=t, m=new_m, v=new_v, hyper=h)


def clamp_thresholds(params: NetworkParams) -> NetworkParams:
    """Project mu and gamma back onto >= 0 (their domain) after an update."""
    named = named_parameters(params)
    out = {
        name: np.maximum(arr, 0) if name.endswith((".mu", ".gamma")) else arr
        for name, arr in named.items()
    }
    return params_from_named(out, params.lmcsc_steps, params.guidance_steps)


def copy_params(params: NetworkParams) -> NetworkParams:
    named = {k: v.copy() for k, v in named_parameters(params).items()}
    return params_from_named(named, params.lmcsc_steps, params.guidance_steps)


@dataclass
class TrainRecord:
    step: int
    loss: float
    val_psnr: float | None
    wall: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["step,loss,val_psnr"]
        for r in self.records:
            val = "" if r.val_psnr is None else repr(r.val_psnr)
            lines.append(f"{r.step},{r.loss!r},{val}")
        return "\n".join(lines) + "\n"


def _sample_grads(params, lr_img, guide, hr):
    trace = network_forward(lr_img, guide, params)
    loss = mse_loss(trace.Yhat, hr)
    grads = network_backward(trace, params, mse_loss_grad(trace.Yhat, hr))
    return loss, grads


def _batch_step(params, dataset, batch_idx, pool):
    def one(i):
        return _sample_grads(params, dataset.lr[i], dataset.guidance[i], dataset.hr[i])

    results = list(pool.map(one, batch_idx)) if pool is not None else [one(i) for i in batch_idx]
    total = {name: np.zeros_like(arr) for name, arr in named_parameters(params).items()}
    loss_sum = 0.0
    for loss, grads in results:
        loss_sum += loss
        for name, g in named_parameters(grads).items():
            total[name] += g
    n = len(batch_idx)
    for name in total:
        total[name] /= n
    return loss_sum / n, params_from_named(total, params.lmcsc_steps, params.guidance_steps)


def _validation_psnr(params, dataset, idx) -> float:
    se = 0.0
    count = 0
    for i in idx:
        trace = network_forward(dataset.lr[i], dataset.guidance[i], params)
        se += float(((trace.Yhat - dataset.hr[i]) ** 2).sum())
        count += trace.Yhat.size
    mse = se / count
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def train(cfg: TrainConfig, dataset) -> tuple[Checkpoint, TrainLog]:
    """Seeded mini-batch Adam training; returns the best-validation checkpoint.

    Deterministic for a fixed seed with threads=1 (and, on one machine,
    for any fixed thread count: per-sample gradients are reduced in batch
    order).  Checkpoints and the log CSV are written into cfg.output_dir
    when it is set; validation PSNR is evaluated every ``eval_every``
    steps and training stops early after ``patience`` evaluations without
    improvement.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.net_config(), seed=cfg.seed, dtype=np.float32)
    snapshot = config_dumps(cfg, include_paths=False)
    log = TrainLog()

    out_dir = cfg.output_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    n = len(dataset)
    n_val = min(n - 1, max(1, round(n * cfg.val_fraction))) if n > 1 else 0
    perm = rng.permutation(n)
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if n_val == 0:
        val_idx = train_idx  # degenerate single-image case: validate on train data

    def write_outputs(best_ck, last_ck):
        if out_dir:
            checkpoint_save(os.path.join(out_dir, "best.ckpt"), best_ck)
            checkpoint_save(os.path.join(out_dir, "last.ckpt"), last_ck)
            with open(os.path.join(out_dir, "train_log.csv"), "w", encoding="utf-8") as fh:
                fh.write(log.to_csv())

    if cfg.steps == 0:
        ck = Checkpoint.from_params(snapshot, params, step=0)
        write_outputs(ck, ck)
        return ck, log

    state = adam_init(params, AdamHyper(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps))
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    start = time.perf_counter()
    best_psnr = -math.inf
    best_params = copy_params(params)
    best_step = 0
    evals_since_best = 0

    def next_batches():
        while True:
            order = rng.permutation(train_idx)
            if len(order) <= cfg.batch_size:
                yield order
                continue
            for i in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
                yield order[i : i + cfg.batch_size]

    batches = next_batches()
    try:
        for step in range(1, cfg.steps + 1):
            loss, grads = _batch_step(params, dataset, next(batches), pool)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at step {step}")
            params, state = adam_step(params, grads, state)
            params = clamp_thresholds(params)

            val_psnr = None
            if step % cfg.eval_every == 0 or step == cfg.steps:
                val_psnr = _validation_psnr(params, dataset, val_idx)
                if val_psnr > best_psnr:
                    best_psnr = val_psnr
                    best_params = copy_params(params)
                    best_step = step
                    evals_since_best = 0
                else:
                    evals_since_best += 1
            log.records.append(TrainRecord(step, loss, val_psnr, time.perf_counter() - start))
            if val_psnr is not None and evals_since_best > cfg.patience:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    best_ck = Checkpoint.from_params(snapshot, best_params, step=best_step)
    last_ck = Checkpoint.from_params(snapshot, params, step=log.records[-1].step, optim=state)
    write_outputs(best_ck, last_ck)
    return best_ck, log
