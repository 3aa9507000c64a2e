"""The unfolded multimodal encoder/decoder network.

Three subnetworks, all same-padded convolutions so every intermediate
tensor keeps the input's spatial size:

* a guidance encoder: unrolled soft-threshold (LISTA-style) stages that
  turn the guidance image into sparse codes Z;
* the coupled encoder: unrolled side-information-shrinkage stages
  ``U <- prox(U - Q*(R*U) + P*Y ; Z, mu)`` computing the target codes,
  with Z fed to every stage;
* a decoder in the form of a convolutional dictionary, mapping the final
  codes back to an image.

Per-stage banks Q (1->k), R (k->1), P (1->k) and the thresholds mu/gamma
are the learnable parameters.  ``params_from_solver`` builds the exact
parameterization under which the coupled encoder reproduces the
non-learned solver iterate-for-iterate; that equivalence is the central
correctness test for this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conv import adjoint_bank, conv2d_same, dict_synthesize
from .errors import ConfigError, ShapeError
from .prox import ProxParams, prox_l1l1_map, soft_threshold

__all__ = [
    "NetConfig",
    "StageParams",
    "GuidanceStageParams",
    "NetworkParams",
    "ForwardTrace",
    "lista_stage_forward",
    "lmcsc_stage_forward",
    "network_forward",
    "init_params",
    "params_from_solver",
    "named_parameters",
    "params_from_named",
]


@dataclass(frozen=True)
class NetConfig:
    """Architecture and initialization hyperparameters."""

    k: int = 85
    kernel_size: int = 5
    lmcsc_stages: int = 3
    guidance_stages: int = 3
    tied_weights: bool = False
    weight_std: float = 0.01
    mu_init: float = 0.2
    gamma_init: float = 0.2

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.lmcsc_stages < 1 or self.guidance_stages < 1:
            raise ConfigError("stage counts must be >= 1")
        if self.weight_std <= 0:
            raise ConfigError("weight_std must be positive")
        if self.mu_init < 0 or self.gamma_init < 0:
            raise ConfigError("thresholds must be nonnegative")


@dataclass
class StageParams:
    """One coupled-encoder stage: banks Q (1->k), R (k->1), P (1->k), threshold mu."""

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    mu: np.ndarray  # 0-d array, kept in the banks' dtype


@dataclass
class GuidanceStageParams:
    """One guidance-encoder stage; gamma is the soft threshold."""

    Qg: np.ndarray
    Rg: np.ndarray
    Pg: np.ndarray
    gamma: np.ndarray


@dataclass
class NetworkParams:
    """Full parameter set.

    With tied weights the stage lists hold a single entry reused at every
    step; ``lmcsc_steps`` / ``guidance_steps`` carry the unroll depth.
    """

    lmcsc_stages: list
    guidance_stages: list
    decoder: np.ndarray
    lmcsc_steps: int | None = None
    guidance_steps: int | None = None

    def __post_init__(self):
        if self.lmcsc_steps is None:
            self.lmcsc_steps = len(self.lmcsc_stages)
        if self.guidance_steps is None:
            self.guidance_steps = len(self.guidance_stages)
        if self.lmcsc_steps < 1 or not self.lmcsc_stages:
            raise ConfigError("need at least one coupled-encoder stage")
        if len(self.lmcsc_stages) not in (1, self.lmcsc_steps):
            raise ConfigError("stage list length must be 1 (tied) or equal to the depth")
        if self.guidance_stages and len(self.guidance_stages) not in (1, self.guidance_steps):
            raise ConfigError("stage list length must be 1 (tied) or equal to the depth")

    def lmcsc_stage(self, t: int) -> StageParams:
        return self.lmcsc_stages[min(t, len(self.lmcsc_stages) - 1)]

    def guidance_stage(self, t: int) -> GuidanceStageParams:
        return self.guidance_stages[min(t, len(self.guidance_stages) - 1)]

    @property
    def k(self) -> int:
        return self.decoder.shape[1]


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, plus the reconstruction."""

    Ylr: np.ndarray
    Omega: np.ndarray | None
    Z_iterates: list = field(default_factory=list)
    guidance_pre: list = field(default_factory=list)
    guidance_mid: list = field(default_factory=list)
    U_iterates: list = field(default_factory=list)
    lmcsc_pre: list = field(default_factory=list)
    lmcsc_mid: list = field(default_factory=list)
    Z: np.ndarray | None = None
    side_info_external: bool = False
    Yhat: np.ndarray | None = None


def lista_stage_forward(Z, Omega, gp: GuidanceStageParams):
    """soft_threshold(Z - Qg*(Rg*Z) + Pg*Omega, gamma)."""
    pre = Z - conv2d_same(conv2d_same(Z, gp.Rg), gp.Qg) + conv2d_same(Omega, gp.Pg)
    return soft_threshold(pre, gp.gamma)


def lmcsc_stage_forward(U, Y, Z, sp: StageParams):
    """prox(U - Q*(R*U) + P*Y ; Z, mu)."""
    pre = U - conv2d_same(conv2d_same(U, sp.R), sp.Q) + conv2d_same(Y, sp.P)
    return prox_l1l1_map(pre, Z, ProxParams(sp.mu))


def network_forward(
    Ylr: np.ndarray,
    Omega: np.ndarray | None,
    params: NetworkParams,
    side_info: np.ndarray | None = None,
) -> ForwardTrace:
    """Full forward pass.

    Runs the guidance encoder from Z^0 = 0, then the coupled encoder from
    U^0 = 0 with the final Z fed to every stage, then the decoder.  When
    ``side_info`` is given the guidance branch is bypassed and the array
    is used as Z directly (solver-equivalence mode).
    """
    if Ylr.ndim != 3 or Ylr.shape[0] != 1:
        raise ShapeError(f"Ylr must be (1, H, W), got {Ylr.shape}")
    trace = ForwardTrace(Ylr=Ylr, Omega=Omega)
    k = params.k
    spatial = Ylr.shape[1:]

    if side_info is not None:
        if side_info.shape != (k,) + spatial:
            raise ShapeError(f"side_info shape {side_info.shape} != {(k,) + spatial}")
        Z = side_info
        trace.side_info_external = True
    else:
        if Omega is None:
            raise ShapeError("network_forward needs Omega unless side_info is supplied")
        if Omega.shape != Ylr.shape:
            raise ShapeError(f"Omega shape {Omega.shape} != Ylr shape {Ylr.shape}")
        if not params.guidance_stages:
            raise ConfigError("params carry no guidance stages and no side_info was given")
        Z = np.zeros((k,) + spatial, dtype=Ylr.dtype)
        for t in range(params.guidance_steps):
            gp = params.guidance_stage(t)
            mid = conv2d_same(Z, gp.Rg)
            pre = Z - conv2d_same(mid, gp.Qg) + conv2d_same(Omega, gp.Pg)
            Z = soft_threshold(pre, gp.gamma)
            trace.guidance_mid.append(mid)
            trace.guidance_pre.append(pre)
            trace.Z_iterates.append(Z)
    trace.Z = Z

    U = np.zeros((k,) + spatial, dtype=Ylr.dtype)
    for t in range(params.lmcsc_steps):
        sp = params.lmcsc_stage(t)
        mid = conv2d_same(U, sp.R)
        pre = U - conv2d_same(mid, sp.Q) + conv2d_same(Ylr, sp.P)
        U = prox_l1l1_map(pre, Z, ProxParams(sp.mu))
        trace.lmcsc_mid.append(mid)
        trace.lmcsc_pre.append(pre)
        trace.U_iterates.append(U)

    trace.Yhat = dict_synthesize(U, params.decoder)
    return trace


def init_params(cfg: NetConfig, seed: int, dtype=np.float32) -> NetworkParams:
    """Draw all banks from N(0, weight_std^2), thresholds at their init values."""
    rng = np.random.default_rng(seed)
    k, p = cfg.k, cfg.kernel_size

    def bank(out_c, in_c):
        return rng.normal(0.0, cfg.weight_std, size=(out_c, in_c, p, p)).astype(dtype)

    n_lm = 1 if cfg.tied_weights else cfg.lmcsc_stages
    n_gd = 1 if cfg.tied_weights else cfg.guidance_stages
    lmcsc = [
        StageParams(Q=bank(k, 1), R=bank(1, k), P=bank(k, 1), mu=np.asarray(cfg.mu_init, dtype))
        for _ in range(n_lm)
    ]
    guidance = [
        GuidanceStageParams(
            Qg=bank(k, 1), Rg=bank(1, k), Pg=bank(k, 1), gamma=np.asarray(cfg.gamma_init, dtype)
        )
        for _ in range(n_gd)
    ]
    decoder = bank(1, k)
    return NetworkParams(
        lmcsc_stages=lmcsc,
        guidance_stages=guidance,
        decoder=decoder,
        lmcsc_steps=cfg.lmcsc_stages,
        guidance_steps=cfg.guidance_stages,
    )


def params_from_solver(D: np.ndarray, lam: float, L: float, T_u: int) -> NetworkParams:
    """Stage parameters under which the coupled encoder replays the solver.

    Every stage gets R = D, Q = P = adjoint(D)/L and mu = lam/L; the
    decoder is D itself.  No guidance stages are built: the side
    information must be passed to :func:`network_forward` directly.  Used
    by the solver-equivalence tests.
    """
    if D.ndim != 4 or D.shape[0] != 1:
        raise ShapeError(f"D must be a k->1 bank, got {D.shape}")
    if not L > 0:
        raise ValueError("L must be positive")
    adj = adjoint_bank(D)
    stages = [
        StageParams(Q=adj / L, R=D.copy(), P=adj / L, mu=np.asarray(lam / L, dtype=D.dtype))
        for _ in range(T_u)
    ]
    return NetworkParams(
        lmcsc_stages=stages,
        guidance_stages=[],
        decoder=D.copy(),
        lmcsc_steps=T_u,
        guidance_steps=0,
    )


def named_parameters(params: NetworkParams) -> dict[str, np.ndarray]:
    """Flat name -> array view of all learnables, in a fixed order."""
    out: dict[str, np.ndarray] = {}
    for i, sp in enumerate(params.lmcsc_stages):
        out[f"lmcsc.{i}.Q"] = sp.Q
        out[f"lmcsc.{i}.R"] = sp.R
        out[f"lmcsc.{i}.P"] = sp.P
        out[f"lmcsc.{i}.mu"] = np.asarray(sp.mu)
    for i, gp in enumerate(params.guidance_stages):
        out[f"guidance.{i}.Qg"] = gp.Qg
        out[f"guidance.{i}.Rg"] = gp.Rg
        out[f"guidance.{i}.Pg"] = gp.Pg
        out[f"guidance.{i}.gamma"] = np.asarray(gp.gamma)
    out["decoder"] = params.decoder
    return out


def params_from_named(
    named: dict[str, np.ndarray],
    lmcsc_steps: int | None = None,
    guidance_steps: int | None = None,
) -> NetworkParams:
    """Rebuild a NetworkParams from the flat mapping of :func:`named_parameters`."""
    n_lm = len({k for k in named if k.startswith("lmcsc.")}) // 4
    n_gd = len({k for k in named if k.startswith("guidance.")}) // 4
    lmcsc = [
        StageParams(
            Q=named[f"lmcsc.{i}.Q"],
            R=named[f"lmcsc.{i}.R"],
            P=named[f"lmcsc.{i}.P"],
            mu=np.asarray(named[f"lmcsc.{i}.mu"]),
        )
        for i in range(n_lm)
    ]
    guidance = [
        GuidanceStageParams(
            Qg=named[f"guidance.{i}.Qg"],
            Rg=named[f"guidance.{i}.Rg"],
            Pg=named[f"guidance.{i}.Pg"],
            gamma=np.asarray(named[f"guidance.{i}.gamma"]),
        )
        for i in range(n_gd)
    ]
    return NetworkParams(
        lmcsc_stages=lmcsc,
        guidance_stages=guidance,
        decoder=named["decoder"],
        lmcsc_steps=lmcsc_steps,
        guidance_steps=guidance_steps,
    )
