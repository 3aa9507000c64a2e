"""Iterative coupled convolutional sparse coding.

Solves

    min_U 1/2 ||Y - sum_i D_i * U_i||^2 + lam (sum_i ||U_i||_1
                                               + sum_i ||U_i - Z_i||_1)

by proximal gradient steps: the data-term gradient is computed with the
synthesis dictionary and its exact adjoint, the step size is 1/L with L
estimated by power iteration, and the proximal step is the elementwise
side-information shrinkage from :mod:`lmcsc.prox` with threshold lam/L.
This module is the non-learned reference that the unfolded network is
checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conv import conv2d_adjoint, dict_synthesize
from .errors import DegenerateOperatorError, ShapeError
from .prox import ProxParams, prox_l1l1_map

__all__ = [
    "CSCProblem",
    "SolveTrace",
    "objective_l1l1",
    "estimate_lipschitz",
    "solve_coupled_csc",
    "solve_csc_ista",
    "generate_synthetic_coupled",
]

# Safety factor applied to the power-iteration estimate so that 1/L is a
# guaranteed descent step even when the estimate is slightly low.
L_SAFETY = 1.01


@dataclass
class CSCProblem:
    """Target image, synthesis dictionary, side-information codes and weights.

    ``Y`` is (1, H, W), ``D`` a k->1 bank, ``Z`` the (k, H, W) guidance
    codes (all-zero for the unguided problem).  ``L`` may be preset; when
    None it is estimated at solve time.
    """

    Y: np.ndarray
    D: np.ndarray
    Z: np.ndarray
    lam: float
    L: float | None = None

    def __post_init__(self):
        if self.Y.ndim != 3 or self.Y.shape[0] != 1:
            raise ShapeError(f"Y must be (1, H, W), got {self.Y.shape}")
        k = self.D.shape[1]
        expected = (k,) + self.Y.shape[1:]
        if self.Z.shape != expected:
            raise ShapeError(f"Z must have shape {expected}, got {self.Z.shape}")
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.L is not None and not self.L > 0:
            raise ValueError(f"L must be positive when set, got {self.L}")


@dataclass
class SolveTrace:
    """Iterate history; index 0 is the starting point."""

    iterates: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    L_used: float = 0.0


def objective_l1l1(prob: CSCProblem, U: np.ndarray) -> float:
    """Evaluate the coupled objective at U."""
    residual = prob.Y - dict_synthesize(U, prob.D)
    data = 0.5 * float((residual**2).sum())
    reg = float(np.abs(U).sum() + np.abs(U - prob.Z).sum())
    return data + prob.lam * reg


def estimate_lipschitz(D, spatial, iters: int = 500, tol: float = 1e-6, seed: int = 0) -> float:
    """Largest eigenvalue of U -> adj(D, syn(D, U)) by power iteration.

    Returns the Rayleigh-quotient estimate once successive estimates agree
    to ``tol`` (or ``iters`` is exhausted).  Deterministic for a fixed seed.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not np.any(D):
        raise DegenerateOperatorError("dictionary is identically zero")
    k = D.shape[1]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((k,) + tuple(spatial))
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iters):
        y = conv2d_adjoint(dict_synthesize(x, D), D)
        new_estimate = float((x * y).sum())
        norm = np.linalg.norm(y)
        if norm == 0:
            raise DegenerateOperatorError("operator annihilated the probe vector")
        x = y / norm
        if abs(new_estimate - estimate) <= tol:
            return new_estimate
        estimate = new_estimate
    return estimate


def solve_coupled_csc(prob: CSCProblem, T: int, U0: np.ndarray | None = None) -> SolveTrace:
    """Run T proximal iterations

        U <- prox(U - adj(syn(U))/L + adj(Y)/L ; Z, mu=lam/L)

    recording the objective at every iterate (U^0 included).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    L = prob.L if prob.L is not None else L_SAFETY * estimate_lipschitz(
        prob.D, prob.Y.shape[1:], tol=1e-6
    )
    k = prob.D.shape[1]
    U = np.zeros((k,) + prob.Y.shape[1:], dtype=prob.Y.dtype) if U0 is None else U0.copy()
    p = ProxParams(mu=prob.lam / L)
    DtY = conv2d_adjoint(prob.Y, prob.D) / L

    trace = SolveTrace(L_used=L)
    trace.iterates.append(U.copy())
    trace.objectives.append(objective_l1l1(prob, U))
    for _ in range(T):
        grad_step = U - conv2d_adjoint(dict_synthesize(U, prob.D), prob.D) / L + DtY
        U = prox_l1l1_map(grad_step, prob.Z, p)
        trace.iterates.append(U.copy())
        trace.objectives.append(objective_l1l1(prob, U))
    return trace


def solve_csc_ista(Omega: np.ndarray, B: np.ndarray, lam: float, T: int) -> np.ndarray:
    """Plain ISTA codes of an image w.r.t. bank B, shrinkage soft(., lam/L).

    Implemented as the coupled solve with Z = 0 and weight lam/2: the
    side-information shrinkage with zero side information is exactly the
    soft threshold at twice its mu, so this shares the coupled code path
    iterate-for-iterate.
    """
    k = B.shape[1]
    Z0 = np.zeros((k,) + Omega.shape[1:], dtype=Omega.dtype)
    prob = CSCProblem(Y=Omega, D=B, Z=Z0, lam=lam / 2)
    return solve_coupled_csc(prob, T).iterates[-1]


def generate_synthetic_coupled(
    k: int,
    spatial: tuple[int, int],
    density: float,
    overlap: float,
    seed: int,
    kernel_size: int = 5,
):
    """Draw a coupled instance with known ground truth.

    Unit-norm random dictionaries D, B; sparse codes Zstar at the given
    density; Ustar shares an ``overlap`` fraction of Zstar's support with
    matching values there, plus fresh support of its own so the two codes
    have comparable density.  Returns (Y, Omega, Ustar, Zstar, D, B) with
    Y = syn(D, Ustar) and Omega = syn(B, Zstar).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 < density < 1:
        raise ValueError(f"density must lie in (0,1), got {density}")
    if not 0 <= overlap <= 1:
        raise ValueError(f"overlap must lie in [0,1], got {overlap}")
    rng = np.random.default_rng(seed)

    def unit_bank():
        bank = rng.standard_normal((1, k, kernel_size, kernel_size))
        for i in range(k):
            bank[0, i] /= np.linalg.norm(bank[0, i])
        return bank

    D = unit_bank()
    B = unit_bank()
    shape = (k,) + tuple(spatial)
    mask_z = rng.random(shape) < density
    vals_z = rng.standard_normal(shape)
    Zstar = np.where(mask_z, vals_z, 0.0)
    shared = mask_z & (rng.random(shape) < overlap)
    extra = ~mask_z & (rng.random(shape) < density * (1 - overlap))
    vals_u = rng.standard_normal(shape)
    Ustar = np.where(shared, Zstar, 0.0) + np.where(extra, vals_u, 0.0)
    Y = dict_synthesize(Ustar, D)
    Omega = dict_synthesize(Zstar, B)
    return Y, Omega, Ustar, Zstar, D, B
