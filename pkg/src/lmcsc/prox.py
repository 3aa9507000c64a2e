"""Shrinkage operators with side information.

The coupled sparse-coding iterations shrink each coefficient with the
minimizer of

    f(x) = 1/2 (x - v)^2 + mu |x| + mu |x - s|

where ``s`` is the corresponding side-information coefficient.  The
minimizer is piecewise linear in ``v`` with five regions (two flat, three
unit-slope); the closed form below is derived from the subgradient
optimality condition and is cross-checked against a candidate-enumeration
oracle in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = [
    "ProxParams",
    "prox_l1l1_scalar",
    "prox_l1l1_oracle",
    "prox_l1l1_map",
    "prox_l1l1_vjp",
    "soft_threshold",
]


@dataclass(frozen=True)
class ProxParams:
    """Threshold of the side-information shrinkage; ``mu = 0`` is the identity."""

    mu: float

    def __post_init__(self):
        if not np.isfinite(self.mu) or self.mu < 0:
            raise ValueError(f"mu must be finite and >= 0, got {self.mu}")


def _prox_values(v, s, mu):
    """Vectorized closed form; ``v``/``s`` broadcastable arrays, ``mu`` scalar."""
    w = np.where(s < 0, -1.0, 1.0).astype(v.dtype, copy=False)
    vv = w * v
    ss = w * s  # == |s|
    two_mu = 2 * mu
    out = np.select(
        [vv < -two_mu, (vv >= -two_mu) & (vv <= 0), (vv >= ss) & (vv <= ss + two_mu), vv > ss + two_mu],
        [vv + two_mu, np.zeros_like(vv), ss, vv - two_mu],
        default=vv,
    )
    return w * out


def _prox_partials(v, s, mu):
    """Piecewise partials (d/dv, d/ds, d/dmu) of the closed form.

    Region boundaries take the derivative of the adjacent flat region, the
    same convention as clipping activations.
    """
    w = np.where(s < 0, -1.0, 1.0).astype(v.dtype, copy=False)
    vv = w * v
    ss = w * s
    two_mu = 2 * mu
    m1 = vv < -two_mu
    m2 = (vv >= -two_mu) & (vv <= 0)
    m4 = ~m2 & (vv >= ss) & (vv <= ss + two_mu)
    m5 = vv > ss + two_mu
    one = np.ones_like(vv)
    zero = np.zeros_like(vv)
    d_v = np.select([m1, m2, m4, m5], [one, zero, zero, one], default=one)
    d_s = np.where(m4, one, zero)
    d_mu = w * np.select([m1, m5], [2 * one, -2 * one], default=zero)
    return d_v, d_s, d_mu


def _check_scalar_inputs(v, s, p):
    if not (math.isfinite(v) and math.isfinite(s)):
        raise ValueError(f"non-finite prox input v={v}, s={s}")
    return float(p.mu)


def prox_l1l1_scalar(v: float, s: float, p: ProxParams) -> float:
    """Closed-form minimizer of 1/2 (x-v)^2 + mu|x| + mu|x-s|.

    For s >= 0:  v+2mu on v < -2mu;  0 on [-2mu, 0];  v on (0, s);
    s on [s, s+2mu];  v-2mu beyond.  Negative s mirrors through the origin.
    """
    mu = _check_scalar_inputs(v, s, p)
    return float(_prox_values(np.asarray(v, dtype=float), np.asarray(s, dtype=float), mu))


def prox_l1l1_oracle(v: float, s: float, p: ProxParams) -> float:
    """Candidate-enumeration oracle for :func:`prox_l1l1_scalar`.

    The objective is piecewise quadratic with kinks only at 0 and s, so its
    minimizer lies in {v+2mu, v, v-2mu, 0, s}; evaluate all five and take
    the argmin.
    """
    mu = _check_scalar_inputs(v, s, p)

    def f(x):
        return 0.5 * (x - v) ** 2 + mu * abs(x) + mu * abs(x - s)

    candidates = (v + 2 * mu, v, v - 2 * mu, 0.0, s)
    return float(min(candidates, key=f))


def prox_l1l1_map(U: np.ndarray, Z: np.ndarray, p: ProxParams) -> np.ndarray:
    """Apply the shrinkage elementwise, Z supplying the side information."""
    if U.shape != Z.shape:
        raise ShapeError(f"feature map shapes differ: {U.shape} vs {Z.shape}")
    return _prox_values(U, Z, p.mu)


def prox_l1l1_vjp(v: float, s: float, p: ProxParams, upstream: float) -> tuple[float, float]:
    """Upstream times the piecewise partials w.r.t. ``v`` and ``mu``.

    d/dv is 1 on the three unit-slope regions and 0 on the flats; d/dmu is
    +2 / -2 on the two outer regions where 2mu is added/subtracted.
    """
    mu = _check_scalar_inputs(v, s, p)
    d_v, _, d_mu = _prox_partials(np.asarray(v, dtype=float), np.asarray(s, dtype=float), mu)
    return float(upstream * d_v), float(upstream * d_mu)


def prox_l1l1_map_vjp(U, Z, p: ProxParams, upstream):
    """Map-level backward: returns (d_U, d_Z, d_mu).

    d/ds is 1 on the clamp-to-s region and 0 elsewhere; this is the path
    through which side information receives gradient, so it is needed here
    even though the scalar VJP only exposes (d_v, d_mu).
    """
    if not (U.shape == Z.shape == upstream.shape):
        raise ShapeError(f"shapes differ: {U.shape}, {Z.shape}, {upstream.shape}")
    d_v, d_s, d_mu = _prox_partials(U, Z, p.mu)
    return upstream * d_v, upstream * d_s, (upstream * d_mu).sum()


def soft_threshold(v, theta):
    """sign(v) * max(|v| - theta, 0); plain shrinkage, elementwise on arrays."""
    if not np.all(theta >= 0):
        raise ValueError(f"threshold must be >= 0, got {theta}")
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0)


def soft_threshold_vjp(v, theta, upstream):
    """Backward of :func:`soft_threshold`: (d_v, d_theta); flat at |v| <= theta."""
    active = np.abs(v) > theta
    d_v = upstream * active
    d_theta = -(upstream * np.sign(v) * active).sum()
    return d_v, d_theta
