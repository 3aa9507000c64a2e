import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmcsc.errors import ShapeError
from lmcsc.prox import (
    ProxParams,
    prox_l1l1_map,
    prox_l1l1_map_vjp,
    prox_l1l1_oracle,
    prox_l1l1_scalar,
    prox_l1l1_vjp,
    soft_threshold,
)

finite_reals = st.floats(min_value=-10, max_value=10, allow_nan=False)
mus = st.floats(min_value=0, max_value=3, allow_nan=False)


@pytest.mark.parametrize(
    "v,s,mu,expected",
    [
        (-2.0, 2.0, 0.5, -1.0),
        (2.5, 2.0, 0.5, 2.0),
        (1.7, -5.0, 0.0, 1.7),
        (3.0, 0.0, 0.5, 2.0),
    ],
)
def test_scalar_examples(v, s, mu, expected):
    assert prox_l1l1_scalar(v, s, ProxParams(mu)) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "v,s,mu,expected",
    [
        (4.0, 2.0, 0.5, 3.0),
        (-0.5, 2.0, 0.5, 0.0),
        (0.0, 7.0, 1.0, 0.0),
    ],
)
def test_oracle_examples(v, s, mu, expected):
    assert prox_l1l1_oracle(v, s, ProxParams(mu)) == pytest.approx(expected, abs=1e-15)


def test_oracle_equivalence_bulk(rng):
    v = rng.uniform(-10, 10, 10_000)
    s = rng.uniform(-10, 10, 10_000)
    mu = rng.uniform(0, 3, 10_000)
    worst = 0.0
    for i in range(10_000):
        p = ProxParams(mu[i])
        worst = max(worst, abs(prox_l1l1_scalar(v[i], s[i], p) - prox_l1l1_oracle(v[i], s[i], p)))
    assert worst <= 1e-12


@given(v=finite_reals, s=finite_reals, mu=mus)
@settings(max_examples=300)
def test_odd_symmetry(v, s, mu):
    p = ProxParams(mu)
    assert prox_l1l1_scalar(-v, -s, p) == -prox_l1l1_scalar(v, s, p)


@given(a=finite_reals, b=finite_reals, s=finite_reals, mu=mus)
@settings(max_examples=300)
def test_nonexpansive(a, b, s, mu):
    p = ProxParams(mu)
    lhs = abs(prox_l1l1_scalar(a, s, p) - prox_l1l1_scalar(b, s, p))
    assert lhs <= abs(a - b) + 1e-12


@given(v=finite_reals, mu=mus)
@settings(max_examples=300)
def test_reduction_to_soft_threshold(v, mu):
    assert prox_l1l1_scalar(v, 0.0, ProxParams(mu)) == soft_threshold(v, 2 * mu)


def test_map_matches_scalar_oracle(rng):
    U = rng.uniform(-4, 4, (2, 3, 3))
    Z = rng.uniform(-4, 4, (2, 3, 3))
    p = ProxParams(0.3)
    out = prox_l1l1_map(U, Z, p)
    for idx in np.ndindex(U.shape):
        assert out[idx] == pytest.approx(prox_l1l1_oracle(U[idx], Z[idx], p), abs=1e-12)


def test_map_trivial_cases(rng):
    Z = rng.uniform(-2, 2, (3, 4, 4))
    p = ProxParams(0.7)
    assert np.array_equal(prox_l1l1_map(np.zeros_like(Z), Z, p), np.zeros_like(Z))
    U = rng.uniform(-3, 3, (3, 4, 4))
    out = prox_l1l1_map(U, np.zeros_like(U), p)
    assert np.array_equal(out, soft_threshold(U, 2 * p.mu))


def test_map_shape_mismatch():
    with pytest.raises(ShapeError):
        prox_l1l1_map(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)), ProxParams(0.1))


@pytest.mark.parametrize(
    "v,s,mu,upstream,expected",
    [
        (1.0, 2.0, 0.5, 1.0, (1.0, 0.0)),
        (2.5, 2.0, 0.5, 1.0, (0.0, 0.0)),
        (4.0, 2.0, 0.5, 2.0, (2.0, -4.0)),
    ],
)
def test_vjp_examples(v, s, mu, upstream, expected):
    assert prox_l1l1_vjp(v, s, ProxParams(mu), upstream) == expected


def _breakpoint_margin(v, s, mu):
    w = -1.0 if s < 0 else 1.0
    vv, ss = w * v, w * s
    return min(abs(vv - b) for b in (-2 * mu, 0.0, ss, ss + 2 * mu))


def test_vjp_matches_finite_differences(rng):
    eps = 1e-6
    checked = 0
    while checked < 200:
        v, s = rng.uniform(-5, 5, 2)
        mu = rng.uniform(1e-2, 2)
        if _breakpoint_margin(v, s, mu) < 1e-3:
            continue
        checked += 1
        p = ProxParams(mu)
        d_v, d_mu = prox_l1l1_vjp(v, s, p, 1.0)
        fd_v = (prox_l1l1_scalar(v + eps, s, p) - prox_l1l1_scalar(v - eps, s, p)) / (2 * eps)
        fd_mu = (
            prox_l1l1_scalar(v, s, ProxParams(mu + eps))
            - prox_l1l1_scalar(v, s, ProxParams(mu - eps))
        ) / (2 * eps)
        assert d_v == pytest.approx(fd_v, abs=1e-5)
        assert d_mu == pytest.approx(fd_mu, abs=1e-5)


def test_map_vjp_side_information_path(rng):
    # d/ds is 1 exactly on the clamp-to-s region, 0 elsewhere
    eps = 1e-6
    U = rng.uniform(-5, 5, (2, 4, 4))
    Z = rng.uniform(-5, 5, (2, 4, 4))
    mu = 0.4
    keep = np.array(
        [[_breakpoint_margin(v, s, mu) > 1e-3 for v, s in zip(ur, zr)]
         for ur, zr in zip(U.reshape(2, -1), Z.reshape(2, -1))]
    ).reshape(U.shape)
    p = ProxParams(mu)
    upstream = np.ones_like(U)
    _, d_z, _ = prox_l1l1_map_vjp(U, Z, p, upstream)
    fd = (prox_l1l1_map(U, Z + eps, p) - prox_l1l1_map(U, Z - eps, p)) / (2 * eps)
    assert np.allclose(d_z[keep], fd[keep], atol=1e-6)


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert soft_threshold(1.234, 0.0) == 1.234


def test_domain_errors():
    with pytest.raises(ValueError):
        ProxParams(-0.1)
    with pytest.raises(ValueError):
        prox_l1l1_scalar(np.nan, 0.0, ProxParams(0.1))
    with pytest.raises(ValueError):
        prox_l1l1_scalar(0.0, np.inf, ProxParams(0.1))
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.5)
