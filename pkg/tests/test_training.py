import math

import numpy as np
import pytest

from lmcsc.config import TrainConfig
from lmcsc.errors import ShapeError, TrainingDiverged
from lmcsc.gradcheck import tiny_gradcheck
from lmcsc.network import (
    GuidanceStageParams,
    NetConfig,
    NetworkParams,
    StageParams,
    init_params,
    named_parameters,
    network_forward,
    params_from_named,
)
from lmcsc.training import (
    AdamHyper,
    adam_init,
    adam_step,
    clamp_thresholds,
    finite_diff_grad,
    mse_loss,
    mse_loss_grad,
    network_backward,
    train,
)
from testutil import smooth_patch_dataset


class TestMseLoss:
    def test_identical(self, rng):
        a = rng.standard_normal((1, 4, 4))
        assert mse_loss(a, a) == 0.0

    def test_constant_offset(self, rng):
        a = rng.standard_normal((1, 4, 4))
        assert mse_loss(a + 0.3, a) == pytest.approx(0.09, rel=1e-12)

    def test_hand_value(self):
        a = np.array([[[0.0, 1.0], [2.0, 3.0]]])
        b = np.array([[[1.0, 1.0], [2.0, 2.0]]])
        assert mse_loss(a, b) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))


def scalar_network(Qg, Rg, Pg, gamma, Q, R, P, mu, dec):
    """1x1-kernel, single-stage network with scalar parameters."""

    def b(x):
        return np.array([[[[float(x)]]]])

    return NetworkParams(
        lmcsc_stages=[StageParams(Q=b(Q), R=b(R), P=b(P), mu=np.asarray(float(mu)))],
        guidance_stages=[
            GuidanceStageParams(Qg=b(Qg), Rg=b(Rg), Pg=b(Pg), gamma=np.asarray(float(gamma)))
        ],
        decoder=b(dec),
    )


class TestBackwardHandDerived:
    """1x1 image, 1x1 kernels: the whole chain rule fits on paper.

    Z = soft(Pg*w, gamma); U = prox(P*y ; Z, mu); Yhat = dec*U;
    loss = (Yhat - t)^2, so g := dloss/dYhat = 2 (Yhat - t).
    """

    y, w, t = 1.0, 1.0, 0.5

    def run(self, P, mu=0.1):
        params = scalar_network(Qg=0.0, Rg=0.0, Pg=1.0, gamma=0.25, Q=0.0, R=0.0, P=P, mu=mu, dec=2.0)
        ylr = np.array([[[self.y]]])
        omega = np.array([[[self.w]]])
        trace = network_forward(ylr, omega, params)
        grads = network_backward(trace, params, mse_loss_grad(trace.Yhat, np.array([[[self.t]]])))
        return trace, named_parameters(grads)

    def test_identity_region(self):
        # Z = 0.75, pre = 0.5 in (0, Z): U passes through
        trace, g = self.run(P=0.5)
        assert trace.Yhat.item() == pytest.approx(1.0)
        gain = 2 * (1.0 - self.t)  # = 1
        assert g["decoder"].item() == pytest.approx(gain * 0.5)
        assert g["lmcsc.0.P"].item() == pytest.approx(gain * 2.0 * self.y)
        for name in ("lmcsc.0.mu", "guidance.0.Pg", "guidance.0.gamma"):
            assert g[name].item() == 0.0

    def test_clamp_to_side_information(self):
        # pre = 0.8 in [Z, Z+2mu] = [0.75, 0.95]: U = Z, gradient flows to guidance
        trace, g = self.run(P=0.8)
        assert trace.Yhat.item() == pytest.approx(1.5)
        gain = 2 * (1.5 - self.t)  # = 2
        assert g["decoder"].item() == pytest.approx(gain * 0.75)
        assert g["lmcsc.0.P"].item() == 0.0
        assert g["lmcsc.0.mu"].item() == 0.0
        assert g["guidance.0.Pg"].item() == pytest.approx(gain * 2.0 * self.w)
        assert g["guidance.0.gamma"].item() == pytest.approx(-gain * 2.0)

    def test_outer_shrinkage_region(self):
        # pre = 1.2 > Z + 2mu: U = pre - 2mu, mu picks up -2 per unit upstream
        trace, g = self.run(P=1.2)
        assert trace.Yhat.item() == pytest.approx(2.0)
        gain = 2 * (2.0 - self.t)  # = 3
        assert g["decoder"].item() == pytest.approx(gain * 1.0)
        assert g["lmcsc.0.P"].item() == pytest.approx(gain * 2.0 * self.y)
        assert g["lmcsc.0.mu"].item() == pytest.approx(-2.0 * gain * 2.0)
        assert g["guidance.0.Pg"].item() == 0.0

    def test_zero_loss_grad_gives_zero_grads(self, rng):
        params = init_params(NetConfig(k=2, kernel_size=3), seed=0, dtype=np.float64)
        trace = network_forward(rng.uniform(0, 1, (1, 6, 6)), rng.uniform(0, 1, (1, 6, 6)), params)
        grads = network_backward(trace, params, np.zeros_like(trace.Yhat))
        assert all(not a.any() for a in named_parameters(grads).values())

    def test_trace_params_mismatch(self, rng):
        params = init_params(NetConfig(k=2, kernel_size=3), seed=0, dtype=np.float64)
        other = init_params(NetConfig(k=2, kernel_size=3, lmcsc_stages=4), seed=0, dtype=np.float64)
        trace = network_forward(rng.uniform(0, 1, (1, 6, 6)), rng.uniform(0, 1, (1, 6, 6)), params)
        with pytest.raises(ValueError):
            network_backward(trace, other, np.zeros_like(trace.Yhat))


class TestFiniteDiff:
    def test_quadratic_loss(self):
        params = init_params(NetConfig(k=2, kernel_size=3, weight_std=0.5), seed=5, dtype=np.float64)

        def loss(p):
            return 0.5 * sum(float((a * a).sum()) for a in named_parameters(p).values())

        grads = named_parameters(finite_diff_grad(loss, params, eps=1e-5))
        for name, a in named_parameters(params).items():
            assert np.allclose(grads[name], a, atol=1e-9)

    def test_linear_loss(self):
        params = init_params(NetConfig(k=2, kernel_size=3), seed=6, dtype=np.float64)

        def loss(p):
            return 3.0 * sum(float(a.sum()) for a in named_parameters(p).values())

        grads = named_parameters(finite_diff_grad(loss, params, eps=1e-4))
        for a in grads.values():
            assert np.allclose(a, 3.0, atol=1e-8)

    def test_eps_validation(self):
        params = init_params(NetConfig(k=1, kernel_size=1), seed=0)
        with pytest.raises(ValueError):
            finite_diff_grad(lambda p: 0.0, params, eps=0.0)


@pytest.mark.parametrize("seed", [0, 3, 8])
def test_gradcheck_tiny_network(seed):
    result = tiny_gradcheck(seed)
    assert result.margin >= 1e-3
    assert result.max_rel_err <= 1e-4


class TestAdam:
    def setup_method(self):
        self.params = init_params(NetConfig(k=2, kernel_size=3), seed=0, dtype=np.float64)
        self.state = adam_init(self.params, AdamHyper(lr=0.1))

    def grads_filled(self, value):
        named = {k: np.full_like(v, value) for k, v in named_parameters(self.params).items()}
        return params_from_named(named, self.params.lmcsc_steps, self.params.guidance_steps)

    def test_zero_grads_leave_params(self):
        new, state = adam_step(self.params, self.grads_filled(0.0), self.state)
        before = named_parameters(self.params)
        after = named_parameters(new)
        assert all(np.array_equal(before[n], after[n]) for n in before)
        assert state.step == 1

    def test_first_step_magnitude(self):
        new, _ = adam_step(self.params, self.grads_filled(2.0), self.state)
        before = named_parameters(self.params)
        after = named_parameters(new)
        for n in before:
            assert np.allclose(before[n] - after[n], 0.1, rtol=1e-6)

    def test_deterministic(self):
        g = self.grads_filled(0.7)
        a1, s1 = adam_step(self.params, g, self.state)
        a2, s2 = adam_step(self.params, g, self.state)
        na1, na2 = named_parameters(a1), named_parameters(a2)
        assert all(np.array_equal(na1[n], na2[n]) for n in na1)
        assert all(np.array_equal(s1.m[n], s2.m[n]) for n in s1.m)

    def test_structure_mismatch(self):
        other = init_params(NetConfig(k=2, kernel_size=3, lmcsc_stages=5), seed=0)
        with pytest.raises(ShapeError):
            adam_step(self.params, other, self.state)


def test_clamp_thresholds():
    params = init_params(NetConfig(k=1, kernel_size=1), seed=0, dtype=np.float64)
    named = named_parameters(params)
    named["lmcsc.0.mu"][()] = -0.3
    clamped = clamp_thresholds(params_from_named(named, params.lmcsc_steps, params.guidance_steps))
    assert float(named_parameters(clamped)["lmcsc.0.mu"]) == 0.0


def overfit_config(steps, **overrides):
    base = dict(
        scale=2,
        k=8,
        kernel_size=5,
        stages_lmcsc=2,
        stages_guidance=2,
        patch_size=16,
        patches_total=4,
        batch_size=4,
        lr=3e-3,
        steps=steps,
        seed=0,
        eval_every=250,
        val_fraction=0.01,
        patience=1000,
        weight_std=0.1,
        mu_init=0.01,
        gamma_init=0.01,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainLoop:
    def test_zero_steps_returns_initial_params(self):
        ds = smooth_patch_dataset(4, 16, seed=2)
        cfg = overfit_config(steps=0)
        ck, log = train(cfg, ds)
        assert not log.records
        expected = named_parameters(init_params(cfg.net_config(), seed=cfg.seed))
        got = ck.network_params()
        for name, arr in named_parameters(got).items():
            assert np.array_equal(arr, expected[name])

    def test_overfit_four_patches(self):
        ds = smooth_patch_dataset(4, 16, seed=2)
        ck, log = train(overfit_config(steps=500), ds)
        losses = [r.loss for r in log.records]
        assert losses[0] / min(losses) >= 100.0

    def test_best_so_far_strictly_decreases(self):
        ds = smooth_patch_dataset(4, 16, seed=3)
        _, log = train(overfit_config(steps=300), ds)
        losses = [r.loss for r in log.records]
        for start in range(0, 250, 50):
            assert min(losses[start + 1 : start + 51]) < min(losses[: start + 1])

    def test_seeded_determinism(self):
        ds = smooth_patch_dataset(6, 16, seed=4)
        cfg = overfit_config(steps=25, patches_total=6)
        ck1, log1 = train(cfg, ds)
        ck2, log2 = train(cfg, ds)
        assert [r.loss for r in log1.records] == [r.loss for r in log2.records]
        t1, t2 = ck1.tensors, ck2.tensors
        assert t1.keys() == t2.keys()
        assert all(np.array_equal(t1[n], t2[n]) for n in t1)

    def test_nan_loss_aborts(self):
        ds = smooth_patch_dataset(4, 16, seed=5)
        cfg = overfit_config(steps=10, weight_std=1e30)
        with pytest.raises(TrainingDiverged):
            train(cfg, ds)

    def test_log_csv_shape(self):
        ds = smooth_patch_dataset(4, 16, seed=6)
        _, log = train(overfit_config(steps=8, eval_every=4), ds)
        csv = log.to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "step,loss,val_psnr"
        assert len(lines) == 9
        # eval steps carry a val PSNR, others leave the field empty
        assert lines[4].count(",") == 2 and lines[4].split(",")[2] != ""
        assert lines[1].split(",")[2] == ""
        steps = [int(l.split(",")[0]) for l in lines[1:]]
        assert steps == sorted(steps) and len(set(steps)) == len(steps)

    def test_empty_dataset_rejected(self):
        ds = smooth_patch_dataset(4, 16, seed=2)
        empty = type(ds)(ds.lr[:0], ds.guidance[:0], ds.hr[:0])
        with pytest.raises(ValueError):
            train(overfit_config(steps=1), empty)
