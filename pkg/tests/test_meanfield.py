"""Tests for the mean-field matrices and uncertainty regularizers."""

import numpy as np
import pytest

from prunestream import autodiff as ad
from prunestream.meanfield import (
    EffectiveWeights,
    MeanFieldMatrix,
    MissingSnapshotError,
    RegConfig,
    effective_weights,
    reg1,
    reg2,
    reg3,
    snapshot_after_task,
    total_reg,
)


def make_matrix(name="m", d_out=3, d_in=4, seed=0, sigma_init=0.05, snapshot=True):
    m = MeanFieldMatrix(name, d_out, d_in, layer_index=0, sigma_init=sigma_init,
                        rng=np.random.default_rng(seed), init_scale=0.5)
    if snapshot:
        snapshot_after_task(m)
        rng = np.random.default_rng(seed + 1)
        m.phi = m.phi + rng.normal(0, 0.3, m.phi.shape).astype(np.float32)
        m.rho = m.rho + rng.normal(0, 0.2, m.rho.shape).astype(np.float32)
    return m


class TestRegConfig:
    def test_defaults(self):
        cfg = RegConfig()
        assert (cfg.alpha, cfg.beta, cfg.gamma) == (0.1, 0.1, 0.03)
        assert cfg.upsilon == 1.0 and cfg.sigma_init == 0.05

    def test_rejects_negative_weight(self):
        with pytest.raises(ValueError):
            RegConfig(alpha=-0.1)

    def test_rejects_nonpositive_sigma_init(self):
        with pytest.raises(ValueError):
            RegConfig(sigma_init=0.0)


class TestEffectiveWeights:
    def test_eval_is_exactly_phi(self):
        m = make_matrix(snapshot=False)
        out = effective_weights(m, "eval")
        np.testing.assert_array_equal(out.weights.data, m.phi)

    def test_train_noise_arithmetic(self):
        # phi 0.2, sigma 0.1, upsilon 1, tau 0.3 -> 0.23
        m = MeanFieldMatrix("m", 1, 1, 0)
        m.phi[:] = 0.2
        m.rho[:] = np.log(0.1)
        out = effective_weights(
            m, "train", cfg=RegConfig(upsilon=1.0),
            tau=np.array([[0.3]], dtype=np.float32),
            noise_mask=np.ones((1, 1), dtype=bool),
        )
        np.testing.assert_allclose(out.weights.data, [[0.23]], rtol=1e-6)

    def test_zero_upsilon_train_equals_eval(self):
        m = make_matrix(snapshot=False)
        out = effective_weights(
            m, "train", cfg=RegConfig(upsilon=0.0),
            rng=np.random.default_rng(0),
            noise_mask=np.ones(m.shape, dtype=bool),
        )
        np.testing.assert_array_equal(out.weights.data, m.phi)

    def test_noise_only_on_masked_entries(self):
        m = make_matrix(snapshot=False, d_out=4, d_in=5)
        mask = np.zeros(m.shape, dtype=bool)
        mask[1, :] = True
        out = effective_weights(m, "train", rng=np.random.default_rng(3), noise_mask=mask)
        w = out.weights.data
        np.testing.assert_array_equal(w[~mask], m.phi[~mask])
        assert not np.array_equal(w[mask], m.phi[mask])

    def test_empty_mask_skips_rng(self):
        m = make_matrix(snapshot=False)
        out = effective_weights(m, "train", noise_mask=np.zeros(m.shape, dtype=bool))
        np.testing.assert_array_equal(out.weights.data, m.phi)

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            effective_weights(make_matrix(snapshot=False), "predict")

    def test_train_leaves_live_on_tape(self):
        m = make_matrix(snapshot=False)
        tape = ad.Tape()
        out = effective_weights(
            m, "train", tape=tape, rng=np.random.default_rng(0),
            noise_mask=np.ones(m.shape, dtype=bool),
        )
        grads = tape.backward((out.weights * out.weights).sum())
        assert grads.wrt(out.phi).shape == m.shape
        assert grads.wrt(out.rho).shape == m.rho.shape
        assert np.abs(grads.wrt(out.rho)).sum() > 0


class TestReg1:
    def test_zero_drift_is_zero(self):
        m = make_matrix(seed=5)
        m.phi = m.phi_prev.copy()
        assert reg1(m, RegConfig()).item() == 0.0

    def test_worked_example(self):
        # ratio max(2, 1) applied to drift [0.3, 0.4] -> ||[0.6, 0.8]||^2 = 1.0
        m = MeanFieldMatrix("m", 1, 2, 1)
        m.phi_prev = np.zeros((1, 2), dtype=np.float32)
        m.sigma_prev = np.array([0.25], dtype=np.float32)
        m.phi = np.array([[0.3, 0.4]], dtype=np.float32)
        cfg = RegConfig(sigma_init=0.5)
        lower = np.array([0.5, 0.5], dtype=np.float32)  # ratio 1
        np.testing.assert_allclose(reg1(m, cfg, lower).item(), 1.0, rtol=1e-6)

    def test_doubling_drift_quadruples(self):
        m = make_matrix(seed=6)
        base = reg1(m, RegConfig()).item()
        m.phi = m.phi_prev + 2 * (m.phi - m.phi_prev)
        np.testing.assert_allclose(reg1(m, RegConfig()).item(), 4 * base, rtol=1e-5)

    def test_lower_ratio_takes_elementwise_max(self):
        m = MeanFieldMatrix("m", 1, 2, 1)
        m.phi_prev = np.zeros((1, 2), dtype=np.float32)
        m.sigma_prev = np.array([1.0], dtype=np.float32)  # current ratio 0.5
        m.phi = np.array([[1.0, 1.0]], dtype=np.float32)
        cfg = RegConfig(sigma_init=0.5)
        # lower sigmas 0.125 and 1.0 -> ratios 4.0 and 0.5
        lower = np.array([0.125, 1.0], dtype=np.float32)
        np.testing.assert_allclose(reg1(m, cfg, lower).item(), 16.0 + 0.25, rtol=1e-6)

    def test_missing_snapshot_raises(self):
        with pytest.raises(MissingSnapshotError):
            reg1(make_matrix(snapshot=False), RegConfig())

    def test_nonnegative(self):
        for seed in range(5):
            assert reg1(make_matrix(seed=seed), RegConfig()).item() >= 0


class TestReg2:
    def test_zero_drift_is_zero(self):
        m = make_matrix(seed=7)
        m.phi = m.phi_prev.copy()
        assert reg2(m, RegConfig()).item() == 0.0

    def test_zero_old_mean_is_zero(self):
        m = make_matrix(seed=8)
        m.phi_prev = np.zeros(m.shape, dtype=np.float32)
        assert reg2(m, RegConfig()).item() == 0.0

    def test_worked_example(self):
        # snr^2 = [4, 16], |drift| = 0.1 -> 0.25 * (0.4 + 1.6) = 0.5
        m = MeanFieldMatrix("m", 1, 2, 1)
        m.phi_prev = np.array([[1.0, -2.0]], dtype=np.float32)
        m.sigma_prev = np.array([0.5], dtype=np.float32)
        m.phi = m.phi_prev + np.array([[0.1, -0.1]], dtype=np.float32)
        np.testing.assert_allclose(
            reg2(m, RegConfig(sigma_init=0.5)).item(), 0.5, rtol=1e-5
        )

    def test_nonnegative(self):
        for seed in range(5):
            assert reg2(make_matrix(seed=seed), RegConfig()).item() >= 0


class TestReg3:
    def test_equal_sigma_gives_node_count(self):
        m = make_matrix(seed=9, d_out=6)
        m.sigma_prev = np.exp(m.rho)
        np.testing.assert_allclose(reg3(m).item(), 6.0, rtol=1e-6)

    def test_worked_example(self):
        # sigma [1,2] -> [2,2]: (4 - ln 4) + 1
        m = MeanFieldMatrix("m", 2, 3, 1)
        m.phi_prev = np.zeros((2, 3), dtype=np.float32)
        m.sigma_prev = np.array([1.0, 2.0], dtype=np.float32)
        m.rho = np.log(np.array([2.0, 2.0], dtype=np.float32))
        np.testing.assert_allclose(reg3(m).item(), 3.6137, atol=1e-3)

    def test_at_least_node_count(self):
        """x - log x >= 1 makes the sum at least d_out for any sigma."""
        for seed in range(10):
            m = make_matrix(seed=seed, d_out=5)
            assert reg3(m).item() >= 5.0 - 1e-5


class TestSnapshot:
    def test_regs_vanish_right_after_snapshot(self):
        m = make_matrix(seed=10, d_out=4)
        snapshot_after_task(m)
        assert reg1(m, RegConfig()).item() == 0.0
        assert reg2(m, RegConfig()).item() == 0.0
        np.testing.assert_allclose(reg3(m).item(), 4.0, rtol=1e-6)

    def test_snapshot_idempotent(self):
        m = make_matrix(seed=11)
        snapshot_after_task(m)
        first = (m.phi_prev.copy(), m.sigma_prev.copy())
        snapshot_after_task(m)
        np.testing.assert_array_equal(m.phi_prev, first[0])
        np.testing.assert_array_equal(m.sigma_prev, first[1])

    def test_snapshot_shifts_reference(self):
        m = make_matrix(seed=12)
        drifted = reg1(m, RegConfig()).item()
        assert drifted > 0
        snapshot_after_task(m)
        assert reg1(m, RegConfig()).item() == 0.0
        m.phi = m.phi + 0.1
        assert 0 < reg1(m, RegConfig()).item() < drifted * 100


class TestTotalReg:
    def test_zero_coefficients(self):
        ms = [make_matrix(f"m{i}", d_out=4, d_in=4, seed=20 + i) for i in range(3)]
        cfg = RegConfig(alpha=0.0, beta=0.0, gamma=0.0)
        assert total_reg(ms, cfg).item() == 0.0

    def test_matches_per_term_combination(self):
        d = 4
        ms = [make_matrix(f"m{i}", d_out=d, d_in=d, seed=30 + i) for i in range(3)]
        cfg = RegConfig()
        expected, lower = 0.0, None
        for m in ms:
            expected += (
                cfg.alpha / 2 * reg1(m, cfg, lower).item()
                + cfg.beta * reg2(m, cfg).item()
                + cfg.gamma / 2 * reg3(m).item()
            )
            lower = m.sigma_prev
        np.testing.assert_allclose(total_reg(ms, cfg).item(), expected, rtol=1e-5)

    def test_linear_in_coefficients(self):
        ms = [make_matrix(f"m{i}", d_out=3, d_in=3, seed=40 + i) for i in range(2)]
        t1 = total_reg(ms, RegConfig(alpha=0.2, beta=0.0, gamma=0.0)).item()
        t2 = total_reg(ms, RegConfig(alpha=0.4, beta=0.0, gamma=0.0)).item()
        np.testing.assert_allclose(t2, 2 * t1, rtol=1e-5)

    def test_default_weighting_arithmetic(self):
        # one matrix with known per-term values combines as
        # alpha/2 * r1 + beta * r2 + gamma/2 * r3
        m = make_matrix(seed=50)
        cfg = RegConfig()
        r1, r2, r3 = reg1(m, cfg).item(), reg2(m, cfg).item(), reg3(m).item()
        np.testing.assert_allclose(
            total_reg([m], cfg).item(), 0.05 * r1 + 0.1 * r2 + 0.015 * r3, rtol=1e-5
        )

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            total_reg([], RegConfig())


class TestRegGradients:
    """Finite differences validate every regularizer's backward pass."""

    def setup_method(self):
        self.cfg = RegConfig()
        self.m = make_matrix(seed=60, d_out=4, d_in=5)
        # keep |drift| well away from reg2's L1 kink at zero
        drift = self.m.phi - self.m.phi_prev
        self.m.phi = (self.m.phi_prev + np.sign(drift) * (np.abs(drift) + 0.05)).astype(
            np.float32
        )
        self.lower = np.random.default_rng(61).uniform(0.02, 0.2, size=5).astype(np.float32)

    def test_reg1_wrt_phi(self):
        x = ad.Tensor(self.m.phi.astype(np.float64))
        err = ad.grad_check(lambda t: reg1(self.m, self.cfg, self.lower, phi=t), x)
        assert err < 1e-3

    def test_reg2_wrt_phi(self):
        x = ad.Tensor(self.m.phi.astype(np.float64))
        err = ad.grad_check(lambda t: reg2(self.m, self.cfg, phi=t), x)
        assert err < 1e-3

    def test_reg3_wrt_rho(self):
        x = ad.Tensor(self.m.rho.astype(np.float64))
        err = ad.grad_check(lambda t: reg3(self.m, rho=t), x)
        assert err < 1e-3

    def test_total_reg_wrt_phi_and_rho(self):
        ms = [self.m, make_matrix("m2", d_out=5, d_in=4, seed=62)]
        for target in ms:
            drift = target.phi - target.phi_prev
            target.phi = (target.phi_prev + np.sign(drift) * (np.abs(drift) + 0.05)).astype(
                np.float32
            )
        def wrt_phi(t):
            return total_reg(ms, self.cfg, live={ms[1].name: (t, None)})
        def wrt_rho(t):
            return total_reg(ms, self.cfg, live={ms[0].name: (None, t)})
        assert ad.grad_check(wrt_phi, ad.Tensor(ms[1].phi.astype(np.float64))) < 1e-3
        assert ad.grad_check(wrt_rho, ad.Tensor(ms[0].rho.astype(np.float64))) < 1e-3

    def test_drift_mask_zeroes_masked_gradient(self):
        mask = np.zeros(self.m.shape, dtype=bool)
        mask[:2, :] = True
        tape = ad.Tape()
        phi_t = ad.Tensor(self.m.phi, tape)
        loss = reg1(self.m, self.cfg, phi=phi_t, drift_mask=mask)
        g = tape.backward(loss).wrt(phi_t)
        assert np.all(g[~mask] == 0)
        assert np.any(g[mask] != 0)
