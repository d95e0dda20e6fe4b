"""Noise schedule algebra, roundtrips, and the deterministic sampler."""

import numpy as np
import pytest
import torch

from handvid import diffusion as diff


@pytest.fixture(scope="module")
def sched():
    return diff.NoiseSchedule.linear()


class TestSchedule:
    def test_linear_defaults(self, sched):
        assert sched.tau == 1000
        assert sched.betas[0] == pytest.approx(1e-4)
        assert sched.betas[-1] == pytest.approx(0.02)
        sched.validate()

    def test_alpha_bar_monotone_and_bounded(self, sched):
        ab = sched.alpha_bar
        assert (np.diff(ab) < 0).all()
        assert ab.min() > 0 and ab.max() < 1
        assert sched.alpha_bar_at(0) == 1.0
        assert sched.alpha_bar_at(sched.tau) == ab[-1]

    def test_consistency_enforced(self):
        betas = np.full(10, 0.1)
        bad = diff.NoiseSchedule(betas, np.cumprod(1 - betas) + 1e-6)
        with pytest.raises(ValueError):
            bad.validate()

    def test_invalid_betas_rejected(self):
        for bad in ([0.0, 0.1], [0.1, 1.0], [-0.1]):
            with pytest.raises(ValueError):
                diff.NoiseSchedule.from_betas(bad)

    def test_degenerate_schedule_escape_hatch(self):
        sched0 = diff.NoiseSchedule.from_betas(np.zeros(8), validate=False)
        z0 = np.arange(12.0).reshape(3, 4)
        eps = np.ones_like(z0)
        for t in (1, 4, 8):
            assert (diff.add_noise(z0, t, eps, sched0) == z0).all()
            assert (diff.sampler_step(z0, eps, t, sched0, t_prev=t - 1) == z0).all()


class TestAddNoiseRecover:
    def test_hand_computed_scalar_case(self):
        # One step with alpha_bar = 0.64: 0.8*1 + 0.6*0.5 = 1.1.
        sched = diff.NoiseSchedule.from_betas([0.36])
        z0 = np.array([1.0])
        eps = np.array([0.5])
        zt = diff.add_noise(z0, 1, eps, sched)
        assert zt[0] == pytest.approx(1.1, abs=1e-12)
        back = diff.recover_z0(zt, 1, eps, sched)
        assert back[0] == pytest.approx(1.0, abs=1e-12)

    def test_roundtrip_identity_100_triples(self, sched):
        rng = np.random.default_rng(0)
        for _ in range(100):
            z0 = rng.standard_normal((2, 3, 3, 4))
            eps = rng.standard_normal(z0.shape)
            t = int(rng.integers(1, sched.tau + 1))
            back = diff.recover_z0(diff.add_noise(z0, t, eps, sched), t, eps, sched)
            rel = np.abs(back - z0).max() / np.abs(z0).max()
            assert rel < 1e-6

    def test_eps_zero_recovery(self, sched):
        z = np.full((2, 2), 3.0)
        out = diff.recover_z0(z, 10, np.zeros_like(z), sched)
        assert np.allclose(out, z / np.sqrt(sched.alpha_bar_at(10)))

    def test_terminal_step_mostly_noise(self, sched):
        rng = np.random.default_rng(1)
        z0 = rng.uniform(-1, 1, size=(4, 4))
        eps = rng.standard_normal((4, 4))
        zt = diff.add_noise(z0, sched.tau, eps, sched)
        bound = np.sqrt(sched.alpha_bar_at(sched.tau)) * np.abs(z0).max()
        assert np.abs(zt - eps).max() < bound + 1e-12

    def test_step_range_validation(self, sched):
        z = np.zeros((2, 2))
        for t in (0, sched.tau + 1, -3):
            with pytest.raises(ValueError):
                diff.add_noise(z, t, z, sched)
            with pytest.raises(ValueError):
                diff.recover_z0(z, t, z, sched)

    def test_shape_mismatch_rejected(self, sched):
        with pytest.raises(ValueError):
            diff.add_noise(np.zeros((2, 2)), 1, np.zeros((2, 3)), sched)

    def test_alpha_bar_floor_guard(self):
        sched = diff.NoiseSchedule.from_betas(np.full(2000, 0.02))
        z = np.ones((2,))
        with pytest.raises(ValueError):
            diff.recover_z0(z, 2000, z, sched)

    def test_batched_steps(self, sched):
        rng = np.random.default_rng(2)
        z0 = torch.tensor(rng.standard_normal((3, 2, 2, 2, 2)))
        eps = torch.tensor(rng.standard_normal(z0.shape))
        ts = np.array([1, 500, 1000])
        zt = diff.add_noise(z0, ts, eps, sched)
        for k, t in enumerate(ts):
            single = diff.add_noise(z0[k], int(t), eps[k], sched)
            assert torch.allclose(zt[k], single)

    def test_variance_preservation(self, sched):
        rng = np.random.default_rng(3)
        z0 = rng.standard_normal(10_000)
        eps = rng.standard_normal(10_000)
        for t in (1, 250, 600, 1000):
            zt = diff.add_noise(z0, t, eps, sched)
            assert zt.var() == pytest.approx(1.0, rel=0.05)


class TestSampler:
    def test_t1_returns_clean_estimate(self, sched):
        rng = np.random.default_rng(4)
        z1 = rng.standard_normal((2, 3))
        eps_hat = rng.standard_normal((2, 3))
        out = diff.sampler_step(z1, eps_hat, 1, sched)
        want = diff.recover_z0(z1, 1, eps_hat, sched)
        assert np.allclose(out, want)

    def test_nonfinite_eps_rejected(self, sched):
        z = np.ones((2, 2))
        bad = np.array([[np.nan, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError):
            diff.sampler_step(z, bad, 5, sched)

    def test_stride_endpoints(self, sched):
        for steps in (1, 2, 7, 50, 1000):
            seq = diff.stride_steps(sched.tau, steps)
            assert seq[0] == sched.tau
            if steps > 1:
                assert seq[-1] == 1
            assert all(a > b for a, b in zip(seq, seq[1:]))
            assert len(seq) == steps

    def test_stride_validation(self, sched):
        with pytest.raises(ValueError):
            diff.stride_steps(sched.tau, 0)
        with pytest.raises(ValueError):
            diff.stride_steps(sched.tau, sched.tau + 1)

    def test_oracle_full_loop_recovers_target(self, sched):
        # Predictor that always returns the true noise: the loop must land
        # back on the clean latent.
        rng = np.random.default_rng(5)
        z0 = rng.uniform(-1, 1, size=(3, 4, 4, 2))
        eps = rng.standard_normal(z0.shape)
        init = diff.add_noise(z0, sched.tau, eps, sched)
        out = diff.sample(lambda z, t, c: eps, init, None, sched, sched.tau)
        rel = np.abs(out - z0).max() / np.abs(z0).max()
        assert rel < 1e-4

    def test_oracle_strided_loop_recovers_target(self, sched):
        rng = np.random.default_rng(6)
        z0 = rng.uniform(-1, 1, size=(2, 4, 4, 2))
        eps = rng.standard_normal(z0.shape)
        init = diff.add_noise(z0, sched.tau, eps, sched)
        out = diff.sample(lambda z, t, c: eps, init, None, sched, 50)
        rel = np.abs(out - z0).max() / np.abs(z0).max()
        assert rel < 1e-4

    def test_steps_one_is_single_recover(self, sched):
        rng = np.random.default_rng(7)
        init = rng.standard_normal((2, 2, 2, 2))
        eps_hat = rng.standard_normal(init.shape)
        out = diff.sample(lambda z, t, c: eps_hat, init, None, sched, 1)
        want = diff.recover_z0(init, sched.tau, eps_hat, sched)
        assert np.allclose(out, want)

    def test_sampling_deterministic(self, sched):
        rng = np.random.default_rng(8)
        init = rng.standard_normal((2, 4, 4, 2))
        fixed = rng.standard_normal(init.shape)
        a = diff.sample(lambda z, t, c: fixed + 0.01 * z, init, None, sched, 25)
        b = diff.sample(lambda z, t, c: fixed + 0.01 * z, init, None, sched, 25)
        assert (a == b).all()


def test_latent_video_type():
    lv = diff.LatentVideo(torch.zeros(3, 4, 4, 5))
    assert lv.frames == 3 and lv.channels == 5
    lv.validate()
    with pytest.raises(ValueError):
        diff.LatentVideo(torch.zeros(3, 4, 4))
    bad = diff.LatentVideo(torch.full((1, 2, 2, 1), torch.nan))
    with pytest.raises(ValueError):
        bad.validate()
