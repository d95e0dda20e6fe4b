"""Noise schedule, forward noising, clean-latent recovery, and sampling.

Steps are 1-indexed: step t draws signal weight from alpha_bar[t] =
prod_{i<=t}(1 - beta_i), with alpha_bar at step 0 defined as exactly 1.
The sampler is first-order deterministic: estimate the clean latent from
the predicted noise, then re-noise it to the previous step with the same
noise estimate, so step 1 lands exactly on the clean estimate.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

ALPHA_BAR_FLOOR = 1e-8


@dataclass
class LatentVideo:
    """Latent clip (frames, h, w, channels); c plain or c+1 with mask channel."""

    values: "torch.Tensor"

    def __post_init__(self):
        if getattr(self.values, "ndim", None) != 4:
            raise ValueError("latent video must have shape (frames, h, w, channels)")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[-1]

    def validate(self):
        vals = self.values
        ok = torch.isfinite(vals).all() if torch.is_tensor(vals) else np.isfinite(vals).all()
        if not ok:
            raise ValueError("latent video contains non-finite values")
        return self


@dataclass
class NoiseSchedule:
    """Beta schedule with its precomputed cumulative signal weights."""

    betas: np.ndarray
    alpha_bar: np.ndarray

    @property
    def tau(self):
        return len(self.betas)

    @staticmethod
    def from_betas(betas, validate=True):
        """Build a schedule; validate=False admits degenerate test schedules
        (for example all-zero betas) that break the monotonicity invariant."""
        betas = np.asarray(betas, dtype=np.float64)
        alpha_bar = np.cumprod(1.0 - betas)
        sched = NoiseSchedule(betas, alpha_bar)
        if validate:
            sched.validate()
        return sched

    @staticmethod
    def linear(tau=1000, beta_start=1e-4, beta_end=0.02):
        return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, tau))

    def validate(self):
        if self.betas.ndim != 1 or len(self.betas) < 1:
            raise ValueError("betas must be a nonempty 1-D array")
        if not ((self.betas > 0) & (self.betas < 1)).all():
            raise ValueError("betas must lie strictly in (0,1)")
        if not ((self.alpha_bar > 0) & (self.alpha_bar < 1)).all():
            raise ValueError("alpha_bar must lie strictly in (0,1)")
        if not (np.diff(self.alpha_bar) < 0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        if np.abs(self.alpha_bar - np.cumprod(1.0 - self.betas)).max() > 1e-12:
            raise ValueError("alpha_bar inconsistent with betas")
        return self

    def alpha_bar_at(self, t):
        """alpha_bar for integer step(s) t in [0, tau]; step 0 is exactly 1."""
        t_arr = np.asarray(t)
        if (t_arr < 0).any() or (t_arr > self.tau).any():
            raise ValueError(f"step {t} outside [0, {self.tau}]")
        padded = np.concatenate([[1.0], self.alpha_bar])
        out = padded[t_arr]
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


def _coeffs(sched, t, like):
    """sqrt(alpha_bar_t) and sqrt(1-alpha_bar_t), shaped to broadcast over `like`."""
    ab = sched.alpha_bar_at(t)
    if np.isscalar(ab):
        return math.sqrt(ab), math.sqrt(1.0 - ab)
    shape = (len(ab),) + (1,) * (like.ndim - 1)
    ab = ab.reshape(shape)
    if torch.is_tensor(like):
        ab = torch.as_tensor(ab, dtype=like.dtype, device=like.device)
        return torch.sqrt(ab), torch.sqrt(1.0 - ab)
    return np.sqrt(ab), np.sqrt(1.0 - ab)


def _check_step(t, sched):
    t_arr = np.asarray(t)
    if (t_arr < 1).any() or (t_arr > sched.tau).any():
        raise ValueError(f"step {t} outside [1, {sched.tau}]")


def add_noise(z0, t, eps, sched: NoiseSchedule):
    """Forward noising z_t = sqrt(ab_t) z0 + sqrt(1-ab_t) eps.

    t may be a scalar step or a per-item integer array for batched z0.
    """
    _check_step(t, sched)
    if tuple(z0.shape) != tuple(eps.shape):
        raise ValueError("eps must match z0's shape")
    sa, sb = _coeffs(sched, t, z0)
    return sa * z0 + sb * eps


def recover_z0(z_t, t, eps, sched: NoiseSchedule):
    """Clean-latent estimate z0 = (z_t - sqrt(1-ab_t) eps) / sqrt(ab_t)."""
    _check_step(t, sched)
    ab = np.asarray(sched.alpha_bar_at(t))
    if (ab < ALPHA_BAR_FLOOR).any():
        raise ValueError(
            f"alpha_bar at step {t} below {ALPHA_BAR_FLOOR}; schedule too aggressive"
        )
    sa, sb = _coeffs(sched, t, z_t)
    return (z_t - sb * eps) / sa


def sampler_step(z_t, eps_hat, t, sched: NoiseSchedule, t_prev=None):
    """One deterministic update from step t to t_prev (default t-1).

    z_prev = sqrt(ab_prev) z0_hat + sqrt(1-ab_prev) eps_hat, with ab at
    step 0 equal to 1 so the final step returns the clean estimate.
    """
    _check_step(t, sched)
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev {t_prev} must lie in [0, {t})")
    finite = torch.isfinite(eps_hat).all() if torch.is_tensor(eps_hat) else np.isfinite(eps_hat).all()
    if not finite:
        raise ValueError("eps_hat contains non-finite values")
    z0_hat = recover_z0(z_t, t, eps_hat, sched)
    if t_prev == 0:
        return z0_hat
    sa, sb = _coeffs(sched, t_prev, z_t)
    return sa * z0_hat + sb * eps_hat


def stride_steps(tau, steps):
    """Descending step subsequence with uniform spacing, including tau and 1."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps > tau:
        raise ValueError(f"steps {steps} exceeds tau {tau}")
    seq = np.unique(np.rint(np.linspace(tau, 1, steps)).astype(int))[::-1]
    return [int(t) for t in seq]


def sample(predictor, init, conditions, sched: NoiseSchedule, steps):
    """Iterate the deterministic sampler from step tau down to step 1.

    `predictor(z, t, conditions)` returns the noise estimate for the plain
    latent z; conditioning (text tokens, mask channel) is the predictor's
    business. Deterministic given its inputs.
    """
    seq = stride_steps(sched.tau, steps)
    z = init
    for i, t in enumerate(seq):
        t_prev = seq[i + 1] if i + 1 < len(seq) else 0
        eps_hat = predictor(z, t, conditions)
        z = sampler_step(z, eps_hat, t, sched, t_prev=t_prev)
    return z
