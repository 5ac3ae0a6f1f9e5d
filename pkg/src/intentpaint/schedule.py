"""Noise schedules, the closed-form forward process, reverse samplers,
and classifier-free guidance in both its scalar and spatially varying forms.

Conventions:
    q(z_t | z_0) = N(sqrt(abar_t) z_0, (1 - abar_t) I)      forward process
    eps_tilde = (1 + w) eps_pos - w eps_neg                  scalar guidance
    eps_tilde = w M eps_c + (1 - w M) eps_r   per pixel      spatial guidance

where abar_t is the cumulative product of (1 - beta_s) and M is a ternary
per-pixel intent field: +1 creation, -1 removal, 0 not applied.

All functions here are pure: no hidden state, safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TERNARY_VALUES = (-1, 0, 1)


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed per-step noise levels for a T-step diffusion process.

    betas[t] is the variance added at step t; alpha_bars[t] is the
    cumulative product of (1 - beta_s) for s <= t, strictly decreasing.
    """

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"schedule needs T >= 1, got {self.T}")
        if len(self.betas) != self.T or len(self.alpha_bars) != self.T:
            raise ValueError("betas and alpha_bars must have length T")


def build_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear-beta schedule: betas interpolate from beta_start to beta_end."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(T=T, betas=betas, alpha_bars=alpha_bars)


def forward_noise(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form noising: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps."""
    if z0.shape != eps.shape:
        raise ValueError(f"z0 shape {z0.shape} != eps shape {eps.shape}")
    if not (0 <= t < sched.T):
        raise ValueError(f"t={t} outside [0, {sched.T})")
    ab = sched.alpha_bars[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def cfg_scalar(eps_pos: np.ndarray, eps_neg: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance with one global weight: (1+w)*pos - w*neg."""
    if eps_pos.shape != eps_neg.shape:
        raise ValueError(f"shape mismatch: {eps_pos.shape} vs {eps_neg.shape}")
    return (1.0 + w) * eps_pos - w * eps_neg


def cfg_spatial(eps_c: np.ndarray, eps_r: np.ndarray, M, w: float) -> np.ndarray:
    """Spatially varying guidance: per pixel, w*M*eps_c + (1 - w*M)*eps_r.

    M may be a TernaryIntentMask or a plain array of values in {-1, 0, +1};
    its last two dims must match the spatial dims of the predictions, and it
    broadcasts across channel (and batch) dims.
    """
    if eps_c.shape != eps_r.shape:
        raise ValueError(f"shape mismatch: {eps_c.shape} vs {eps_r.shape}")
    m = M.values if isinstance(M, TernaryIntentMask) else np.asarray(M)
    if m.shape[-2:] != eps_c.shape[-2:]:
        raise ValueError(
            f"mask spatial dims {m.shape[-2:]} != prediction dims {eps_c.shape[-2:]}"
        )
    wm = w * m.astype(eps_c.dtype)
    return wm * eps_c + (1.0 - wm) * eps_r


def ddpm_step(
    z_t: np.ndarray, eps_tilde: np.ndarray, t: int, sched: NoiseSchedule, noise: np.ndarray
) -> np.ndarray:
    """Ancestral reverse step t -> t-1 with variance beta_t.

    mu = (z_t - beta_t / sqrt(1 - abar_t) * eps_tilde) / sqrt(1 - beta_t);
    at t=0 the update is deterministic (returns mu).
    """
    if z_t.shape != eps_tilde.shape or z_t.shape != noise.shape:
        raise ValueError("z_t, eps_tilde and noise must share a shape")
    if not (0 <= t < sched.T):
        raise ValueError(f"t={t} outside [0, {sched.T})")
    beta = sched.betas[t]
    ab = sched.alpha_bars[t]
    mu = (z_t - beta / np.sqrt(1.0 - ab) * eps_tilde) / np.sqrt(1.0 - beta)
    if t == 0:
        return mu
    return mu + np.sqrt(beta) * noise


def ddim_step(
    z_t: np.ndarray, eps_tilde: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule
) -> np.ndarray:
    """Deterministic reverse step t -> t_prev.

    Predicts z0 from (z_t, eps_tilde, abar_t) and re-noises it to abar_{t_prev}
    with the same eps_tilde. t_prev = -1 denotes the clean endpoint (abar = 1).
    """
    if z_t.shape != eps_tilde.shape:
        raise ValueError(f"z_t shape {z_t.shape} != eps_tilde shape {eps_tilde.shape}")
    if not (0 <= t < sched.T):
        raise ValueError(f"t={t} outside [0, {sched.T})")
    if not (-1 <= t_prev < t):
        raise ValueError(f"need -1 <= t_prev < t, got t_prev={t_prev}, t={t}")
    ab_t = sched.alpha_bars[t]
    ab_prev = 1.0 if t_prev < 0 else sched.alpha_bars[t_prev]
    z0_hat = (z_t - np.sqrt(1.0 - ab_t) * eps_tilde) / np.sqrt(ab_t)
    return np.sqrt(ab_prev) * z0_hat + np.sqrt(1.0 - ab_prev) * eps_tilde


@dataclass(frozen=True)
class TernaryIntentMask:
    """Per-pixel intent field: +1 creation, -1 removal, 0 not applied."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {v.shape}")
        if not np.isin(v, TERNARY_VALUES).all():
            bad = v[~np.isin(v, TERNARY_VALUES)][0]
            raise ValueError(f"mask entries must be -1, 0 or +1; found {bad}")
        object.__setattr__(self, "values", v.astype(np.int8))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def binary_mask(self) -> np.ndarray:
        """Derived inpaint mask: 1 where intent is nonzero."""
        return (self.values != 0).astype(np.uint8)


def downsample_ternary(M: TernaryIntentMask, factor: int) -> TernaryIntentMask:
    """Block-reduce a ternary mask by `factor`, re-quantizing each block.

    Each output cell is the sign of its block mean, with a symmetric deadzone:
    block means in [-1/3, 1/3] map to 0. Integer arithmetic keeps the deadzone
    boundary exact: mean in the deadzone iff 3*|block sum| <= factor**2.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = M.height, M.width
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide mask dims {h}x{w}")
    if factor == 1:
        return M
    blocks = M.values.astype(np.int64).reshape(h // factor, factor, w // factor, factor)
    sums = blocks.sum(axis=(1, 3))
    out = np.sign(sums).astype(np.int8)
    out[3 * np.abs(sums) <= factor * factor] = 0
    return TernaryIntentMask(out)


@dataclass(frozen=True)
class GuidanceConfig:
    """Sampling configuration for guided inference."""

    w: float = 2.0
    sampler: str = "ddim"
    steps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.w < 0:
            raise ValueError(f"guidance weight must be >= 0, got {self.w}")
        if self.sampler not in ("ddpm", "ddim"):
            raise ValueError(f"sampler must be 'ddpm' or 'ddim', got {self.sampler!r}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    def validate_against(self, sched: NoiseSchedule) -> None:
        if self.steps > sched.T:
            raise ValueError(f"steps={self.steps} exceeds schedule length T={sched.T}")
        if self.sampler == "ddpm" and self.steps != sched.T:
            raise ValueError(
                f"ddpm sampling walks the full chain: steps must equal T={sched.T}"
            )
