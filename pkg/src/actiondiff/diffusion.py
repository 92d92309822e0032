"""Noise schedule, forward noising, one-step inversion, CFG, DDIM sampling.

Timesteps are 1-indexed: t in [1, T].  The schedule keeps float64 arrays so
the cumulative products match a sequential-multiply oracle to 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

# guards the 1 / sqrt(alpha_bar) inversion at the noisiest steps
SQRT_ALPHA_FLOOR = 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray       # (T,) in (0, 1)
    alpha_bars: np.ndarray  # (T,) cumulative products of (1 - beta)

    @property
    def total_steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t) -> torch.Tensor:
        """alpha_bar at 1-indexed step(s) t, as a float64 tensor."""
        t_idx = torch.as_tensor(t, dtype=torch.long) - 1
        if torch.any(t_idx < 0) or torch.any(t_idx >= self.total_steps):
            raise ValueError(f"timestep out of range [1, {self.total_steps}]")
        return torch.from_numpy(self.alpha_bars)[t_idx]


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 7.5
    drop_prob: float = 0.1  # unconditional-drop probability during training

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError(f"drop probability must be in [0, 1], got {self.drop_prob}")
        if self.scale < 0.0:
            raise ValueError(f"guidance scale must be >= 0, got {self.scale}")


def make_linear_schedule(
    total_steps: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02
) -> NoiseSchedule:
    if total_steps < 1:
        raise ValueError(f"need at least one step, got {total_steps}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"invalid beta range [{beta_min}, {beta_max}]")
    betas = np.linspace(beta_min, beta_max, total_steps, dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(betas=betas, alpha_bars=alpha_bars)


def _gather_ab(schedule: NoiseSchedule, t, like: torch.Tensor) -> torch.Tensor:
    """Broadcast alpha_bar(t) against a (B, ...) or unbatched tensor."""
    ab = schedule.alpha_bar(t).to(like.dtype)
    if ab.ndim == 0:
        return ab
    return ab.view(-1, *([1] * (like.ndim - 1)))


def forward_diffuse(z0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    if eps.shape != z0.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != latent shape {tuple(z0.shape)}")
    ab = _gather_ab(schedule, t, z0)
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps


def noise_loss(eps_hat: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements."""
    if eps_hat.shape != eps.shape:
        raise ValueError(f"shape mismatch {tuple(eps_hat.shape)} vs {tuple(eps.shape)}")
    return ((eps_hat - eps) ** 2).mean()


def one_step_denoise(z_t: torch.Tensor, eps_hat: torch.Tensor, t, schedule: NoiseSchedule) -> torch.Tensor:
    """Algebraic inversion to the clean latent: (z_t - sqrt(1-ab) eps) / sqrt(ab)."""
    ab = _gather_ab(schedule, t, z_t)
    denom = ab.sqrt().clamp_min(SQRT_ALPHA_FLOOR)
    return (z_t - (1.0 - ab).sqrt() * eps_hat) / denom


def cfg_epsilon(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """Classifier-free guidance: eps_u + s * (eps_c - eps_u)."""
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError("conditional/unconditional predictions must share a shape")
    if scale < 0.0:
        raise ValueError(f"guidance scale must be >= 0, got {scale}")
    return eps_uncond + scale * (eps_cond - eps_uncond)


def ddim_timesteps(total_steps: int, steps: int) -> np.ndarray:
    """Uniformly strided descending timesteps from T down to 1."""
    if not 1 <= steps <= total_steps:
        raise ValueError(f"steps must be in [1, {total_steps}], got {steps}")
    taus = np.unique(np.round(np.linspace(total_steps, 1, steps)).astype(np.int64))
    return taus[::-1].copy()


def ddim_sample(
    predictor,
    conditioning,
    schedule: NoiseSchedule,
    shape: tuple[int, ...],
    steps: int = 50,
    seed: int = 0,
    guidance: GuidanceConfig | None = None,
    uncond_conditioning=None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Deterministic DDIM (eta = 0) from a seeded Gaussian draw.

    `predictor(z_t, conditioning, t)` returns the predicted noise.  When a
    guidance config with scale != 1 is given, the unconditional prediction is
    taken with `uncond_conditioning` and combined via cfg_epsilon.
    """
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(shape, generator=gen, dtype=dtype)
    use_cfg = guidance is not None and guidance.scale != 1.0
    if use_cfg and uncond_conditioning is None:
        raise ValueError("guidance scale != 1 requires an unconditional conditioning")

    taus = ddim_timesteps(schedule.total_steps, steps)
    with torch.no_grad():
        for i, t in enumerate(taus):
            t = int(t)
            eps = predictor(z, conditioning, t)
            if eps.shape != z.shape:
                raise ValueError(f"predictor returned {tuple(eps.shape)}, expected {tuple(z.shape)}")
            if use_cfg:
                eps_u = predictor(z, uncond_conditioning, t)
                eps = cfg_epsilon(eps, eps_u, guidance.scale)
            z0_hat = one_step_denoise(z, eps, t, schedule)
            if i + 1 < len(taus):
                ab_next = _gather_ab(schedule, int(taus[i + 1]), z)
                z = ab_next.sqrt() * z0_hat + (1.0 - ab_next).sqrt() * eps
            else:
                z = z0_hat
    return z
