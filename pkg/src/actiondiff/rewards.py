"""Structure and motion consistency rewards.

Structure rewards compare frozen reward-model outputs (a small depth
regressor and a fixed edge operator) on the decoded one-step-denoised image
against the same models applied to the ground-truth target, as a mean
absolute difference.  The motion reward never decodes: it aligns the
temporal distribution of latent frame-difference magnitudes with the
temporal distribution of downsampled ground-truth flow magnitudes via a
per-location KL divergence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .synthworld.render import LUMA_WEIGHTS, SOBEL_X, SOBEL_Y

NORMALIZE_FLOOR = 1e-6
STRUCTURE_GAMMA = 200
MOTION_GAMMA = 500
MOTION_WEIGHT = 1e-3

_MAG_EPS = 1e-24  # keeps the channel-norm gradient finite at zero difference


class TrainingDivergence(RuntimeError):
    """A reward model failed to reach its required held-out accuracy."""


def sobel_edges(frames: torch.Tensor) -> torch.Tensor:
    """Differentiable twin of synthworld.analytic_edges for (..., 3, H, W)."""
    lead = frames.shape[:-3]
    x = frames.reshape(-1, 3, *frames.shape[-2:])
    luma = torch.einsum("c,nchw->nhw", torch.tensor(LUMA_WEIGHTS, dtype=x.dtype), x)[:, None]
    kx = torch.tensor(SOBEL_X, dtype=x.dtype)[None, None]
    ky = torch.tensor(SOBEL_Y, dtype=x.dtype)[None, None]
    padded = F.pad(luma, (1, 1, 1, 1), mode="replicate")
    gx = F.conv2d(padded, kx)
    gy = F.conv2d(padded, ky)
    mag = torch.sqrt(gx * gx + gy * gy + _MAG_EPS)
    peak = mag.amax(dim=(-1, -2), keepdim=True).clamp_min(1e-8)
    mag = torch.where(peak > 1e-7, mag / peak, torch.zeros_like(mag))
    return mag.reshape(*lead, 1, *frames.shape[-2:])


class DepthRegressor(nn.Module):
    """Small encoder-decoder predicting the analytic depth map from RGB."""

    def __init__(self, width: int = 16, seed: int = 0):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            w = width
            self.enc1 = nn.Sequential(nn.Conv2d(3, w, 3, padding=1), nn.SiLU())
            self.enc2 = nn.Sequential(nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.SiLU())
            self.enc3 = nn.Sequential(nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1), nn.SiLU())
            self.up = nn.Upsample(scale_factor=2, mode="nearest")
            self.dec2 = nn.Sequential(nn.Conv2d(4 * w, 2 * w, 3, padding=1), nn.SiLU())
            self.dec1 = nn.Sequential(nn.Conv2d(3 * w, w, 3, padding=1), nn.SiLU())
            self.head = nn.Conv2d(w, 1, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h1 = self.enc1(x)
        h2 = self.enc2(h1)
        h3 = self.enc3(h2)
        u2 = self.dec2(torch.cat([self.up(h3), h2], dim=1))
        u1 = self.dec1(torch.cat([self.up(u2), h1], dim=1))
        return torch.sigmoid(self.head(u1))


@dataclass
class RewardBundle:
    """Frozen structure reward models plus the motion-reward configuration."""

    depth_model: DepthRegressor | None = None
    depth_weight: float = 1.0
    edge_weight: float = 1.0
    motion_weight: float = MOTION_WEIGHT
    structure_gamma: int = STRUCTURE_GAMMA
    motion_gamma: int = MOTION_GAMMA
    floor: float = NORMALIZE_FLOOR

    def reward_models(self) -> list[tuple[str, float]]:
        models = []
        if self.depth_model is not None and self.depth_weight > 0.0:
            models.append(("depth", self.depth_weight))
        if self.edge_weight > 0.0:
            models.append(("edge", self.edge_weight))
        return models


def structure_terms(
    decoded: torch.Tensor, target: torch.Tensor, bundle: RewardBundle
) -> dict[str, torch.Tensor]:
    """Per-model mean absolute differences between reward-model outputs."""
    if decoded.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(decoded.shape)} vs {tuple(target.shape)}")
    terms: dict[str, torch.Tensor] = {}
    if bundle.depth_model is not None:
        model = bundle.depth_model
        pred = model(decoded.reshape(-1, *decoded.shape[-3:]))
        with torch.no_grad():
            ref = model(target.reshape(-1, *target.shape[-3:]))
        terms["depth"] = (pred - ref).abs().mean()
    terms["edge"] = (sobel_edges(decoded) - sobel_edges(target).detach()).abs().mean()
    return terms


def structure_reward(z0_hat: torch.Tensor, target: torch.Tensor, bundle: RewardBundle, codec) -> torch.Tensor:
    """Mean over reward models of |R_i(decode(z0_hat)) - R_i(target)|_1."""
    decoded = codec.decode(z0_hat)
    terms = structure_terms(decoded, target, bundle)
    models = bundle.reward_models()
    if not models:
        raise ValueError("reward bundle holds no active structure reward models")
    total = sum(weight * terms[name] for name, weight in models)
    return total / len(models)


def latent_motion_magnitude(latents: torch.Tensor) -> torch.Tensor:
    """Channel-wise L2 of consecutive frame differences: (..., L-1, h, w)."""
    if latents.shape[-4] < 2:
        raise ValueError("need at least two frames for a temporal magnitude")
    diff = latents[..., 1:, :, :, :] - latents[..., :-1, :, :, :]
    return torch.sqrt((diff * diff).sum(dim=-3) + _MAG_EPS)


def temporal_normalize(seq: torch.Tensor, floor: float = NORMALIZE_FLOOR) -> torch.Tensor:
    """Normalize over the temporal axis so each location sums to one."""
    x = seq + floor
    return x / x.sum(dim=-3, keepdim=True)


def downsample_flow(flow: torch.Tensor, latent_hw: tuple[int, int]) -> torch.Tensor:
    """Per-pixel flow magnitude, area-averaged down to the latent grid."""
    h, w = latent_hw
    height, width = flow.shape[-2:]
    if height % h or width % w:
        raise ValueError(f"flow {height}x{width} not divisible by latent {h}x{w}")
    mag = torch.sqrt((flow * flow).sum(dim=-3) + _MAG_EPS)
    lead = mag.shape[:-2]
    pooled = F.avg_pool2d(mag.reshape(-1, 1, height, width), (height // h, width // w))
    return pooled.reshape(*lead, h, w)


def kl_divergence(p: torch.Tensor, q: torch.Tensor, floor: float = 0.0) -> torch.Tensor:
    """KL(P || Q) summed over the temporal axis, with 0 * log 0 = 0."""
    ratio = (p + floor) / (q + floor)
    return torch.special.xlogy(p, ratio).sum(dim=-3)


def motion_reward(z0_hat: torch.Tensor, flows: torch.Tensor, bundle: RewardBundle) -> torch.Tensor:
    """E_{h,w}[ KL(P || Q) ] between flow and latent temporal distributions.

    Gradients reach z0_hat through Q only; the flow side is ground truth.
    """
    frames = z0_hat.shape[-4]
    if flows.shape[-4] != frames - 1:
        raise ValueError(f"{flows.shape[-4]} flow steps do not match {frames} frames")
    if flows.shape[-3] != 2:
        raise ValueError("flow must carry (dx, dy) channels")
    q = temporal_normalize(latent_motion_magnitude(z0_hat), bundle.floor)
    with torch.no_grad():
        p = temporal_normalize(downsample_flow(flows, z0_hat.shape[-2:]), bundle.floor)
    return kl_divergence(p, q, bundle.floor).mean()


def _collect_frames(samples) -> tuple[torch.Tensor, torch.Tensor]:
    frames = np.concatenate([s.frames for s in samples])
    depths = np.concatenate([s.depths for s in samples])
    return torch.from_numpy(frames), torch.from_numpy(depths)


def train_depth_reward(
    samples,
    val_samples=None,
    steps: int = 600,
    batch_size: int = 16,
    lr: float = 2e-3,
    seed: int = 0,
    width: int = 16,
    max_mae: float = 0.1,
) -> tuple[DepthRegressor, dict]:
    """Fit the depth regressor on rendered frames; freeze it afterwards.

    Raises TrainingDivergence when the held-out MAE exceeds `max_mae`.
    """
    frames, depths = _collect_frames(samples)
    model = DepthRegressor(width=width, seed=seed)
    optim = torch.optim.Adam(model.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    model.train()
    for _ in range(steps):
        idx = torch.randint(len(frames), (batch_size,), generator=gen)
        pred = model(frames[idx])
        loss = F.mse_loss(pred, depths[idx])
        optim.zero_grad()
        loss.backward()
        optim.step()
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)

    eval_frames, eval_depths = _collect_frames(val_samples) if val_samples else (frames, depths)
    with torch.no_grad():
        preds = torch.cat(
            [model(eval_frames[i : i + 64]) for i in range(0, len(eval_frames), 64)]
        )
        mae = float((preds - eval_depths).abs().mean())
    report = {"mae": mae, "steps": steps, "held_out": val_samples is not None}
    if mae > max_mae:
        raise TrainingDivergence(f"depth reward MAE {mae:.4f} exceeds {max_mae}")
    return model, report
