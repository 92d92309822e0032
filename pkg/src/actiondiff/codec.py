"""Exactly invertible, differentiable latent codec.

A fixed linear map stands in for a trained autoencoder: space-to-depth by a
patch size p, an orthonormal channel mixing matrix, and a per-channel affine
whitening fitted once on the training split.  Because the map is linear and
orthonormal, decode is the exact inverse of encode and reward gradients flow
through it without approximation.
"""

from __future__ import annotations

import numpy as np
import torch

DEFAULT_PATCH = 4


class ShapeError(ValueError):
    """Input dimensions incompatible with the codec geometry."""


class PatchCodec:
    """Frame (3, H, W) <-> latent (3 * p * p, H / p, W / p)."""

    def __init__(
        self,
        patch: int = DEFAULT_PATCH,
        seed: int = 0,
        mixing: np.ndarray | None = None,
        shift: np.ndarray | None = None,
        scale: np.ndarray | None = None,
    ):
        self.patch = int(patch)
        self.channels = 3 * self.patch * self.patch
        if mixing is None:
            rng = np.random.default_rng(seed)
            raw = rng.standard_normal((self.channels, self.channels))
            mixing, _ = np.linalg.qr(raw)
        self.mixing = np.asarray(mixing, dtype=np.float64)
        if self.mixing.shape != (self.channels, self.channels):
            raise ShapeError(f"mixing matrix must be {self.channels}x{self.channels}")
        self.shift = np.zeros(self.channels) if shift is None else np.asarray(shift, dtype=np.float64)
        self.scale = np.ones(self.channels) if scale is None else np.asarray(scale, dtype=np.float64)
        self._m = torch.from_numpy(self.mixing)
        self._shift = torch.from_numpy(self.shift)
        self._scale = torch.from_numpy(self.scale)

    def orthonormality_error(self) -> float:
        gram = self.mixing.T @ self.mixing
        return float(np.abs(gram - np.eye(self.channels)).max())

    def latent_hw(self, frame_hw: tuple[int, int]) -> tuple[int, int]:
        h, w = frame_hw
        if h % self.patch or w % self.patch:
            raise ShapeError(f"frame {h}x{w} not divisible by patch {self.patch}")
        return h // self.patch, w // self.patch

    def _check_latent(self, latent: torch.Tensor) -> None:
        if latent.shape[-3] != self.channels:
            raise ShapeError(
                f"latent has {latent.shape[-3]} channels, codec expects {self.channels}"
            )

    def encode(self, frame: torch.Tensor) -> torch.Tensor:
        """Space-to-depth, orthonormal mix, affine whitening, all linear."""
        if frame.shape[-3] != 3:
            raise ShapeError(f"frame must have 3 channels, got {frame.shape[-3]}")
        h, w = self.latent_hw(frame.shape[-2:])
        p = self.patch
        lead = frame.shape[:-3]
        x = frame.reshape(*lead, 3, h, p, w, p).to(torch.float64)
        x = x.permute(*range(len(lead)), -5, -3, -1, -4, -2)  # (..., 3, p, p, h, w)
        x = x.reshape(*lead, self.channels, h, w)
        y = torch.einsum("dc,...chw->...dhw", self._m, x)
        z = (y - self._shift.view(-1, 1, 1)) * self._scale.view(-1, 1, 1)
        return z.to(frame.dtype)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """Exact inverse of encode; differentiable."""
        self._check_latent(latent)
        h, w = latent.shape[-2:]
        p = self.patch
        lead = latent.shape[:-3]
        y = latent.to(torch.float64) / self._scale.view(-1, 1, 1) + self._shift.view(-1, 1, 1)
        x = torch.einsum("dc,...dhw->...chw", self._m, y)  # transpose = inverse
        x = x.reshape(*lead, 3, p, p, h, w)
        x = x.permute(*range(len(lead)), -5, -2, -4, -1, -3)
        frame = x.reshape(*lead, 3, h * p, w * p)
        return frame.to(latent.dtype)

    def encode_clip(self, frames: torch.Tensor) -> torch.Tensor:
        """Per-frame encode of a (L, 3, H, W) clip; no temporal mixing."""
        return self.encode(frames)

    def decode_clip(self, latents: torch.Tensor) -> torch.Tensor:
        return self.decode(latents)

    def fit_whitening(self, frames: torch.Tensor, floor: float = 1e-6) -> None:
        """Set shift/scale so training-split latents are near unit variance."""
        with torch.no_grad():
            p = self.patch
            h, w = self.latent_hw(frames.shape[-2:])
            x = frames.reshape(-1, 3, h, p, w, p).to(torch.float64)
            x = x.permute(0, 1, 3, 5, 2, 4).reshape(-1, self.channels, h, w)
            y = torch.einsum("dc,nchw->ndhw", self._m, x)
            flat = y.permute(1, 0, 2, 3).reshape(self.channels, -1)
            mean = flat.mean(dim=1)
            std = flat.std(dim=1, unbiased=False).clamp_min(floor)
        self.shift = mean.numpy().copy()
        self.scale = (1.0 / std).numpy().copy()
        self._shift = torch.from_numpy(self.shift)
        self._scale = torch.from_numpy(self.scale)

    def state_dict(self) -> dict:
        return {
            "patch": self.patch,
            "mixing": self.mixing.copy(),
            "shift": self.shift.copy(),
            "scale": self.scale.copy(),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "PatchCodec":
        return cls(
            patch=state["patch"],
            mixing=state["mixing"],
            shift=state["shift"],
            scale=state["scale"],
        )
