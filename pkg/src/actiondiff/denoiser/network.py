"""Spatiotemporal noise-prediction U-Net with a temporal-disable switch.

The backbone is frozen at construction; all learning capacity lives in the
named adapter sets attached to attention projections.  Disabling the
temporal blocks flattens the network into an exact per-frame image model:
every remaining operation acts frame-wise, so frames are bitwise
independent.  Conditioning enters three ways: the initial-frame latent is
channel-concatenated at its clip position (zeros elsewhere, plus a position
mask channel), the instruction id selects a fixed embedding vector, and a
small query-attention projector pools the initial-frame latent into context
tokens for cross-attention.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .lora import AdapterSet, LoRALinear, iter_lora_layers

SPATIAL_STAGE = "spatial-stage"
TEMPORAL_STAGE = "temporal-stage"

CATEGORIES = ("spatial", "temporal", "context")

MANIPULATION = "manipulation"
PREDICTION = "prediction"


def default_spatial_adapters(rank: int = 8, dropout: float = 0.1, scaling: float = 1.0) -> AdapterSet:
    """Stage-1 set: spatial attention plus the context projector."""
    return AdapterSet(SPATIAL_STAGE, rank, dropout, scaling, targets=("spatial", "context"))


def default_temporal_adapters(rank: int = 4, dropout: float = 0.1, scaling: float = 1.0) -> AdapterSet:
    """Stage-2 set: joint spatiotemporal tuning."""
    return AdapterSet(TEMPORAL_STAGE, rank, dropout, scaling, targets=("spatial", "temporal"))


@dataclass(frozen=True)
class NetworkConfig:
    latent_channels: int = 48
    width: int = 64
    channel_mult: tuple[int, ...] = (1, 2)
    heads: int = 4
    embed_dim: int = 64
    context_tokens: int = 4
    time_dim: int = 64
    vocab_size: int = 12
    norm_groups: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.context_tokens < 1:
            raise ValueError("need at least one context token")
        for mult in self.channel_mult:
            ch = self.width * mult
            if ch % self.heads or ch % self.norm_groups:
                raise ValueError(f"width {ch} must divide heads and norm groups")


@dataclass
class ConditioningPack:
    """Per-clip conditioning: frame concat, instruction, context tokens."""

    instruction_emb: torch.Tensor  # (B, 1, D)
    context_tokens: torch.Tensor   # (B, K, D)
    cond_latents: torch.Tensor     # (B, L, C, h, w)
    mask: torch.Tensor             # (B, L), 1 at conditioned positions
    uncond: torch.Tensor           # (B,) bool

    def __post_init__(self):
        per_row = self.mask.sum(dim=1)
        if not torch.all(per_row == 1.0):
            raise ValueError("condition mask must flag exactly the initial position")


def _multihead(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int) -> torch.Tensor:
    b, nq, d = q.shape
    dh = d // heads
    q = q.view(b, nq, heads, dh).transpose(1, 2)
    k = k.view(b, -1, heads, dh).transpose(1, 2)
    v = v.view(b, -1, heads, dh).transpose(1, 2)
    attn = torch.softmax(q @ k.transpose(-1, -2) * dh**-0.5, dim=-1)
    return (attn @ v).transpose(1, 2).reshape(b, nq, d)


class SelfAttention2d(nn.Module):
    def __init__(self, channels: int, heads: int, groups: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(groups, channels)
        self.q = LoRALinear(channels, channels, "spatial")
        self.k = LoRALinear(channels, channels, "spatial")
        self.v = LoRALinear(channels, channels, "spatial")
        self.o = LoRALinear(channels, channels, "spatial")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        out = _multihead(self.q(tokens), self.k(tokens), self.v(tokens), self.heads)
        out = self.o(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class CrossAttention2d(nn.Module):
    def __init__(self, channels: int, ctx_dim: int, heads: int, groups: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(groups, channels)
        self.q = LoRALinear(channels, channels, "spatial")
        self.k = LoRALinear(ctx_dim, channels, "spatial")
        self.v = LoRALinear(ctx_dim, channels, "spatial")
        self.o = LoRALinear(channels, channels, "spatial")

    def forward(self, x: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        out = _multihead(self.q(tokens), self.k(ctx), self.v(ctx), self.heads)
        out = self.o(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class TemporalAttention(nn.Module):
    """Self-attention over the frame axis at each spatial location."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(channels)
        self.q = LoRALinear(channels, channels, "temporal")
        self.k = LoRALinear(channels, channels, "temporal")
        self.v = LoRALinear(channels, channels, "temporal")
        self.o = LoRALinear(channels, channels, "temporal")

    def forward(self, x: torch.Tensor, batch: int, length: int) -> torch.Tensor:
        bl, c, h, w = x.shape
        tokens = x.view(batch, length, c, h, w).permute(0, 3, 4, 1, 2)
        tokens = tokens.reshape(batch * h * w, length, c)
        y = self.norm(tokens)
        out = self.o(_multihead(self.q(y), self.k(y), self.v(y), self.heads))
        tokens = tokens + out
        tokens = tokens.view(batch, h, w, length, c).permute(0, 3, 4, 1, 2)
        return tokens.reshape(bl, c, h, w)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, c_out)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class UNetBlock(nn.Module):
    """ResBlock + spatial self-attn + cross-attn + optional temporal attn."""

    def __init__(self, c_in: int, c_out: int, cfg: NetworkConfig):
        super().__init__()
        self.res = ResBlock(c_in, c_out, cfg.time_dim, cfg.norm_groups)
        self.spatial = SelfAttention2d(c_out, cfg.heads, cfg.norm_groups)
        self.cross = CrossAttention2d(c_out, cfg.embed_dim, cfg.heads, cfg.norm_groups)
        self.temporal = TemporalAttention(c_out, cfg.heads)

    def forward(self, x, temb, ctx, batch, length, temporal_enabled):
        x = self.res(x, temb)
        x = self.spatial(x)
        x = self.cross(x, ctx)
        if temporal_enabled:
            x = self.temporal(x, batch, length)
        return x


class ContextProjector(nn.Module):
    """Pools initial-frame latent tokens into K context vectors."""

    def __init__(self, latent_channels: int, embed_dim: int, n_tokens: int):
        super().__init__()
        self.query_embed = nn.Parameter(torch.randn(n_tokens, embed_dim) * embed_dim**-0.5)
        self.q = LoRALinear(embed_dim, embed_dim, "context")
        self.k = LoRALinear(latent_channels, embed_dim, "context")
        self.v = LoRALinear(latent_channels, embed_dim, "context")
        self.o = LoRALinear(embed_dim, embed_dim, "context")

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        q = self.q(self.query_embed)[None].expand(tokens.shape[0], -1, -1)
        out = _multihead(q.to(tokens.dtype), self.k(tokens), self.v(tokens), heads=1)
        return self.o(out)


def _sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    angles = t[:, None] * freqs[None]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class StateTransformer(nn.Module):
    """Frozen U-Net backbone whose behaviour is set by active adapter sets."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            self._build(config)
        for p in self.parameters():
            p.requires_grad_(False)
        self._adapter_specs: dict[str, AdapterSet] = {}
        self._active: dict[str, bool] = {}

    def _build(self, cfg: NetworkConfig) -> None:
        c = cfg.latent_channels
        widths = [cfg.width * m for m in cfg.channel_mult]
        self.stem = nn.Conv2d(2 * c + 1, widths[0], 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim), nn.SiLU(), nn.Linear(cfg.time_dim, cfg.time_dim)
        )
        self.instruction_table = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.null_embedding = nn.Parameter(torch.randn(cfg.embed_dim) * 0.02)
        self.projector = ContextProjector(c, cfg.embed_dim, cfg.context_tokens)

        self.down_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = widths[0]
        for i, w in enumerate(widths):
            self.down_blocks.append(UNetBlock(prev, w, cfg))
            last = i == len(widths) - 1
            self.downs.append(nn.Identity() if last else nn.Conv2d(w, w, 3, stride=2, padding=1))
            prev = w
        self.mid_block = UNetBlock(prev, prev, cfg)
        self.up_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(widths))):
            w = widths[i]
            self.up_blocks.append(UNetBlock(prev + w, w, cfg))
            if i > 0:
                self.ups.append(
                    nn.Sequential(
                        nn.Upsample(scale_factor=2, mode="nearest"),
                        nn.Conv2d(w, widths[i - 1], 3, padding=1),
                    )
                )
                prev = widths[i - 1]
            else:
                self.ups.append(nn.Identity())
        self.out_norm = nn.GroupNorm(cfg.norm_groups, widths[0])
        self.out_conv = nn.Conv2d(widths[0], c, 3, padding=1)

    # ---- adapters -------------------------------------------------------

    def attach_adapters(self, spec: AdapterSet, seed: int | None = None) -> None:
        if spec.name in self._adapter_specs:
            raise ValueError(f"adapter set {spec.name!r} already attached")
        unknown = set(spec.targets) - set(CATEGORIES)
        if unknown:
            raise ValueError(f"unknown target layer categories: {sorted(unknown)}")
        gen = torch.Generator().manual_seed(self.config.seed if seed is None else seed)
        for layer in iter_lora_layers(self):
            if layer.category in spec.targets:
                layer.attach(spec, generator=gen)
        self._adapter_specs[spec.name] = spec
        self._active[spec.name] = True

    def has_adapters(self, name: str) -> bool:
        return name in self._adapter_specs

    def set_adapter_active(self, name: str, active: bool) -> None:
        if name not in self._adapter_specs:
            raise KeyError(f"no adapter set named {name!r}")
        self._active[name] = active
        for layer in iter_lora_layers(self):
            if name in layer.adapter_names():
                layer.set_active(name, active)

    def set_adapter_trainable(self, name: str, trainable: bool) -> None:
        if name not in self._adapter_specs:
            raise KeyError(f"no adapter set named {name!r}")
        for layer in iter_lora_layers(self):
            if name in layer.adapter_names():
                layer.set_trainable(name, trainable)

    def active_adapters(self) -> set[str]:
        return {name for name, on in self._active.items() if on}

    @contextlib.contextmanager
    def _adapter_scope(self, names: set[str] | None):
        if names is None:
            yield
            return
        missing = names - set(self._adapter_specs)
        if missing:
            raise KeyError(f"unknown adapter set(s): {sorted(missing)}")
        previous = dict(self._active)
        try:
            for name in self._adapter_specs:
                self.set_adapter_active(name, name in names)
            yield
        finally:
            for name, on in previous.items():
                self.set_adapter_active(name, on)

    def set_train_rng(self, generator: torch.Generator | None) -> None:
        """Route adapter dropout through an explicit, resumable generator."""
        for layer in iter_lora_layers(self):
            layer._rng_holder[0] = generator

    def parameter_groups(self) -> dict[str, dict[str, nn.Parameter]]:
        """Named groups: base, embeddings, adapter:<set> for checkpoints."""
        groups: dict[str, dict[str, nn.Parameter]] = {"base": {}, "embeddings": {}}
        for name in self._adapter_specs:
            groups[f"adapter:{name}"] = {}
        embed_markers = ("instruction_table", "null_embedding", "query_embed")
        for name, p in self.named_parameters():
            if ".lora_a." in name or ".lora_b." in name:
                groups[f"adapter:{name.rsplit('.', 1)[1]}"][name] = p
            elif any(marker in name for marker in embed_markers):
                groups["embeddings"][name] = p
            else:
                groups["base"][name] = p
        return groups

    def adapter_parameter_count(self, name: str) -> int:
        return sum(p.numel() for p in self.parameter_groups()[f"adapter:{name}"].values())

    # ---- conditioning ---------------------------------------------------

    def project_context(self, latent: torch.Tensor) -> torch.Tensor:
        """K context tokens from an initial-frame latent (B, C, h, w)."""
        tokens = latent.flatten(2).transpose(1, 2)
        return self.projector(tokens)

    def build_conditioning(
        self,
        codec,
        x0: torch.Tensor,
        instruction_ids: torch.Tensor,
        mode: str,
        length: int,
        uncond_drop: bool = False,
        rng: torch.Generator | None = None,
        drop_prob: float = 0.1,
        force_uncond: bool = False,
    ) -> ConditioningPack:
        """Initial frame fixed at position 0, zero padding at the rest."""
        if mode not in (MANIPULATION, PREDICTION):
            raise ValueError(f"unknown conditioning mode {mode!r}")
        if mode == MANIPULATION and length != 1:
            raise ValueError("manipulation mode conditions a single target frame")
        if x0.ndim == 3:
            x0 = x0[None]
        instruction_ids = torch.atleast_1d(torch.as_tensor(instruction_ids, dtype=torch.long))
        z0 = codec.encode(x0)
        b, c, h, w = z0.shape

        cond = z0.new_zeros(b, length, c, h, w)
        cond[:, 0] = z0
        mask = z0.new_zeros(b, length)
        mask[:, 0] = 1.0

        if force_uncond:
            uncond = torch.ones(b, dtype=torch.bool)
        elif uncond_drop and drop_prob > 0.0:
            uncond = torch.rand(b, generator=rng) < drop_prob
        else:
            uncond = torch.zeros(b, dtype=torch.bool)

        instr = self.instruction_table(instruction_ids)[:, None, :]
        ctx = self.project_context(z0)
        null = self.null_embedding.to(instr.dtype)[None, None, :]
        instr = torch.where(uncond[:, None, None], null, instr)
        ctx = torch.where(uncond[:, None, None], torch.zeros_like(ctx), ctx)
        return ConditioningPack(
            instruction_emb=instr, context_tokens=ctx, cond_latents=cond, mask=mask, uncond=uncond
        )

    # ---- forward --------------------------------------------------------

    def forward(
        self,
        noisy: torch.Tensor,
        t,
        pack: ConditioningPack,
        temporal_enabled: bool = True,
        active_adapters: set[str] | None = None,
    ) -> torch.Tensor:
        """Predict the noise for a (B, L, C, h, w) or single (L, C, h, w) clip."""
        single = noisy.ndim == 4
        if single:
            noisy = noisy[None]
        b, l, c, h, w = noisy.shape
        if pack.cond_latents.shape != noisy.shape:
            raise ValueError(
                f"conditioning latents {tuple(pack.cond_latents.shape)} do not match "
                f"noisy latents {tuple(noisy.shape)}"
            )

        t = torch.as_tensor(t, dtype=noisy.dtype)
        if t.ndim == 0:
            t = t.expand(b)
        temb = self.time_mlp(_sinusoidal_embedding(t, self.config.time_dim).to(noisy.dtype))
        temb = temb[:, None, :].expand(b, l, -1).reshape(b * l, -1)

        ctx = torch.cat([pack.instruction_emb, pack.context_tokens], dim=1)
        ctx = ctx[:, None].expand(b, l, *ctx.shape[1:]).reshape(b * l, *ctx.shape[1:])

        mask_ch = pack.mask.view(b, l, 1, 1, 1).expand(b, l, 1, h, w)
        x = torch.cat([noisy, pack.cond_latents, mask_ch], dim=2).reshape(b * l, 2 * c + 1, h, w)

        with self._adapter_scope(active_adapters):
            x = self.stem(x)
            skips = []
            for block, down in zip(self.down_blocks, self.downs):
                x = block(x, temb, ctx, b, l, temporal_enabled)
                skips.append(x)
                x = down(x)
            x = self.mid_block(x, temb, ctx, b, l, temporal_enabled)
            for block, up in zip(self.up_blocks, self.ups):
                x = block(torch.cat([x, skips.pop()], dim=1), temb, ctx, b, l, temporal_enabled)
                x = up(x)
            x = self.out_conv(nn.functional.silu(self.out_norm(x)))

        out = x.reshape(b, l, c, h, w)
        return out[0] if single else out
