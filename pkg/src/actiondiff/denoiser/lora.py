"""Low-rank adapters on frozen linear projections.

Each adapted projection computes  y = W x + sum_active scaling * B (A x),
with B zero-initialized so a freshly attached adapter is an exact identity.
Several named adapter sets can share one projection; activation and
trainability are toggled per set without touching the frozen base weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class AdapterSet:
    """Descriptor of one named adapter set and where it plugs in."""

    name: str
    rank: int
    dropout: float = 0.1
    scaling: float = 1.0
    targets: tuple[str, ...] = ("spatial",)  # layer categories to adapt

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


class LoRALinear(nn.Module):
    """A bias-free linear layer with a frozen weight and attachable adapters."""

    def __init__(self, in_features: int, out_features: int, category: str):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.category = category
        self.weight = nn.Parameter(torch.empty(out_features, in_features), requires_grad=False)
        nn.init.kaiming_uniform_(self.weight, a=5**0.5)
        self.lora_a = nn.ParameterDict()
        self.lora_b = nn.ParameterDict()
        self._meta: dict[str, tuple[float, float]] = {}  # name -> (scaling, dropout)
        self._active: dict[str, bool] = {}
        self._rng_holder: list = [None]  # shared with the owning network

    def attach(self, spec: AdapterSet, generator: torch.Generator | None = None) -> None:
        if spec.name in self.lora_a:
            raise ValueError(f"adapter {spec.name!r} already attached to this layer")
        a = torch.empty(spec.rank, self.in_features)
        a.normal_(0.0, self.in_features**-0.5, generator=generator)
        b = torch.zeros(self.out_features, spec.rank)  # identity at attach time
        self.lora_a[spec.name] = nn.Parameter(a, requires_grad=False)
        self.lora_b[spec.name] = nn.Parameter(b, requires_grad=False)
        self._meta[spec.name] = (spec.scaling, spec.dropout)
        self._active[spec.name] = True

    def adapter_names(self):
        return list(self._meta)

    def set_active(self, name: str, active: bool) -> None:
        if name not in self._meta:
            raise KeyError(f"no adapter {name!r} on this layer")
        self._active[name] = active

    def set_trainable(self, name: str, trainable: bool) -> None:
        if name not in self._meta:
            raise KeyError(f"no adapter {name!r} on this layer")
        self.lora_a[name].requires_grad_(trainable)
        self.lora_b[name].requires_grad_(trainable)

    def effective_weight(self) -> torch.Tensor:
        """Dense materialization of the currently active projection."""
        w = self.weight.clone()
        for name, (scaling, _) in self._meta.items():
            if self._active[name]:
                w = w + scaling * (self.lora_b[name] @ self.lora_a[name])
        return w

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.linear(x, self.weight)
        for name, (scaling, dropout) in self._meta.items():
            if not self._active[name]:
                continue
            h = x
            if self.training and dropout > 0.0:
                gen = self._rng_holder[0]
                keep = torch.rand(h.shape, generator=gen, dtype=h.dtype) >= dropout
                h = h * keep / (1.0 - dropout)
            y = y + scaling * F.linear(F.linear(h, self.lora_a[name]), self.lora_b[name])
        return y


def iter_lora_layers(module: nn.Module):
    for layer in module.modules():
        if isinstance(layer, LoRALinear):
            yield layer
