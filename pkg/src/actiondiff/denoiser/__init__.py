from .lora import AdapterSet, LoRALinear
from .network import (
    ConditioningPack,
    NetworkConfig,
    StateTransformer,
    SPATIAL_STAGE,
    TEMPORAL_STAGE,
    default_spatial_adapters,
    default_temporal_adapters,
)

__all__ = [
    "AdapterSet",
    "ConditioningPack",
    "LoRALinear",
    "NetworkConfig",
    "SPATIAL_STAGE",
    "StateTransformer",
    "TEMPORAL_STAGE",
    "default_spatial_adapters",
    "default_temporal_adapters",
]
