from .scene import (
    ACTIONS,
    ACTION_NAMES,
    InfeasibleActionError,
    InstructionToken,
    ObjectSpec,
    PosedObject,
    SceneSpec,
    action_id,
    make_instruction,
    pose_scene,
)
from .render import (
    analytic_depth,
    analytic_edges,
    owner_map,
    render_clip,
    render_scene,
    sample_pair_indices,
    sample_state_pair,
    warp_consistency_mask,
)
from .generator import generate_sample, generate_split
from .io import SchemaError, read_dataset, read_manifest, write_dataset

__all__ = [
    "ACTIONS",
    "ACTION_NAMES",
    "InfeasibleActionError",
    "InstructionToken",
    "ObjectSpec",
    "PosedObject",
    "SceneSpec",
    "SchemaError",
    "action_id",
    "analytic_depth",
    "analytic_edges",
    "generate_sample",
    "generate_split",
    "make_instruction",
    "owner_map",
    "pose_scene",
    "read_dataset",
    "read_manifest",
    "render_clip",
    "render_scene",
    "sample_pair_indices",
    "sample_state_pair",
    "warp_consistency_mask",
    "write_dataset",
]
