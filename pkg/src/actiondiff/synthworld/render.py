"""Deterministic hard rasterization with analytic depth, edge, and flow maps.

No anti-aliasing: a pixel belongs to the nearest shape covering its center,
so every supervision map is exact by construction.  Flow at a pixel is the
forward displacement of the shape that owns it; non-moving shapes and the
background carry exactly zero flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import (
    InstructionToken,
    MotionPlan,
    PosedObject,
    SceneSpec,
    RECT_HALF_H_FACTOR,
    plan_action,
    pose_scene,
)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass
class SyntheticSample:
    """One rendered clip with its analytic supervision and instruction."""

    frames: np.ndarray  # (L, 3, H, W) float32 in [0, 1]
    depths: np.ndarray  # (L, 1, H, W) float32, background = 1.0
    edges: np.ndarray   # (L, 1, H, W) float32 in [0, 1]
    flows: np.ndarray   # (L-1, 2, H, W) float32, channels (dx, dy)
    instruction: InstructionToken
    scene: SceneSpec

    @property
    def length(self) -> int:
        return self.frames.shape[0]


def _pixel_grid(canvas: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    h, w = canvas
    ys, xs = np.mgrid[0:h, 0:w]
    return xs + 0.5, ys + 0.5


def _inside_mask(obj: PosedObject, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    dx = px - obj.center[0]
    dy = py - obj.center[1]
    if obj.kind == "disc":
        r = 0.5 * obj.size * obj.scale
        return dx * dx + dy * dy <= r * r
    # rotate into the object frame
    ca, sa = np.cos(obj.angle), np.sin(obj.angle)
    qx = ca * dx + sa * dy
    qy = -sa * dx + ca * dy
    if obj.kind == "rectangle":
        hx = 0.5 * obj.size * obj.scale
        hy = RECT_HALF_H_FACTOR * obj.size * obj.scale
        return (np.abs(qx) <= hx) & (np.abs(qy) <= hy)
    # isoceles triangle, apex up, vertices on a circle of radius size/2
    r = 0.5 * obj.size * obj.scale
    verts = [
        (r * np.cos(a), r * np.sin(a))
        for a in (-np.pi / 2.0, np.pi / 6.0, 5.0 * np.pi / 6.0)
    ]
    inside = np.ones_like(qx, dtype=bool)
    for k in range(3):
        ax, ay = verts[k]
        bx, by = verts[(k + 1) % 3]
        cross = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
        inside &= cross >= 0.0
    return inside


def owner_map(posed: list[PosedObject], canvas: tuple[int, int]) -> np.ndarray:
    """Index of the nearest covering object per pixel, -1 for background."""
    px, py = _pixel_grid(canvas)
    owner = np.full(canvas, -1, dtype=np.int32)
    depth = np.full(canvas, np.inf)
    for i, obj in enumerate(posed):
        mask = _inside_mask(obj, px, py) & (obj.depth < depth)
        owner[mask] = i
        depth[mask] = obj.depth
    return owner


def render_scene(
    posed: list[PosedObject], canvas: tuple[int, int], background: tuple[float, float, float]
) -> np.ndarray:
    """Rasterize a posed scene to an RGB frame of shape (3, H, W)."""
    owner = owner_map(posed, canvas)
    frame = np.empty((3, *canvas))
    for c in range(3):
        frame[c] = background[c]
    for i, obj in enumerate(posed):
        mask = owner == i
        for c in range(3):
            frame[c][mask] = obj.color[c]
    return frame


def analytic_depth(posed: list[PosedObject], canvas: tuple[int, int]) -> np.ndarray:
    """Per-pixel nearest depth layer, 1.0 where only background is visible."""
    owner = owner_map(posed, canvas)
    depth = np.ones(canvas)
    for i, obj in enumerate(posed):
        depth[owner == i] = obj.depth
    return depth


def analytic_edges(frame: np.ndarray) -> np.ndarray:
    """Gradient magnitude of the luminance image, rescaled to max 1 per frame.

    Fixed 3x3 horizontal/vertical difference kernels with replicate padding;
    a constant frame maps to the all-zero edge map.
    """
    luma = np.tensordot(LUMA_WEIGHTS, frame, axes=([0], [0]))
    padded = np.pad(luma, 1, mode="edge")
    gx = np.zeros_like(luma)
    gy = np.zeros_like(luma)
    h, w = luma.shape
    for di in range(3):
        for dj in range(3):
            window = padded[di : di + h, dj : dj + w]
            gx += SOBEL_X[di, dj] * window
            gy += SOBEL_Y[di, dj] * window
    mag = np.sqrt(gx * gx + gy * gy)
    peak = mag.max()
    if peak < 1e-12:
        return np.zeros_like(mag)
    return mag / peak


def _flow_field(
    before: PosedObject, after: PosedObject, px: np.ndarray, py: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Forward displacement of the material point visible at each pixel."""
    dx = px - before.center[0]
    dy = py - before.center[1]
    dtheta = after.angle - before.angle
    ratio = after.scale / before.scale
    ca, sa = np.cos(dtheta), np.sin(dtheta)
    nx = after.center[0] + ratio * (ca * dx - sa * dy)
    ny = after.center[1] + ratio * (sa * dx + ca * dy)
    return nx - px, ny - py


def render_clip(scene: SceneSpec, instruction: InstructionToken, frames: int) -> SyntheticSample:
    """Render an instruction as a clip of `frames` frames with ground truth.

    Frame 0 is the initial state, frame `frames - 1` the completed action;
    intermediate frames interpolate the transform linearly in its parameter.
    Raises InfeasibleActionError when the action cannot run in this scene.
    """
    if not 2 <= frames <= 32:
        raise ValueError(f"frame count must be in [2, 32], got {frames}")
    plan = plan_action(scene, instruction, frames)
    px, py = _pixel_grid(scene.canvas)

    poses = [pose_scene(scene, plan, i / (frames - 1)) for i in range(frames)]
    rgb = np.stack([render_scene(p, scene.canvas, scene.background) for p in poses])
    depth = np.stack([analytic_depth(p, scene.canvas)[None] for p in poses])
    edge = np.stack([analytic_edges(f)[None] for f in rgb])

    flows = np.zeros((frames - 1, 2, *scene.canvas))
    for i in range(frames - 1):
        owner = owner_map(poses[i], scene.canvas)
        moving = owner == plan.mover
        fx, fy = _flow_field(poses[i][plan.mover], poses[i + 1][plan.mover], px, py)
        flows[i, 0][moving] = fx[moving]
        flows[i, 1][moving] = fy[moving]

    return SyntheticSample(
        frames=rgb.astype(np.float32),
        depths=depth.astype(np.float32),
        edges=edge.astype(np.float32),
        flows=flows.astype(np.float32),
        instruction=instruction,
        scene=scene,
    )


def clip_poses(scene: SceneSpec, instruction: InstructionToken, frames: int) -> tuple[MotionPlan, list[list[PosedObject]]]:
    plan = plan_action(scene, instruction, frames)
    return plan, [pose_scene(scene, plan, i / (frames - 1)) for i in range(frames)]


def warp_consistency_mask(sample: SyntheticSample, i: int) -> np.ndarray:
    """Pixels of frame i whose color is exactly explained by the flow to i+1.

    A pixel qualifies when its rounded flow destination is owned by the same
    object (or stays background) and that object's color did not change
    between the frames, i.e. it is neither disoccluded nor repainted.
    """
    plan, poses = clip_poses(sample.scene, sample.instruction, sample.length)
    owner_a = owner_map(poses[i], sample.scene.canvas)
    owner_b = owner_map(poses[i + 1], sample.scene.canvas)
    h, w = sample.scene.canvas
    ys, xs = np.mgrid[0:h, 0:w]
    tx = np.clip(np.round(xs + sample.flows[i, 0]).astype(int), 0, w - 1)
    ty = np.clip(np.round(ys + sample.flows[i, 1]).astype(int), 0, h - 1)
    same_owner = owner_a == owner_b[ty, tx]
    color_kept = np.ones((h, w), dtype=bool)
    for k, (pa, pb) in enumerate(zip(poses[i], poses[i + 1])):
        if pa.color != pb.color:
            color_kept &= owner_a != k
    return same_owner & color_kept


def flow_destination(frame_next: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Colors frame i+1 shows at each source pixel's flow destination."""
    h, w = frame_next.shape[-2:]
    ys, xs = np.mgrid[0:h, 0:w]
    tx = np.clip(np.round(xs + flow[0]).astype(int), 0, w - 1)
    ty = np.clip(np.round(ys + flow[1]).astype(int), 0, h - 1)
    return frame_next[:, ty, tx]


def sample_pair_indices(length: int, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform draw over the ordered frame pairs (i, j) with i < j."""
    if length < 2:
        raise ValueError("need at least two frames to draw a pair")
    n_pairs = length * (length - 1) // 2
    k = int(rng.integers(n_pairs))
    for i in range(length - 1):
        row = length - 1 - i
        if k < row:
            return i, i + 1 + k
        k -= row
    raise AssertionError("unreachable")


def sample_state_pair(
    sample: SyntheticSample, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw an in-context (start state, transformed state) frame pair."""
    i, j = sample_pair_indices(sample.length, rng)
    return sample.frames[i], sample.frames[j]
