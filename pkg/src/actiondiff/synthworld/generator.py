"""Random scene and instruction sampling for dataset generation.

Generated scenes tie each object's depth layer to its shape kind (disc 0.3,
rectangle 0.5, triangle 0.7) and never repeat a kind, so depth is a pure
function of the image and a frame-to-depth regressor is well posed.  Hand
built SceneSpecs remain free to use arbitrary distinct layers.
"""

from __future__ import annotations

import numpy as np

from .render import SyntheticSample, render_clip
from .scene import (
    ACTIONS,
    CANVAS_MARGIN,
    InfeasibleActionError,
    MIN_OBJECT_SIZE,
    ObjectSpec,
    PALETTE,
    RECT_HALF_H_FACTOR,
    SceneSpec,
    BACKGROUND_SHADES,
    make_instruction,
    move_distance,
)

KIND_DEPTH = {"disc": 0.3, "rectangle": 0.5, "triangle": 0.7}

_MAX_ATTEMPTS = 300


def _rand_size(rng: np.random.Generator, h: int, floor: float = 0.20, ceil: float = 0.30) -> float:
    lo = max(MIN_OBJECT_SIZE, floor * h)
    return float(rng.uniform(lo, max(lo + 0.5, ceil * h)))


def _radius(kind: str, size: float) -> float:
    if kind == "rectangle":
        return float(np.hypot(0.5 * size, RECT_HALF_H_FACTOR * size))
    return 0.5 * size


def _place(rng, canvas, radius, pad_left=0.0, pad_right=0.0, pad_top=0.0, pad_bottom=0.0):
    h, w = canvas
    m = CANVAS_MARGIN + 0.5
    x_lo, x_hi = m + radius + pad_left, w - m - radius - pad_right
    y_lo, y_hi = m + radius + pad_top, h - m - radius - pad_bottom
    if x_lo >= x_hi or y_lo >= y_hi:
        return None
    return float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi))


def _separated(center, radius, others, gap=2.0) -> bool:
    return all(
        np.hypot(center[0] - c[0], center[1] - c[1]) >= radius + r + gap for c, r in others
    )


def _try_scene(rng: np.random.Generator, canvas, frames: int, action: str):
    h, w = canvas
    color_ids = rng.permutation(len(PALETTE))
    background = BACKGROUND_SHADES[int(rng.integers(len(BACKGROUND_SHADES)))]

    if action in ("rotate-cw", "rotate-ccw", "cover", "uncover"):
        target_kind = ("rectangle", "triangle")[int(rng.integers(2))]
    else:
        target_kind = tuple(KIND_DEPTH)[int(rng.integers(3))]

    objs: list[tuple[str, tuple[float, float], float]] = []  # (kind, center, size)
    # rotation and shrinking move few pixels on small shapes; keep those
    # targets big enough that every action changes >= 1% of the canvas
    if action in ("rotate-cw", "rotate-ccw", "scale-down", "scale-up"):
        size_t = _rand_size(rng, h, floor=0.30, ceil=0.36)
    else:
        size_t = _rand_size(rng, h)
    r_t = _radius(target_kind, size_t)
    d = move_distance(canvas, frames)

    pads = dict(pad_left=0.0, pad_right=0.0, pad_top=0.0, pad_bottom=0.0)
    if action == "move-left":
        pads["pad_left"] = d
    elif action == "move-right":
        pads["pad_right"] = d
    elif action == "move-up":
        pads["pad_top"] = d
    elif action == "move-down":
        pads["pad_bottom"] = d
    elif action == "scale-up":
        grow = r_t * 0.5
        pads = dict(pad_left=grow, pad_right=grow, pad_top=grow, pad_bottom=grow)

    if action == "fall-off":
        lo_t = max(MIN_OBJECT_SIZE, 0.14 * h)
        size_t = float(rng.uniform(lo_t, max(lo_t + 0.5, 0.24 * h)))
        r_t = _radius(target_kind, size_t)
        support_kind = [k for k in KIND_DEPTH if k != target_kind][int(rng.integers(2))]
        size_s = float(rng.uniform(0.24 * h, 0.32 * h))
        r_s = _radius(support_kind, size_s)
        hy_s = RECT_HALF_H_FACTOR * size_s if support_kind == "rectangle" else 0.5 * size_s
        hy_t = RECT_HALF_H_FACTOR * size_t if target_kind == "rectangle" else 0.5 * size_t
        m = CANVAS_MARGIN + 0.5
        # the target starts on the support's top edge and must clear its
        # bbox bottom before running out of canvas
        y_lo = m + hy_s + 2.0 * hy_t + (r_t - hy_t)
        y_hi = h - m - hy_s - 2.0 * hy_t - 3.0 - (r_t - hy_t)
        x_lo, x_hi = m + max(r_s, r_t), w - m - max(r_s, r_t)
        if y_lo >= y_hi or x_lo >= x_hi:
            return None
        sc = (float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi)))
        tx = sc[0] + float(rng.uniform(-0.3, 0.3)) * size_s * 0.5
        ty = sc[1] - hy_s - hy_t + float(rng.uniform(0.0, 1.5))
        objs.append((target_kind, (tx, ty), size_t))
        objs.append((support_kind, sc, size_s))
    elif action == "cover":
        mover_kinds = [k for k in KIND_DEPTH if KIND_DEPTH[k] < KIND_DEPTH[target_kind]]
        mover_kind = mover_kinds[int(rng.integers(len(mover_kinds)))]
        size_m = float(np.clip(size_t * rng.uniform(1.0, 1.25), MIN_OBJECT_SIZE, 0.34 * h))
        r_m = _radius(mover_kind, size_m)
        pad = r_m + 0.5  # the mover must fit once centered on the target
        tc = _place(rng, canvas, max(r_t, pad))
        if tc is None:
            return None
        mc = _place(rng, canvas, r_m)
        if mc is None or not _separated(mc, r_m, [(tc, r_t)], gap=3.0):
            return None
        objs.append((target_kind, tc, size_t))
        objs.append((mover_kind, mc, size_m))
    elif action == "uncover":
        mover_kinds = [k for k in KIND_DEPTH if KIND_DEPTH[k] < KIND_DEPTH[target_kind]]
        mover_kind = mover_kinds[int(rng.integers(len(mover_kinds)))]
        size_m = float(np.clip(size_t * rng.uniform(0.8, 1.1), MIN_OBJECT_SIZE, 0.34 * h))
        r_m = _radius(mover_kind, size_m)
        away = float(np.ceil(0.75 * (size_t + size_m)))
        tc = _place(rng, canvas, r_t + away + 1.0)
        if tc is None:
            tc = _place(rng, canvas, max(r_t, r_m))
        if tc is None:
            return None
        jitter = 0.25 * size_t
        mc = (
            tc[0] + float(rng.uniform(-jitter, jitter)),
            tc[1] + float(rng.uniform(-jitter, jitter)),
        )
        objs.append((target_kind, tc, size_t))
        objs.append((mover_kind, mc, size_m))
    else:
        tc = _place(rng, canvas, r_t, **pads)
        if tc is None:
            return None
        objs.append((target_kind, tc, size_t))

    # optional distractor of an unused kind; for cover it must stay behind
    # the mover or it would hijack the covering role
    used = {k for k, _, _ in objs}
    free = [k for k in KIND_DEPTH if k not in used]
    if action == "cover":
        mover_depth = KIND_DEPTH[objs[1][0]]
        free = [k for k in free if KIND_DEPTH[k] > mover_depth]
    if free and rng.random() < 0.5:
        kind = free[int(rng.integers(len(free)))]
        size = _rand_size(rng, h)
        r = _radius(kind, size)
        c = _place(rng, canvas, r)
        if c is not None and _separated(c, r, [(o[1], _radius(o[0], o[2])) for o in objs]):
            objs.append((kind, c, size))

    specs = tuple(
        ObjectSpec(
            kind=kind,
            center=center,
            size=size,
            color=PALETTE[color_ids[i]][1],
            depth=KIND_DEPTH[kind],
        )
        for i, (kind, center, size) in enumerate(objs)
    )
    try:
        scene = SceneSpec(canvas=canvas, objects=specs, background=background)
        instruction = make_instruction(scene, action, 0)
        return render_clip(scene, instruction, frames)
    except (InfeasibleActionError, ValueError):
        return None


def generate_sample(
    rng: np.random.Generator,
    canvas: tuple[int, int] = (64, 64),
    frames: int = 8,
    action: str | None = None,
) -> SyntheticSample:
    """Draw one feasible sample, rejection-sampling scene layouts."""
    if action is None:
        action = ACTIONS[int(rng.integers(len(ACTIONS)))]
    for _ in range(_MAX_ATTEMPTS):
        sample = _try_scene(rng, canvas, frames, action)
        if sample is not None:
            return sample
    raise RuntimeError(f"could not build a feasible scene for {action!r}")


def generate_split(
    count: int,
    canvas: tuple[int, int] = (64, 64),
    frames: int = 8,
    seed: int = 0,
) -> list[SyntheticSample]:
    """Deterministic split with actions balanced round-robin."""
    rng = np.random.default_rng(seed)
    return [
        generate_sample(rng, canvas=canvas, frames=frames, action=ACTIONS[i % len(ACTIONS)])
        for i in range(count)
    ]
