"""Parametric sprite scenes and the discrete action vocabulary.

A scene is a flat-colored background plus 1..4 constant-color shapes
(disc / rectangle / triangle) at distinct depth layers.  Every action is a
deterministic transform of exactly one object, linear in its natural
parameter (translation offset, angle, scale factor, color blend), so depth,
edge, and flow supervision stay analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SHAPE_KINDS = ("disc", "rectangle", "triangle")

# Rectangle half-height is 0.3 * size (aspect > 1), so a 90 degree turn is
# never a visual no-op.  Triangle vertices sit on a circle of radius size / 2.
RECT_HALF_H_FACTOR = 0.3

# Object colors; background shades are deliberately lighter than all of them.
PALETTE = (
    ("red", (0.85, 0.20, 0.20)),
    ("green", (0.20, 0.70, 0.25)),
    ("blue", (0.20, 0.35, 0.85)),
    ("yellow", (0.90, 0.80, 0.20)),
    ("magenta", (0.80, 0.25, 0.75)),
    ("cyan", (0.20, 0.75, 0.80)),
    ("orange", (0.90, 0.55, 0.15)),
    ("purple", (0.50, 0.25, 0.80)),
)

BACKGROUND_SHADES = (
    (0.96, 0.96, 0.94),
    (0.93, 0.95, 0.97),
    (0.97, 0.93, 0.93),
    (0.94, 0.97, 0.94),
)

ACTIONS = (
    "move-left",
    "move-right",
    "move-up",
    "move-down",
    "rotate-cw",
    "rotate-ccw",
    "scale-up",
    "scale-down",
    "recolor",
    "fall-off",
    "cover",
    "uncover",
)
ACTION_NAMES = {name: i for i, name in enumerate(ACTIONS)}

SCALE_UP_FACTOR = 1.5
SCALE_DOWN_FACTOR = 2.0 / 3.0
ROTATE_ANGLE = math.pi / 2.0
MIN_OBJECT_SIZE = 6.0
CANVAS_MARGIN = 1.0

_TEMPLATES = {
    "move-left": "move the {obj} to the left",
    "move-right": "move the {obj} to the right",
    "move-up": "move the {obj} upwards",
    "move-down": "move the {obj} downwards",
    "rotate-cw": "rotate the {obj} clockwise",
    "rotate-ccw": "rotate the {obj} counterclockwise",
    "scale-up": "enlarge the {obj}",
    "scale-down": "shrink the {obj}",
    "recolor": "repaint the {obj}",
    "fall-off": "let the {obj} fall off its support",
    "cover": "cover the {obj} with the {other}",
    "uncover": "uncover the {obj}",
}


class InfeasibleActionError(ValueError):
    """Requested action cannot be executed in the given scene."""


def action_id(name: str) -> int:
    return ACTION_NAMES[name]


@dataclass(frozen=True)
class ObjectSpec:
    kind: str
    center: tuple[float, float]  # (x, y) in pixels
    size: float                  # diameter-like extent in pixels
    color: tuple[float, float, float]
    depth: float                 # layer in (0, 1], smaller = nearer

    def bounding_radius(self, scale: float = 1.0) -> float:
        if self.kind == "rectangle":
            hw = 0.5 * self.size
            hh = RECT_HALF_H_FACTOR * self.size
            return math.hypot(hw, hh) * scale
        return 0.5 * self.size * scale

    def bbox(self, scale: float = 1.0) -> tuple[float, float, float, float]:
        """Axis-aligned (x0, x1, y0, y1) at angle 0."""
        cx, cy = self.center
        if self.kind == "rectangle":
            hx = 0.5 * self.size * scale
            hy = RECT_HALF_H_FACTOR * self.size * scale
        else:
            hx = hy = 0.5 * self.size * scale
        return (cx - hx, cx + hx, cy - hy, cy + hy)


@dataclass(frozen=True)
class SceneSpec:
    canvas: tuple[int, int]  # (H, W)
    objects: tuple[ObjectSpec, ...]
    background: tuple[float, float, float]
    seed: int = 0

    def __post_init__(self):
        h, w = self.canvas
        if h < 8 or w < 8:
            raise ValueError(f"canvas too small: {self.canvas}")
        if not 1 <= len(self.objects) <= 4:
            raise ValueError(f"scene must hold 1..4 objects, got {len(self.objects)}")
        depths = [o.depth for o in self.objects]
        if len(set(depths)) != len(depths):
            raise ValueError(f"depth layers must be pairwise distinct: {depths}")
        for o in self.objects:
            if o.kind not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {o.kind!r}")
            if not 0.0 < o.depth <= 1.0:
                raise ValueError(f"depth layer must be in (0, 1], got {o.depth}")
            if not all(0.0 <= c <= 1.0 for c in o.color):
                raise ValueError(f"color must be RGB in [0, 1], got {o.color}")
            if not _fits_canvas(o.center, o.bounding_radius(), self.canvas):
                raise ValueError(f"object at {o.center} does not fit the canvas at t=0")


@dataclass(frozen=True)
class InstructionToken:
    action: int
    target: int
    text: str

    def validate(self, scene: SceneSpec) -> None:
        if not 0 <= self.action < len(ACTIONS):
            raise ValueError(f"action id {self.action} outside vocabulary")
        if not 0 <= self.target < len(scene.objects):
            raise ValueError(f"target index {self.target} outside scene")


@dataclass
class PosedObject:
    """An object's state at one instant of a clip."""

    kind: str
    center: tuple[float, float]
    size: float
    angle: float
    scale: float
    color: tuple[float, float, float]
    depth: float


def _fits_canvas(center, radius, canvas, margin: float = CANVAS_MARGIN) -> bool:
    h, w = canvas
    cx, cy = center
    return (
        cx - radius >= margin
        and cx + radius <= w - margin
        and cy - radius >= margin
        and cy + radius <= h - margin
    )


def _object_descriptor(obj: ObjectSpec) -> str:
    best = min(PALETTE, key=lambda item: sum((a - b) ** 2 for a, b in zip(item[1], obj.color)))
    return f"{best[0]} {obj.kind}"


def make_instruction(scene: SceneSpec, action: str, target: int) -> InstructionToken:
    """Fill the action's text template for the chosen target object."""
    obj = scene.objects[target]
    other = ""
    if action == "cover":
        mover = _find_coverer(scene, target, require_on_top=False)
        if mover is not None:
            other = _object_descriptor(scene.objects[mover])
    text = _TEMPLATES[action].format(obj=_object_descriptor(obj), other=other or "nearer shape")
    token = InstructionToken(action=ACTION_NAMES[action], target=target, text=text)
    token.validate(scene)
    return token


def recolor_target(color: tuple[float, float, float]) -> tuple[float, float, float]:
    """Deterministic repaint color: the palette hue 'opposite' the current one."""
    idx = min(
        range(len(PALETTE)),
        key=lambda i: sum((a - b) ** 2 for a, b in zip(PALETTE[i][1], color)),
    )
    return PALETTE[(idx + len(PALETTE) // 2) % len(PALETTE)][1]


def move_distance(canvas: tuple[int, int], frames: int) -> float:
    """Total translation for move-* actions; divisible by the step count."""
    steps = max(1, frames - 1)
    per_step = max(1, round(canvas[0] / 8 / steps))
    return float(per_step * steps)


def _find_coverer(scene: SceneSpec, target: int, require_on_top: bool) -> int | None:
    """Nearest object in front of the target (optionally already over it)."""
    tgt = scene.objects[target]
    x0, x1, y0, y1 = tgt.bbox()
    best, best_depth = None, np.inf
    for i, obj in enumerate(scene.objects):
        if i == target or obj.depth >= tgt.depth:
            continue
        if require_on_top:
            cx, cy = obj.center
            if not (x0 <= cx <= x1 and y0 <= cy <= y1):
                continue
        if obj.depth < best_depth:
            best, best_depth = i, obj.depth
    return best


def _find_support(scene: SceneSpec, target: int) -> int | None:
    """Object the target rests on: horizontal bbox overlap, not above it."""
    tx0, tx1, ty0, ty1 = scene.objects[target].bbox()
    best, best_bottom = None, -np.inf
    for i, obj in enumerate(scene.objects):
        if i == target:
            continue
        ox0, ox1, oy0, oy1 = obj.bbox()
        if ox1 < tx0 or ox0 > tx1:  # no horizontal overlap
            continue
        if oy1 < ty0:  # entirely above the target
            continue
        if oy1 > best_bottom:
            best, best_bottom = i, oy1
    return best


@dataclass
class MotionPlan:
    """Per-clip description of which object moves and how, linear in s in [0,1]."""

    mover: int
    delta_center: tuple[float, float] = (0.0, 0.0)
    delta_angle: float = 0.0
    scale_factor: float = 1.0  # multiplicative factor reached at s=1
    end_color: tuple[float, float, float] | None = None


def plan_action(scene: SceneSpec, instruction: InstructionToken, frames: int) -> MotionPlan:
    """Resolve an instruction into a motion plan, or raise InfeasibleActionError."""
    instruction.validate(scene)
    action = ACTIONS[instruction.action]
    target = instruction.target
    obj = scene.objects[target]

    if action.startswith("move-"):
        d = move_distance(scene.canvas, frames)
        delta = {
            "move-left": (-d, 0.0),
            "move-right": (d, 0.0),
            "move-up": (0.0, -d),
            "move-down": (0.0, d),
        }[action]
        end = (obj.center[0] + delta[0], obj.center[1] + delta[1])
        if not _fits_canvas(end, obj.bounding_radius(), scene.canvas):
            raise InfeasibleActionError(f"{action} would push object {target} off canvas")
        return MotionPlan(mover=target, delta_center=delta)

    if action in ("rotate-cw", "rotate-ccw"):
        if obj.kind == "disc":
            raise InfeasibleActionError("rotating a disc changes nothing")
        if not _fits_canvas(obj.center, obj.bounding_radius(), scene.canvas):
            raise InfeasibleActionError("rotated object would exit canvas")
        sign = 1.0 if action == "rotate-cw" else -1.0
        return MotionPlan(mover=target, delta_angle=sign * ROTATE_ANGLE)

    if action in ("scale-up", "scale-down"):
        factor = SCALE_UP_FACTOR if action == "scale-up" else SCALE_DOWN_FACTOR
        if action == "scale-up" and not _fits_canvas(
            obj.center, obj.bounding_radius(factor), scene.canvas
        ):
            raise InfeasibleActionError("scaled object would exit canvas")
        if action == "scale-down" and obj.size * factor < MIN_OBJECT_SIZE * 0.5:
            raise InfeasibleActionError("object too small to shrink")
        return MotionPlan(mover=target, scale_factor=factor)

    if action == "recolor":
        return MotionPlan(mover=target, end_color=recolor_target(obj.color))

    if action == "fall-off":
        support = _find_support(scene, target)
        if support is None:
            raise InfeasibleActionError("no supporting object under the target")
        _, _, ty0, _ = obj.bbox()
        _, _, _, sy1 = scene.objects[support].bbox()
        dist = float(math.ceil(sy1 - ty0 + 1.0))
        end = (obj.center[0], obj.center[1] + dist)
        if not _fits_canvas(end, obj.bounding_radius(), scene.canvas):
            raise InfeasibleActionError("fall distance exceeds canvas")
        return MotionPlan(mover=target, delta_center=(0.0, dist))

    if action == "cover":
        mover = _find_coverer(scene, target, require_on_top=False)
        if mover is None:
            raise InfeasibleActionError("no nearer object available to cover with")
        mobj = scene.objects[mover]
        delta = (obj.center[0] - mobj.center[0], obj.center[1] - mobj.center[1])
        if not _fits_canvas(obj.center, mobj.bounding_radius(), scene.canvas):
            raise InfeasibleActionError("coverer would exit canvas at the target")
        return MotionPlan(mover=mover, delta_center=delta)

    if action == "uncover":
        mover = _find_coverer(scene, target, require_on_top=True)
        if mover is None:
            raise InfeasibleActionError("nothing is covering the target")
        mobj = scene.objects[mover]
        dist = 0.75 * (obj.size + mobj.size)
        dist = float(math.ceil(dist))
        for dx, dy in ((dist, 0.0), (-dist, 0.0), (0.0, dist), (0.0, -dist)):
            end = (mobj.center[0] + dx, mobj.center[1] + dy)
            if _fits_canvas(end, mobj.bounding_radius(), scene.canvas):
                return MotionPlan(mover=mover, delta_center=(dx, dy))
        raise InfeasibleActionError("no room to move the coverer away")

    raise InfeasibleActionError(f"unhandled action {action!r}")


def pose_scene(scene: SceneSpec, plan: MotionPlan, s: float) -> list[PosedObject]:
    """Scene state at progress s in [0, 1]; only the plan's mover changes."""
    posed = []
    for i, obj in enumerate(scene.objects):
        center, angle, scale, color = obj.center, 0.0, 1.0, obj.color
        if i == plan.mover:
            center = (
                obj.center[0] + s * plan.delta_center[0],
                obj.center[1] + s * plan.delta_center[1],
            )
            angle = s * plan.delta_angle
            scale = 1.0 + s * (plan.scale_factor - 1.0)
            if plan.end_color is not None:
                color = tuple(
                    (1.0 - s) * c0 + s * c1 for c0, c1 in zip(obj.color, plan.end_color)
                )
        posed.append(
            PosedObject(
                kind=obj.kind,
                center=center,
                size=obj.size,
                angle=angle,
                scale=scale,
                color=color,
                depth=obj.depth,
            )
        )
    return posed
