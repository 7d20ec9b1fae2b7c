"""Shared annotation state: surface-anchored strokes edited by both peers.

Ops are authored per role with strictly increasing sequence numbers and
folded into :class:`AnnotationState`. Strokes are keyed by (author,
stroke_id), so ops from different authors commute: any interleaving of the
two per-author sequences produces the same state. The transport's
reliable-ordered channel preserves per-author order, which is all the
merge machinery this needs.

Ops that reference unknown or closed strokes, and replayed duplicates, are
logged and dropped rather than raised: annotation integrity must not take
down the media pipeline.

Point coordinates are quantized to f32 at op creation so that a locally
applied op and its wire round-tripped twin are bit-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .frames import DepthFrame
from .geometry import Point3, Ray, deproject

logger = logging.getLogger(__name__)


class Role(IntEnum):
    EXPERT = 0
    OPERATOR = 1

    @property
    def wire_name(self) -> str:
        return self.name.lower()


class OpKind(IntEnum):
    STROKE_BEGIN = 0
    STROKE_POINT = 1
    STROKE_END = 2
    ERASE_STROKE = 3
    CLEAR_ALL = 4


_NEEDS_POINT = {OpKind.STROKE_BEGIN, OpKind.STROKE_POINT}


def _f32_point(p: Point3) -> Point3:
    return Point3(*(float(np.float32(c)) for c in p.as_tuple()))


@dataclass(frozen=True)
class AnnotationOp:
    op_kind: OpKind
    author: Role
    stroke_id: int
    seq: int
    point: Optional[Point3] = None
    color: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        if self.op_kind in _NEEDS_POINT and self.point is None:
            raise ConfigurationError(f"{self.op_kind.name} requires a point")
        if self.op_kind == OpKind.STROKE_BEGIN and self.color is None:
            object.__setattr__(self, "color", (255, 255, 0))
        if self.point is not None:
            object.__setattr__(self, "point", _f32_point(self.point))


@dataclass(frozen=True)
class GestureEvent:
    """A transient pointing gesture; lifetime is a renderer decision."""

    kind: int
    author: Role
    ray: Ray
    ts_us: int

    def __post_init__(self):
        origin = _f32_point(self.ray.origin)
        direction = tuple(float(np.float32(c)) for c in self.ray.direction)
        object.__setattr__(self, "ray", Ray(origin=origin, direction=direction))


@dataclass
class Stroke:
    color: tuple[int, int, int]
    points: list[Point3] = field(default_factory=list)
    open: bool = True


class AnnotationState:
    """Fold of annotation ops; one writer per peer, snapshots shareable."""

    def __init__(self):
        self.strokes: dict[tuple[Role, int], Stroke] = {}
        self._last_seq: dict[Role, int] = {}

    def apply(self, op: AnnotationOp) -> bool:
        """Apply one op; returns False when the op was dropped."""
        last = self._last_seq.get(op.author)
        if last is not None and op.seq <= last:
            logger.warning(
                "dropping duplicate op (author=%s seq=%d <= last=%d)",
                op.author.wire_name, op.seq, last,
            )
            return False
        self._last_seq[op.author] = op.seq

        key = (op.author, op.stroke_id)
        if op.op_kind == OpKind.STROKE_BEGIN:
            if key in self.strokes and self.strokes[key].open:
                logger.warning("dropping stroke_begin for already-open stroke %s", key)
                return False
            self.strokes[key] = Stroke(color=op.color, points=[op.point])
            return True
        if op.op_kind == OpKind.STROKE_POINT:
            stroke = self.strokes.get(key)
            if stroke is None or not stroke.open:
                logger.warning("dropping stroke_point for unknown/closed stroke %s", key)
                return False
            stroke.points.append(op.point)
            return True
        if op.op_kind == OpKind.STROKE_END:
            stroke = self.strokes.get(key)
            if stroke is None or not stroke.open:
                logger.warning("dropping stroke_end for unknown/closed stroke %s", key)
                return False
            stroke.open = False
            return True
        if op.op_kind == OpKind.ERASE_STROKE:
            if self.strokes.pop(key, None) is None:
                logger.warning("dropping erase for unknown stroke %s", key)
                return False
            return True
        if op.op_kind == OpKind.CLEAR_ALL:
            # Scoped to the author's own strokes: a global wipe cannot
            # commute with the other author's concurrent edits, and replica
            # convergence is a hard requirement.
            for key in [k for k in self.strokes if k[0] == op.author]:
                del self.strokes[key]
            return True
        raise ConfigurationError(f"unknown op kind {op.op_kind}")

    def last_seq(self, author: Role) -> int:
        return self._last_seq.get(author, -1)

    def __eq__(self, other):
        if not isinstance(other, AnnotationState):
            return NotImplemented
        if set(self.strokes) != set(other.strokes):
            return False
        for key, stroke in self.strokes.items():
            theirs = other.strokes[key]
            if (
                stroke.color != theirs.color
                or stroke.open != theirs.open
                or stroke.points != theirs.points
            ):
                return False
        return True

    def to_json(self) -> dict:
        """Canonical export: strokes sorted by (author, id)."""
        strokes = []
        for (author, stroke_id) in sorted(self.strokes, key=lambda k: (int(k[0]), k[1])):
            stroke = self.strokes[(author, stroke_id)]
            strokes.append(
                {
                    "author": author.wire_name,
                    "id": stroke_id,
                    "color": list(stroke.color),
                    "points": [[p.x, p.y, p.z] for p in stroke.points],
                }
            )
        return {"strokes": strokes}


def apply(state: AnnotationState, op: AnnotationOp) -> AnnotationState:
    state.apply(op)
    return state


# 3x3 neighbor search, row-major scan order; used when the exact pixel has
# no depth return.
_NEIGHBOR_OFFSETS = [(dv, du) for dv in (-1, 0, 1) for du in (-1, 0, 1)]


def anchor_screen_input(depth: DepthFrame, pixel: tuple[int, int]) -> Optional[Point3]:
    """Anchor a screen-space pick to the captured surface.

    Deprojects the pixel when it has a valid return; otherwise scans the
    3x3 neighborhood row-major and takes the valid neighbor closest to the
    camera (ties broken by scan order). Returns None over fully invalid
    regions.
    """
    u, v = int(pixel[0]), int(pixel[1])
    if not (0 <= u < depth.width and 0 <= v < depth.height):
        return None
    d = int(depth.depth[v, u])
    if d > 0:
        return deproject((u, v), d, depth.intrinsics)
    best = None
    for dv, du in _NEIGHBOR_OFFSETS:
        nu, nv = u + du, v + dv
        if not (0 <= nu < depth.width and 0 <= nv < depth.height):
            continue
        nd = int(depth.depth[nv, nu])
        if nd > 0 and (best is None or nd < best[0]):
            best = (nd, nu, nv)
    if best is None:
        return None
    nd, nu, nv = best
    return deproject((nu, nv), nd, depth.intrinsics)
