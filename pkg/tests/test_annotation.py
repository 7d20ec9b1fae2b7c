import random

import numpy as np
import pytest

from volustream.annotation import (
    AnnotationOp,
    AnnotationState,
    OpKind,
    Role,
    anchor_screen_input,
)
from volustream.geometry import Point3, deproject

from conftest import make_depth_frame


def op(kind, author=Role.EXPERT, stroke=1, seq=0, point=None, color=None):
    if kind in (OpKind.STROKE_BEGIN, OpKind.STROKE_POINT) and point is None:
        point = Point3(0.1 * seq, -0.05 * seq, 1.0 + 0.01 * seq)
    return AnnotationOp(
        op_kind=kind, author=author, stroke_id=stroke, seq=seq,
        point=point, color=color,
    )


def simple_stroke_ops(author=Role.EXPERT, stroke=1, start_seq=0):
    seqs = iter(range(start_seq, start_seq + 10))
    return [
        op(OpKind.STROKE_BEGIN, author, stroke, next(seqs), color=(255, 0, 0)),
        op(OpKind.STROKE_POINT, author, stroke, next(seqs)),
        op(OpKind.STROKE_POINT, author, stroke, next(seqs)),
        op(OpKind.STROKE_POINT, author, stroke, next(seqs)),
        op(OpKind.STROKE_END, author, stroke, next(seqs)),
    ]


class TestApply:
    def test_begin_points_end_fold(self):
        state = AnnotationState()
        for item in simple_stroke_ops():
            assert state.apply(item)
        stroke = state.strokes[(Role.EXPERT, 1)]
        assert not stroke.open
        assert len(stroke.points) == 4  # begin carries the first point
        assert stroke.color == (255, 0, 0)

    def test_clear_all_on_empty_is_noop(self):
        state = AnnotationState()
        assert state.apply(op(OpKind.CLEAR_ALL, seq=0, stroke=0))
        assert state.strokes == {}

    def test_duplicate_op_ignored(self):
        state = AnnotationState()
        begin = op(OpKind.STROKE_BEGIN, seq=0, color=(1, 2, 3))
        assert state.apply(begin)
        assert not state.apply(begin)  # replayed: same author, same seq
        assert len(state.strokes[(Role.EXPERT, 1)].points) == 1

    def test_point_on_unknown_stroke_dropped(self):
        state = AnnotationState()
        assert not state.apply(op(OpKind.STROKE_POINT, stroke=9, seq=0))
        assert state.strokes == {}

    def test_point_on_closed_stroke_dropped(self):
        state = AnnotationState()
        for item in simple_stroke_ops():
            state.apply(item)
        assert not state.apply(op(OpKind.STROKE_POINT, stroke=1, seq=40))

    def test_erase_removes_single_stroke(self):
        state = AnnotationState()
        for item in simple_stroke_ops(stroke=1):
            state.apply(item)
        for item in simple_stroke_ops(stroke=2, start_seq=10):
            state.apply(item)
        assert state.apply(op(OpKind.ERASE_STROKE, stroke=1, seq=30))
        assert set(state.strokes) == {(Role.EXPERT, 2)}

    def test_strokes_keyed_per_author(self):
        state = AnnotationState()
        for item in simple_stroke_ops(Role.EXPERT, stroke=1):
            state.apply(item)
        for item in simple_stroke_ops(Role.OPERATOR, stroke=1):
            state.apply(item)
        assert len(state.strokes) == 2

    def test_points_quantized_to_f32(self):
        item = op(OpKind.STROKE_BEGIN, seq=0, point=Point3(0.1, 0.2, 0.3))
        assert item.point.x == float(np.float32(0.1))


class TestConvergence:
    def author_sequences(self, rng, ops_per_author=60):
        sequences = {}
        for author in (Role.EXPERT, Role.OPERATOR):
            seq = 0
            ops = []
            open_strokes = []
            next_stroke = 1
            for _ in range(ops_per_author):
                choices = ["begin"]
                if open_strokes:
                    choices += ["point", "point", "point", "end"]
                if rng.random() < 0.05:
                    choices.append("clear")
                kind = rng.choice(choices)
                if kind == "begin":
                    ops.append(op(OpKind.STROKE_BEGIN, author, next_stroke, seq,
                                  color=(rng.randrange(256),) * 3))
                    open_strokes.append(next_stroke)
                    next_stroke += 1
                elif kind == "point":
                    ops.append(op(OpKind.STROKE_POINT, author, rng.choice(open_strokes), seq))
                elif kind == "end":
                    stroke = open_strokes.pop(rng.randrange(len(open_strokes)))
                    ops.append(op(OpKind.STROKE_END, author, stroke, seq))
                else:
                    ops.append(op(OpKind.CLEAR_ALL, author, 0, seq))
                    open_strokes.clear()
                    # clear_all also kills open strokes; later points to them
                    # are protocol errors dropped identically on all replicas
                seq += 1
            sequences[author] = ops
        return sequences

    @pytest.mark.parametrize("seed", range(6))
    def test_interleavings_reach_identical_state(self, seed):
        rng = random.Random(seed)
        sequences = self.author_sequences(rng)

        def fold(interleave_seed):
            state = AnnotationState()
            r = random.Random(interleave_seed)
            cursors = {a: 0 for a in sequences}
            remaining = sum(len(v) for v in sequences.values())
            while remaining:
                viable = [a for a in sequences if cursors[a] < len(sequences[a])]
                author = r.choice(viable)
                state.apply(sequences[author][cursors[author]])
                cursors[author] += 1
                remaining -= 1
            return state

        reference = fold(1000)
        for i in range(5):
            assert fold(2000 + i) == reference

    def test_double_apply_is_idempotent(self):
        sequences = self.author_sequences(random.Random(1))
        once = AnnotationState()
        twice = AnnotationState()
        for ops in sequences.values():
            for item in ops:
                once.apply(item)
                twice.apply(item)
                twice.apply(item)
        assert once == twice


class TestJsonExport:
    def test_schema_and_canonical_order(self):
        state = AnnotationState()
        for item in simple_stroke_ops(Role.OPERATOR, stroke=2):
            state.apply(item)
        for item in simple_stroke_ops(Role.EXPERT, stroke=7):
            state.apply(item)
        doc = state.to_json()
        assert list(doc) == ["strokes"]
        assert [(s["author"], s["id"]) for s in doc["strokes"]] == [
            ("expert", 7), ("operator", 2),
        ]
        stroke = doc["strokes"][0]
        assert set(stroke) == {"author", "id", "color", "points"}
        assert all(len(p) == 3 for p in stroke["points"])


class TestAnchoring:
    def test_valid_pixel_deprojects_directly(self):
        depth = np.full((8, 8), 1200, dtype=np.uint16)
        frame = make_depth_frame(depth)
        point = anchor_screen_input(frame, (3, 2))
        assert point == deproject((3, 2), 1200, frame.intrinsics)

    def test_invalid_pixel_takes_nearest_depth_neighbor(self):
        depth = np.zeros((8, 8), dtype=np.uint16)
        depth[2, 3] = 0      # picked pixel invalid
        depth[1, 2] = 1500   # neighbors with differing depths
        depth[1, 4] = 1000
        depth[3, 3] = 1250
        frame = make_depth_frame(depth)
        point = anchor_screen_input(frame, (3, 2))
        # Nearest-depth neighbor wins: 1000 at (u=4, v=1).
        assert point == deproject((4, 1), 1000, frame.intrinsics)

    def test_neighbor_tie_breaks_by_scan_order(self):
        depth = np.zeros((8, 8), dtype=np.uint16)
        depth[1, 2] = 1000  # (dv=-1, du=-1): first in row-major scan
        depth[3, 4] = 1000
        frame = make_depth_frame(depth)
        point = anchor_screen_input(frame, (3, 2))
        assert point == deproject((2, 1), 1000, frame.intrinsics)

    def test_fully_invalid_region_returns_none(self):
        frame = make_depth_frame(np.zeros((8, 8), dtype=np.uint16))
        assert anchor_screen_input(frame, (4, 4)) is None

    def test_out_of_bounds_returns_none(self):
        frame = make_depth_frame(np.full((8, 8), 100, dtype=np.uint16))
        assert anchor_screen_input(frame, (99, 0)) is None
