#!/usr/bin/env python3
"""Regenerate the checked-in binary wire fixtures.

Run from the repository root:

    python3 scripts/gen_fixtures.py

Two fixture sets are produced under tests/fixtures/:

* wire/<type>.bin: one serialized envelope per message type, used by the
  golden byte tests (and by the browser viewer's protocol tests).
* depth_stream.bin + depth_stream_checksums.json: a short encoded depth
  sequence with keyframes, deltas, clipped edge tiles and an epoch change,
  plus FNV-1a checksums of every decoded frame. The Python decoder and the
  viewer's decoder must both reproduce these checksums bit-exactly.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from volustream.annotation import AnnotationOp, GestureEvent, OpKind, Role
from volustream.color_codec import EncodedColorMessage
from volustream.depth_codec import (
    KEYFRAME,
    CodecState,
    DepthCodecConfig,
    EncodedDepthMessage,
    TilePayload,
    decode,
    encode,
)
from volustream.frames import (
    CameraIntrinsics,
    CircularPath,
    SyntheticSceneConfig,
    synthetic_source,
)
from volustream.geometry import Point3, Ray
from volustream.wire.messages import Bye, Hello, HelloAck, StatsReport, serialize_message

FIXTURES = ROOT / "tests" / "fixtures"


def fnv1a32(data: bytes) -> int:
    h = 0x811C9DC5
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def wire_fixture_messages() -> dict[str, object]:
    intr = CameraIntrinsics(fx=525.0, fy=525.0, cx=2.0, cy=1.0, width=4, height=3)
    keyframe_depth = np.array(
        [[0, 100, 200, 300], [400, 500, 600, 700], [800, 900, 1000, 1100]],
        dtype=np.uint16,
    )
    return {
        "hello": Hello(role=Role.OPERATOR, proto_version=1, width=640, height=576),
        "hello_ack": HelloAck(role=Role.EXPERT, proto_version=1, width=0, height=0),
        "depth_keyframe": EncodedDepthMessage(
            kind=KEYFRAME, frame_id=7, capture_ts_us=1234567, width=4, height=3,
            tile_size=16, intrinsics=intr, depth=keyframe_depth,
        ),
        "depth_delta": EncodedDepthMessage(
            kind="delta", frame_id=8, capture_ts_us=1301234, ref_frame_id=7,
            tiles=[
                TilePayload(0, np.array([[1000, 1010], [990, 1005]], dtype=np.uint16)),
                TilePayload(3, np.array([[800, 805]], dtype=np.uint16)),
            ],
        ),
        "color_frame": EncodedColorMessage(
            frame_id=9, capture_ts_us=1367890, codec_id=0, width=2, height=2,
            payload=bytes(range(12)),
        ),
        "annotation_op": AnnotationOp(
            op_kind=OpKind.STROKE_BEGIN, author=Role.EXPERT, stroke_id=1, seq=0,
            point=Point3(0.25, -0.5, 1.5), color=(255, 32, 16),
        ),
        "gesture_event": GestureEvent(
            kind=0, author=Role.OPERATOR,
            ray=Ray(origin=Point3(0.0, 0.0, 0.0), direction=(0.0, 0.0, 1.0)),
            ts_us=999999,
        ),
        "stats": StatsReport(
            role=Role.EXPERT, t_us=2_000_000, frames_rx=30, frames_tx=0, drops=2,
            bytes_tx=123456, e2e_p50_ms=150.5, e2e_p95_ms=410.25,
            keyframe_request=True,
        ),
        "bye": Bye(),
    }


def write_wire_fixtures() -> None:
    out = FIXTURES / "wire"
    out.mkdir(parents=True, exist_ok=True)
    for name, msg in wire_fixture_messages().items():
        data = serialize_message(msg)
        (out / f"{name}.bin").write_bytes(data)
        print(f"wire/{name}.bin: {len(data)} bytes")


def write_depth_stream() -> None:
    # 52x40 exercises clipped edge tiles (52 = 3*16 + 4, 40 = 2*16 + 8);
    # keyframe interval 5 forces an epoch change mid-stream.
    scene = SyntheticSceneConfig(
        width=52, height=40, fps=15.0, plane_depth_mm=1800.0,
        sphere_radius_mm=220.0,
        sphere_path=CircularPath(
            center_mm=(0.0, 0.0, 1200.0), orbit_radius_mm=260.0,
            angular_speed_rad_s=2.5,
        ),
        noise_amplitude_mm=0, seed=42,
    )
    codec = DepthCodecConfig(tile_size=16, change_threshold_mm=10, keyframe_interval=5)
    encoder = CodecState()
    decoder = CodecState()
    stream = bytearray()
    checksums = []
    source = synthetic_source(scene)
    for _ in range(8):
        depth, _ = next(source)
        msg = encode(encoder, depth, codec)
        stream.extend(serialize_message(msg))
        frame = decode(decoder, msg)
        checksums.append(
            {
                "frame_id": frame.frame_id,
                "kind": msg.kind,
                "fnv1a32": f"0x{fnv1a32(frame.depth.astype('<u2').tobytes()):08x}",
            }
        )
    (FIXTURES / "depth_stream.bin").write_bytes(bytes(stream))
    meta = {
        "width": scene.width,
        "height": scene.height,
        "tile_size": codec.tile_size,
        "frames": checksums,
    }
    (FIXTURES / "depth_stream_checksums.json").write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8"
    )
    print(f"depth_stream.bin: {len(stream)} bytes, {len(checksums)} frames")


if __name__ == "__main__":
    write_wire_fixtures()
    write_depth_stream()
