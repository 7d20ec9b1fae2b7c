"""Bit-exact wire message layouts.

Every peer-to-peer exchange is a length-prefixed envelope:

    magic u32 = 0x31534356 ("VCS1"), version u8 = 1, msg_type u8,
    flags u16, payload_len u32, payload bytes

All integers little-endian. Header flags: bit 0 carries the channel kind
when both channels share one byte stream, bit 1 marks a Stats message as a
keyframe request, bit 2 marks a zlib-compressed payload (an optional
whole-message stage, off by default so golden fixtures stay raw).

Unknown message types fail decoding with the full envelope length attached
so stream readers can skip them without losing framing.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

from ..annotation import AnnotationOp, GestureEvent, OpKind, Role
from ..color_codec import EncodedColorMessage
from ..depth_codec import DELTA, KEYFRAME, EncodedDepthMessage, TilePayload
from ..errors import FormatError, HandshakeError
from ..frames import CameraIntrinsics
from ..geometry import Point3, Ray

MAGIC = 0x31534356
PROTOCOL_VERSION = 1

FLAG_CHANNEL_MEDIA = 0x0001
FLAG_KEYFRAME_REQUEST = 0x0002
FLAG_COMPRESSED = 0x0004

_HEADER = struct.Struct("<IBBHI")
WIRE_HEADER_SIZE = _HEADER.size

_HELLO = struct.Struct("<BHHH")
_KEYFRAME_PREFIX = struct.Struct("<IQHHBffff")
_DELTA_PREFIX = struct.Struct("<IIQI")
_TILE_HEADER = struct.Struct("<IBB")
_COLOR_PREFIX = struct.Struct("<IQBHH")
_ANNOTATION = struct.Struct("<BBIIfffBBB")
_GESTURE = struct.Struct("<BBQffffff")
_STATS = struct.Struct("<BQIIIQff")


class MsgType:
    HELLO = 1
    HELLO_ACK = 2
    DEPTH_KEYFRAME = 3
    DEPTH_DELTA = 4
    COLOR_FRAME = 5
    ANNOTATION_OP = 6
    GESTURE_EVENT = 7
    STATS = 8
    BYE = 9


class ChannelKind:
    RELIABLE_ORDERED = 0
    MEDIA = 1


_RELIABLE_TYPES = {
    MsgType.HELLO, MsgType.HELLO_ACK, MsgType.ANNOTATION_OP,
    MsgType.GESTURE_EVENT, MsgType.STATS, MsgType.BYE,
}


def channel_for(msg_type: int) -> int:
    if msg_type in _RELIABLE_TYPES:
        return ChannelKind.RELIABLE_ORDERED
    return ChannelKind.MEDIA


class UnknownMessageTypeError(FormatError):
    """Raised on an unknown msg_type; carries the envelope size to skip."""

    def __init__(self, msg_type: int, envelope_size: int):
        super().__init__(f"unknown msg_type {msg_type}")
        self.msg_type = msg_type
        self.envelope_size = envelope_size


def _f32(value: float) -> float:
    return float(np.float32(value))


@dataclass(frozen=True)
class Hello:
    role: Role
    proto_version: int = PROTOCOL_VERSION
    width: int = 0
    height: int = 0


@dataclass(frozen=True)
class HelloAck:
    role: Role
    proto_version: int = PROTOCOL_VERSION
    width: int = 0
    height: int = 0


@dataclass(frozen=True)
class StatsReport:
    role: Role
    t_us: int = 0
    frames_rx: int = 0
    frames_tx: int = 0
    drops: int = 0
    bytes_tx: int = 0
    e2e_p50_ms: float = 0.0
    e2e_p95_ms: float = 0.0
    keyframe_request: bool = False

    def __post_init__(self):
        object.__setattr__(self, "e2e_p50_ms", _f32(self.e2e_p50_ms))
        object.__setattr__(self, "e2e_p95_ms", _f32(self.e2e_p95_ms))


@dataclass(frozen=True)
class Bye:
    pass


WireMessage = Union[
    Hello, HelloAck, EncodedDepthMessage, EncodedColorMessage,
    AnnotationOp, GestureEvent, StatsReport, Bye,
]


@dataclass(frozen=True)
class Header:
    magic: int
    version: int
    msg_type: int
    flags: int
    payload_len: int


def parse_header(data: bytes, offset: int = 0) -> Header:
    if len(data) - offset < WIRE_HEADER_SIZE:
        raise FormatError(
            f"short header: need {WIRE_HEADER_SIZE} bytes, have {len(data) - offset}",
            offset=offset,
        )
    magic, version, msg_type, flags, payload_len = _HEADER.unpack_from(data, offset)
    if magic != MAGIC:
        raise HandshakeError(f"bad magic 0x{magic:08x}, expected 0x{MAGIC:08x}")
    if version != PROTOCOL_VERSION:
        raise HandshakeError(
            f"protocol version mismatch: peer sent {version}, this side speaks "
            f"{PROTOCOL_VERSION}"
        )
    return Header(magic, version, msg_type, flags, payload_len)


def _payload_for(msg: WireMessage) -> tuple[int, bytes]:
    if isinstance(msg, Hello):
        return MsgType.HELLO, _HELLO.pack(
            int(msg.role), msg.proto_version, msg.width, msg.height
        )
    if isinstance(msg, HelloAck):
        return MsgType.HELLO_ACK, _HELLO.pack(
            int(msg.role), msg.proto_version, msg.width, msg.height
        )
    if isinstance(msg, EncodedDepthMessage):
        if msg.kind == KEYFRAME:
            intr = msg.intrinsics
            prefix = _KEYFRAME_PREFIX.pack(
                msg.frame_id, msg.capture_ts_us, msg.width, msg.height,
                msg.tile_size, intr.fx, intr.fy, intr.cx, intr.cy,
            )
            return MsgType.DEPTH_KEYFRAME, prefix + msg.depth.astype("<u2").tobytes()
        parts = [
            _DELTA_PREFIX.pack(
                msg.frame_id, msg.ref_frame_id, msg.capture_ts_us, len(msg.tiles)
            )
        ]
        for tile in msg.tiles:
            th, tw = tile.values.shape
            parts.append(_TILE_HEADER.pack(tile.tile_index, tw, th))
            parts.append(tile.values.astype("<u2").tobytes())
        return MsgType.DEPTH_DELTA, b"".join(parts)
    if isinstance(msg, EncodedColorMessage):
        prefix = _COLOR_PREFIX.pack(
            msg.frame_id, msg.capture_ts_us, msg.codec_id, msg.width, msg.height
        )
        return MsgType.COLOR_FRAME, prefix + msg.payload
    if isinstance(msg, AnnotationOp):
        point = msg.point or Point3(0.0, 0.0, 0.0)
        color = msg.color or (0, 0, 0)
        return MsgType.ANNOTATION_OP, _ANNOTATION.pack(
            int(msg.op_kind), int(msg.author), msg.stroke_id, msg.seq,
            point.x, point.y, point.z, *color,
        )
    if isinstance(msg, GestureEvent):
        o = msg.ray.origin
        d = msg.ray.direction
        return MsgType.GESTURE_EVENT, _GESTURE.pack(
            msg.kind, int(msg.author), msg.ts_us, o.x, o.y, o.z, *d
        )
    if isinstance(msg, StatsReport):
        return MsgType.STATS, _STATS.pack(
            int(msg.role), msg.t_us, msg.frames_rx, msg.frames_tx,
            msg.drops, msg.bytes_tx, msg.e2e_p50_ms, msg.e2e_p95_ms,
        )
    if isinstance(msg, Bye):
        return MsgType.BYE, b""
    raise FormatError(f"cannot serialize {type(msg).__name__}")


def serialize_message(
    msg: WireMessage,
    *,
    channel: Optional[int] = None,
    compress: bool = False,
) -> bytes:
    """Serialize a typed message into one wire envelope.

    ``channel`` defaults to the message type's natural channel and is
    carried in flags bit 0 for single-stream transports.
    """
    msg_type, payload = _payload_for(msg)
    flags = 0
    if (channel if channel is not None else channel_for(msg_type)) == ChannelKind.MEDIA:
        flags |= FLAG_CHANNEL_MEDIA
    if isinstance(msg, StatsReport) and msg.keyframe_request:
        flags |= FLAG_KEYFRAME_REQUEST
    if compress:
        payload = zlib.compress(payload)
        flags |= FLAG_COMPRESSED
    return _HEADER.pack(MAGIC, PROTOCOL_VERSION, msg_type, flags, len(payload)) + payload


def _need(payload: bytes, count: int, what: str) -> None:
    if len(payload) < count:
        raise FormatError(
            f"short {what}: expected {count} bytes, got {len(payload)}"
        )


def _decode_payload(header: Header, payload: bytes) -> WireMessage:
    t = header.msg_type
    if t in (MsgType.HELLO, MsgType.HELLO_ACK):
        _need(payload, _HELLO.size, "hello payload")
        role, ver, w, h = _HELLO.unpack_from(payload)
        cls = Hello if t == MsgType.HELLO else HelloAck
        return cls(role=Role(role), proto_version=ver, width=w, height=h)
    if t == MsgType.DEPTH_KEYFRAME:
        _need(payload, _KEYFRAME_PREFIX.size, "keyframe prefix")
        frame_id, ts, w, h, tile_size, fx, fy, cx, cy = _KEYFRAME_PREFIX.unpack_from(payload)
        expected = _KEYFRAME_PREFIX.size + 2 * w * h
        if len(payload) != expected:
            raise FormatError(
                f"keyframe payload is {len(payload)} bytes, expected {expected}"
            )
        depth = np.frombuffer(
            payload, dtype="<u2", count=w * h, offset=_KEYFRAME_PREFIX.size
        ).reshape(h, w)
        return EncodedDepthMessage(
            kind=KEYFRAME, frame_id=frame_id, capture_ts_us=ts, width=w, height=h,
            tile_size=tile_size,
            intrinsics=CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h),
            depth=depth,
        )
    if t == MsgType.DEPTH_DELTA:
        _need(payload, _DELTA_PREFIX.size, "delta prefix")
        frame_id, ref_id, ts, tile_count = _DELTA_PREFIX.unpack_from(payload)
        offset = _DELTA_PREFIX.size
        tiles = []
        width = height = None
        for _ in range(tile_count):
            _need(payload, offset + _TILE_HEADER.size, "tile header")
            index, tw, th = _TILE_HEADER.unpack_from(payload, offset)
            offset += _TILE_HEADER.size
            _need(payload, offset + 2 * tw * th, "tile payload")
            values = np.frombuffer(payload, dtype="<u2", count=tw * th, offset=offset)
            tiles.append(TilePayload(tile_index=index, values=values.reshape(th, tw)))
            offset += 2 * tw * th
        if offset != len(payload):
            raise FormatError(
                f"delta payload is {len(payload)} bytes, expected {offset}"
            )
        # Geometry is not part of the delta wire format; the decoder's
        # keyframe epoch supplies it.
        return EncodedDepthMessage(
            kind=DELTA, frame_id=frame_id, capture_ts_us=ts,
            ref_frame_id=ref_id, tiles=tiles,
        )
    if t == MsgType.COLOR_FRAME:
        _need(payload, _COLOR_PREFIX.size, "color prefix")
        frame_id, ts, codec_id, w, h = _COLOR_PREFIX.unpack_from(payload)
        return EncodedColorMessage(
            frame_id=frame_id, capture_ts_us=ts, codec_id=codec_id,
            width=w, height=h, payload=payload[_COLOR_PREFIX.size:],
        )
    if t == MsgType.ANNOTATION_OP:
        _need(payload, _ANNOTATION.size, "annotation payload")
        kind, author, stroke_id, seq, x, y, z, r, g, b = _ANNOTATION.unpack_from(payload)
        op_kind = OpKind(kind)
        point = Point3(x, y, z) if op_kind in (OpKind.STROKE_BEGIN, OpKind.STROKE_POINT) else None
        color = (r, g, b) if op_kind == OpKind.STROKE_BEGIN else None
        return AnnotationOp(
            op_kind=op_kind, author=Role(author), stroke_id=stroke_id, seq=seq,
            point=point, color=color,
        )
    if t == MsgType.GESTURE_EVENT:
        _need(payload, _GESTURE.size, "gesture payload")
        kind, author, ts, ox, oy, oz, dx, dy, dz = _GESTURE.unpack_from(payload)
        return GestureEvent(
            kind=kind, author=Role(author), ts_us=ts,
            ray=Ray(origin=Point3(ox, oy, oz), direction=(dx, dy, dz)),
        )
    if t == MsgType.STATS:
        _need(payload, _STATS.size, "stats payload")
        role, t_us, rx, tx, drops, bytes_tx, p50, p95 = _STATS.unpack_from(payload)
        return StatsReport(
            role=Role(role), t_us=t_us, frames_rx=rx, frames_tx=tx, drops=drops,
            bytes_tx=bytes_tx, e2e_p50_ms=p50, e2e_p95_ms=p95,
            keyframe_request=bool(header.flags & FLAG_KEYFRAME_REQUEST),
        )
    if t == MsgType.BYE:
        return Bye()
    raise UnknownMessageTypeError(t, WIRE_HEADER_SIZE + header.payload_len)


def deserialize_message(data: bytes) -> WireMessage:
    """Decode exactly one envelope; raises on trailing or missing bytes."""
    header = parse_header(data)
    expected = WIRE_HEADER_SIZE + header.payload_len
    if len(data) != expected:
        raise FormatError(
            f"envelope is {len(data)} bytes, header declares {expected}"
        )
    payload = data[WIRE_HEADER_SIZE:]
    if header.flags & FLAG_COMPRESSED:
        try:
            payload = zlib.decompress(payload)
        except zlib.error as exc:
            raise FormatError(f"bad compressed payload: {exc}") from None
    return _decode_payload(header, payload)


class FrameDecoder:
    """Incremental reader for a stream of wire envelopes.

    Unknown message types are counted and skipped; the length prefix keeps
    the byte stream synchronized.
    """

    def __init__(self):
        self._buf = bytearray()
        self.skipped_unknown = 0

    def feed(self, data: bytes) -> None:
        self._buf.extend(data)

    def __iter__(self) -> Iterator[tuple[Header, WireMessage]]:
        while len(self._buf) >= WIRE_HEADER_SIZE:
            header = parse_header(bytes(self._buf[:WIRE_HEADER_SIZE]))
            total = WIRE_HEADER_SIZE + header.payload_len
            if len(self._buf) < total:
                return
            envelope = bytes(self._buf[:total])
            del self._buf[:total]
            try:
                yield header, deserialize_message(envelope)
            except UnknownMessageTypeError:
                self.skipped_unknown += 1
