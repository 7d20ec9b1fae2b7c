"""Two-role streaming session: operator capture side, expert viewing side.

The operator encodes each captured tick once, ships depth and color to the
expert over the media channel (through the latest-wins send queue), and
hands the decoder-reconstructible depth to its own local consumer for
annotation anchoring. The expert is the only peer that receives color.
Annotations and gestures ride the reliable-ordered channel in both
directions.

Latency accounting: the expert records one sample per rendered scene
frame, ``decode_complete - capture_ts``. A frame rendered from a paired
depth+color uses the later of the two decode times; a frame whose color
missed the pairing window renders depth-only and uses the depth decode
time. Color that arrives after its frame was rendered (or never finds a
depth frame) is counted but produces no sample. Percentiles use the
nearest-rank method.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, Sequence

from .annotation import AnnotationOp, AnnotationState, GestureEvent, Role
from .color_codec import EncodedColorMessage, color_decode, color_encode
from .depth_codec import (
    KEYFRAME,
    CodecState,
    DepthCodecConfig,
    EncodedDepthMessage,
    decode,
    encode,
)
from .errors import ConfigurationError, DesyncError, HandshakeError
from .frames import DepthFrame, FramePair, SyntheticSceneConfig, synthetic_source
from .geometry import to_point_cloud
from .wire.messages import (
    Bye,
    ChannelKind,
    Hello,
    HelloAck,
    MsgType,
    PROTOCOL_VERSION,
    StatsReport,
    UnknownMessageTypeError,
    deserialize_message,
    serialize_message,
)
from .wire.netsim import EventLoop, MediaSendQueue, NetworkProfile, SimEndpoint, sim_link

logger = logging.getLogger(__name__)

PeerRole = Role

DEFAULT_PAIRING_TIMEOUT_MS = 100.0
GESTURE_TTL_S = 2.0


def nearest_rank_percentile(samples: Sequence[float], pct: float) -> Optional[float]:
    """Nearest-rank percentile; None on empty input."""
    if not samples:
        return None
    ordered = sorted(samples)
    k = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[k - 1]


@dataclass
class SessionStats:
    """Monotone counters plus end-to-end latency samples for one peer."""

    role: Role
    depth_encoded: int = 0
    color_encoded: int = 0
    depth_tx: int = 0
    color_tx: int = 0
    depth_tx_keyframes: int = 0
    queue_drops_depth: int = 0
    queue_drops_color: int = 0
    net_drops_depth: int = 0
    net_drops_color: int = 0
    depth_rx: int = 0
    color_rx: int = 0
    depth_rx_keyframes: int = 0
    stale_media: int = 0
    desync_deltas: int = 0
    keyframe_requests: int = 0
    control_tx: int = 0
    control_rx: int = 0
    bytes_tx: int = 0
    bytes_tx_depth: int = 0
    bytes_tx_color: int = 0
    bytes_tx_control: int = 0
    renders: int = 0
    loopback_depth: int = 0
    annotations_applied: int = 0
    annotations_dropped: int = 0
    gestures_rx: int = 0
    latency_samples_us: list[int] = field(default_factory=list)

    @property
    def frames_tx(self) -> int:
        return self.depth_tx + self.color_tx

    @property
    def frames_rx(self) -> int:
        return self.depth_rx + self.color_rx

    @property
    def drops(self) -> int:
        return (
            self.queue_drops_depth + self.queue_drops_color
            + self.net_drops_depth + self.net_drops_color
        )

    def add_sample(self, e2e_us: int) -> None:
        if e2e_us < 0:
            raise ValueError(f"latency sample must be non-negative, got {e2e_us}")
        self.latency_samples_us.append(e2e_us)

    def percentile_ms(self, pct: float) -> Optional[float]:
        value = nearest_rank_percentile(self.latency_samples_us, pct)
        return None if value is None else value / 1000.0

    def max_ms(self) -> Optional[float]:
        if not self.latency_samples_us:
            return None
        return max(self.latency_samples_us) / 1000.0

    def snapshot(self, t_us: int) -> dict:
        return {
            "t_us": t_us,
            "role": self.role.wire_name,
            "frames_rx": self.frames_rx,
            "frames_tx": self.frames_tx,
            "drops": self.drops,
            "bytes_tx": self.bytes_tx,
            "e2e_p50_ms": self.percentile_ms(50.0),
            "e2e_p95_ms": self.percentile_ms(95.0),
        }

    def snapshot_line(self, t_us: int) -> str:
        return json.dumps(self.snapshot(t_us), separators=(",", ":"))


class _MediaPump:
    """Feeds the media queue into the link one transmission at a time.

    The link is only handed the next message once the previous one has
    finished transmitting, so the bounded queue (not the link) is where
    backpressure drops happen.
    """

    def __init__(
        self,
        loop: EventLoop,
        endpoint: SimEndpoint,
        queue: MediaSendQueue,
        stats: SessionStats,
        on_keyframe_evicted: Optional[Callable[[], None]] = None,
    ):
        self.loop = loop
        self.endpoint = endpoint
        self.queue = queue
        self.stats = stats
        self.on_keyframe_evicted = on_keyframe_evicted
        self._busy = False

    def submit(self, data: bytes, msg_type: int) -> None:
        evicted = self.queue.push((data, msg_type))
        if evicted is not None:
            self._count_queue_drop(evicted[1])
        if not self._busy:
            self._transmit_next()

    def _count_queue_drop(self, msg_type: int) -> None:
        if msg_type == MsgType.COLOR_FRAME:
            self.stats.queue_drops_color += 1
        else:
            self.stats.queue_drops_depth += 1
            if msg_type == MsgType.DEPTH_KEYFRAME and self.on_keyframe_evicted:
                # The sender knows it never transmitted this keyframe; restart
                # the epoch instead of leaving the peer desynced until the
                # next scheduled one.
                self.on_keyframe_evicted()

    def _transmit_next(self) -> None:
        if not self.queue:
            self._busy = False
            return
        self._busy = True
        data, msg_type = self.queue.pop()
        receipt = self.endpoint.send(ChannelKind.MEDIA, data)
        self.stats.bytes_tx += len(data)
        if msg_type == MsgType.COLOR_FRAME:
            self.stats.color_tx += 1
            self.stats.bytes_tx_color += len(data)
            if not receipt.delivered:
                self.stats.net_drops_color += 1
        else:
            self.stats.depth_tx += 1
            self.stats.bytes_tx_depth += len(data)
            if msg_type == MsgType.DEPTH_KEYFRAME:
                self.stats.depth_tx_keyframes += 1
            if not receipt.delivered:
                self.stats.net_drops_depth += 1
        self.loop.schedule_at(receipt.depart_us, self._transmit_next)


class _BasePeer:
    """Handshake, reliable-channel dispatch, and annotation state."""

    def __init__(
        self,
        role: Role,
        loop: EventLoop,
        endpoint: SimEndpoint,
        *,
        width: int = 0,
        height: int = 0,
        proto_version: int = PROTOCOL_VERSION,
    ):
        self.role = role
        self.loop = loop
        self.endpoint = endpoint
        self.width = width
        self.height = height
        self.proto_version = proto_version
        self.stats = SessionStats(role=role)
        self.annotations = AnnotationState()
        self.gestures: list[tuple[int, GestureEvent]] = []
        self.established = False
        self.peer_said_bye = False
        self.handshake_error: Optional[HandshakeError] = None
        self.on_established: Optional[Callable[[], None]] = None
        self._got_peer_hello = False
        self._got_peer_ack = False
        self._next_seq = 0
        endpoint.handler = self.on_message

    # -- handshake ---------------------------------------------------------

    def send_hello(self) -> None:
        self._send_reliable(
            Hello(role=self.role, proto_version=self.proto_version,
                  width=self.width, height=self.height)
        )

    def _handle_hello(self, hello: Hello) -> None:
        if hello.proto_version != self.proto_version:
            self._fail_handshake(
                f"protocol version mismatch: peer speaks {hello.proto_version}, "
                f"this side speaks {self.proto_version}"
            )
            return
        if hello.role == self.role:
            self._fail_handshake(
                f"role conflict: both peers claim the {self.role.wire_name} role"
            )
            return
        self._got_peer_hello = True
        self._send_reliable(
            HelloAck(role=self.role, proto_version=self.proto_version,
                     width=self.width, height=self.height)
        )
        self._maybe_established()

    def _handle_hello_ack(self, ack: HelloAck) -> None:
        if ack.role == self.role:
            self._fail_handshake(
                f"role conflict: both peers claim the {self.role.wire_name} role"
            )
            return
        self._got_peer_ack = True
        self._maybe_established()

    def _maybe_established(self) -> None:
        if self.established or self.handshake_error:
            return
        if self._got_peer_hello and self._got_peer_ack:
            self.established = True
            if self.on_established is not None:
                self.on_established()

    def _fail_handshake(self, message: str) -> None:
        if self.handshake_error is None:
            self.handshake_error = HandshakeError(message)
            logger.error("%s handshake failed: %s", self.role.wire_name, message)

    # -- reliable channel --------------------------------------------------

    def _send_reliable(self, msg) -> None:
        data = serialize_message(msg)
        self.endpoint.send(ChannelKind.RELIABLE_ORDERED, data)
        self.stats.control_tx += 1
        self.stats.bytes_tx += len(data)
        self.stats.bytes_tx_control += len(data)

    def next_seq(self) -> int:
        seq = self._next_seq
        self._next_seq += 1
        return seq

    def submit_annotation(self, op: AnnotationOp) -> None:
        """Apply a locally authored op and relay it to the peer."""
        if op.author != self.role:
            raise ConfigurationError(
                f"{self.role.wire_name} peer cannot author ops as {op.author.wire_name}"
            )
        if self.annotations.apply(op):
            self.stats.annotations_applied += 1
        else:
            self.stats.annotations_dropped += 1
        self._send_reliable(op)

    def submit_gesture(self, gesture: GestureEvent) -> None:
        self._send_reliable(gesture)

    def active_gestures(self) -> list[GestureEvent]:
        now = self.loop.now_us
        self.gestures = [(exp, g) for exp, g in self.gestures if exp > now]
        return [g for _, g in self.gestures]

    def say_bye(self) -> None:
        self._send_reliable(Bye())

    # -- dispatch ----------------------------------------------------------

    def on_message(self, kind: int, data: bytes) -> None:
        try:
            msg = deserialize_message(data)
        except UnknownMessageTypeError as exc:
            logger.warning("skipping unknown message type %d", exc.msg_type)
            return
        except HandshakeError as exc:
            self._fail_handshake(str(exc))
            return
        if kind == ChannelKind.RELIABLE_ORDERED:
            self.stats.control_rx += 1
            self._dispatch_reliable(msg)
        else:
            self._dispatch_media(msg)

    def _dispatch_reliable(self, msg) -> None:
        if isinstance(msg, Hello):
            self._handle_hello(msg)
        elif isinstance(msg, HelloAck):
            self._handle_hello_ack(msg)
        elif isinstance(msg, AnnotationOp):
            if self.annotations.apply(msg):
                self.stats.annotations_applied += 1
            else:
                self.stats.annotations_dropped += 1
        elif isinstance(msg, GestureEvent):
            self.stats.gestures_rx += 1
            ttl_us = round(GESTURE_TTL_S * 1e6)
            self.gestures.append((self.loop.now_us + ttl_us, msg))
        elif isinstance(msg, StatsReport):
            self._handle_stats(msg)
        elif isinstance(msg, Bye):
            self.peer_said_bye = True

    def _handle_stats(self, msg: StatsReport) -> None:
        pass

    def _dispatch_media(self, msg) -> None:
        pass


class OperatorPeer(_BasePeer):
    """Capture side: encodes once per tick, streams to the expert, loops
    depth back to the local consumer."""

    def __init__(
        self,
        loop: EventLoop,
        endpoint: SimEndpoint,
        source: Iterator[FramePair],
        *,
        codec: DepthCodecConfig,
        color_codec_id: int = 0,
        queue_capacity: Optional[int] = 2,
        tick_period_us: Optional[int] = None,
        **kwargs,
    ):
        super().__init__(Role.OPERATOR, loop, endpoint, **kwargs)
        self.source = source
        self.codec = codec
        self.color_codec_id = color_codec_id
        self.encoder = CodecState()
        self.queue = MediaSendQueue(queue_capacity)
        self.pump = _MediaPump(
            loop, endpoint, self.queue, self.stats,
            on_keyframe_evicted=self._force_next_keyframe,
        )
        self.tick_period_us = tick_period_us
        self.force_keyframe = False
        self.local_depth: Optional[DepthFrame] = None
        self.ticks_done = 0
        self._stream_start_us: Optional[int] = None
        self._source_ts0: Optional[int] = None
        self._stream_end_offset_us: Optional[int] = None

    def start_streaming(self, duration_us: int) -> None:
        """Begin ticking once called (normally from on_established)."""
        self._stream_start_us = self.loop.now_us
        self._stream_end_offset_us = duration_us
        self._schedule_next_tick()

    def _schedule_next_tick(self) -> None:
        try:
            pair = next(self.source)
        except StopIteration:
            return
        depth, _ = pair
        if self._source_ts0 is None:
            self._source_ts0 = depth.capture_ts_us
        offset = depth.capture_ts_us - self._source_ts0
        if offset >= self._stream_end_offset_us:
            return
        self.loop.schedule_at(
            self._stream_start_us + offset, lambda: self._tick(pair)
        )

    def _tick(self, pair: FramePair) -> None:
        depth, color = pair
        now = self.loop.now_us
        # Rebase capture timestamps onto the session clock; ids are kept.
        depth = replace(depth, capture_ts_us=now)
        color = replace(color, capture_ts_us=now)

        msg = encode(self.encoder, depth, self.codec, force_keyframe=self.force_keyframe)
        self.force_keyframe = False
        self.stats.depth_encoded += 1
        depth_type = MsgType.DEPTH_KEYFRAME if msg.kind == KEYFRAME else MsgType.DEPTH_DELTA
        self.pump.submit(serialize_message(msg), depth_type)

        cmsg = color_encode(color, self.color_codec_id)
        self.stats.color_encoded += 1
        self.pump.submit(serialize_message(cmsg), MsgType.COLOR_FRAME)

        # Local loopback (no network): the reconstructible depth, so both
        # peers anchor annotations against identical geometry.
        self.local_depth = DepthFrame(
            frame_id=depth.frame_id,
            capture_ts_us=depth.capture_ts_us,
            intrinsics=self.encoder.intrinsics,
            depth=self.encoder.reference.copy(),
        )
        self.stats.loopback_depth += 1
        self.ticks_done += 1
        self._schedule_next_tick()

    def _force_next_keyframe(self) -> None:
        self.force_keyframe = True

    def _handle_stats(self, msg: StatsReport) -> None:
        if msg.keyframe_request:
            self.force_keyframe = True


class ExpertPeer(_BasePeer):
    """Viewing side: decodes both streams, pairs frames, measures latency."""

    def __init__(
        self,
        loop: EventLoop,
        endpoint: SimEndpoint,
        *,
        pairing_timeout_ms: float = DEFAULT_PAIRING_TIMEOUT_MS,
        assemble: bool = True,
        **kwargs,
    ):
        super().__init__(Role.EXPERT, loop, endpoint, **kwargs)
        self.decoder = CodecState()
        self.pairing_timeout_us = round(pairing_timeout_ms * 1000.0)
        self.assemble = assemble
        self.pending: dict[int, dict] = {}
        self.last_depth_frame_id = -1
        self.last_render: Optional[dict] = None
        self.peer_stats: Optional[StatsReport] = None
        self._keyframe_request_outstanding = False

    def _dispatch_media(self, msg) -> None:
        if isinstance(msg, EncodedDepthMessage):
            self._on_depth(msg)
        elif isinstance(msg, EncodedColorMessage):
            self._on_color(msg)

    def _on_depth(self, msg: EncodedDepthMessage) -> None:
        if msg.frame_id <= self.last_depth_frame_id:
            self.stats.stale_media += 1
            return
        try:
            frame = decode(self.decoder, msg)
        except DesyncError:
            self.stats.desync_deltas += 1
            self._request_keyframe()
            return
        self.last_depth_frame_id = msg.frame_id
        self.stats.depth_rx += 1
        if msg.kind == KEYFRAME:
            self.stats.depth_rx_keyframes += 1
            self._keyframe_request_outstanding = False
        entry = self._pending_entry(frame.frame_id)
        entry["depth"] = frame
        entry["depth_us"] = self.loop.now_us
        if entry.get("color") is not None:
            self._render(frame.frame_id, max(self.loop.now_us, entry["color_us"]))

    def _on_color(self, msg: EncodedColorMessage) -> None:
        frame = color_decode(msg)
        self.stats.color_rx += 1
        if msg.frame_id <= self.last_depth_frame_id and msg.frame_id not in self.pending:
            # Its depth frame already came and went (rendered or skipped).
            self.stats.stale_media += 1
            return
        entry = self._pending_entry(msg.frame_id)
        entry["color"] = frame
        entry["color_us"] = self.loop.now_us
        if entry.get("depth") is not None:
            self._render(msg.frame_id, max(self.loop.now_us, entry["depth_us"]))

    def _pending_entry(self, frame_id: int) -> dict:
        entry = self.pending.get(frame_id)
        if entry is None:
            entry = {"depth": None, "color": None}
            self.pending[frame_id] = entry
            self.loop.schedule_in(
                self.pairing_timeout_us, lambda: self._pairing_timeout(frame_id)
            )
        return entry

    def _pairing_timeout(self, frame_id: int) -> None:
        entry = self.pending.get(frame_id)
        if entry is None:
            return
        if entry.get("depth") is not None:
            # Render depth-only; the sample is the depth decode time.
            self._render(frame_id, entry["depth_us"])
        else:
            del self.pending[frame_id]

    def _render(self, frame_id: int, decode_complete_us: int) -> None:
        entry = self.pending.pop(frame_id)
        depth: DepthFrame = entry["depth"]
        color = entry.get("color")
        self.stats.add_sample(decode_complete_us - depth.capture_ts_us)
        self.stats.renders += 1
        if self.assemble:
            points, colors = to_point_cloud(depth, color)
            self.last_render = {
                "frame_id": frame_id,
                "points": points,
                "colors": colors,
                "paired": color is not None,
            }
        else:
            self.last_render = {"frame_id": frame_id, "paired": color is not None}

    def _request_keyframe(self) -> None:
        if self._keyframe_request_outstanding:
            return
        self._keyframe_request_outstanding = True
        self.stats.keyframe_requests += 1
        self._send_reliable(
            StatsReport(
                role=self.role,
                t_us=self.loop.now_us,
                frames_rx=self.stats.frames_rx,
                keyframe_request=True,
            )
        )

    def _handle_stats(self, msg: StatsReport) -> None:
        self.peer_stats = msg


@dataclass
class SessionOutcome:
    """Everything a caller needs after a simulated session finished."""

    operator: OperatorPeer
    expert: ExpertPeer
    stats_lines: list[str]
    established_us: int
    finished_us: int

    def summary(self) -> dict:
        expert = self.expert.stats
        operator = self.operator.stats
        return {
            "duration_us": self.finished_us,
            "frames_encoded": operator.depth_encoded,
            "depth_tx": operator.depth_tx,
            "color_tx": operator.color_tx,
            "depth_rx": expert.depth_rx,
            "color_rx": expert.color_rx,
            "renders": expert.renders,
            "drops": operator.drops,
            "queue_drops": operator.queue_drops_depth + operator.queue_drops_color,
            "net_drops": operator.net_drops_depth + operator.net_drops_color,
            "bytes_tx": operator.bytes_tx,
            "keyframe_requests": expert.keyframe_requests,
            "e2e_p50_ms": expert.percentile_ms(50.0),
            "e2e_p95_ms": expert.percentile_ms(95.0),
            "e2e_max_ms": expert.max_ms(),
            "annotations_operator": len(self.operator.annotations.strokes),
            "annotations_expert": len(self.expert.annotations.strokes),
        }


ScriptEntry = tuple[float, Role, object]


def run_simulated_session(
    *,
    scene: Optional[SyntheticSceneConfig] = None,
    source: Optional[Iterator[FramePair]] = None,
    profile: Optional[NetworkProfile] = None,
    duration_s: float = 5.0,
    codec: Optional[DepthCodecConfig] = None,
    queue_capacity: Optional[int] = 2,
    color_codec_id: int = 0,
    pairing_timeout_ms: float = DEFAULT_PAIRING_TIMEOUT_MS,
    assemble: bool = True,
    script: Sequence[ScriptEntry] = (),
    stats_interval_s: float = 1.0,
) -> SessionOutcome:
    """Run a complete two-peer session on the simulated network.

    ``script`` entries are (t_seconds, role, AnnotationOp | GestureEvent)
    with times relative to stream start. Stats JSON lines are emitted once
    per simulated second per role, plus one final pair after the link
    drains.
    """
    if (scene is None) == (source is None):
        raise ValueError("provide exactly one of scene or source")
    if scene is not None:
        source = synthetic_source(scene)
        width, height = scene.width, scene.height
    else:
        width = height = 0

    profile = profile or NetworkProfile()
    codec = codec or DepthCodecConfig()
    loop = EventLoop()
    op_end, ex_end = sim_link(profile, loop)

    operator = OperatorPeer(
        loop, op_end, source,
        codec=codec, color_codec_id=color_codec_id, queue_capacity=queue_capacity,
        width=width, height=height,
    )
    expert = ExpertPeer(
        loop, ex_end,
        pairing_timeout_ms=pairing_timeout_ms, assemble=assemble,
    )

    duration_us = round(duration_s * 1e6)
    stats_lines: list[str] = []
    established_at: list[int] = []

    def emit_stats() -> None:
        now = loop.now_us
        stats_lines.append(operator.stats.snapshot_line(now))
        stats_lines.append(expert.stats.snapshot_line(now))

    def on_established() -> None:
        established_at.append(loop.now_us)
        operator.start_streaming(duration_us)
        interval_us = round(stats_interval_s * 1e6)
        for k in range(1, int(duration_s / stats_interval_s) + 1):
            loop.schedule_in(k * interval_us, emit_stats)
        for t_s, role, item in script:
            peer = operator if role == Role.OPERATOR else expert
            when = loop.now_us + round(t_s * 1e6)
            if isinstance(item, GestureEvent):
                loop.schedule_at(when, lambda p=peer, g=item: p.submit_gesture(g))
            else:
                loop.schedule_at(when, lambda p=peer, o=item: p.submit_annotation(o))
        loop.schedule_in(duration_us, operator.say_bye)

    operator.on_established = on_established
    loop.schedule_at(0, operator.send_hello)
    loop.schedule_at(0, expert.send_hello)
    loop.run_until_idle()

    for peer in (operator, expert):
        if peer.handshake_error is not None:
            raise peer.handshake_error
    if not established_at:
        raise HandshakeError("session never established")

    emit_stats()
    return SessionOutcome(
        operator=operator,
        expert=expert,
        stats_lines=stats_lines,
        established_us=established_at[0],
        finished_us=loop.now_us,
    )
