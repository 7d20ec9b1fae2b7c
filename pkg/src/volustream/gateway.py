"""WebSocket gateway: the operator side served live to a browser expert.

One client at a time plays the expert role. The gateway speaks the viewer
protocol: text frames carry JSON control (hello, annotation ops with pixel
coordinates, gestures, stats, errors) and binary frames carry serialized
DepthKeyframe/DepthDelta/ColorFrame wire messages. Annotation anchoring is
server-authoritative: the client sends (u, v) picks and the gateway
anchors them against its current reconstructible depth before applying and
echoing the op.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from websockets.sync.server import serve

from .annotation import (
    AnnotationOp,
    AnnotationState,
    GestureEvent,
    OpKind,
    Role,
    anchor_screen_input,
)
from .color_codec import color_encode
from .depth_codec import CodecState, DepthCodecConfig, encode
from .errors import ConfigurationError
from .frames import DepthFrame, SyntheticSceneConfig, replay_source, synthetic_source
from .geometry import Ray
from .session import SessionStats
from .wire.messages import serialize_message
from .wire.netsim import NetworkProfile

logger = logging.getLogger(__name__)

_OP_KINDS = {
    "stroke_begin": OpKind.STROKE_BEGIN,
    "stroke_point": OpKind.STROKE_POINT,
    "stroke_end": OpKind.STROKE_END,
    "erase_stroke": OpKind.ERASE_STROKE,
    "clear_all": OpKind.CLEAR_ALL,
}
_KIND_NAMES = {v: k for k, v in _OP_KINDS.items()}


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    codec: DepthCodecConfig = field(default_factory=DepthCodecConfig)
    color_codec_id: int = 0
    profile: Optional[NetworkProfile] = None  # loss/latency shaping; bandwidth ignored
    stats_interval_s: float = 1.0


class ViewerGateway:
    """Serves one scene to one browser expert over a WebSocket."""

    def __init__(self, scene, config: Optional[GatewayConfig] = None):
        self.scene = scene
        self.config = config or GatewayConfig()
        self.annotations = AnnotationState()
        self.stats = SessionStats(role=Role.OPERATOR)
        self.port: Optional[int] = None
        self._server = None
        self._server_thread: Optional[threading.Thread] = None
        self._client_lock = threading.Lock()
        self._client = None
        self._client_send_lock: Optional[threading.Lock] = None
        self._depth_lock = threading.Lock()
        self._current_depth: Optional[DepthFrame] = None
        self._force_keyframe = threading.Event()
        self._stopping = threading.Event()
        self._rng = random.Random(
            self.config.profile.seed if self.config.profile else 0
        )
        if self.config.profile and self.config.profile.bandwidth_bps:
            logger.warning(
                "gateway ignores bandwidth caps; only loss and latency are shaped live"
            )

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._server = serve(self._handle_client, self.config.host, self.config.port)
        self.port = self._server.socket.getsockname()[1]
        self._server_thread = threading.Thread(
            target=self._server.serve_forever, name="gateway-accept", daemon=True
        )
        self._server_thread.start()

    def serve_forever(self) -> None:
        self.start()
        logger.info("viewer gateway listening on %s:%d", self.config.host, self.port)
        try:
            while not self._stopping.wait(0.5):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._stopping.set()
        if self._server is not None:
            self._server.shutdown()
        if self._server_thread is not None:
            self._server_thread.join(timeout=5.0)

    # -- scene ---------------------------------------------------------------

    def _open_source(self):
        if isinstance(self.scene, SyntheticSceneConfig):
            return synthetic_source(self.scene), self.scene.fps
        # Path to a VRS1 recording; loop so the stream never runs dry.
        source = replay_source(self.scene, loop=True)
        return source, None

    def current_depth(self) -> Optional[DepthFrame]:
        with self._depth_lock:
            return self._current_depth

    # -- client handling -----------------------------------------------------

    def _handle_client(self, ws) -> None:
        send_lock = threading.Lock()
        with self._client_lock:
            if self._client is not None:
                ws.send(json.dumps({
                    "type": "error",
                    "reason": "role-conflict",
                    "detail": "an expert is already connected",
                }))
                ws.close()
                return
            self._client = ws
            self._client_send_lock = send_lock
        stop_ticker = threading.Event()
        try:
            self._send_json(ws, send_lock, self._hello_payload())
            ticker = threading.Thread(
                target=self._ticker,
                args=(ws, send_lock, stop_ticker),
                name="gateway-ticker",
                daemon=True,
            )
            ticker.start()
            for message in ws:
                if isinstance(message, (bytes, bytearray)):
                    continue  # clients speak JSON control only
                self._handle_control(ws, send_lock, message)
        except Exception:
            logger.exception("client connection failed")
        finally:
            stop_ticker.set()
            with self._client_lock:
                self._client = None

    def _hello_payload(self) -> dict:
        if isinstance(self.scene, SyntheticSceneConfig):
            intr = self.scene.resolve_intrinsics()
            fps = self.scene.fps
        else:
            from .frames import read_recording_header

            with open(self.scene, "rb") as fh:
                info = read_recording_header(fh)
            intr = info.intrinsics
            fps = info.fps_numerator / info.fps_denominator
        return {
            "type": "hello",
            "role": "operator",
            "protocol_version": 1,
            "width": intr.width,
            "height": intr.height,
            "fps": fps,
            "intrinsics": {
                "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            },
            "tile_size": self.config.codec.tile_size,
            "keyframe_interval": self.config.codec.keyframe_interval,
        }

    def _send_json(self, ws, send_lock, payload: dict) -> None:
        with send_lock:
            ws.send(json.dumps(payload))

    def _send_binary(self, ws, send_lock, data: bytes, *, is_color: bool = False) -> None:
        profile = self.config.profile
        if profile is not None:
            if self._rng.random() < profile.loss_probability:
                if is_color:
                    self.stats.net_drops_color += 1
                else:
                    self.stats.net_drops_depth += 1
                return
            delay_s = (
                profile.base_latency_ms + self._rng.uniform(0.0, profile.jitter_ms)
            ) / 1000.0
            if delay_s > 0:
                time.sleep(delay_s)
        with send_lock:
            ws.send(data)

    def _ticker(self, ws, send_lock, stop: threading.Event) -> None:
        source, fps = self._open_source()
        encoder = CodecState()
        period_s = 1.0 / fps if fps else 1.0 / 15.0
        next_stats = time.monotonic() + self.config.stats_interval_s
        started = time.monotonic()
        tick = 0
        try:
            for depth, color in source:
                if stop.is_set() or self._stopping.is_set():
                    return
                force = self._force_keyframe.is_set()
                self._force_keyframe.clear()
                msg = encode(encoder, depth, self.config.codec, force_keyframe=force)
                self.stats.depth_encoded += 1
                with self._depth_lock:
                    self._current_depth = DepthFrame(
                        frame_id=depth.frame_id,
                        capture_ts_us=depth.capture_ts_us,
                        intrinsics=encoder.intrinsics,
                        depth=encoder.reference.copy(),
                    )
                self.stats.loopback_depth += 1
                data = serialize_message(msg)
                self._send_binary(ws, send_lock, data)
                self.stats.depth_tx += 1
                self.stats.bytes_tx += len(data)
                self.stats.bytes_tx_depth += len(data)

                cdata = serialize_message(color_encode(color, self.config.color_codec_id))
                self.stats.color_encoded += 1
                self._send_binary(ws, send_lock, cdata, is_color=True)
                self.stats.color_tx += 1
                self.stats.bytes_tx += len(cdata)
                self.stats.bytes_tx_color += len(cdata)

                now = time.monotonic()
                if now >= next_stats:
                    next_stats = now + self.config.stats_interval_s
                    self._send_json(
                        ws, send_lock,
                        {"type": "stats",
                         **self.stats.snapshot(round((now - started) * 1e6))},
                    )
                tick += 1
                sleep_for = started + tick * period_s - time.monotonic()
                if sleep_for > 0:
                    time.sleep(sleep_for)
        except Exception:
            if not (stop.is_set() or self._stopping.is_set()):
                logger.exception("ticker stopped unexpectedly")

    # -- control messages ----------------------------------------------------

    def _handle_control(self, ws, send_lock, raw: str) -> None:
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            self._send_json(ws, send_lock, {
                "type": "error", "reason": "bad-json", "detail": raw[:100],
            })
            return
        kind = payload.get("type")
        if kind == "annotation_op":
            self._handle_annotation(ws, send_lock, payload)
        elif kind == "gesture":
            self._handle_gesture(ws, send_lock, payload)
        elif kind == "keyframe_request":
            self._force_keyframe.set()
        elif kind == "state_request":
            self._send_json(ws, send_lock, {"type": "state", **self.annotations.to_json()})
        elif kind == "bye":
            ws.close()
        else:
            self._send_json(ws, send_lock, {
                "type": "error", "reason": "unknown-type", "detail": str(kind),
            })

    def _handle_annotation(self, ws, send_lock, payload: dict) -> None:
        kind_name = payload.get("kind")
        op_kind = _OP_KINDS.get(kind_name)
        if op_kind is None:
            self._send_json(ws, send_lock, {
                "type": "error", "reason": "unknown-op-kind", "detail": str(kind_name),
            })
            return
        stroke_id = int(payload.get("stroke_id", 0))
        seq = int(payload.get("seq", 0))
        point = None
        if op_kind in (OpKind.STROKE_BEGIN, OpKind.STROKE_POINT):
            depth = self.current_depth()
            if depth is None:
                self._send_json(ws, send_lock, {
                    "type": "annotation_rejected", "stroke_id": stroke_id,
                    "seq": seq, "reason": "no-depth-yet",
                })
                return
            point = anchor_screen_input(depth, (payload["u"], payload["v"]))
            if point is None:
                self._send_json(ws, send_lock, {
                    "type": "annotation_rejected", "stroke_id": stroke_id,
                    "seq": seq, "reason": "anchor-miss",
                })
                return
        color = tuple(payload["color"]) if "color" in payload else None
        op = AnnotationOp(
            op_kind=op_kind, author=Role.EXPERT, stroke_id=stroke_id, seq=seq,
            point=point, color=color,
        )
        if self.annotations.apply(op):
            self.stats.annotations_applied += 1
            self._echo_op(ws, send_lock, op)
        else:
            self.stats.annotations_dropped += 1
            self._send_json(ws, send_lock, {
                "type": "annotation_rejected", "stroke_id": stroke_id,
                "seq": seq, "reason": "protocol-error",
            })

    def _echo_op(self, ws, send_lock, op: AnnotationOp) -> None:
        body = {
            "type": "annotation_op",
            "kind": _KIND_NAMES[op.op_kind],
            "author": op.author.wire_name,
            "stroke_id": op.stroke_id,
            "seq": op.seq,
        }
        if op.point is not None:
            body["point"] = [op.point.x, op.point.y, op.point.z]
        if op.color is not None:
            body["color"] = list(op.color)
        self._send_json(ws, send_lock, body)

    def _handle_gesture(self, ws, send_lock, payload: dict) -> None:
        depth = self.current_depth()
        if depth is None:
            return
        ray = Ray.through_pixel(
            depth.intrinsics, float(payload["u"]), float(payload["v"])
        )
        gesture = GestureEvent(
            kind=0, author=Role.EXPERT, ray=ray,
            ts_us=round(time.monotonic() * 1e6),
        )
        self.stats.gestures_rx += 1
        self._send_json(ws, send_lock, {
            "type": "gesture",
            "author": gesture.author.wire_name,
            "origin": list(gesture.ray.origin.as_tuple()),
            "direction": list(gesture.ray.direction),
        })

    def submit_operator_op(self, op: AnnotationOp) -> None:
        """Inject an operator-authored op (scripted local input)."""
        if op.author != Role.OPERATOR:
            raise ConfigurationError("operator injection requires operator authorship")
        if self.annotations.apply(op):
            self.stats.annotations_applied += 1
        else:
            self.stats.annotations_dropped += 1
        with self._client_lock:
            ws = self._client
            send_lock = self._client_send_lock if ws is not None else None
        if ws is not None:
            self._echo_op(ws, send_lock, op)
