"""Change-based depth compression: keyframes plus per-tile deltas.

The encoder compares each frame against a decoder-reconstructible
reference and sends only the square tiles in which at least one pixel
moved past the change threshold or flipped validity (0 <-> nonzero). The
reference is updated with exactly the values the decoder will hold, so
encoder/decoder drift is structurally impossible on a lossless channel.
Lossy channels recover at the next keyframe.

Keyframes carry the grid geometry and tile size for their epoch; deltas
carry only the epoch reference id and the changed tiles, and bind to the
receiver's epoch geometry. Tile payloads are raw little-endian u16 with
edge tiles clipped; there is no entropy coding here. Serialized sizes
follow the wire layout (see :mod:`volustream.wire`): 12-byte envelope
header, 33-byte keyframe prefix, 20-byte delta prefix, 6 bytes per tile
header.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CodecError, ConfigurationError, DesyncError, FormatError
from .frames import CameraIntrinsics, DepthFrame

KEYFRAME = "keyframe"
DELTA = "delta"

WIRE_HEADER_BYTES = 12
KEYFRAME_PREFIX_BYTES = 33  # frame_id u32, ts u64, w u16, h u16, tile u8, 4x f32
DELTA_PREFIX_BYTES = 20  # frame_id u32, ref_frame_id u32, ts u64, tile_count u32
TILE_HEADER_BYTES = 6  # tile_index u32, clipped_w u8, clipped_h u8


@dataclass(frozen=True)
class DepthCodecConfig:
    tile_size: int = 16
    change_threshold_mm: int = 10
    keyframe_interval: int = 30

    def __post_init__(self):
        if not 1 <= self.tile_size <= 255:
            raise ConfigurationError(
                f"tile_size must be in [1, 255], got {self.tile_size}"
            )
        if self.keyframe_interval < 1:
            raise ConfigurationError(
                f"keyframe_interval must be >= 1, got {self.keyframe_interval}"
            )
        if self.change_threshold_mm < 0:
            raise ConfigurationError("change_threshold_mm must be >= 0")


@dataclass
class TilePayload:
    """One changed tile: row-major u16 values, edge tiles clipped."""

    tile_index: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.uint16)

    def __eq__(self, other):
        return (
            isinstance(other, TilePayload)
            and self.tile_index == other.tile_index
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )


@dataclass
class EncodedDepthMessage:
    """A keyframe (full raster plus geometry) or delta (changed tiles only).

    Delta messages created by :func:`encode` carry the encoder's geometry
    for size accounting, but geometry is not part of the delta wire format;
    a delta that round-tripped the wire has width/height/tile_size of 0 and
    equality ignores those fields for deltas.
    """

    kind: str
    frame_id: int
    capture_ts_us: int
    width: int = 0
    height: int = 0
    tile_size: int = 0
    ref_frame_id: int = 0
    intrinsics: Optional[CameraIntrinsics] = None
    depth: Optional[np.ndarray] = None
    tiles: list[TilePayload] = field(default_factory=list)

    def __post_init__(self):
        if self.kind == KEYFRAME:
            if self.depth is None or self.intrinsics is None:
                raise ConfigurationError("keyframe requires depth and intrinsics")
            if not 1 <= self.tile_size <= 255:
                raise ConfigurationError("keyframe must carry its epoch tile size")
            self.depth = np.ascontiguousarray(self.depth, dtype=np.uint16)
            if self.depth.shape != (self.height, self.width):
                raise ConfigurationError("keyframe payload shape mismatch")
        elif self.kind == DELTA:
            last = -1
            cap = self.tile_capacity
            for tile in self.tiles:
                if tile.tile_index <= last:
                    raise ConfigurationError("tile indices must strictly increase")
                if cap is not None and tile.tile_index >= cap:
                    raise ConfigurationError(
                        f"tile_index {tile.tile_index} out of range (max {cap - 1})"
                    )
                last = tile.tile_index
        else:
            raise ConfigurationError(f"unknown message kind {self.kind!r}")

    @property
    def tile_capacity(self) -> Optional[int]:
        if self.width <= 0 or self.height <= 0 or self.tile_size <= 0:
            return None
        return math.ceil(self.width / self.tile_size) * math.ceil(
            self.height / self.tile_size
        )

    def __eq__(self, other):
        if not isinstance(other, EncodedDepthMessage):
            return NotImplemented
        if (self.kind, self.frame_id, self.capture_ts_us) != (
            other.kind, other.frame_id, other.capture_ts_us,
        ):
            return False
        if self.kind == KEYFRAME:
            return (
                (self.width, self.height, self.tile_size, self.intrinsics)
                == (other.width, other.height, other.tile_size, other.intrinsics)
                and np.array_equal(self.depth, other.depth)
            )
        return self.ref_frame_id == other.ref_frame_id and self.tiles == other.tiles


class CodecState:
    """Per-direction codec state; encoder and decoder each hold one.

    ``tile_size`` is pinned per keyframe epoch so both sides index tiles
    identically even when the configured tile size changes mid-stream.
    """

    def __init__(self):
        self.reference: Optional[np.ndarray] = None
        self.intrinsics: Optional[CameraIntrinsics] = None
        self.tile_size: Optional[int] = None
        self.frames_since_keyframe = 0
        self.epoch_frame_id: Optional[int] = None

    @property
    def has_reference(self) -> bool:
        return self.reference is not None

    def reset(self) -> None:
        self.reference = None
        self.intrinsics = None
        self.tile_size = None
        self.frames_since_keyframe = 0
        self.epoch_frame_id = None


def _tile_bounds(index: int, tile_size: int, width: int, height: int):
    tiles_x = math.ceil(width / tile_size)
    ty, tx = divmod(index, tiles_x)
    y0 = ty * tile_size
    x0 = tx * tile_size
    return y0, min(y0 + tile_size, height), x0, min(x0 + tile_size, width)


def changed_tile_mask(
    reference: np.ndarray, frame: np.ndarray, threshold_mm: int, tile_size: int
) -> np.ndarray:
    """Boolean (tiles_y, tiles_x) grid: True where a tile must be sent.

    A pixel counts as changed when both sides are valid and the absolute
    difference exceeds the threshold, or when validity flips.
    """
    ref_valid = reference > 0
    new_valid = frame > 0
    diff = np.abs(frame.astype(np.int32) - reference.astype(np.int32))
    changed = (ref_valid & new_valid & (diff > threshold_mm)) | (ref_valid != new_valid)

    h, w = frame.shape
    ty = math.ceil(h / tile_size)
    tx = math.ceil(w / tile_size)
    padded = np.zeros((ty * tile_size, tx * tile_size), dtype=bool)
    padded[:h, :w] = changed
    return padded.reshape(ty, tile_size, tx, tile_size).any(axis=(1, 3))


def encode(
    state: CodecState,
    frame: DepthFrame,
    config: DepthCodecConfig,
    *,
    force_keyframe: bool = False,
) -> EncodedDepthMessage:
    """Encode one frame, updating the encoder reference in place."""
    if state.has_reference and state.reference.shape != frame.depth.shape:
        raise CodecError(
            f"frame shape {frame.depth.shape} does not match reference "
            f"{state.reference.shape}; reset the codec with a keyframe"
        )

    if (
        force_keyframe
        or not state.has_reference
        or state.tile_size != config.tile_size
        or state.frames_since_keyframe + 1 >= config.keyframe_interval
    ):
        state.reference = frame.depth.copy()
        state.intrinsics = frame.intrinsics
        state.tile_size = config.tile_size
        state.frames_since_keyframe = 0
        state.epoch_frame_id = frame.frame_id
        return EncodedDepthMessage(
            kind=KEYFRAME,
            frame_id=frame.frame_id,
            capture_ts_us=frame.capture_ts_us,
            width=frame.width,
            height=frame.height,
            tile_size=config.tile_size,
            intrinsics=frame.intrinsics,
            depth=frame.depth,  # frames are immutable; safe to share
        )

    mask = changed_tile_mask(
        state.reference, frame.depth, config.change_threshold_mm, state.tile_size
    )
    tiles_x = mask.shape[1]
    tiles = []
    for ty, tx in zip(*np.nonzero(mask)):
        index = int(ty) * tiles_x + int(tx)
        y0, y1, x0, x1 = _tile_bounds(index, state.tile_size, frame.width, frame.height)
        values = frame.depth[y0:y1, x0:x1].copy()
        tiles.append(TilePayload(tile_index=index, values=values))
        state.reference[y0:y1, x0:x1] = values
    state.frames_since_keyframe += 1
    return EncodedDepthMessage(
        kind=DELTA,
        frame_id=frame.frame_id,
        capture_ts_us=frame.capture_ts_us,
        width=frame.width,
        height=frame.height,
        tile_size=state.tile_size,
        ref_frame_id=state.epoch_frame_id,
        tiles=tiles,
    )


def decode(state: CodecState, msg: EncodedDepthMessage) -> DepthFrame:
    """Apply one encoded message, updating the decoder reference in place."""
    if msg.kind == KEYFRAME:
        state.reference = msg.depth.copy()
        state.intrinsics = msg.intrinsics
        state.tile_size = msg.tile_size
        state.frames_since_keyframe = 0
        state.epoch_frame_id = msg.frame_id
        return DepthFrame(
            frame_id=msg.frame_id,
            capture_ts_us=msg.capture_ts_us,
            intrinsics=msg.intrinsics,
            depth=state.reference.copy(),
        )

    if not state.has_reference:
        raise DesyncError("delta received with no reference frame; request a keyframe")
    if msg.ref_frame_id != state.epoch_frame_id:
        raise DesyncError(
            f"delta references keyframe epoch {msg.ref_frame_id} but decoder "
            f"holds epoch {state.epoch_frame_id}; request a keyframe"
        )

    height, width = state.reference.shape
    tiles_x = math.ceil(width / state.tile_size)
    tile_cap = tiles_x * math.ceil(height / state.tile_size)
    for tile in msg.tiles:
        if tile.tile_index >= tile_cap:
            raise FormatError(
                f"tile_index {tile.tile_index} out of range (max {tile_cap - 1})"
            )
        y0, y1, x0, x1 = _tile_bounds(tile.tile_index, state.tile_size, width, height)
        if tile.values.shape != (y1 - y0, x1 - x0):
            raise FormatError(
                f"tile {tile.tile_index} payload shape {tile.values.shape} "
                f"does not match clipped extent {(y1 - y0, x1 - x0)}"
            )
        state.reference[y0:y1, x0:x1] = tile.values
    state.frames_since_keyframe += 1
    return DepthFrame(
        frame_id=msg.frame_id,
        capture_ts_us=msg.capture_ts_us,
        intrinsics=state.intrinsics,
        depth=state.reference.copy(),
    )


def encoded_size(msg: EncodedDepthMessage) -> int:
    """Exact serialized size in bytes, envelope header included."""
    if msg.kind == KEYFRAME:
        return WIRE_HEADER_BYTES + KEYFRAME_PREFIX_BYTES + 2 * msg.width * msg.height
    payload = DELTA_PREFIX_BYTES + sum(
        TILE_HEADER_BYTES + 2 * t.values.size for t in msg.tiles
    )
    return WIRE_HEADER_BYTES + payload
