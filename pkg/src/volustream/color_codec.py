"""Pluggable color-stream codecs with a raw (identity) baseline.

The codec id travels in every color message so a real video codec can be
registered later without touching the protocol. Codec 0 is the raw
baseline and must round-trip bit-exactly; registered codecs own their own
loss bounds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ConfigurationError, FormatError
from .frames import ColorFrame

RAW_CODEC_ID = 0


@dataclass
class EncodedColorMessage:
    frame_id: int
    capture_ts_us: int
    codec_id: int
    width: int
    height: int
    payload: bytes

    def __eq__(self, other):
        if not isinstance(other, EncodedColorMessage):
            return NotImplemented
        return (
            self.frame_id, self.capture_ts_us, self.codec_id,
            self.width, self.height, self.payload,
        ) == (
            other.frame_id, other.capture_ts_us, other.codec_id,
            other.width, other.height, other.payload,
        )


class ColorCodec(Protocol):
    def encode(self, pixels: np.ndarray) -> bytes: ...

    def decode(self, payload: bytes, width: int, height: int) -> np.ndarray: ...


class _RawCodec:
    def encode(self, pixels: np.ndarray) -> bytes:
        return pixels.tobytes()

    def decode(self, payload: bytes, width: int, height: int) -> np.ndarray:
        expected = 3 * width * height
        if len(payload) != expected:
            raise FormatError(
                f"raw color payload is {len(payload)} bytes, expected {expected}"
            )
        return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


_REGISTRY: dict[int, ColorCodec] = {RAW_CODEC_ID: _RawCodec()}


def register_codec(codec_id: int, codec: ColorCodec) -> None:
    if not 0 <= codec_id <= 255:
        raise ConfigurationError(f"codec_id must fit in a byte, got {codec_id}")
    if codec_id in _REGISTRY:
        raise ConfigurationError(f"codec_id {codec_id} already registered")
    _REGISTRY[codec_id] = codec


def _lookup(codec_id: int) -> ColorCodec:
    try:
        return _REGISTRY[codec_id]
    except KeyError:
        raise ConfigurationError(f"unknown color codec_id {codec_id}") from None


def color_encode(frame: ColorFrame, codec_id: int = RAW_CODEC_ID) -> EncodedColorMessage:
    codec = _lookup(codec_id)
    return EncodedColorMessage(
        frame_id=frame.frame_id,
        capture_ts_us=frame.capture_ts_us,
        codec_id=codec_id,
        width=frame.width,
        height=frame.height,
        payload=codec.encode(frame.pixels),
    )


def color_decode(msg: EncodedColorMessage) -> ColorFrame:
    codec = _lookup(msg.codec_id)
    pixels = codec.decode(msg.payload, msg.width, msg.height)
    return ColorFrame(
        frame_id=msg.frame_id,
        capture_ts_us=msg.capture_ts_us,
        width=msg.width,
        height=msg.height,
        pixels=pixels,
    )
