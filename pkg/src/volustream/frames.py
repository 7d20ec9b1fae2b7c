"""RGB-D frame types and hardware-free frame sources.

Depth is stored as unsigned 16-bit millimeters with 0 meaning "no return",
the usual time-of-flight convention. Color and depth share one registered
pixel grid. Frames carry timestamps from whatever logical clock drives the
source, so pipelines built on these sources are reproducible.

Two sources stand in for a physical volumetric camera:

* :func:`synthetic_source` renders an analytic scene (a background plane
  plus a sphere orbiting in camera space) with optional seeded depth noise.
* :func:`replay_source` replays a VRS1 recording produced by
  :func:`record_sink`, bit-exactly, with optional looping.

VRS1 file layout (little-endian): magic ``VRS1``, version u16 = 1,
width u16, height u16, fps numerator u16, fps denominator u16,
fx/fy/cx/cy f32; then per frame: frame_id u32, capture_ts_us u64,
depth (width*height u16), color (3*width*height u8).
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import ConfigurationError, FormatError

VRS1_MAGIC = b"VRS1"
VRS1_VERSION = 1

_HEADER = struct.Struct("<4sHHHHHffff")
_FRAME_HEADER = struct.Struct("<IQ")

VRS1_HEADER_SIZE = _HEADER.size
VRS1_FRAME_HEADER_SIZE = _FRAME_HEADER.size

PLANE_COLOR = (128, 128, 128)
SPHERE_COLOR = (200, 64, 48)

MAX_DEPTH_MM = 65535


def _f32(value: float) -> float:
    return float(np.float32(value))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters of the registered RGB-D grid.

    Values are stored at f32 precision because both the recording format
    and the wire format carry them as f32; keeping full f64 here would make
    round-trips lossy.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError(
                f"image dimensions must be positive, got {self.width}x{self.height}"
            )
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(
                f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}"
            )
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ConfigurationError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, _f32(getattr(self, name)))


def default_intrinsics(width: int, height: int, fov_fx: float = 525.0) -> CameraIntrinsics:
    # Principal point on an exact pixel so the optical axis hits a sample.
    return CameraIntrinsics(
        fx=fov_fx, fy=fov_fx, cx=width // 2, cy=height // 2, width=width, height=height
    )


@dataclass
class DepthFrame:
    """One captured depth raster. ``depth`` is (height, width) uint16 mm."""

    frame_id: int
    capture_ts_us: int
    intrinsics: CameraIntrinsics
    depth: np.ndarray

    def __post_init__(self):
        self.depth = np.ascontiguousarray(self.depth, dtype=np.uint16)
        expected = (self.intrinsics.height, self.intrinsics.width)
        if self.depth.shape != expected:
            raise ConfigurationError(
                f"depth shape {self.depth.shape} does not match intrinsics {expected}"
            )
        self.depth.setflags(write=False)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def valid_mask(self) -> np.ndarray:
        return self.depth > 0


@dataclass
class ColorFrame:
    """One captured color raster. ``pixels`` is (height, width, 3) uint8 RGB."""

    frame_id: int
    capture_ts_us: int
    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise ConfigurationError(
                f"pixel shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        self.pixels.setflags(write=False)


FramePair = tuple[DepthFrame, ColorFrame]


@dataclass(frozen=True)
class CircularPath:
    """Sphere-centre orbit in camera space, millimeters."""

    center_mm: tuple[float, float, float] = (0.0, 0.0, 1500.0)
    orbit_radius_mm: float = 0.0
    angular_speed_rad_s: float = 0.0
    phase_rad: float = 0.0

    def position_at(self, t_s: float) -> tuple[float, float, float]:
        theta = self.phase_rad + self.angular_speed_rad_s * t_s
        cx, cy, cz = self.center_mm
        return (
            cx + self.orbit_radius_mm * math.cos(theta),
            cy + self.orbit_radius_mm * math.sin(theta),
            cz,
        )


@dataclass(frozen=True)
class SyntheticSceneConfig:
    """Analytic desk-scale scene: background plane plus an orbiting sphere."""

    width: int = 640
    height: int = 576
    fps: float = 15.0
    plane_depth_mm: float = 2000.0
    sphere_radius_mm: float = 150.0
    sphere_path: CircularPath = field(default_factory=CircularPath)
    noise_amplitude_mm: int = 0
    seed: int = 0
    intrinsics: Optional[CameraIntrinsics] = None

    def resolve_intrinsics(self) -> CameraIntrinsics:
        return self.intrinsics or default_intrinsics(self.width, self.height)

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError(
                f"scene dimensions must be positive, got {self.width}x{self.height}"
            )
        if self.fps <= 0:
            raise ConfigurationError(f"fps must be positive, got {self.fps}")
        if self.sphere_radius_mm < 0:
            raise ConfigurationError("sphere radius must be non-negative")
        if self.noise_amplitude_mm < 0:
            raise ConfigurationError("noise amplitude must be non-negative")

    def tick_ts_us(self, tick: int) -> int:
        return round(tick * 1_000_000 / self.fps)


def _render_tick(
    config: SyntheticSceneConfig,
    intr: CameraIntrinsics,
    tick: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Render depth (u16 mm) and color (u8 RGB) for one scene tick."""
    sx, sy, sz = config.sphere_path.position_at(tick / config.fps)
    r = config.sphere_radius_mm

    us = (np.arange(intr.width, dtype=np.float64) - intr.cx) / intr.fx
    vs = (np.arange(intr.height, dtype=np.float64) - intr.cy) / intr.fy
    a, b = np.meshgrid(us, vs)

    # Ray p(t) = t * (a, b, 1); solve |p - s|^2 = r^2. Because the ray
    # direction has z = 1, the root t is directly the z-depth in mm.
    qa = a * a + b * b + 1.0
    qb = a * sx + b * sy + sz
    qc = sx * sx + sy * sy + sz * sz - r * r
    disc = qb * qb - qa * qc
    hit = disc >= 0.0
    sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (qb - sqrt_disc) / qa
    sphere_z = np.where(hit & (t_near > 0.0), t_near, np.inf)

    plane_z = config.plane_depth_mm if config.plane_depth_mm > 0 else np.inf
    z = np.minimum(sphere_z, plane_z)
    in_range = np.isfinite(z) & (z >= 0.5) & (z <= MAX_DEPTH_MM)

    depth = np.where(in_range, np.rint(z), 0.0).astype(np.uint16)
    if config.noise_amplitude_mm > 0:
        amp = config.noise_amplitude_mm
        noise = rng.integers(-amp, amp + 1, size=depth.shape, dtype=np.int32)
        noisy = np.clip(depth.astype(np.int32) + noise, 1, MAX_DEPTH_MM)
        depth = np.where(depth > 0, noisy, 0).astype(np.uint16)

    color = np.zeros((intr.height, intr.width, 3), dtype=np.uint8)
    sphere_front = in_range & (sphere_z <= plane_z)
    plane_front = in_range & ~sphere_front
    color[plane_front] = PLANE_COLOR
    color[sphere_front] = SPHERE_COLOR
    return depth, color


def synthetic_source(config: SyntheticSceneConfig) -> Iterator[FramePair]:
    """Yield an endless, deterministic stream of (DepthFrame, ColorFrame) pairs."""
    config.validate()
    intr = config.resolve_intrinsics()
    rng = np.random.default_rng(config.seed)
    tick = 0
    while True:
        depth, color = _render_tick(config, intr, tick, rng)
        ts = config.tick_ts_us(tick)
        yield (
            DepthFrame(frame_id=tick, capture_ts_us=ts, intrinsics=intr, depth=depth),
            ColorFrame(
                frame_id=tick,
                capture_ts_us=ts,
                width=intr.width,
                height=intr.height,
                pixels=color,
            ),
        )
        tick += 1


def take(stream: Iterator[FramePair], n: int) -> list[FramePair]:
    """Pull the first n frame pairs from a stream."""
    out = []
    for _ in range(n):
        try:
            out.append(next(stream))
        except StopIteration:
            break
    return out


def _fps_fraction(fps: float) -> tuple[int, int]:
    frac = Fraction(fps).limit_denominator(65535)
    num, den = frac.numerator, frac.denominator
    if not (0 < num <= 65535):
        raise ConfigurationError(f"fps {fps} not representable as u16/u16 rational")
    return num, den


def record_sink(
    stream: Iterable[FramePair],
    path: str | os.PathLike,
    *,
    fps: float = 15.0,
    max_frames: Optional[int] = None,
) -> int:
    """Write a VRS1 recording; returns the number of frames written.

    The header's fps rational is metadata used only for loop-offset
    arithmetic on replay; frame timestamps are stored verbatim. On write
    failure the partial file is removed.
    """
    num, den = _fps_fraction(fps)
    written = 0
    header_done = False
    last_id = None
    last_ts = None
    try:
        with open(path, "wb") as fh:
            for depth, color in stream:
                if max_frames is not None and written >= max_frames:
                    break
                intr = depth.intrinsics
                if not header_done:
                    fh.write(
                        _HEADER.pack(
                            VRS1_MAGIC, VRS1_VERSION, intr.width, intr.height,
                            num, den, intr.fx, intr.fy, intr.cx, intr.cy,
                        )
                    )
                    header_done = True
                    first_intr = intr
                elif intr != first_intr:
                    raise ConfigurationError("intrinsics changed mid-stream")
                if (color.width, color.height) != (intr.width, intr.height):
                    raise ConfigurationError("color/depth dimension mismatch")
                if last_id is not None and depth.frame_id <= last_id:
                    raise ConfigurationError(
                        f"frame_id must strictly increase, got {depth.frame_id} after {last_id}"
                    )
                if last_ts is not None and depth.capture_ts_us < last_ts:
                    raise ConfigurationError("capture_ts_us must be non-decreasing")
                last_id, last_ts = depth.frame_id, depth.capture_ts_us

                fh.write(_FRAME_HEADER.pack(depth.frame_id, depth.capture_ts_us))
                fh.write(depth.depth.astype("<u2").tobytes())
                fh.write(color.pixels.tobytes())
                written += 1
            if not header_done:
                # Empty stream: still a valid zero-frame recording.
                intr = default_intrinsics(640, 576)
                fh.write(
                    _HEADER.pack(
                        VRS1_MAGIC, VRS1_VERSION, intr.width, intr.height,
                        num, den, intr.fx, intr.fy, intr.cx, intr.cy,
                    )
                )
    except Exception:
        try:
            os.unlink(path)
        except OSError:
            pass
        raise
    return written


@dataclass(frozen=True)
class RecordingInfo:
    intrinsics: CameraIntrinsics
    fps_numerator: int
    fps_denominator: int

    @property
    def frame_period_us(self) -> int:
        return round(1_000_000 * self.fps_denominator / self.fps_numerator)


def read_recording_header(fh) -> RecordingInfo:
    raw = fh.read(VRS1_HEADER_SIZE)
    if len(raw) < VRS1_HEADER_SIZE:
        raise FormatError("truncated VRS1 header", offset=len(raw))
    magic, version, width, height, num, den, fx, fy, cx, cy = _HEADER.unpack(raw)
    if magic != VRS1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VRS1_MAGIC!r}", offset=0)
    if version != VRS1_VERSION:
        raise FormatError(f"unsupported VRS version {version}, expected {VRS1_VERSION}", offset=4)
    if num == 0 or den == 0:
        raise FormatError("fps rational must be nonzero", offset=8)
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
    return RecordingInfo(intrinsics=intr, fps_numerator=num, fps_denominator=den)


def _read_exact(fh, count: int, offset: int, what: str) -> bytes:
    raw = fh.read(count)
    if len(raw) != count:
        raise FormatError(
            f"truncated {what}: wanted {count} bytes, got {len(raw)}",
            offset=offset + len(raw),
        )
    return raw


def replay_source(
    path: str | os.PathLike,
    loop: bool = False,
    *,
    max_frames: Optional[int] = None,
) -> Iterator[FramePair]:
    """Replay a VRS1 recording, preserving recorded ids and timestamps.

    With ``loop`` set, the file restarts once exhausted and frame ids /
    timestamps continue monotonically: ids advance by the recorded id span
    per cycle, timestamps by the recorded time span plus one frame period.
    """
    with open(path, "rb") as fh:
        info = read_recording_header(fh)
        intr = info.intrinsics
        depth_bytes = 2 * intr.width * intr.height
        color_bytes = 3 * intr.width * intr.height

        cycle = 0
        id_offset = 0
        ts_offset = 0
        yielded = 0
        while True:
            offset = VRS1_HEADER_SIZE
            fh.seek(offset)
            first_ts = None
            last_ts = None
            min_id = None
            max_id = None
            frames_in_file = 0
            while True:
                if max_frames is not None and yielded >= max_frames:
                    return
                head = fh.read(VRS1_FRAME_HEADER_SIZE)
                if not head:
                    break
                if len(head) < VRS1_FRAME_HEADER_SIZE:
                    raise FormatError(
                        f"truncated frame header: wanted {VRS1_FRAME_HEADER_SIZE} bytes, "
                        f"got {len(head)}",
                        offset=offset + len(head),
                    )
                frame_id, ts = _FRAME_HEADER.unpack(head)
                offset += VRS1_FRAME_HEADER_SIZE
                depth_raw = _read_exact(fh, depth_bytes, offset, "depth payload")
                offset += depth_bytes
                color_raw = _read_exact(fh, color_bytes, offset, "color payload")
                offset += color_bytes

                depth = np.frombuffer(depth_raw, dtype="<u2").reshape(
                    intr.height, intr.width
                )
                color = np.frombuffer(color_raw, dtype=np.uint8).reshape(
                    intr.height, intr.width, 3
                )
                if first_ts is None:
                    first_ts = ts
                    min_id = frame_id
                last_ts = ts
                max_id = frame_id
                frames_in_file += 1
                out_id = frame_id + id_offset
                out_ts = ts + ts_offset
                yield (
                    DepthFrame(
                        frame_id=out_id, capture_ts_us=out_ts,
                        intrinsics=intr, depth=depth,
                    ),
                    ColorFrame(
                        frame_id=out_id, capture_ts_us=out_ts,
                        width=intr.width, height=intr.height, pixels=color,
                    ),
                )
                yielded += 1
            if not loop or frames_in_file == 0:
                return
            cycle += 1
            id_offset += max_id - min_id + 1
            ts_offset += last_ts - first_ts + info.frame_period_us
