import math
import random

import numpy as np
import pytest

from volustream.frames import CameraIntrinsics, CircularPath, DepthFrame, SyntheticSceneConfig


@pytest.fixture
def small_scene() -> SyntheticSceneConfig:
    return SyntheticSceneConfig(
        width=64, height=48, fps=15.0, plane_depth_mm=2000.0,
        sphere_radius_mm=150.0,
        sphere_path=CircularPath(center_mm=(0.0, 0.0, 1500.0)),
        noise_amplitude_mm=0, seed=1,
    )


@pytest.fixture
def moving_scene() -> SyntheticSceneConfig:
    return SyntheticSceneConfig(
        width=64, height=48, fps=15.0, plane_depth_mm=2000.0,
        sphere_radius_mm=180.0,
        sphere_path=CircularPath(
            center_mm=(0.0, 0.0, 1400.0), orbit_radius_mm=250.0,
            angular_speed_rad_s=2.0,
        ),
        noise_amplitude_mm=0, seed=3,
    )


def make_depth_frame(
    depth: np.ndarray, frame_id: int = 0, ts_us: int = 0,
    fx: float = 200.0,
) -> DepthFrame:
    h, w = depth.shape
    intr = CameraIntrinsics(fx=fx, fy=fx, cx=w // 2, cy=h // 2, width=w, height=h)
    return DepthFrame(
        frame_id=frame_id, capture_ts_us=ts_us, intrinsics=intr,
        depth=np.asarray(depth, dtype=np.uint16),
    )


def random_depth(rng: random.Random, width: int, height: int,
                 invalid_fraction: float = 0.1) -> np.ndarray:
    """Random depth raster with a sprinkling of invalid (0) pixels."""
    out = np.empty((height, width), dtype=np.uint16)
    for y in range(height):
        for x in range(width):
            if rng.random() < invalid_fraction:
                out[y, x] = 0
            else:
                out[y, x] = rng.randint(200, 4000)
    return out


def oracle_changed_tiles(
    reference: np.ndarray, frame: np.ndarray, threshold_mm: int, tile_size: int
) -> list[int]:
    """Brute-force per-pixel comparison; the codec's independent oracle.

    Scans every pixel with plain loops and reports the sorted tile indices
    containing at least one changed pixel (value change beyond threshold,
    or validity flip).
    """
    height, width = reference.shape
    tiles_x = math.ceil(width / tile_size)
    changed: set[int] = set()
    for y in range(height):
        for x in range(width):
            old = int(reference[y, x])
            new = int(frame[y, x])
            old_valid = old > 0
            new_valid = new > 0
            if old_valid != new_valid:
                hit = True
            elif old_valid and new_valid:
                hit = abs(new - old) > threshold_mm
            else:
                hit = False
            if hit:
                changed.add((y // tile_size) * tiles_x + (x // tile_size))
    return sorted(changed)
