"""Camera-space reconstruction: deprojection, point clouds, meshes, raycasts.

Camera space is z-forward, x-right, y-down, matching the depth image's
row/column order. Depth input is u16 millimeters; all geometry is in float
meters. Annotations store camera-space points, so this convention is load
bearing for the whole pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from .errors import ConfigurationError, InvalidPixelError
from .frames import CameraIntrinsics, ColorFrame, DepthFrame

DEFAULT_DISCONTINUITY_MM = 50.0
DEFAULT_RAY_STEP_MM = 5.0
DEFAULT_HIT_TOLERANCE_MM = 15.0
DEFAULT_MAX_RANGE_M = 10.0

_UNIT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class Ray:
    """Camera-space ray; ``direction`` must be unit length."""

    origin: Point3
    direction: tuple[float, float, float]

    def __post_init__(self):
        norm = math.sqrt(sum(c * c for c in self.direction))
        if abs(norm - 1.0) > _UNIT_TOLERANCE:
            raise ConfigurationError(f"ray direction norm {norm} is not 1")

    @classmethod
    def through_pixel(
        cls, intrinsics: CameraIntrinsics, u: float, v: float,
        origin: Point3 = Point3(0.0, 0.0, 0.0),
    ) -> "Ray":
        dx = (u - intrinsics.cx) / intrinsics.fx
        dy = (v - intrinsics.cy) / intrinsics.fy
        norm = math.sqrt(dx * dx + dy * dy + 1.0)
        return cls(origin=origin, direction=(dx / norm, dy / norm, 1.0 / norm))


@dataclass
class TriangleMesh:
    """Indexed triangle mesh with per-vertex color.

    ``vertices`` is (N, 3) float64 meters, ``colors`` (N, 3) uint8,
    ``triangles`` (M, 3) int32 vertex indices.
    """

    vertices: np.ndarray
    colors: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if len(self.colors) != len(self.vertices):
            raise ConfigurationError("colors must parallel vertices")
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ConfigurationError("triangle index out of range")
            degenerate = (
                (self.triangles[:, 0] == self.triangles[:, 1])
                | (self.triangles[:, 1] == self.triangles[:, 2])
                | (self.triangles[:, 0] == self.triangles[:, 2])
            )
            if degenerate.any():
                raise ConfigurationError("degenerate triangle (repeated vertex index)")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)


@dataclass(frozen=True)
class RaycastHit:
    point: Point3
    pixel: tuple[int, int]


def deproject(
    pixel: tuple[float, float], depth_mm: float, intrinsics: CameraIntrinsics
) -> Point3:
    """Lift a pixel with known depth to a camera-space point in meters."""
    if depth_mm <= 0:
        raise InvalidPixelError(f"pixel {pixel} has no valid depth return")
    u, v = pixel
    z = depth_mm / 1000.0
    return Point3(
        x=(u - intrinsics.cx) * z / intrinsics.fx,
        y=(v - intrinsics.cy) * z / intrinsics.fy,
        z=z,
    )


def project(point: Point3, intrinsics: CameraIntrinsics) -> tuple[float, float]:
    """Pinhole inverse of :func:`deproject`; returns fractional pixel coords."""
    if point.z <= 0:
        raise InvalidPixelError("cannot project a point at or behind the camera")
    return (
        point.x * intrinsics.fx / point.z + intrinsics.cx,
        point.y * intrinsics.fy / point.z + intrinsics.cy,
    )


def to_point_cloud(
    depth: DepthFrame, color: Optional[ColorFrame] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Deproject every valid pixel, row-major.

    Returns (points, colors): (N, 3) float64 meters and (N, 3) uint8. With
    no color frame, points get a uniform gray.
    """
    intr = depth.intrinsics
    if color is not None and (color.width, color.height) != (intr.width, intr.height):
        raise ConfigurationError(
            f"color {color.width}x{color.height} does not match depth "
            f"{intr.width}x{intr.height}"
        )
    mask = depth.depth > 0
    vs, us = np.nonzero(mask)
    z = depth.depth[vs, us].astype(np.float64) / 1000.0
    points = np.empty((len(z), 3), dtype=np.float64)
    points[:, 0] = (us - intr.cx) * z / intr.fx
    points[:, 1] = (vs - intr.cy) * z / intr.fy
    points[:, 2] = z
    if color is not None:
        colors = color.pixels[vs, us]
    else:
        colors = np.full((len(z), 3), 128, dtype=np.uint8)
    return points, colors


def to_mesh(
    depth: DepthFrame,
    color: Optional[ColorFrame] = None,
    discontinuity_mm: float = DEFAULT_DISCONTINUITY_MM,
) -> TriangleMesh:
    """Triangulate the depth grid, culling quads that cross depth jumps.

    Each 2x2 quad whose four depths are valid and whose max pairwise
    difference is within ``discontinuity_mm`` yields the two triangles
    (top-left, bottom-left, top-right) and (top-right, bottom-left,
    bottom-right). Vertices are deduplicated per pixel.
    """
    intr = depth.intrinsics
    if color is not None and (color.width, color.height) != (intr.width, intr.height):
        raise ConfigurationError("color/depth dimension mismatch")

    d = depth.depth.astype(np.float64)
    valid = depth.depth > 0
    q_valid = valid[:-1, :-1] & valid[1:, :-1] & valid[:-1, 1:] & valid[1:, 1:]
    corners = np.stack([d[:-1, :-1], d[1:, :-1], d[:-1, 1:], d[1:, 1:]])
    spread = corners.max(axis=0) - corners.min(axis=0)
    quads = q_valid & (spread <= discontinuity_mm)

    # Vertex per pixel touched by at least one surviving quad.
    used = np.zeros_like(valid)
    used[:-1, :-1] |= quads
    used[1:, :-1] |= quads
    used[:-1, 1:] |= quads
    used[1:, 1:] |= quads

    index_map = np.full(valid.shape, -1, dtype=np.int64)
    vs, us = np.nonzero(used)
    index_map[vs, us] = np.arange(len(vs))

    z = d[vs, us] / 1000.0
    vertices = np.empty((len(vs), 3), dtype=np.float64)
    vertices[:, 0] = (us - intr.cx) * z / intr.fx
    vertices[:, 1] = (vs - intr.cy) * z / intr.fy
    vertices[:, 2] = z
    if color is not None:
        colors = color.pixels[vs, us]
    else:
        colors = np.full((len(vs), 3), 128, dtype=np.uint8)

    qr, qc = np.nonzero(quads)
    tl = index_map[qr, qc]
    bl = index_map[qr + 1, qc]
    tr = index_map[qr, qc + 1]
    br = index_map[qr + 1, qc + 1]
    triangles = np.empty((2 * len(qr), 3), dtype=np.int32)
    triangles[0::2] = np.stack([tl, bl, tr], axis=1)
    triangles[1::2] = np.stack([tr, bl, br], axis=1)
    return TriangleMesh(vertices=vertices, colors=colors, triangles=triangles)


def raycast(
    depth: DepthFrame,
    ray: Ray,
    step_mm: float = DEFAULT_RAY_STEP_MM,
    hit_tolerance_mm: float = DEFAULT_HIT_TOLERANCE_MM,
    max_range_m: float = DEFAULT_MAX_RANGE_M,
) -> Optional[RaycastHit]:
    """March a camera-space ray against the depth surface.

    Samples every ``step_mm`` along the ray; the first sample that lands on
    a valid pixel and reaches within ``hit_tolerance_mm`` of that pixel's
    surface wins. The returned point is the surface point at the hit pixel
    (the deprojection of its stored depth), not the raw ray sample, so hits
    always lie exactly on the captured surface.
    """
    intr = depth.intrinsics
    steps = int(max_range_m * 1000.0 / step_mm)
    if steps <= 0:
        return None
    t = np.arange(1, steps + 1, dtype=np.float64) * (step_mm / 1000.0)
    ox, oy, oz = ray.origin.as_tuple()
    dx, dy, dz = ray.direction
    px = ox + t * dx
    py = oy + t * dy
    pz = oz + t * dz

    in_front = pz > 1e-9
    safe_z = np.where(in_front, pz, 1.0)
    u = np.floor(px * intr.fx / safe_z + intr.cx + 0.5).astype(np.int64)
    v = np.floor(py * intr.fy / safe_z + intr.cy + 0.5).astype(np.int64)
    in_bounds = in_front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)

    du = np.zeros(len(t), dtype=np.uint16)
    du[in_bounds] = depth.depth[v[in_bounds], u[in_bounds]]
    hit = in_bounds & (du > 0) & (pz * 1000.0 >= du.astype(np.float64) - hit_tolerance_mm)
    if not hit.any():
        return None
    i = int(np.argmax(hit))
    pu, pv = int(u[i]), int(v[i])
    return RaycastHit(
        point=deproject((pu, pv), float(depth.depth[pv, pu]), intr),
        pixel=(pu, pv),
    )


def mesh_to_obj(mesh: TriangleMesh, fh: TextIO) -> None:
    """Write the mesh as OBJ text with color-extended vertex lines."""
    for (x, y, z), (r, g, b) in zip(mesh.vertices, mesh.colors):
        fh.write(f"v {x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
    for i, j, k in mesh.triangles:
        fh.write(f"f {i + 1} {j + 1} {k + 1}\n")
