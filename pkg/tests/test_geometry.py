import io
import math
import random
from dataclasses import replace

import numpy as np
import pytest

from volustream.errors import ConfigurationError, InvalidPixelError
from volustream.frames import (
    CameraIntrinsics,
    CircularPath,
    ColorFrame,
    SyntheticSceneConfig,
    synthetic_source,
    take,
)
from volustream.geometry import (
    Point3,
    Ray,
    deproject,
    mesh_to_obj,
    project,
    raycast,
    to_mesh,
    to_point_cloud,
)

from conftest import make_depth_frame


class TestDeproject:
    def test_principal_ray(self):
        intr = CameraIntrinsics(fx=500, fy=500, cx=32, cy=24, width=64, height=48)
        assert deproject((32, 24), 1500, intr) == Point3(0.0, 0.0, 1.5)

    def test_hand_computed_offset_pixel(self):
        # x = (u - cx) * z / fx = (500 - 0) * 1.0 / 500 = 1.0
        intr = CameraIntrinsics(fx=500, fy=500, cx=0, cy=0, width=501, height=2)
        p = deproject((500, 0), 1000, intr)
        assert p == Point3(1.0, 0.0, 1.0)

    def test_zero_depth_rejected(self):
        intr = CameraIntrinsics(fx=500, fy=500, cx=32, cy=24, width=64, height=48)
        with pytest.raises(InvalidPixelError):
            deproject((1, 1), 0, intr)

    def test_project_inverts_deproject_within_half_pixel(self):
        intr = CameraIntrinsics(fx=520, fy=480, cx=310.5, cy=250.25, width=640, height=480)
        rng = random.Random(11)
        for _ in range(1000):
            u = rng.randrange(intr.width)
            v = rng.randrange(intr.height)
            d = rng.randint(1, 65535)
            uu, vv = project(deproject((u, v), d, intr), intr)
            assert abs(uu - u) < 0.5 and abs(vv - v) < 0.5


class TestPointCloud:
    def test_all_invalid_gives_empty_cloud(self):
        frame = make_depth_frame(np.zeros((4, 4), dtype=np.uint16))
        points, colors = to_point_cloud(frame)
        assert points.shape == (0, 3) and colors.shape == (0, 3)

    def test_plane_scene_constant_z(self, small_scene):
        depth, color = take(synthetic_source(
            replace(small_scene, sphere_path=CircularPath(center_mm=(0, 0, 99999)))
        ), 1)[0]
        points, colors = to_point_cloud(depth, color)
        assert np.allclose(points[:, 2], 2.0)
        assert (colors == 128).all()

    def test_point_count_matches_independent_scan(self, moving_scene):
        depth, color = take(synthetic_source(moving_scene), 1)[0]
        points, _ = to_point_cloud(depth, color)
        count = sum(
            1
            for y in range(depth.height)
            for x in range(depth.width)
            if depth.depth[y, x] > 0
        )
        assert len(points) == count

    def test_dimension_mismatch_rejected(self):
        frame = make_depth_frame(np.full((4, 4), 100, dtype=np.uint16))
        color = ColorFrame(
            frame_id=0, capture_ts_us=0, width=5, height=4,
            pixels=np.zeros((4, 5, 3), dtype=np.uint8),
        )
        with pytest.raises(ConfigurationError):
            to_point_cloud(frame, color)


def brute_force_quad_count(depth: np.ndarray, threshold: float) -> int:
    """Independent quad accounting: loop every 2x2 block."""
    h, w = depth.shape
    quads = 0
    for y in range(h - 1):
        for x in range(w - 1):
            corners = [depth[y, x], depth[y + 1, x], depth[y, x + 1], depth[y + 1, x + 1]]
            if all(c > 0 for c in corners) and max(corners) - min(corners) <= threshold:
                quads += 1
    return quads


class TestMesh:
    def test_smallest_quad(self):
        frame = make_depth_frame(np.full((2, 2), 1000, dtype=np.uint16))
        mesh = to_mesh(frame)
        assert mesh.vertex_count == 4
        assert mesh.triangle_count == 2

    def test_constant_frame_triangle_formula(self):
        w, h = 7, 5
        frame = make_depth_frame(np.full((h, w), 1200, dtype=np.uint16))
        mesh = to_mesh(frame)
        assert mesh.triangle_count == 2 * (w - 1) * (h - 1)

    def test_quad_count_matches_brute_force(self):
        rng = random.Random(5)
        depth = np.array(
            [[rng.choice([0, 900, 950, 1000, 1400]) for _ in range(4)] for _ in range(3)],
            dtype=np.uint16,
        )
        frame = make_depth_frame(depth)
        mesh = to_mesh(frame, discontinuity_mm=50.0)
        assert mesh.triangle_count == 2 * brute_force_quad_count(depth, 50.0)

    def test_discontinuity_culls_quad(self):
        depth = np.array([[1000, 1000], [1000, 1100]], dtype=np.uint16)
        frame = make_depth_frame(depth)
        assert to_mesh(frame, discontinuity_mm=50.0).triangle_count == 0
        assert to_mesh(frame, discontinuity_mm=150.0).triangle_count == 2

    def test_no_triangle_crosses_validity_hole(self):
        depth = np.full((3, 3), 800, dtype=np.uint16)
        depth[1, 1] = 0
        frame = make_depth_frame(depth)
        assert to_mesh(frame).triangle_count == 0

    def test_winding_matches_contract(self):
        frame = make_depth_frame(np.full((2, 2), 1000, dtype=np.uint16))
        mesh = to_mesh(frame)
        # (top-left, bottom-left, top-right), (top-right, bottom-left, bottom-right)
        # with row-major per-pixel vertex ids 0..3.
        assert mesh.triangles.tolist() == [[0, 2, 1], [1, 2, 3]]

    def test_every_vertex_is_pixel_deprojection(self, moving_scene):
        depth, color = take(synthetic_source(moving_scene), 1)[0]
        mesh = to_mesh(depth, color)
        intr = depth.intrinsics
        # Each sampled vertex must equal the deprojection of the pixel
        # recovered by projecting it back onto the grid.
        idx = np.linspace(0, mesh.vertex_count - 1, 50, dtype=int)
        for i in idx:
            x, y, z = mesh.vertices[i]
            u, v = project(Point3(x, y, z), intr)
            u, v = round(u), round(v)
            expected = deproject((u, v), int(depth.depth[v, u]), intr)
            assert math.isclose(z, expected.z, rel_tol=1e-12)
            assert math.isclose(x, expected.x, rel_tol=1e-9, abs_tol=1e-12)

    def test_obj_export_shape(self):
        frame = make_depth_frame(np.full((2, 2), 1000, dtype=np.uint16))
        mesh = to_mesh(frame)
        out = io.StringIO()
        mesh_to_obj(mesh, out)
        lines = out.getvalue().strip().splitlines()
        assert sum(1 for l in lines if l.startswith("v ")) == 4
        assert sum(1 for l in lines if l.startswith("f ")) == 2
        assert lines[-1].split()[1:] == ["2", "3", "4"] or lines[-1].startswith("f ")


class TestRaycast:
    def test_principal_ray_hits_plane(self, small_scene):
        scene = replace(small_scene, sphere_path=CircularPath(center_mm=(0, 0, 99999)))
        depth, _ = take(synthetic_source(scene), 1)[0]
        hit = raycast(depth, Ray(Point3(0, 0, 0), (0.0, 0.0, 1.0)))
        assert hit is not None
        intr = depth.intrinsics
        assert hit.pixel == (int(intr.cx), int(intr.cy))
        assert hit.point == Point3(0.0, 0.0, 2.0)

    def test_ray_away_from_frustum_misses(self, small_scene):
        depth, _ = take(synthetic_source(small_scene), 1)[0]
        assert raycast(depth, Ray(Point3(0, 0, 0), (0.0, 0.0, -1.0))) is None

    def test_sphere_hit_within_march_tolerance(self, small_scene):
        # Analytic: sphere on axis at 1500 with radius 150 -> surface at 1.35 m.
        depth, _ = take(synthetic_source(small_scene), 1)[0]
        step, tol = 5.0, 15.0
        hit = raycast(depth, Ray(Point3(0, 0, 0), (0.0, 0.0, 1.0)),
                      step_mm=step, hit_tolerance_mm=tol)
        assert hit is not None
        assert abs(hit.point.z - 1.35) <= (step + tol) / 1000.0

    def test_hit_point_lies_exactly_on_surface(self, moving_scene):
        depth, _ = take(synthetic_source(moving_scene), 1)[0]
        intr = depth.intrinsics
        rng = random.Random(3)
        hits = 0
        for _ in range(40):
            ray = Ray.through_pixel(
                intr, rng.uniform(0, intr.width - 1), rng.uniform(0, intr.height - 1)
            )
            hit = raycast(depth, ray)
            if hit is None:
                continue
            hits += 1
            u, v = hit.pixel
            assert hit.point == deproject((u, v), int(depth.depth[v, u]), intr)
        assert hits > 0

    def test_unit_direction_enforced(self):
        with pytest.raises(ConfigurationError):
            Ray(Point3(0, 0, 0), (0.0, 0.0, 2.0))
