import json

import numpy as np
import pytest

from jcmocap.geometry import (
    CameraView, DegenerateDepth, DegenerateGeometry, Point2D, Point3D,
    load_calibration, project, project_points, reprojection_error,
    save_calibration, triangulate_pair,
)
from conftest import make_camera


def canonical_camera(cam_id=1):
    return CameraView(
        id=cam_id,
        projection=np.hstack([np.eye(3), np.zeros((3, 1))]),
        image_size=(640, 480),
    )


class TestProject:
    def test_optical_axis_maps_to_principal_point(self):
        q = project(Point3D(0, 0, 1), canonical_camera())
        assert (q.u, q.v) == (0.0, 0.0)
        assert q.confidence == 1.0

    def test_perspective_divide(self):
        q = project(Point3D(1, 2, 2), canonical_camera())
        assert (q.u, q.v) == (0.5, 1.0)

    def test_matches_homogeneous_oracle(self, rng):
        for _ in range(50):
            P = rng.normal(size=(3, 4))
            while np.linalg.matrix_rank(P) < 3:
                P = rng.normal(size=(3, 4))
            cam = CameraView(id=1, projection=P, image_size=(100, 100))
            p = rng.normal(size=3)
            uvw = P @ np.append(p, 1.0)
            if abs(uvw[2]) < 1e-6:
                continue
            q = project(Point3D(*p), cam)
            assert abs(q.u - uvw[0] / uvw[2]) < 1e-12
            assert abs(q.v - uvw[1] / uvw[2]) < 1e-12

    def test_zero_depth_raises(self):
        with pytest.raises(DegenerateDepth):
            project(Point3D(1.0, 1.0, 0.0), canonical_camera())

    def test_scale_invariance(self, rng):
        cam = make_camera(1, (3.0, 1.5, 0.5))
        p = Point3D(0.2, 1.1, -0.3)
        q1 = project(p, cam)
        for lam in (0.5, -2.0, 1e3):
            scaled = CameraView(id=1, projection=lam * cam.projection,
                                image_size=cam.image_size)
            q2 = project(p, scaled)
            assert abs(q1.u - q2.u) < 1e-9
            assert abs(q1.v - q2.v) < 1e-9


class TestTriangulatePair:
    def test_round_trip_60_degrees(self):
        cam1 = make_camera(1, (3.5, 1.6, 0.0))
        cam2 = make_camera(2, (3.5 * np.cos(np.pi / 3), 1.6,
                               3.5 * np.sin(np.pi / 3)))
        p = Point3D(0.3, 1.1, 2.0)
        q = triangulate_pair(project(p, cam1), cam1, project(p, cam2), cam2)
        assert np.linalg.norm(q.as_array() - p.as_array()) < 1e-6

    def test_identical_cameras_degenerate(self):
        cam = make_camera(1, (3.0, 1.0, 0.0))
        cam_b = CameraView(id=2, projection=cam.projection,
                           image_size=cam.image_size)
        d = project(Point3D(0, 1, 0), cam)
        with pytest.raises(DegenerateGeometry):
            triangulate_pair(d, cam, d, cam_b)

    def test_same_view_id_rejected(self):
        cam = make_camera(1, (3.0, 1.0, 0.0))
        d = project(Point3D(0, 1, 0), cam)
        with pytest.raises(DegenerateGeometry):
            triangulate_pair(d, cam, d, cam)

    def test_symmetric_rig_bisecting_plane(self):
        # stereo rig symmetric about the x=0 plane; a point on that plane
        # must triangulate onto it
        cam1 = make_camera(1, (-1.0, 1.0, 3.0), target=(0, 1, 0))
        cam2 = make_camera(2, (1.0, 1.0, 3.0), target=(0, 1, 0))
        p = Point3D(0.0, 1.3, 0.7)
        q = triangulate_pair(project(p, cam1), cam1, project(p, cam2), cam2)
        assert abs(q.x) < 1e-9

    def test_argument_symmetry(self, rng):
        cam1 = make_camera(1, (3.0, 1.2, 0.3))
        cam2 = make_camera(2, (-1.0, 2.0, 3.0))
        for _ in range(20):
            p = Point3D(*(rng.normal(scale=0.5, size=3) + [0, 1, 0]))
            d1, d2 = project(p, cam1), project(p, cam2)
            a = triangulate_pair(d1, cam1, d2, cam2).as_array()
            b = triangulate_pair(d2, cam2, d1, cam1).as_array()
            assert np.linalg.norm(a - b) < 1e-9


class TestReprojectionError:
    def test_zero_for_exact_observations(self):
        cams = [make_camera(i, (3 * np.cos(a), 1.5, 3 * np.sin(a)))
                for i, a in enumerate(np.linspace(0, 2, 3))]
        p = Point3D(0.1, 1.0, 0.2)
        obs = [(project(p, c), c) for c in cams]
        assert reprojection_error(p, obs) < 1e-9

    def test_three_four_five(self):
        cam = canonical_camera()
        p = Point3D(0, 0, 1)
        q = project(p, cam)
        shifted = Point2D(q.u + 3.0, q.v + 4.0)
        assert abs(reprojection_error(p, [(shifted, cam)]) - 5.0) < 1e-12

    def test_matches_direct_recomputation(self, rng):
        cams = [make_camera(i, (3 * np.cos(a), 1.5, 3 * np.sin(a)))
                for i, a in enumerate([0.3, 1.7, 3.9])]
        p = Point3D(0.1, 1.0, 0.2)
        obs = []
        expected = []
        for cam in cams:
            q = project(p, cam)
            du, dv = rng.normal(size=2)
            obs.append((Point2D(q.u + du, q.v + dv), cam))
            expected.append(np.hypot(du, dv))
        assert abs(reprojection_error(p, obs) - np.mean(expected)) < 1e-9

    def test_empty_observations_rejected(self):
        with pytest.raises(ValueError):
            reprojection_error(Point3D(0, 0, 1), [])


class TestRoundTripProperty:
    def test_random_points_and_rigs(self, rng):
        for _ in range(100):
            a1, a2 = rng.uniform(0, 2 * np.pi, size=2)
            while abs(np.sin((a1 - a2) / 2)) < 0.2:
                a2 = rng.uniform(0, 2 * np.pi)
            cam1 = make_camera(1, (3.5 * np.cos(a1), rng.uniform(0.5, 2.5),
                                   3.5 * np.sin(a1)))
            cam2 = make_camera(2, (3.5 * np.cos(a2), rng.uniform(0.5, 2.5),
                                   3.5 * np.sin(a2)))
            p = Point3D(*(rng.uniform(-1, 1, size=3) + [0, 1.2, 0]))
            q = triangulate_pair(project(p, cam1), cam1,
                                 project(p, cam2), cam2)
            assert np.linalg.norm(q.as_array() - p.as_array()) < 1e-6


class TestTypes:
    def test_confidence_validated(self):
        with pytest.raises(ValueError):
            Point2D(0, 0, confidence=1.5)

    def test_point3d_finite(self):
        with pytest.raises(ValueError):
            Point3D(np.nan, 0, 0)

    def test_rank_deficient_projection_rejected(self):
        P = np.zeros((3, 4))
        P[0, 0] = 1.0
        with pytest.raises(ValueError):
            CameraView(id=1, projection=P, image_size=(10, 10))

    def test_camera_immutable(self):
        cam = canonical_camera()
        with pytest.raises(ValueError):
            cam.projection[0, 0] = 5.0


class TestCalibrationIO:
    def test_round_trip(self, tmp_path):
        cams = [make_camera(i, (3 * np.cos(a), 1.5, 3 * np.sin(a)))
                for i, a in enumerate([0.1, 2.2, 4.3], start=1)]
        path = tmp_path / "calib.json"
        save_calibration(cams, path)
        loaded = load_calibration(path)
        assert [c.id for c in loaded] == [1, 2, 3]
        for a, b in zip(cams, loaded):
            assert np.allclose(a.projection, b.projection)
            assert a.image_size == b.image_size

    def test_schema(self, tmp_path):
        cams = [make_camera(1, (3, 1.5, 0))]
        path = tmp_path / "calib.json"
        save_calibration(cams, path)
        raw = json.loads(path.read_text())
        assert set(raw[0]) == {"id", "P", "width", "height"}
        assert len(raw[0]["P"]) == 3 and len(raw[0]["P"][0]) == 4


def test_project_points_batch_matches_scalar(rng):
    cam = make_camera(1, (2.5, 1.8, 1.0))
    pts = rng.uniform(-1, 1, size=(40, 3)) + [0, 1.2, 0]
    batch = project_points(pts, cam.projection)
    for k in range(40):
        q = project(Point3D(*pts[k]), cam)
        assert np.allclose(batch[k], [q.u, q.v], atol=1e-12)
