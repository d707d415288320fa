"""Pinhole projection and two-view linear triangulation.

The numerical substrate of candidate-cloud construction and of the
projection loss: calibrated cameras are plain 3x4 matrices mapping
homogeneous world meters to homogeneous pixels, and two-view
triangulation is the homogeneous linear (DLT) least-squares solve.

Conventions: world frame is right-handed, y-up, in meters; all numeric
work is 64-bit.  Every type is immutable after construction and every
operation is pure, so unrestricted concurrent use is safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DegenerateDepth(ValueError):
    """Point projects with (near-)zero homogeneous depth."""


class DegenerateGeometry(ValueError):
    """Triangulation system is rank deficient (parallel rays / same camera)."""


@dataclass(frozen=True)
class CameraView:
    """One calibrated view: a 3x4 projection matrix plus image metadata."""

    id: int
    projection: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        P = np.asarray(self.projection, dtype=np.float64)
        if P.shape != (3, 4):
            raise ValueError(f"projection must be 3x4, got {P.shape}")
        if np.linalg.matrix_rank(P) != 3:
            raise ValueError("projection matrix must have rank 3")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError(f"image size must be positive, got {self.image_size}")
        P = P.copy()
        P.setflags(write=False)
        object.__setattr__(self, "projection", P)
        object.__setattr__(self, "image_size", (int(w), int(h)))


@dataclass(frozen=True)
class Point2D:
    """Pixel observation with detector confidence in [0, 1]."""

    u: float
    v: float
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=np.float64)


@dataclass(frozen=True)
class Point3D:
    """World-frame point in meters (y-up)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.x, self.y, self.z])):
            raise ValueError("coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def project(p: Point3D, cam: CameraView) -> Point2D:
    """Project a 3D point through a camera, with perspective divide.

    Raises DegenerateDepth when the homogeneous depth is below 1e-12 in
    magnitude.  The returned confidence is 1.
    """
    uvw = cam.projection @ np.array([p.x, p.y, p.z, 1.0])
    if abs(uvw[2]) < 1e-12:
        raise DegenerateDepth(
            f"point {p} has near-zero depth in view {cam.id}"
        )
    return Point2D(uvw[0] / uvw[2], uvw[1] / uvw[2], 1.0)


def project_points(points: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Vectorized projection of (..., 3) world points through one 3x4 matrix.

    Raises DegenerateDepth if any point lands at near-zero homogeneous depth.
    """
    pts = np.asarray(points, dtype=np.float64)
    uvw = pts @ P[:, :3].T + P[:, 3]
    w = uvw[..., 2]
    if np.any(np.abs(w) < 1e-12):
        raise DegenerateDepth("some points have near-zero depth")
    return uvw[..., :2] / w[..., None]


def triangulate_pair(
    d1: Point2D, cam1: CameraView, d2: Point2D, cam2: CameraView
) -> Point3D:
    """Recover a 3D point from two pixel observations by linear DLT.

    Builds the standard 4x4 homogeneous system from both projection
    equations and returns the dehomogenized smallest right singular
    vector.  Raises DegenerateGeometry when the two smallest singular
    values coincide to 1e-9 relative (parallel rays, identical cameras)
    or when the solution lies at infinity.
    """
    if cam1.id == cam2.id:
        raise DegenerateGeometry(f"both observations from view {cam1.id}")
    P1, P2 = cam1.projection, cam2.projection
    A = np.stack([
        d1.u * P1[2] - P1[0],
        d1.v * P1[2] - P1[1],
        d2.u * P2[2] - P2[0],
        d2.v * P2[2] - P2[1],
    ])
    _, s, Vt = np.linalg.svd(A)
    if s[2] - s[3] <= 1e-9 * s[0]:
        raise DegenerateGeometry(
            "two smallest singular values coincide (near-parallel rays)"
        )
    X = Vt[-1]
    if abs(X[3]) < 1e-12 * np.linalg.norm(X):
        raise DegenerateGeometry("triangulated point at infinity")
    X = X[:3] / X[3]
    return Point3D(X[0], X[1], X[2])


def reprojection_error(
    p: Point3D, obs: list[tuple[Point2D, CameraView]]
) -> float:
    """Mean pixel distance between projections of ``p`` and observations."""
    if not obs:
        raise ValueError("obs must be nonempty")
    dists = []
    for d, cam in obs:
        q = project(p, cam)
        dists.append(np.hypot(q.u - d.u, q.v - d.v))
    return float(np.mean(dists))


def load_calibration(path: str | Path) -> list[CameraView]:
    """Read a camera calibration file.

    Format: JSON array of objects
    ``{"id": int, "P": [[... 3x4 row-major ...]], "width": int, "height": int}``.
    """
    with open(path) as fh:
        raw = json.load(fh)
    cams = []
    for entry in raw:
        cams.append(CameraView(
            id=int(entry["id"]),
            projection=np.asarray(entry["P"], dtype=np.float64),
            image_size=(int(entry["width"]), int(entry["height"])),
        ))
    return cams


def save_calibration(cams: list[CameraView], path: str | Path) -> None:
    payload = [
        {
            "id": cam.id,
            "P": [[float(x) for x in row] for row in cam.projection],
            "width": cam.image_size[0],
            "height": cam.image_size[1],
        }
        for cam in cams
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
