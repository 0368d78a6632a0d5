"""Camera model, plane parameterization, and plane fitting.

Conventions used throughout the package:
  - image origin top-left, pixel centers at integer (u, v), +y down, +z forward
  - depth means camera-space z, not ray length
  - a plane is encoded by P = d * n, the point on the plane closest to the
    camera center; n = P/|P| is the unit normal, d = |P| > 0 the offset,
    and on-plane points X satisfy n . X = d
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, DegeneratePlane

EPS_OFFSET = 1e-4   # minimum plane offset (meters)
EPS_RAY = 1e-6      # minimum n.r for a ray to intersect a plane in front


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def ray_grid(self) -> np.ndarray:
        """(H, W, 3) array of un-normalized viewing rays ((u-cx)/fx, (v-cy)/fy, 1)."""
        u = (np.arange(self.width) - self.cx) / self.fx
        v = (np.arange(self.height) - self.cy) / self.fy
        rays = np.empty((self.height, self.width, 3))
        rays[..., 0] = u[None, :]
        rays[..., 1] = v[:, None]
        rays[..., 2] = 1.0
        return rays


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform: X_cam = R @ X_world + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if not np.isclose(np.linalg.det(R), 1.0, atol=1e-9):
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def transform(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) to camera frame."""
        return np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Plane:
    """Closest-point plane encoding, param = d * n."""

    param: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.param, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise DegeneratePlane("plane parameters must be finite")
        if np.linalg.norm(p) <= EPS_OFFSET:
            raise DegeneratePlane(f"plane offset {np.linalg.norm(p):.2e} below {EPS_OFFSET}")
        object.__setattr__(self, "param", p)

    @property
    def offset(self) -> float:
        return float(np.linalg.norm(self.param))

    @property
    def normal(self) -> np.ndarray:
        return self.param / self.offset

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Unsigned point-to-plane distance, points shaped (..., 3)."""
        return np.abs(np.asarray(points) @ self.normal - self.offset)

    def to_camera(self, pose: Pose) -> "Plane":
        """Re-express a world-frame plane in the camera frame of `pose`."""
        n_c = pose.rotation @ self.normal
        d_c = self.offset + float(n_c @ pose.translation)
        if d_c < 0:
            n_c, d_c = -n_c, -d_c
        return plane_from_normal_offset(n_c, d_c)


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        if vals.shape != valid.shape or vals.ndim != 2:
            raise ValueError("values/valid must be matching 2-D arrays")
        ok = vals[valid]
        if ok.size and not (np.all(np.isfinite(ok)) and np.all(ok > 0)):
            raise ValueError("valid pixels must have finite positive depth")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Point3Set:
    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != pts.shape[0]:
                raise ValueError("one weight per point required")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Frame:
    """A posed camera: intrinsics plus world-to-camera transform."""

    intrinsics: CameraIntrinsics
    pose: Pose


def plane_from_normal_offset(n, d: float) -> Plane:
    """Build a plane from a unit normal and positive offset."""
    n = np.asarray(n, dtype=float).reshape(3)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("normal must be unit length")
    if d <= EPS_OFFSET:
        raise DegeneratePlane(f"offset {d} below {EPS_OFFSET}")
    return Plane(d * n)


def backproject(pixel, depth: float, intr: CameraIntrinsics) -> np.ndarray:
    """Lift a pixel at a given z-depth to a camera-frame 3D point."""
    u, v = pixel
    if depth <= 0:
        raise ValueError("depth must be positive")
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError("pixel outside image")
    return depth * np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])


def plane_depth(plane: Plane, pixel, intr: CameraIntrinsics) -> float | None:
    """z-depth where the pixel's viewing ray meets the plane, or None."""
    u, v = pixel
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError("pixel outside image")
    r = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    denom = float(plane.normal @ r)
    if denom <= EPS_RAY:
        return None
    return plane.offset / denom


def render_plane_depthmap(plane: Plane, intr: CameraIntrinsics) -> DepthMap:
    """Plane-induced depth at every pixel; pixels the plane misses are invalid."""
    rays = intr.ray_grid()
    denom = rays @ plane.normal
    valid = denom > EPS_RAY
    values = np.zeros_like(denom)
    np.divide(plane.offset, denom, out=values, where=valid)
    values[~valid] = 0.0
    return DepthMap(values, valid)


def fit_plane_lsq(points: Point3Set) -> Plane:
    """Total-least-squares plane: centroid plus smallest principal direction."""
    plane, _ = fit_plane_lsq_rms(points)
    return plane


def fit_plane_lsq_rms(points: Point3Set) -> tuple[Plane, float]:
    """Fit as fit_plane_lsq, also returning the RMS point-to-plane residual."""
    pts = points.points
    if len(points) < 3:
        raise DegenerateGeometry("need at least 3 points")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    # SVD of the centered cloud: normal = direction of least variance
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(float(s[0]), 1e-12)
    if s[1] / scale < 1e-9:
        raise DegenerateGeometry("points are collinear or coincident")
    n = vt[2]
    d = float(n @ centroid)
    if d < 0:
        n, d = -n, -d
    if d <= EPS_OFFSET:
        raise DegeneratePlane("fitted plane passes through the camera center")
    plane = plane_from_normal_offset(n, d)
    rms = float(np.sqrt(np.mean(plane.distance(pts) ** 2)))
    return plane, rms
