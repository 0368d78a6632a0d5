"""Sequential RANSAC plane extraction and Manhattan frame estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, DegeneratePlane, NoPlaneFound
from .geometry import Plane, Point3Set, fit_plane_lsq_rms, plane_from_normal_offset

VOTE_CONE_DEG = 10.0
SNAP_CONE_DEG = 30.0


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 0.05
    coverage_target: float = 0.90
    iterations_per_plane: int = 500
    min_inliers: int = 30
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 < self.coverage_target <= 1):
            raise ValueError("coverage_target must be in (0, 1]")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")


@dataclass(frozen=True)
class ExtractedPlane:
    plane: Plane
    inlier_indices: np.ndarray
    rms_residual: float


def _hypothesis_from_triplet(pts: np.ndarray) -> Plane | None:
    a, b, c = pts
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    d = float(n @ a)
    if d < 0:
        n, d = -n, -d
    try:
        return plane_from_normal_offset(n, d)
    except DegeneratePlane:
        return None


def extract_planes(points: Point3Set, cfg: RansacConfig) -> list[ExtractedPlane]:
    """Greedy sequential RANSAC until the coverage target is reached.

    Already-covered points may still support later planes ("with replacement"),
    but only newly covered points count toward coverage and termination.
    """
    pts = points.points
    n_pts = len(points)
    if n_pts < 3:
        raise NoPlaneFound("need at least 3 points")
    rng = np.random.default_rng(cfg.rng_seed)
    covered = np.zeros(n_pts, dtype=bool)
    results: list[ExtractedPlane] = []

    while covered.mean() < cfg.coverage_target:
        uncovered = np.flatnonzero(~covered)
        if uncovered.size < 3:
            break
        best_count = -1
        best_plane = None
        for _ in range(cfg.iterations_per_plane):
            idx = rng.choice(uncovered, size=3, replace=False)
            hyp = _hypothesis_from_triplet(pts[idx])
            if hyp is None:
                continue
            count = int(np.count_nonzero(hyp.distance(pts[uncovered]) <= cfg.inlier_threshold))
            if count > best_count:
                best_count = count
                best_plane = hyp
        if best_plane is None or best_count < cfg.min_inliers:
            if not results:
                raise NoPlaneFound("no plane with enough inliers in the first round")
            break
        # refit on the winner's uncovered inliers, then re-collect over all points
        support = uncovered[best_plane.distance(pts[uncovered]) <= cfg.inlier_threshold]
        try:
            refit, _ = fit_plane_lsq_rms(Point3Set(pts[support]))
        except (DegenerateGeometry, DegeneratePlane):
            refit = best_plane
        dists = refit.distance(pts)
        inliers = np.flatnonzero(dists <= cfg.inlier_threshold)
        new = inliers[~covered[inliers]]
        if new.size < cfg.min_inliers:
            if not results:
                raise NoPlaneFound("no plane with enough inliers in the first round")
            break
        rms = float(np.sqrt(np.mean(dists[inliers] ** 2)))
        results.append(ExtractedPlane(refit, inliers, rms))
        covered[new] = True

    results.sort(key=lambda e: -e.inlier_indices.size)
    return results


@dataclass(frozen=True)
class ManhattanFrame:
    axes: np.ndarray  # 3x3, rows are mutually orthogonal unit vectors

    def __post_init__(self):
        A = np.asarray(self.axes, dtype=float).reshape(3, 3)
        if np.max(np.abs(A @ A.T - np.eye(3))) > 1e-6:
            raise ValueError("axes must be orthonormal")
        object.__setattr__(self, "axes", A)


_WORLD_UP = np.array([0.0, 1.0, 0.0])


def _best_direction(normals: np.ndarray, weights: np.ndarray,
                    mask: np.ndarray, cos_cone: float) -> np.ndarray | None:
    """Highest-weight sign-invariant cone among candidate directions in `mask`."""
    if not mask.any():
        return None
    cand = normals[mask]
    dots = np.abs(cand @ normals.T)
    scores = (dots >= cos_cone) @ weights
    best = cand[int(np.argmax(scores))]
    # refine: weighted mean of supporters, signs aligned to the pick
    dot_all = normals @ best
    support = np.abs(dot_all) >= cos_cone
    mean = (normals[support] * (np.sign(dot_all[support])[:, None]
                                * weights[support][:, None])).sum(axis=0)
    norm = np.linalg.norm(mean)
    return best if norm < 1e-12 else mean / norm


def _complete_frame(a1: np.ndarray, a2: np.ndarray | None) -> np.ndarray:
    if a2 is None:
        up = _WORLD_UP
        if abs(up @ a1) > 0.9:
            up = np.array([1.0, 0.0, 0.0])
        a2 = up - (up @ a1) * a1
        a2 = a2 / np.linalg.norm(a2)
    a3 = np.cross(a1, a2)
    A = np.stack([a1, a2, a3])
    # nearest rotation (polar decomposition), keep right-handedness
    u, _, vt = np.linalg.svd(A)
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] = -u[:, -1]
        R = u @ vt
    return R


def vote_manhattan(normals: list[tuple[np.ndarray, float]]) -> ManhattanFrame:
    """Greedy dominant-direction voting with a sign-invariant 10 degree cone."""
    if not normals:
        raise ValueError("need at least one normal")
    dirs = np.array([np.asarray(n, dtype=float) / np.linalg.norm(n) for n, _ in normals])
    weights = np.array([float(w) for _, w in normals])
    cos_cone = np.cos(np.radians(VOTE_CONE_DEG))
    sin_cone = np.sin(np.radians(VOTE_CONE_DEG))

    a1 = _best_direction(dirs, weights, np.ones(len(dirs), dtype=bool), cos_cone)
    # second axis: near-orthogonal directions only
    ortho = np.abs(dirs @ a1) <= sin_cone
    a2 = _best_direction(dirs, weights, ortho, cos_cone)
    if a2 is not None:
        a2 = a2 - (a2 @ a1) * a1
        norm = np.linalg.norm(a2)
        a2 = None if norm < 1e-9 else a2 / norm
    return ManhattanFrame(_complete_frame(a1, a2))


def snap_to_manhattan(planes: list[Plane], frame: ManhattanFrame,
                      points: Point3Set,
                      inlier_threshold: float = 0.05) -> list[Plane]:
    """Snap near-axis plane normals to Manhattan axes, re-estimating offsets.

    The new offset is the median of axis . x over the plane's inliers
    (points within inlier_threshold); planes outside the 30 degree snap cone
    pass through unchanged.
    """
    cos_snap = np.cos(np.radians(SNAP_CONE_DEG))
    pts = points.points
    out: list[Plane] = []
    for plane in planes:
        dots = frame.axes @ plane.normal
        k = int(np.argmax(np.abs(dots)))
        if abs(dots[k]) < cos_snap:
            out.append(plane)
            continue
        axis = frame.axes[k] * np.sign(dots[k])
        inliers = pts[plane.distance(pts) <= inlier_threshold]
        if inliers.size:
            d = float(np.median(inliers @ axis))
        else:
            d = float(axis @ plane.param)
        if d < 0:
            axis, d = -axis, -d
        try:
            out.append(plane_from_normal_offset(axis, d))
        except DegeneratePlane:
            out.append(plane)
    return out
