import numpy as np
import pytest

import planekit as pk
from planekit.errors import NoPlaneFound


def grid_on_plane(normal, offset, n=500, extent=1.0, seed=0, sigma=0.0):
    """Random points on (or near) the plane n.x = d, spanning two in-plane axes."""
    rng = np.random.default_rng(seed)
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    a = np.array([1.0, 0.0, 0.0])
    if abs(a @ normal) > 0.9:
        a = np.array([0.0, 1.0, 0.0])
    u = a - (a @ normal) * normal
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    coords = rng.uniform(-extent, extent, size=(n, 2))
    pts = offset * normal + coords[:, :1] * u + coords[:, 1:] * v
    if sigma > 0:
        pts += rng.normal(0.0, sigma, size=(n, 1)) * normal
    return pts


class TestExtractPlanes:
    def test_single_plane_noise_free(self):
        pts = grid_on_plane([0, 0, 1], 2.0)
        out = pk.extract_planes(pk.Point3Set(pts), pk.RansacConfig())
        assert len(out) == 1
        assert np.allclose(out[0].plane.param, [0, 0, 2], atol=1e-6)
        assert out[0].inlier_indices.size == len(pts)

    def test_two_perpendicular_planes(self):
        pts = np.concatenate([grid_on_plane([0, 0, 1], 2.0, seed=1),
                              grid_on_plane([1, 0, 0], 3.0, seed=2)])
        out = pk.extract_planes(pk.Point3Set(pts), pk.RansacConfig())
        assert len(out) == 2
        params = sorted((tuple(np.round(e.plane.param, 6)) for e in out))
        assert np.allclose(params[0], [0, 0, 2], atol=1e-6)
        assert np.allclose(params[1], [3, 0, 0], atol=1e-6)
        covered = np.zeros(len(pts), dtype=bool)
        for e in out:
            covered[e.inlier_indices] = True
        assert covered.all()

    def test_gaussian_noise_inlier_fraction(self):
        # 5 sigma of noise vs a 0.05 threshold: essentially every point inlier
        pts = grid_on_plane([0, 0, 1], 2.0, n=2000, seed=3, sigma=0.01)
        out = pk.extract_planes(pk.Point3Set(pts), pk.RansacConfig())
        assert len(out) == 1
        assert out[0].inlier_indices.size >= 0.99 * len(pts)

    def test_inlier_threshold_boundary(self):
        pts = grid_on_plane([0, 0, 1], 2.0, n=400, seed=4)
        pts = np.concatenate([pts, [[0.0, 0.0, 2.049], [0.0, 0.0, 2.051]]])
        out = pk.extract_planes(pk.Point3Set(pts), pk.RansacConfig())
        assert len(out) == 1
        inliers = set(out[0].inlier_indices.tolist())
        assert 400 in inliers       # 4.9 cm off: within the 5 cm gate
        assert 401 not in inliers   # 5.1 cm off: outside

    def test_coverage_target_terminates(self):
        # 92% of points on one plane: first round alone satisfies the 90% target
        pts = np.concatenate([grid_on_plane([0, 0, 1], 2.0, n=920, seed=5),
                              grid_on_plane([1, 0, 0], 3.0, n=80, seed=6)])
        out = pk.extract_planes(pk.Point3Set(pts), pk.RansacConfig())
        assert len(out) == 1
        # 85/15: one plane leaves coverage short, a second round runs
        pts = np.concatenate([grid_on_plane([0, 0, 1], 2.0, n=850, seed=5),
                              grid_on_plane([1, 0, 0], 3.0, n=150, seed=6)])
        out = pk.extract_planes(pk.Point3Set(pts), pk.RansacConfig())
        assert len(out) == 2

    def test_covered_points_resupport_later_planes(self):
        # plane B passes near part of plane A's point set; its inlier list may
        # include already-covered points even though they add no coverage
        pts_a = grid_on_plane([0, 0, 1], 2.0, n=800, seed=7)
        rng = np.random.default_rng(8)
        span = rng.uniform(-1, 1, size=(300, 2))
        pts_b = np.column_stack([span[:, 0], np.ones(300), 2.0 + span[:, 1]])
        pts = np.concatenate([pts_a, pts_b])
        out = pk.extract_planes(pk.Point3Set(pts),
                                pk.RansacConfig(coverage_target=0.999,
                                                min_inliers=20))
        assert len(out) == 2
        sets = [set(e.inlier_indices.tolist()) for e in out]
        assert sets[0] & sets[1], "intersecting planes should share inliers"

    def test_every_inlier_within_threshold(self):
        pts = np.concatenate([grid_on_plane([0, 0, 1], 2.0, seed=9, sigma=0.02),
                              grid_on_plane([0, 1, 0], 1.5, seed=10, sigma=0.02)])
        cfg = pk.RansacConfig()
        for e in pk.extract_planes(pk.Point3Set(pts), cfg):
            assert np.all(e.plane.distance(pts[e.inlier_indices])
                          <= cfg.inlier_threshold + 1e-12)

    def test_ordered_by_inlier_count(self):
        pts = np.concatenate([grid_on_plane([0, 0, 1], 2.0, n=600, seed=11),
                              grid_on_plane([1, 0, 0], 3.0, n=300, seed=12)])
        out = pk.extract_planes(pk.Point3Set(pts),
                                pk.RansacConfig(coverage_target=0.999))
        counts = [e.inlier_indices.size for e in out]
        assert counts == sorted(counts, reverse=True)

    def test_determinism(self):
        pts = grid_on_plane([0.3, 0.1, 1.0], 2.5, seed=13, sigma=0.01)
        cfg = pk.RansacConfig(rng_seed=42)
        a = pk.extract_planes(pk.Point3Set(pts), cfg)
        b = pk.extract_planes(pk.Point3Set(pts), cfg)
        assert len(a) == len(b)
        for ea, eb in zip(a, b):
            assert np.array_equal(ea.plane.param, eb.plane.param)
            assert np.array_equal(ea.inlier_indices, eb.inlier_indices)

    def test_too_few_points(self):
        with pytest.raises(NoPlaneFound):
            pk.extract_planes(pk.Point3Set(np.array([[0.0, 0, 1], [1.0, 0, 1]])),
                              pk.RansacConfig())

    def test_scatter_below_min_inliers(self):
        rng = np.random.default_rng(14)
        pts = rng.uniform(0.5, 5.0, size=(40, 3))
        with pytest.raises(NoPlaneFound):
            pk.extract_planes(pk.Point3Set(pts),
                              pk.RansacConfig(inlier_threshold=0.001,
                                              min_inliers=30))


class TestVoteManhattan:
    def test_identity_axes(self):
        frame = pk.vote_manhattan([(np.array([1.0, 0, 0]), 1.0),
                                   (np.array([0.0, 1, 0]), 1.0),
                                   (np.array([0.0, 0, 1]), 1.0)])
        assert np.allclose(frame.axes, np.eye(3), atol=1e-12)

    def test_jittered_rotation_recovery(self):
        rng = np.random.default_rng(0)
        theta = 0.6
        R = np.array([[np.cos(theta), 0, np.sin(theta)], [0, 1, 0],
                      [-np.sin(theta), 0, np.cos(theta)]])
        normals = []
        for _ in range(60):
            axis = R[rng.integers(0, 3)]
            jitter = rng.normal(0, np.radians(2.0) / np.sqrt(3), 3)
            n = axis + np.cross(jitter, axis)
            n = n / np.linalg.norm(n) * rng.choice([-1.0, 1.0])
            normals.append((n, 1.0))
        frame = pk.vote_manhattan(normals)
        cos2 = np.cos(np.radians(2.0))
        for axis in frame.axes:
            assert np.max(np.abs(R @ axis)) >= cos2

    def test_single_normal_completion(self):
        frame = pk.vote_manhattan([(np.array([0.0, 0, 1]), 1.0)])
        assert np.max(np.abs(frame.axes @ np.array([0.0, 0, 1]))) > 1 - 1e-9
        assert np.allclose(frame.axes @ frame.axes.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(frame.axes) > 0

    def test_sign_flip_invariance(self):
        rng = np.random.default_rng(1)
        base = [(rng.normal(size=3), float(rng.uniform(0.5, 2))) for _ in range(20)]
        base = [(n / np.linalg.norm(n), w) for n, w in base]
        flipped = [(-n if i % 3 == 0 else n, w) for i, (n, w) in enumerate(base)]
        a = pk.vote_manhattan(base).axes
        b = pk.vote_manhattan(flipped).axes
        # same frame up to per-axis sign
        assert np.allclose(np.abs(a @ b.T), np.eye(3), atol=1e-9)


class TestSnapToManhattan:
    FRAME = pk.ManhattanFrame(np.eye(3))

    def test_snap_small_angle(self):
        tilt = np.radians(5.0)
        n = np.array([np.sin(tilt), 0.0, np.cos(tilt)])
        plane = pk.plane_from_normal_offset(n, 2.0)
        pts = grid_on_plane([0, 0, 1], 2.0, n=200, extent=0.3, seed=0)
        out = pk.snap_to_manhattan([plane], self.FRAME, pk.Point3Set(pts))
        assert np.allclose(out[0].normal, [0, 0, 1], atol=1e-12)
        assert np.isclose(out[0].offset, 2.0, atol=1e-12)

    def test_outside_cone_unchanged(self):
        n = np.array([1.0, 1.0, 1.0]) / np.sqrt(3)  # 54.7 degrees from every axis
        plane = pk.plane_from_normal_offset(n, 2.0)
        pts = grid_on_plane(n, 2.0, n=100, seed=1)
        out = pk.snap_to_manhattan([plane], self.FRAME, pk.Point3Set(pts))
        assert out[0] is plane

    def test_already_aligned(self):
        plane = pk.plane_from_normal_offset(np.array([0.0, 0, 1]), 2.0)
        pts = grid_on_plane([0, 0, 1], 2.0, n=100, seed=2)
        out = pk.snap_to_manhattan([plane], self.FRAME, pk.Point3Set(pts))
        assert np.allclose(out[0].param, plane.param, atol=1e-9)

    def test_snapped_normals_exact(self):
        rng = np.random.default_rng(3)
        planes, pts = [], []
        for axis in np.eye(3):
            tilt = rng.normal(0, np.radians(4), 3)
            n = axis + np.cross(tilt, axis)
            n /= np.linalg.norm(n)
            planes.append(pk.plane_from_normal_offset(n, 2.0))
            pts.append(grid_on_plane(axis, 2.0, n=100, extent=0.2, seed=4))
        out = pk.snap_to_manhattan(planes, self.FRAME,
                                   pk.Point3Set(np.concatenate(pts)))
        for p in out:
            assert np.max(np.abs(self.FRAME.axes @ p.normal)) > 1 - 1e-12
