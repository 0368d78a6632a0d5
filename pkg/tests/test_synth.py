import numpy as np
import pytest

import planekit as pk
from planekit.errors import CameraOutsideRoom

INTR = pk.CameraIntrinsics(fx=40.0, fy=40.0, cx=32.0, cy=24.0,
                           width=64, height=48)

ROOM_MIN = np.array([1.0, 1.0, 1.0])
ROOM_MAX = np.array([5.0, 4.0, 6.0])


def box_spec(yaw=0.0, pitch=0.0, cuboids=(), seed=0):
    return pk.SceneSpec(ROOM_MIN, ROOM_MAX,
                        pk.look_pose([3.0, 2.5, 3.0], yaw, pitch),
                        cuboids=tuple(cuboids), intrinsics=INTR, rng_seed=seed)


class TestRenderScene:
    def test_determinism(self):
        a = pk.render_scene(box_spec(yaw=0.2, pitch=-0.1))
        b = pk.render_scene(box_spec(yaw=0.2, pitch=-0.1))
        assert np.array_equal(a.depth.values, b.depth.values)
        assert np.array_equal(a.labels.labels, b.labels.labels)
        assert np.array_equal(a.intensity, b.intensity)
        for pa, pb in zip(a.planes.planes, b.planes.planes):
            assert np.array_equal(pa.param, pb.param)

    def test_pixels_satisfy_their_plane_equation(self):
        scene = pk.render_scene(box_spec(yaw=0.3, pitch=-0.15))
        pts = INTR.ray_grid() * scene.depth.values[..., None]
        lab = scene.labels.labels
        for j, plane in enumerate(scene.planes.planes):
            on = pts[lab == j]
            assert on.size
            assert np.max(np.abs(on @ plane.normal - plane.offset)) < 1e-9

    def test_depth_matches_slab_exit_oracle(self):
        spec = box_spec(yaw=0.25, pitch=0.1)
        scene = pk.render_scene(spec)
        cam = spec.pose.camera_center()
        dirs = INTR.ray_grid() @ spec.pose.rotation
        with np.errstate(divide="ignore"):
            t1 = (ROOM_MIN - cam) / dirs
            t2 = (ROOM_MAX - cam) / dirs
        t_exit = np.min(np.maximum(t1, t2), axis=-1)
        assert np.allclose(scene.depth.values, t_exit, atol=1e-9)

    def test_empty_room_visible_plane_budget(self):
        scene = pk.render_scene(box_spec(yaw=0.4, pitch=-0.1))
        assert 1 <= scene.labels.num_planes <= 5
        areas = np.bincount(scene.labels.labels.ravel(),
                            minlength=scene.labels.num_planes)
        assert np.all(np.diff(areas) <= 0), "plane ids ordered by area"

    def test_narrow_fov_single_wall(self):
        narrow = pk.CameraIntrinsics(fx=500.0, fy=500.0, cx=16.0, cy=12.0,
                                     width=32, height=24)
        spec = pk.SceneSpec(ROOM_MIN, ROOM_MAX,
                            pk.look_pose([3.0, 2.5, 5.5]),
                            intrinsics=narrow)
        scene = pk.render_scene(spec)
        assert scene.labels.num_planes == 1
        assert np.allclose(scene.planes.planes[0].param, [0, 0, 0.5], atol=1e-12)
        assert np.allclose(scene.depth.values, 0.5, atol=1e-9)

    def test_roles_cover_all_pixels(self):
        cub = pk.Cuboid([3.0, 3.6, 4.5], [0.8, 0.8, 0.8], yaw=0.3)
        scene = pk.render_scene(box_spec(yaw=0.1, cuboids=[cub]))
        assert scene.roles.min() >= 0
        assert scene.roles.shape == (INTR.height, INTR.width)

    def test_camera_outside_room_rejected(self):
        with pytest.raises(CameraOutsideRoom):
            pk.SceneSpec(ROOM_MIN, ROOM_MAX, pk.look_pose([0.0, 0.0, 0.0]),
                         intrinsics=INTR)


class TestEmitMesh:
    def test_empty_room_counts(self):
        mesh = pk.emit_mesh(box_spec())
        assert len(mesh.triangles) == 12
        assert set(np.unique(mesh.vertex_labels)) == set(range(6))

    def test_cuboid_counts(self):
        cub = pk.Cuboid([3.0, 3.6, 4.5], [0.8, 0.8, 0.8])
        mesh = pk.emit_mesh(box_spec(cuboids=[cub]))
        assert len(mesh.triangles) == 24
        assert set(np.unique(mesh.vertex_labels)) == set(range(7))

    def test_subdivision_counts(self):
        mesh = pk.emit_mesh(box_spec(), subdivisions=3)
        assert len(mesh.triangles) == 6 * 2 * 9
        assert len(mesh.vertices) == 6 * 16

    def test_vertices_on_their_face_plane(self):
        spec = box_spec()
        mesh = pk.emit_mesh(spec, subdivisions=2)
        lo, hi = ROOM_MIN, ROOM_MAX
        for v in mesh.vertices:
            assert np.any(np.isclose(v, lo) | np.isclose(v, hi))
            assert np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12)

    def test_rasterized_mesh_matches_analytic_render(self):
        spec = box_spec(yaw=0.2, pitch=-0.05)
        scene = pk.render_scene(spec)
        mesh = pk.emit_mesh(spec, subdivisions=4)
        cfg = pk.RansacConfig(min_inliers=10, iterations_per_plane=100,
                              rng_seed=0)
        fitted = pk.fit_semantic_planes(mesh, cfg)
        frame = pk.Frame(INTR, spec.pose)
        lab, depth = pk.rasterize_frame(mesh, fitted, frame)
        agree = np.isclose(depth.values, scene.depth.values, atol=1e-6)
        agree &= depth.valid
        assert np.mean(agree) >= 0.99


class TestCorrupt:
    def _clean(self):
        return pk.render_scene(box_spec(yaw=0.1)).depth

    def test_zero_spec_identity(self):
        d = self._clean()
        out = pk.corrupt(d, pk.NoiseSpec())
        assert np.array_equal(out.values, d.values)
        assert np.array_equal(out.valid, d.valid)

    def test_dropout_exact_count(self):
        d = self._clean()
        out = pk.corrupt(d, pk.NoiseSpec(dropout_fraction=0.25), seed=1)
        n = d.valid.sum()
        assert out.valid.sum() == n - int(round(0.25 * n))
        assert np.all(out.values[~out.valid] == 0.0)

    def test_gaussian_sigma(self):
        d = self._clean()  # 3072 valid pixels
        out = pk.corrupt(d, pk.NoiseSpec(depth_gaussian_sigma=0.01), seed=2)
        resid = (out.values - d.values)[out.valid]
        assert abs(resid.std() - 0.01) < 0.001
        assert abs(resid.mean()) < 0.001

    def test_quantization(self):
        d = self._clean()
        out = pk.corrupt(d, pk.NoiseSpec(quantization_step=0.05), seed=3)
        steps = out.values[out.valid] / 0.05
        assert np.allclose(steps, np.round(steps), atol=1e-9)
        assert np.max(np.abs(out.values - d.values)[out.valid]) <= 0.025 + 1e-12

    def test_determinism(self):
        d = self._clean()
        spec = pk.NoiseSpec(0.01, 0.1, 0.005)
        a = pk.corrupt(d, spec, seed=7)
        b = pk.corrupt(d, spec, seed=7)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.valid, b.valid)

    def test_negative_params_rejected(self):
        with pytest.raises(ValueError):
            pk.NoiseSpec(depth_gaussian_sigma=-0.1)


class TestRandomScene:
    def test_camera_strictly_inside(self):
        for seed in range(10):
            spec = pk.random_scene(seed, intrinsics=INTR)
            c = spec.pose.camera_center()
            assert np.all(c > spec.room_min) and np.all(c < spec.room_max)

    def test_renders_without_escaping(self):
        for seed in range(3):
            scene = pk.render_scene(pk.random_scene(seed, n_cuboids=2,
                                                    intrinsics=INTR))
            assert scene.depth.valid.all()
            assert scene.depth.values.min() > 0

    def test_determinism(self):
        a = pk.random_scene(11, n_cuboids=1, intrinsics=INTR)
        b = pk.random_scene(11, n_cuboids=1, intrinsics=INTR)
        assert np.array_equal(a.room_min, b.room_min)
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert len(a.cuboids) == len(b.cuboids)
