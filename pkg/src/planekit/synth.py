"""Deterministic synthetic box-room scenes with analytic ground truth.

World frame matches the camera convention: x right, y down (gravity +y),
z forward. The floor is the room face at maximal y, the ceiling at minimal y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CameraOutsideRoom
from .geometry import (CameraIntrinsics, DepthMap, Frame, Plane, Pose,
                       plane_from_normal_offset)
from .gt_pipeline import SemanticMesh
from .layout import ROLE_IDS
from .losses import PlaneSet
from .masks import LabelMap

DEFAULT_INTRINSICS = CameraIntrinsics(fx=160.0, fy=160.0, cx=128.0, cy=96.0,
                                      width=256, height=192)


@dataclass(frozen=True)
class Cuboid:
    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0  # rotation about world y (radians)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=float).reshape(3))

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class NoiseSpec:
    depth_gaussian_sigma: float = 0.0
    dropout_fraction: float = 0.0
    quantization_step: float = 0.0

    def __post_init__(self):
        if min(self.depth_gaussian_sigma, self.dropout_fraction,
               self.quantization_step) < 0:
            raise ValueError("noise parameters must be nonnegative")


@dataclass(frozen=True)
class SceneSpec:
    room_min: np.ndarray
    room_max: np.ndarray
    pose: Pose
    cuboids: tuple[Cuboid, ...] = ()
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    rng_seed: int = 0

    def __post_init__(self):
        rmin = np.asarray(self.room_min, dtype=float).reshape(3)
        rmax = np.asarray(self.room_max, dtype=float).reshape(3)
        if not np.all(rmax > rmin):
            raise ValueError("room_max must exceed room_min componentwise")
        object.__setattr__(self, "room_min", rmin)
        object.__setattr__(self, "room_max", rmax)
        c = self.pose.camera_center()
        if not (np.all(c > rmin) and np.all(c < rmax)):
            raise CameraOutsideRoom("camera must be strictly inside the room")


def look_pose(position, yaw: float = 0.0, pitch: float = 0.0) -> Pose:
    """World-to-camera pose for a camera at `position`, rotated by yaw about
    world y, then pitch about camera x."""
    cy_, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    Ry = np.array([[cy_, 0, -sy], [0, 1, 0], [sy, 0, cy_]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    R = Rx @ Ry
    position = np.asarray(position, dtype=float)
    return Pose(R, -R @ position)


@dataclass(frozen=True)
class _Face:
    normal: np.ndarray   # world plane: normal . X = offset
    offset: float
    axis_u: np.ndarray   # in-plane axes and rectangle bounds
    axis_v: np.ndarray
    origin: np.ndarray
    half_u: float
    half_v: float
    room_face: bool


_AXES = np.eye(3)


def _room_faces(rmin: np.ndarray, rmax: np.ndarray) -> list[_Face]:
    faces = []
    center = (rmin + rmax) / 2
    half = (rmax - rmin) / 2
    for k in range(3):
        u, v = (k + 1) % 3, (k + 2) % 3
        for sign, coord in ((-1.0, rmin[k]), (1.0, rmax[k])):
            n = sign * _AXES[k]
            origin = center.copy()
            origin[k] = coord
            faces.append(_Face(n, float(n @ origin), _AXES[u], _AXES[v],
                               origin, float(half[u]), float(half[v]), True))
    return faces


def _cuboid_faces(c: Cuboid) -> list[_Face]:
    R = c.rotation()
    half = c.size / 2
    faces = []
    for k in range(3):
        u, v = (k + 1) % 3, (k + 2) % 3
        for sign in (-1.0, 1.0):
            n = sign * R[:, k]
            origin = c.center + sign * half[k] * R[:, k]
            faces.append(_Face(n, float(n @ origin), R[:, u], R[:, v],
                               origin, float(half[u]), float(half[v]), False))
    return faces


def _face_role(cam_normal: np.ndarray) -> int:
    """Role id of a room face from its camera-frame closest-point normal."""
    if cam_normal[1] > np.cos(np.radians(45)):
        return ROLE_IDS["floor"]
    if cam_normal[1] < -np.cos(np.radians(45)):
        return ROLE_IDS["ceiling"]
    az = np.arctan2(cam_normal[0], cam_normal[2])
    if abs(az) <= np.pi / 4:
        return ROLE_IDS["wall_middle"]
    return ROLE_IDS["wall_right"] if az > 0 else ROLE_IDS["wall_left"]


@dataclass(frozen=True)
class RenderedScene:
    depth: DepthMap
    labels: LabelMap
    planes: PlaneSet
    roles: np.ndarray
    intensity: np.ndarray


def render_scene(spec: SceneSpec) -> RenderedScene:
    """Analytic nearest-hit ray casting against room and cuboid faces.

    Coplanar faces share one plane id; the role map covers every pixel and
    comes from room faces only.
    """
    intr = spec.intrinsics
    pose = spec.pose
    cam = pose.camera_center()
    rays_cam = intr.ray_grid()
    dirs = rays_cam @ pose.rotation  # R^T applied to each camera ray

    faces = _room_faces(spec.room_min, spec.room_max)
    for c in spec.cuboids:
        faces.extend(_cuboid_faces(c))

    H, W = intr.height, intr.width
    best_s = np.full((H, W), np.inf)
    best_face = np.full((H, W), -1, dtype=np.int32)
    for fi, f in enumerate(faces):
        denom = dirs @ f.normal
        num = f.offset - float(f.normal @ cam)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = num / denom
            hit = np.isfinite(s) & (s > 1e-9)
            if not hit.any():
                continue
            pts = cam + s[..., None] * dirs
            rel = pts - f.origin
            hit &= (np.abs(rel @ f.axis_u) <= f.half_u + 1e-12) \
                & (np.abs(rel @ f.axis_v) <= f.half_v + 1e-12)
        closer = hit & (s < best_s)
        best_s[closer] = s[closer]
        best_face[closer] = fi

    if np.any(best_face < 0):
        raise CameraOutsideRoom("a ray escaped the room; scene is inconsistent")

    # camera-frame plane per face; coplanar faces collapse to one plane id
    cam_planes: list[Plane] = []
    face_plane = np.empty(len(faces), dtype=np.int32)
    face_role_id = np.full(len(faces), -1, dtype=np.int32)
    for fi, f in enumerate(faces):
        n_c = pose.rotation @ f.normal
        d_c = f.offset - float(f.normal @ cam)
        if d_c < 0:
            n_c, d_c = -n_c, -d_c
        # faces are oriented outward from the camera's side, so d_c > 0
        pid = -1
        for j, p in enumerate(cam_planes):
            if np.allclose(p.param, d_c * n_c, atol=1e-9):
                pid = j
                break
        if pid < 0:
            pid = len(cam_planes)
            cam_planes.append(plane_from_normal_offset(n_c, d_c))
        face_plane[fi] = pid
        if f.room_face:
            face_role_id[fi] = _face_role(n_c)

    # s parameterizes X = cam + s * (R^T r) with r_z = 1, so the camera-space
    # z of the hit equals s directly
    depth = DepthMap(best_s, np.ones_like(best_s, dtype=bool))

    # keep only planes that are actually visible, largest mask first
    raw_labels = face_plane[best_face]
    areas = np.bincount(raw_labels.ravel(), minlength=len(cam_planes))
    visible = sorted(np.flatnonzero(areas), key=lambda i: (-areas[i], i))
    remap = np.full(len(cam_planes), -1, dtype=np.int32)
    for new, old in enumerate(visible):
        remap[old] = new
    cam_planes = [cam_planes[i] for i in visible]
    labels = LabelMap(remap[raw_labels], len(cam_planes))

    room_hits = np.array([f.room_face for f in faces])[best_face]
    roles = np.where(room_hits, face_role_id[best_face], -1)
    if np.any(roles < 0):
        # furniture pixels take the role of the room face behind them
        role_depth = np.full((H, W), np.inf)
        role_map = np.zeros((H, W), dtype=np.int32)
        for fi, f in enumerate(faces):
            if not f.room_face:
                continue
            denom = dirs @ f.normal
            num = f.offset - float(f.normal @ cam)
            with np.errstate(divide="ignore", invalid="ignore"):
                s = num / denom
                pts = cam + s[..., None] * dirs
                rel = pts - f.origin
                hit = np.isfinite(s) & (s > 1e-9) \
                    & (np.abs(rel @ f.axis_u) <= f.half_u + 1e-12) \
                    & (np.abs(rel @ f.axis_v) <= f.half_v + 1e-12)
            closer = hit & (s < role_depth)
            role_depth[closer] = s[closer]
            role_map[closer] = face_role_id[fi]
        roles = np.where(roles < 0, role_map, roles).astype(np.int32)
    roles = roles.astype(np.int32)

    rng = np.random.default_rng(spec.rng_seed)
    albedo = rng.uniform(60.0, 220.0, size=len(cam_planes))
    intensity = albedo[labels.labels] + rng.normal(0.0, 2.0, size=(H, W))
    intensity = np.clip(intensity, 0.0, 255.0)

    return RenderedScene(depth, labels,
                         PlaneSet(cam_planes, max(10, len(cam_planes))),
                         roles, intensity)


def _face_grid(f: _Face, subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    """(vertices, triangles) of a face rectangle split into a regular grid."""
    s = subdivisions
    us = np.linspace(-f.half_u, f.half_u, s + 1)
    vs = np.linspace(-f.half_v, f.half_v, s + 1)
    verts = (f.origin[None, None, :]
             + us[:, None, None] * f.axis_u[None, None, :]
             + vs[None, :, None] * f.axis_v[None, None, :]).reshape(-1, 3)
    tris = []
    for i in range(s):
        for j in range(s):
            a = i * (s + 1) + j
            b = a + 1
            c = a + (s + 1)
            d = c + 1
            tris.append((a, b, c))
            tris.append((b, d, c))
    return verts, np.array(tris, dtype=np.int64)


def emit_mesh(spec: SceneSpec, subdivisions: int = 1) -> SemanticMesh:
    """Triangulated room and cuboids; one semantic label per room face and
    one per cuboid."""
    faces = _room_faces(spec.room_min, spec.room_max)
    labels_per_face = list(range(6))
    for ci, c in enumerate(spec.cuboids):
        faces.extend(_cuboid_faces(c))
        labels_per_face.extend([6 + ci] * 6)

    all_verts, all_tris, all_labels = [], [], []
    offset = 0
    for f, lab in zip(faces, labels_per_face):
        v, t = _face_grid(f, subdivisions)
        all_verts.append(v)
        all_tris.append(t + offset)
        all_labels.append(np.full(len(v), lab, dtype=np.int64))
        offset += len(v)
    return SemanticMesh(np.concatenate(all_verts),
                        np.concatenate(all_tris),
                        np.concatenate(all_labels))


def corrupt(depth: DepthMap, noise: NoiseSpec, seed: int = 0) -> DepthMap:
    """Seeded Gaussian noise, exact-count dropout, and step quantization."""
    rng = np.random.default_rng(seed)
    values = depth.values.copy()
    valid = depth.valid.copy()
    if noise.depth_gaussian_sigma > 0:
        values[valid] += rng.normal(0.0, noise.depth_gaussian_sigma,
                                    size=int(valid.sum()))
        values[valid] = np.maximum(values[valid], 1e-3)
    if noise.dropout_fraction > 0:
        idx = np.flatnonzero(valid)
        n_drop = int(round(noise.dropout_fraction * idx.size))
        drop = rng.choice(idx, size=n_drop, replace=False)
        valid.flat[drop] = False
    if noise.quantization_step > 0:
        q = np.round(values / noise.quantization_step) * noise.quantization_step
        values = np.maximum(q, noise.quantization_step)
    values[~valid] = 0.0
    return DepthMap(values, valid)


def random_scene(seed: int, n_cuboids: int = 0,
                 intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS) -> SceneSpec:
    """A seeded random box room (optionally with cuboids) whose face planes
    keep a safe margin from the camera."""
    rng = np.random.default_rng(seed)
    size = rng.uniform(3.0, 6.0, size=3)
    size[1] = rng.uniform(2.4, 3.2)  # room height
    rmin = rng.uniform(-1.0, 1.0, size=3)
    rmax = rmin + size
    center = (rmin + rmax) / 2
    cam = center + rng.uniform(-0.15, 0.15, size=3) * size
    yaw = rng.uniform(-0.5, 0.5)
    pitch = rng.uniform(-0.15, 0.15)
    cuboids = []
    for _ in range(n_cuboids):
        csize = rng.uniform(0.6, 1.4, size=3)
        pos_x = rng.uniform(rmin[0] + csize[0], rmax[0] - csize[0])
        pos_z = rng.uniform(rmin[2] + csize[2], rmax[2] - csize[2])
        pos_y = rmax[1] - csize[1] / 2  # resting on the floor
        cub = Cuboid(np.array([pos_x, pos_y, pos_z]), csize,
                     yaw=rng.uniform(0, np.pi / 2))
        if np.linalg.norm(cub.center - cam) > 1.2:
            cuboids.append(cub)
    return SceneSpec(rmin, rmax, look_pose(cam, yaw, pitch),
                     tuple(cuboids), intrinsics, rng_seed=seed)
