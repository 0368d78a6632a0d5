"""Ground-truth generation: per-label plane fitting on a semantic mesh,
cross-label merging, z-buffered projection into frames, and sample filtering."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateGeometry, DegeneratePlane, EmptySplit, NoPlaneFound
from .extraction import RansacConfig, extract_planes
from .geometry import DepthMap, Frame, Plane, Point3Set, fit_plane_lsq_rms
from .masks import LabelMap

Z_NEAR = 1e-6


@dataclass(frozen=True)
class SemanticMesh:
    """Triangle mesh with one semantic label per vertex.

    Triangles whose three vertices disagree on the label are dropped at
    construction and counted in `dropped_triangles`.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_labels: np.ndarray
    dropped_triangles: int = 0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        lab = np.asarray(self.vertex_labels, dtype=np.int64).reshape(-1)
        if lab.shape[0] != v.shape[0]:
            raise ValueError("one label per vertex required")
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise ValueError("triangle index out of range")
        consistent = (lab[t[:, 0]] == lab[t[:, 1]]) & (lab[t[:, 0]] == lab[t[:, 2]])
        dropped = int(np.count_nonzero(~consistent))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t[consistent])
        object.__setattr__(self, "vertex_labels", lab)
        object.__setattr__(self, "dropped_triangles", self.dropped_triangles + dropped)


@dataclass(frozen=True)
class FittedMeshPlanes:
    planes: list[Plane]
    vertex_assignment: np.ndarray  # plane index per vertex, -1 = unassigned


@dataclass(frozen=True)
class MergeConfig:
    max_normal_angle: float = 20.0     # degrees
    max_mean_distance: float = 0.05    # meters
    symmetric_distance: bool = False   # also require A's vertices close to B

    def __post_init__(self):
        if self.max_normal_angle <= 0 or self.max_mean_distance <= 0:
            raise ValueError("merge thresholds must be positive")


@dataclass(frozen=True)
class GroundTruthSample:
    frame: Frame | None
    label_map: LabelMap
    depth_map: DepthMap
    planes: list[Plane]
    planar_coverage: float


def fit_semantic_planes(mesh: SemanticMesh, cfg: RansacConfig) -> FittedMeshPlanes:
    """Run plane extraction independently on each semantic label's vertices.

    Vertices are assigned first-fit in extraction order among their own
    label's planes; labels where extraction fails stay unassigned.
    """
    planes: list[Plane] = []
    assignment = np.full(mesh.vertices.shape[0], -1, dtype=np.int64)
    for label in np.unique(mesh.vertex_labels):
        idx = np.flatnonzero(mesh.vertex_labels == label)
        try:
            extracted = extract_planes(Point3Set(mesh.vertices[idx]), cfg)
        except NoPlaneFound:
            continue
        for ext in extracted:
            pid = len(planes)
            planes.append(ext.plane)
            dists = ext.plane.distance(mesh.vertices[idx])
            take = (dists <= cfg.inlier_threshold) & (assignment[idx] < 0)
            assignment[idx[take]] = pid
    return FittedMeshPlanes(planes, assignment)


def _merge_candidates(planes, members, verts, cfg):
    """(mean_dist, i_large, j_small) for every pair passing the merge predicate."""
    out = []
    cos_max = np.cos(np.radians(cfg.max_normal_angle))
    for i in range(len(planes)):
        for j in range(i + 1, len(planes)):
            if planes[i] is None or planes[j] is None:
                continue
            a, b = (i, j) if len(members[i]) >= len(members[j]) else (j, i)
            if abs(planes[a].normal @ planes[b].normal) < cos_max:
                continue
            mean_dist = float(planes[a].distance(verts[members[b]]).mean())
            if cfg.symmetric_distance:
                mean_dist = max(mean_dist,
                                float(planes[b].distance(verts[members[a]]).mean()))
            if mean_dist < cfg.max_mean_distance:
                out.append((mean_dist, a, b))
    return out


def merge_planes(fitted: FittedMeshPlanes, mesh: SemanticMesh,
                 cfg: MergeConfig) -> FittedMeshPlanes:
    """Greedily merge compatible plane pairs, smallest mean distance first.

    The merged plane is refit on the union of the two vertex sets; merging
    repeats until no pair satisfies the angle + distance predicate.
    """
    planes: list[Plane | None] = list(fitted.planes)
    members = [np.flatnonzero(fitted.vertex_assignment == i) for i in range(len(planes))]
    verts = mesh.vertices

    while True:
        cands = [c for c in _merge_candidates(planes, members, verts, cfg)
                 if len(members[c[2]]) > 0]
        if not cands:
            break
        _, a, b = min(cands)
        union = np.union1d(members[a], members[b])
        try:
            merged, _ = fit_plane_lsq_rms(Point3Set(verts[union]))
        except (DegenerateGeometry, DegeneratePlane):
            merged = planes[a]
        planes[a] = merged
        members[a] = union
        planes[b] = None
        members[b] = np.empty(0, dtype=np.int64)

    keep = [i for i, p in enumerate(planes) if p is not None]
    remap = {old: new for new, old in enumerate(keep)}
    assignment = np.full_like(fitted.vertex_assignment, -1)
    for old in keep:
        assignment[members[old]] = remap[old]
    return FittedMeshPlanes([planes[i] for i in keep], assignment)


def _clip_near(tri_cam: np.ndarray) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of one camera-space triangle against z > Z_NEAR,
    returning a fan triangulation of the clipped polygon."""
    poly = []
    n = 3
    for i in range(n):
        a, b = tri_cam[i], tri_cam[(i + 1) % n]
        ain, bin_ = a[2] > Z_NEAR, b[2] > Z_NEAR
        if ain:
            poly.append(a)
        if ain != bin_:
            t = (Z_NEAR - a[2]) / (b[2] - a[2])
            poly.append(a + t * (b - a))
    if len(poly) < 3:
        return []
    return [np.stack([poly[0], poly[k], poly[k + 1]]) for k in range(1, len(poly) - 1)]


def _rasterize_triangle(tri_uv: np.ndarray, plane_depth: np.ndarray,
                        plane_valid: np.ndarray, pid: int,
                        zbuf: np.ndarray, labels: np.ndarray) -> None:
    """Coverage test over the triangle's bounding box with a half-open
    top-left fill rule; depth comes from the triangle's fitted plane."""
    H, W = zbuf.shape
    (x0, y0), (x1, y1), (x2, y2) = tri_uv
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    if area == 0:
        return
    if area < 0:
        (x1, y1), (x2, y2) = (x2, y2), (x1, y1)
    umin = max(int(np.ceil(min(x0, x1, x2))), 0)
    umax = min(int(np.floor(max(x0, x1, x2))), W - 1)
    vmin = max(int(np.ceil(min(y0, y1, y2))), 0)
    vmax = min(int(np.floor(max(y0, y1, y2))), H - 1)
    if umin > umax or vmin > vmax:
        return
    us = np.arange(umin, umax + 1, dtype=float)
    vs = np.arange(vmin, vmax + 1, dtype=float)
    uu, vv = np.meshgrid(us, vs)
    inside = np.ones(uu.shape, dtype=bool)
    for (ax, ay), (bx, by) in (((x0, y0), (x1, y1)),
                               ((x1, y1), (x2, y2)),
                               ((x2, y2), (x0, y0))):
        ex, ey = bx - ax, by - ay
        w = ex * (vv - ay) - ey * (uu - ax)
        # screen coords have y down and winding is normalized clockwise, so
        # top edges run in +x at constant y and left edges run in -y
        top_left = ey < 0 or (ey == 0 and ex > 0)
        inside &= (w > 0) | ((w == 0) & top_left)
    if not inside.any():
        return
    sub = (slice(vmin, vmax + 1), slice(umin, umax + 1))
    z = plane_depth[sub]
    hit = inside & plane_valid[sub] & (z < zbuf[sub])
    zbuf[sub][hit] = z[hit]
    labels[sub][hit] = pid


def rasterize_frame(mesh: SemanticMesh, fitted: FittedMeshPlanes,
                    frame: Frame) -> tuple[LabelMap, DepthMap]:
    """Project plane-consistent triangles into the frame with a z-buffer.

    A triangle is drawn only when its three vertices share a plane id; the
    depth written at each covered pixel is the plane-induced depth, so the
    output is exactly piece-wise planar.
    """
    intr = frame.intrinsics
    H, W = intr.height, intr.width
    zbuf = np.full((H, W), np.inf)
    labels = np.full((H, W), len(fitted.planes), dtype=np.int32)

    cam_planes: list[Plane] = []
    depth_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for p in fitted.planes:
        cam_planes.append(p.to_camera(frame.pose))

    def plane_grid(pid):
        if pid not in depth_cache:
            from .geometry import render_plane_depthmap
            dm = render_plane_depthmap(cam_planes[pid], intr)
            depth_cache[pid] = (dm.values, dm.valid)
        return depth_cache[pid]

    assign = fitted.vertex_assignment
    tri_pid = assign[mesh.triangles[:, 0]]
    consistent = ((tri_pid >= 0)
                  & (tri_pid == assign[mesh.triangles[:, 1]])
                  & (tri_pid == assign[mesh.triangles[:, 2]]))
    verts_cam = frame.pose.transform(mesh.vertices)

    for tri, pid in zip(mesh.triangles[consistent], tri_pid[consistent]):
        pdepth, pvalid = plane_grid(int(pid))
        for clipped in _clip_near(verts_cam[tri]):
            uv = np.empty((3, 2))
            uv[:, 0] = intr.fx * clipped[:, 0] / clipped[:, 2] + intr.cx
            uv[:, 1] = intr.fy * clipped[:, 1] / clipped[:, 2] + intr.cy
            _rasterize_triangle(uv, pdepth, pvalid, int(pid), zbuf, labels)

    valid = labels < len(fitted.planes)
    depth = np.where(valid, zbuf, 0.0)
    return LabelMap(labels, len(fitted.planes)), DepthMap(depth, valid)


def filter_sample(label_map: LabelMap, depth_map: DepthMap, planes: list[Plane],
                  min_plane_area: float = 0.01, min_frame_coverage: float = 0.5,
                  k_max: int = 10,
                  frame: Frame | None = None) -> GroundTruthSample | None:
    """Drop small planes, cap the plane count, and reject low-coverage frames.

    Returns None when the surviving planar coverage is below
    min_frame_coverage; surviving planes are re-indexed by descending area.
    """
    n_px = label_map.height * label_map.width
    areas = np.bincount(label_map.labels[label_map.planar_mask()],
                        minlength=len(planes)).astype(float) / n_px
    keep = np.flatnonzero(areas >= min_plane_area)
    if keep.size > k_max:
        order = sorted(keep, key=lambda i: (-areas[i], i))
        keep = np.array(order[:k_max])
    keep = sorted(keep, key=lambda i: (-areas[i], i))

    remap = np.full(len(planes) + 1, len(keep), dtype=np.int32)
    for new, old in enumerate(keep):
        remap[old] = new
    labels = remap[label_map.labels]
    coverage = float(np.count_nonzero(labels < len(keep))) / n_px
    if coverage < min_frame_coverage:
        return None
    valid = labels < len(keep)
    depth = DepthMap(np.where(valid, depth_map.values, 0.0), valid)
    return GroundTruthSample(frame=frame,
                             label_map=LabelMap(labels, len(keep)),
                             depth_map=depth,
                             planes=[planes[i] for i in keep],
                             planar_coverage=coverage)


@dataclass(frozen=True)
class Scene:
    name: str
    mesh: SemanticMesh
    trajectory: list[Frame]


@dataclass(frozen=True)
class DatasetBuild:
    train: list[tuple[str, int, GroundTruthSample]]
    test: list[tuple[str, int, GroundTruthSample]]
    manifest: dict


def build_dataset(scenes: list[Scene], stride: int = 10, split: float = 0.9,
                  seed: int = 0,
                  ransac_cfg: RansacConfig | None = None,
                  merge_cfg: MergeConfig | None = None,
                  min_plane_area: float = 0.01,
                  min_frame_coverage: float = 0.5,
                  k_max: int = 10) -> DatasetBuild:
    """Scene-level seeded split, frame subsampling, and per-frame GT generation."""
    if not scenes:
        raise EmptySplit("no scenes")
    ransac_cfg = ransac_cfg or RansacConfig()
    merge_cfg = merge_cfg or MergeConfig()

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(scenes))
    n_train = int(round(split * len(scenes)))
    if n_train == 0 or n_train == len(scenes):
        raise EmptySplit("split leaves an empty train or test set")
    train_idx = set(order[:n_train].tolist())

    out = {"train": [], "test": []}
    manifest = {"train_scenes": sorted(scenes[i].name for i in range(len(scenes)) if i in train_idx),
                "test_scenes": sorted(scenes[i].name for i in range(len(scenes)) if i not in train_idx),
                "frames": []}
    for si, scene in enumerate(scenes):
        split_name = "train" if si in train_idx else "test"
        fitted = merge_planes(fit_semantic_planes(scene.mesh, ransac_cfg),
                              scene.mesh, merge_cfg)
        for fi in range(0, len(scene.trajectory), stride):
            label_map, depth_map = rasterize_frame(scene.mesh, fitted,
                                                   scene.trajectory[fi])
            cam_planes = [p.to_camera(scene.trajectory[fi].pose) for p in fitted.planes]
            sample = filter_sample(label_map, depth_map, cam_planes,
                                   min_plane_area, min_frame_coverage, k_max,
                                   frame=scene.trajectory[fi])
            entry = {"scene": scene.name, "frame": fi, "split": split_name,
                     "accepted": sample is not None}
            if sample is None:
                entry["reason"] = "planar coverage below threshold"
            manifest["frames"].append(entry)
            if sample is not None:
                out[split_name].append((scene.name, fi, sample))
    return DatasetBuild(out["train"], out["test"], manifest)
