"""Room layout estimation from role-assigned planes and the layout pixel error."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import InvalidConfig
from .geometry import CameraIntrinsics, Plane, render_plane_depthmap
from .losses import PlaneSet
from .masks import ProbMaskStack, masks_to_labels

ROLES = ("ceiling", "floor", "wall_left", "wall_middle", "wall_right")
ROLE_IDS = {name: i for i, name in enumerate(ROLES)}

# contiguous wall arrangements for a box room seen from inside
_WALL_SETS = ((), ("wall_left",), ("wall_middle",), ("wall_right",),
              ("wall_left", "wall_middle"), ("wall_middle", "wall_right"),
              ("wall_left", "wall_middle", "wall_right"))


def layout_catalog() -> list[frozenset[str]]:
    """All box-room visibility patterns: any floor/ceiling subset combined
    with a contiguous wall run, containing at least one of floor, ceiling,
    or the middle wall. Ordered by role count, then lexicographically."""
    configs = []
    for fc, walls in product(((), ("floor",), ("ceiling",), ("floor", "ceiling")),
                             _WALL_SETS):
        roles = frozenset(fc) | frozenset(walls)
        if not roles & {"floor", "ceiling", "wall_middle"}:
            continue
        configs.append(roles)
    return sorted(set(configs), key=lambda r: (len(r), sorted(r)))


@dataclass(frozen=True)
class RoleAssignment:
    """Role name -> plane index (roles may be absent)."""

    mapping: dict[str, int]

    def __post_init__(self):
        for role in self.mapping:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        idx = list(self.mapping.values())
        if len(set(idx)) != len(idx):
            raise ValueError("role plane indices must be distinct")


@dataclass(frozen=True)
class LayoutResult:
    role_labels: np.ndarray        # role id per pixel
    configuration: frozenset[str]
    score: int


def project_layout(planes: PlaneSet, roles: RoleAssignment,
                   config: frozenset[str] | set[str],
                   intr: CameraIntrinsics) -> np.ndarray:
    """Role id per pixel from the first-exit (minimum positive depth) rule.

    Pixels where no visible plane has a defined depth fall back to the middle
    wall when visible, else to the role whose plane is nearest overall.
    """
    config = frozenset(config)
    for role in config:
        if role not in roles.mapping:
            raise InvalidConfig(f"configuration requires unassigned role {role!r}")
    role_list = sorted(config, key=lambda r: ROLE_IDS[r])
    depths = np.full((len(role_list), intr.height, intr.width), np.inf)
    for k, role in enumerate(role_list):
        dm = render_plane_depthmap(planes.planes[roles.mapping[role]], intr)
        depths[k][dm.valid] = dm.values[dm.valid]
    winner = np.argmin(depths, axis=0)
    labels = np.array([ROLE_IDS[r] for r in role_list], dtype=np.int32)[winner]

    undefined = ~np.isfinite(np.min(depths, axis=0))
    if undefined.any():
        if "wall_middle" in config:
            fallback = ROLE_IDS["wall_middle"]
        else:
            offsets = [planes.planes[roles.mapping[r]].offset for r in role_list]
            fallback = ROLE_IDS[role_list[int(np.argmin(offsets))]]
        labels[undefined] = fallback
    return labels


def estimate_layout(planes: PlaneSet, roles: RoleAssignment,
                    masks: ProbMaskStack,
                    intr: CameraIntrinsics) -> LayoutResult:
    """Score every catalog configuration by agreement with the winner-takes-all
    segmentation and return the best (ties prefer fewer visible roles)."""
    seg = masks_to_labels(masks).labels
    # plane index -> role id; pixels on non-role planes never agree
    plane_role = np.full(masks.channels, -1, dtype=np.int32)
    for role, idx in roles.mapping.items():
        plane_role[idx] = ROLE_IDS[role]
    seg_roles = plane_role[seg]

    best: tuple[int, int, int] | None = None  # (-score, len, order)
    best_labels = None
    best_config = None
    for order, config in enumerate(layout_catalog()):
        if any(r not in roles.mapping for r in config):
            continue
        labels = project_layout(planes, roles, config, intr)
        score = int(np.count_nonzero(labels == seg_roles))
        key = (-score, len(config), order)
        if best is None or key < best:
            best, best_labels, best_config = key, labels, config
    if best is None:
        raise InvalidConfig("no catalog configuration is satisfiable with the given roles")
    return LayoutResult(best_labels, best_config, -best[0])


def propose_roles(planes: PlaneSet) -> RoleAssignment:
    """Heuristic role proposal from camera-frame plane normals (+y is down):
    floor within 30 degrees of straight down, ceiling of straight up, other
    near-horizontal normals binned left/middle/right by azimuth. A rough
    stand-in for manual role selection; inspect before trusting."""
    cos30 = np.cos(np.radians(30.0))
    mapping: dict[str, int] = {}
    for i, p in enumerate(planes.planes):
        n = p.normal
        if n[1] > cos30:
            role = "floor"
        elif n[1] < -cos30:
            role = "ceiling"
        elif abs(n[1]) < np.sin(np.radians(30.0)):
            az = np.arctan2(n[0], n[2])
            if abs(az) <= np.pi / 4:
                role = "wall_middle"
            elif az > 0:
                role = "wall_right"
            else:
                role = "wall_left"
        else:
            continue
        mapping.setdefault(role, i)
    return RoleAssignment(mapping)


def layout_pixel_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """Fraction of pixels whose role labels differ."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("label map sizes differ")
    return float(np.mean(pred != gt))
