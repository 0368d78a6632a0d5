"""The three training objectives (plane Chamfer, segmentation cross entropy,
probability-weighted depth) with analytic gradients, plus gradient-descent
plane refinement under the depth objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import EPS_RAY, CameraIntrinsics, DepthMap, Plane
from .masks import LabelMap, ProbMaskStack

UNDEFINED_DEPTH_RESIDUAL = 10.0  # meters; used where a plane misses the ray


@dataclass(frozen=True)
class PlaneSet:
    planes: list[Plane]
    capacity: int = 10

    def __post_init__(self):
        if not (1 <= len(self.planes) <= self.capacity):
            raise ValueError("plane count must be in [1, capacity]")

    def params(self) -> np.ndarray:
        return np.stack([p.param for p in self.planes])

    def __len__(self) -> int:
        return len(self.planes)


@dataclass(frozen=True)
class LossReport:
    value: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("loss value must be finite")


def chamfer_plane_loss(gt: PlaneSet, pred: PlaneSet,
                       symmetric: bool = False) -> LossReport:
    """Directional Chamfer loss over plane parameters: each ground-truth plane
    is charged the squared distance to its nearest prediction.

    Ties in the nearest-prediction argmin break to the lowest index; the
    symmetric variant adds the reverse direction.
    """
    g = gt.params()
    p = pred.params()
    diff = g[:, None, :] - p[None, :, :]          # (K*, K, 3)
    d2 = (diff ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    value = float(d2[np.arange(len(g)), nearest].sum())
    grad = np.zeros_like(p)
    np.add.at(grad, nearest, 2.0 * (p[nearest] - g))
    if symmetric:
        nearest_gt = np.argmin(d2, axis=0)
        value += float(d2[nearest_gt, np.arange(len(p))].sum())
        grad += 2.0 * (p - g[nearest_gt])
    return LossReport(value, {"pred_params": grad})


def segmentation_loss(masks: ProbMaskStack, gt: LabelMap,
                      printed_form: bool = False) -> LossReport:
    """Softmax cross entropy against the ground-truth plane ids.

    Default: L = -sum_p log M_{gt(p)}, gradient w.r.t. pre-softmax logits.
    printed_form evaluates sum_p log(1 - M_{gt(p)}) instead.
    """
    if gt.labels.max(initial=0) >= masks.channels:
        raise ValueError("ground-truth label out of range")
    probs = np.clip(masks.probs, 1e-8, 1.0)
    picked = np.take_along_axis(probs, gt.labels[..., None], axis=2)[..., 0]
    n_px = gt.labels.size
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, gt.labels[..., None], 1.0, axis=2)
    if printed_form:
        q = np.clip(1.0 - picked, 1e-8, 1.0)
        value = float(np.log(q).sum())
        # dL/dM_g = -1/(1-M_g); chain through softmax:
        # dL/dz_c = dL/dM_g * M_g * (1[c=g] - M_c)
        coef = (-1.0 / q) * picked
        grad = coef[..., None] * (onehot - probs)
    else:
        value = float(-np.log(picked).sum())
        grad = probs - onehot
    return LossReport(value, {"logits": grad},
                      extras={"mean_per_pixel": value / n_px})


def _plane_depth_grids(planes: PlaneSet, intr: CameraIntrinsics):
    """Per-plane depth grids, validity masks, and d(depth)/d(param) grids.

    With P the raw parameter and r the pixel ray, z = (P.P)/(P.r), so
    dz/dP = (2 (P.r) P - (P.P) r) / (P.r)^2.
    """
    rays = intr.ray_grid()
    depths, valids, grads = [], [], []
    for plane in planes.planes:
        P = plane.param
        pr = rays @ P
        pp = float(P @ P)
        valid = pr / np.sqrt(pp) > EPS_RAY
        safe = np.where(valid, pr, 1.0)
        z = np.where(valid, pp / safe, 0.0)
        dz = (2.0 * safe[..., None] * P[None, None, :] - pp * rays) / (safe ** 2)[..., None]
        dz[~valid] = 0.0
        depths.append(z)
        valids.append(valid)
        grads.append(dz)
    return depths, valids, grads


def weighted_depth_loss(masks: ProbMaskStack | np.ndarray, planes: PlaneSet,
                        nonplanar: DepthMap, gt: DepthMap,
                        intr: CameraIntrinsics) -> LossReport:
    """Probability-weighted sum of squared depth errors over the K plane
    channels and the non-planar channel.

    Pixels a plane does not project onto contribute a fixed clamped residual
    (so mask gradients stay finite while plane gradients vanish there);
    pixels invalid in the ground truth are skipped entirely. `masks` may be a
    raw (H, W, K+1) array, e.g. for finite-difference probes off the simplex.
    """
    K = len(planes)
    m = masks.probs if isinstance(masks, ProbMaskStack) else np.asarray(masks, dtype=float)
    if m.shape[2] != K + 1:
        raise ValueError("mask stack must have K+1 channels")
    gt_valid = gt.valid
    gt_vals = gt.values
    depths, valids, dz = _plane_depth_grids(planes, intr)

    value = 0.0
    grad_planes = np.zeros((K, 3))
    grad_masks = np.zeros_like(m)
    for i in range(K):
        res = np.where(valids[i], depths[i] - gt_vals, UNDEFINED_DEPTH_RESIDUAL)
        sq = res ** 2
        w = m[..., i] * gt_valid
        value += float((w * sq).sum())
        grad_masks[..., i] = np.where(gt_valid, sq, 0.0)
        coef = (2.0 * w * res * valids[i])[..., None]
        grad_planes[i] = (coef * dz[i]).sum(axis=(0, 1))
    res_np = nonplanar.values - gt_vals
    w_np = m[..., K] * gt_valid
    value += float((w_np * res_np ** 2).sum())
    grad_masks[..., K] = np.where(gt_valid, res_np ** 2, 0.0)
    grad_nonplanar = 2.0 * w_np * res_np

    n_valid = max(int(gt_valid.sum()), 1)
    return LossReport(value,
                      {"plane_params": grad_planes,
                       "masks": grad_masks,
                       "nonplanar": grad_nonplanar},
                      extras={"mean_per_pixel": value / n_valid})


def refine_planes(init: PlaneSet, masks: ProbMaskStack, nonplanar: DepthMap,
                  gt: DepthMap, intr: CameraIntrinsics,
                  steps: int = 100, step_size: float = 1e-3) -> PlaneSet:
    """Fixed-step gradient descent on the weighted depth loss over plane
    parameters only, with step halving (up to 20 times) on any increase."""
    params = init.params().copy()

    def loss_and_grad(p):
        ps = PlaneSet([Plane(row) for row in p], init.capacity)
        rep = weighted_depth_loss(masks, ps, nonplanar, gt, intr)
        return rep.value, rep.gradients["plane_params"]

    value, grad = loss_and_grad(params)
    for _ in range(steps):
        step = step_size
        for _ in range(20):
            cand = params - step * grad
            if np.min(np.linalg.norm(cand, axis=1)) <= 1e-4:
                step *= 0.5
                continue
            cand_value, cand_grad = loss_and_grad(cand)
            if cand_value <= value:
                params, value, grad = cand, cand_value, cand_grad
                break
            step *= 0.5
        if np.max(np.abs(grad)) < 1e-12:
            break
    return PlaneSet([Plane(row) for row in params], init.capacity)
