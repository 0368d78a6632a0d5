"""Central finite-difference validation of the analytic loss gradients.

Instance generators steer clear of the measure-zero sets where the losses
are non-differentiable (Chamfer argmin ties, plane/ray grazing incidence).
"""

from __future__ import annotations

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, Plane
from .losses import (PlaneSet, chamfer_plane_loss, segmentation_loss,
                     weighted_depth_loss)
from .masks import LabelMap, ProbMaskStack

FD_H = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   floor: float = 1e-3) -> float:
    """Max elementwise relative error with a magnitude floor so that
    near-zero components do not amplify finite-difference noise."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def central_diff(fn, x: np.ndarray, h: float = FD_H) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.ravel()
    g = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad


def _random_params(rng, count):
    """Plane parameter rows with |P| comfortably above the degeneracy floor."""
    while True:
        p = rng.uniform(-2.0, 2.0, size=(count, 3))
        if np.all(np.linalg.norm(p, axis=1) > 0.3):
            return p


def check_chamfer(rng: np.random.Generator, symmetric: bool = False) -> float:
    while True:
        gt = _random_params(rng, rng.integers(1, 5))
        pred = _random_params(rng, rng.integers(1, 6))
        d2 = ((gt[:, None, :] - pred[None, :, :]) ** 2).sum(axis=2)
        gaps = np.partition(d2, 1, axis=1) if d2.shape[1] > 1 else None
        if gaps is None or np.all(gaps[:, 1] - gaps[:, 0] > 1e-3):
            if symmetric and d2.shape[0] > 1:
                col = np.partition(d2, 1, axis=0)
                if not np.all(col[1, :] - col[0, :] > 1e-3):
                    continue
            break
    gt_set = PlaneSet([Plane(r) for r in gt], 10)

    def value(p):
        return chamfer_plane_loss(gt_set, PlaneSet([Plane(r) for r in p], 10),
                                  symmetric=symmetric).value

    analytic = chamfer_plane_loss(gt_set, PlaneSet([Plane(r) for r in pred], 10),
                                  symmetric=symmetric).gradients["pred_params"]
    return relative_error(analytic, central_diff(value, pred))


def _softmax(z):
    e = np.exp(z - z.max(axis=2, keepdims=True))
    return e / e.sum(axis=2, keepdims=True)


def check_segmentation(rng: np.random.Generator, printed_form: bool) -> float:
    H, W, C = 4, 5, 4
    logits = rng.uniform(-1.5, 1.5, size=(H, W, C))
    gt = LabelMap(rng.integers(0, C, size=(H, W)).astype(np.int32), C - 1)

    def value(z):
        return segmentation_loss(ProbMaskStack(_softmax(z)), gt,
                                  printed_form=printed_form).value

    analytic = segmentation_loss(ProbMaskStack(_softmax(logits)), gt,
                                 printed_form=printed_form).gradients["logits"]
    return relative_error(analytic, central_diff(value, logits))


def _depth_instance(rng: np.random.Generator):
    intr = CameraIntrinsics(fx=20.0, fy=20.0, cx=4.0, cy=3.0, width=8, height=6)
    K = 2
    # mostly-frontal planes so every pixel ray hits with a healthy margin
    params = []
    for _ in range(K):
        n = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 1.0])
        n /= np.linalg.norm(n)
        params.append(n * rng.uniform(1.5, 3.5))
    planes = PlaneSet([Plane(p) for p in params], 10)
    raw = rng.uniform(0.2, 1.0, size=(6, 8, K + 1))
    masks = raw / raw.sum(axis=2, keepdims=True)
    nonplanar = DepthMap(rng.uniform(1.0, 4.0, size=(6, 8)),
                         np.ones((6, 8), dtype=bool))
    gt_valid = rng.random((6, 8)) > 0.1
    gt_valid.flat[0] = True
    gt = DepthMap(np.where(gt_valid, rng.uniform(1.0, 4.0, size=(6, 8)), 0.0),
                  gt_valid)
    return intr, planes, masks, nonplanar, gt


def check_weighted_depth(rng: np.random.Generator) -> dict[str, float]:
    intr, planes, masks, nonplanar, gt = _depth_instance(rng)
    rep = weighted_depth_loss(masks, planes, nonplanar, gt, intr)

    def value_planes(p):
        return weighted_depth_loss(masks, PlaneSet([Plane(r) for r in p], 10),
                                   nonplanar, gt, intr).value

    def value_masks(m):
        return weighted_depth_loss(m, planes, nonplanar, gt, intr).value

    def value_nonplanar(v):
        return weighted_depth_loss(masks, planes,
                                   DepthMap(v, nonplanar.valid), gt, intr).value

    out = {
        "plane_params": relative_error(
            rep.gradients["plane_params"],
            central_diff(value_planes, planes.params().copy())),
        "masks": relative_error(rep.gradients["masks"],
                                central_diff(value_masks, masks.copy())),
        "nonplanar": relative_error(
            rep.gradients["nonplanar"],
            central_diff(value_nonplanar, nonplanar.values.copy())),
    }
    return out


def run_grad_checks(trials: int = 20, seed: int = 0) -> dict[str, float]:
    """Worst relative error per gradient over `trials` random instances."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def update(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(trials):
        update("chamfer", check_chamfer(rng))
        update("chamfer_symmetric", check_chamfer(rng, symmetric=True))
        update("segmentation_ce", check_segmentation(rng, printed_form=False))
        update("segmentation_printed", check_segmentation(rng, printed_form=True))
        for name, err in check_weighted_depth(rng).items():
            update(f"weighted_depth_{name}", err)
    return worst
