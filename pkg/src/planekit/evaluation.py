"""Plane-recall metrics and per-pixel depth accuracy statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyRegion, NonPositiveDepth
from .geometry import CameraIntrinsics, DepthMap, render_plane_depthmap
from .losses import PlaneSet
from .masks import LabelMap

DEFAULT_THRESHOLDS = np.round(np.arange(0.0, 0.601, 0.05), 10)
IOU_GATE = 0.5
EDGE_BAND_PX = 5


@dataclass(frozen=True)
class PlaneMatch:
    gt_index: int
    pred_index: int
    iou: float
    mean_depth_diff: float
    intersection_pixels: int


def match_planes(gt: tuple[LabelMap, PlaneSet], pred: tuple[LabelMap, PlaneSet],
                 intr: CameraIntrinsics,
                 one_to_one: bool = True) -> list[PlaneMatch]:
    """Match ground-truth planes to predictions with IOU > 0.5.

    GT planes are processed by descending mask area; each takes its
    highest-IOU candidate (ties to the lowest prediction index). In the
    default one-to-one mode a prediction can serve only one GT plane.
    The mean depth difference is computed from plane-induced depths over
    the mask intersection.
    """
    gt_labels, gt_planes = gt
    pred_labels, pred_planes = pred
    if gt_labels.labels.shape != pred_labels.labels.shape:
        raise ValueError("label map sizes differ")

    gt_masks = [gt_labels.labels == i for i in range(len(gt_planes))]
    pred_masks = [pred_labels.labels == j for j in range(len(pred_planes))]
    gt_areas = [int(m.sum()) for m in gt_masks]
    order = sorted(range(len(gt_planes)), key=lambda i: (-gt_areas[i], i))

    depth_cache: dict[tuple[str, int], DepthMap] = {}

    def plane_dm(side, idx, plane):
        key = (side, idx)
        if key not in depth_cache:
            depth_cache[key] = render_plane_depthmap(plane, intr)
        return depth_cache[key]

    used_pred: set[int] = set()
    matches: list[PlaneMatch] = []
    for i in order:
        if gt_areas[i] == 0:
            continue
        best_j, best_iou = -1, IOU_GATE
        for j in range(len(pred_planes)):
            if one_to_one and j in used_pred:
                continue
            inter = int((gt_masks[i] & pred_masks[j]).sum())
            union = gt_areas[i] + int(pred_masks[j].sum()) - inter
            iou = inter / union if union else 0.0
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j < 0:
            continue
        inter_mask = gt_masks[i] & pred_masks[best_j]
        dg = plane_dm("gt", i, gt_planes.planes[i])
        dp = plane_dm("pred", best_j, pred_planes.planes[best_j])
        both = inter_mask & dg.valid & dp.valid
        if both.any():
            diff = float(np.abs(dg.values[both] - dp.values[both]).mean())
        else:
            diff = float("inf")
        matches.append(PlaneMatch(i, best_j, best_iou, diff, int(inter_mask.sum())))
        used_pred.add(best_j)
    return matches


@dataclass(frozen=True)
class RecallCurve:
    thresholds: np.ndarray
    plane_recall: np.ndarray
    pixel_recall: np.ndarray


def recall_curves(matches: list[PlaneMatch], num_gt_planes: int,
                  total_gt_planar_pixels: int,
                  thresholds: np.ndarray = DEFAULT_THRESHOLDS) -> RecallCurve:
    """Plane/pixel recall as a function of the mean-depth-difference gate
    (inclusive comparison, so exact matches count at t = 0)."""
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be ascending")
    plane = np.zeros(len(thresholds))
    pixel = np.zeros(len(thresholds))
    for k, t in enumerate(thresholds):
        ok = [m for m in matches if m.mean_depth_diff <= t]
        plane[k] = len(ok) / num_gt_planes if num_gt_planes else 0.0
        inter = sum(m.intersection_pixels for m in ok)
        pixel[k] = inter / total_gt_planar_pixels if total_gt_planar_pixels else 0.0
    return RecallCurve(thresholds, plane, pixel)


def aggregate_recall(per_image: list[tuple[list[PlaneMatch], int, int]],
                     thresholds: np.ndarray = DEFAULT_THRESHOLDS,
                     macro: bool = False) -> RecallCurve:
    """Dataset recall. Micro (default) accumulates numerators/denominators
    across images; macro averages per-image curves."""
    thresholds = np.asarray(thresholds, dtype=float)
    if macro:
        curves = [recall_curves(m, ngt, npx, thresholds) for m, ngt, npx in per_image]
        return RecallCurve(thresholds,
                           np.mean([c.plane_recall for c in curves], axis=0),
                           np.mean([c.pixel_recall for c in curves], axis=0))
    plane_num = np.zeros(len(thresholds))
    pixel_num = np.zeros(len(thresholds))
    gt_total = sum(ngt for _, ngt, _ in per_image)
    px_total = sum(npx for _, _, npx in per_image)
    for matches, _, _ in per_image:
        for k, t in enumerate(thresholds):
            ok = [m for m in matches if m.mean_depth_diff <= t]
            plane_num[k] += len(ok)
            pixel_num[k] += sum(m.intersection_pixels for m in ok)
    return RecallCurve(thresholds,
                       plane_num / gt_total if gt_total else plane_num,
                       pixel_num / px_total if px_total else pixel_num)


@dataclass(frozen=True)
class DepthStats:
    rel: float
    rel_sqr: float
    log10: float
    rmse_lin: float
    rmse_log: float
    delta_1: float
    delta_2: float
    delta_3: float

    def as_dict(self) -> dict[str, float]:
        return {"rel": self.rel, "rel_sqr": self.rel_sqr, "log10": self.log10,
                "rmse_lin": self.rmse_lin, "rmse_log": self.rmse_log,
                "delta_1": self.delta_1, "delta_2": self.delta_2,
                "delta_3": self.delta_3}


def depth_stats(pred: DepthMap, gt: DepthMap,
                region: np.ndarray | None = None) -> DepthStats:
    """Eight standard depth-accuracy statistics over jointly valid pixels,
    optionally restricted to a boolean region mask."""
    mask = pred.valid & gt.valid
    if region is not None:
        mask = mask & region
    if not mask.any():
        raise EmptyRegion("no valid pixels in the evaluation region")
    d = pred.values[mask]
    g = gt.values[mask]
    if np.any(d <= 0) or np.any(g <= 0):
        raise NonPositiveDepth("depth statistics require positive depths")
    diff = d - g
    ratio = np.maximum(d / g, g / d)
    return DepthStats(
        rel=float(np.mean(np.abs(diff) / g)),
        rel_sqr=float(np.mean(diff ** 2 / g)),
        log10=float(np.mean(np.abs(np.log10(d) - np.log10(g)))),
        rmse_lin=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(d) - np.log(g)) ** 2))),
        delta_1=float(100.0 * np.mean(ratio < 1.25)),
        delta_2=float(100.0 * np.mean(ratio < 1.25 ** 2)),
        delta_3=float(100.0 * np.mean(ratio < 1.25 ** 3)),
    )


def planar_region_stats(pred: DepthMap, gt: DepthMap,
                        gt_labels: LabelMap) -> DepthStats:
    """Depth statistics restricted to ground-truth planar pixels."""
    return depth_stats(pred, gt, region=gt_labels.planar_mask())


def edge_region_stats(pred: DepthMap, gt: DepthMap, gt_labels: LabelMap,
                      band_px: int = EDGE_BAND_PX) -> DepthStats:
    """Depth statistics within `band_px` pixels of a label boundary."""
    lab = gt_labels.labels
    boundary = np.zeros(lab.shape, dtype=bool)
    boundary[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    boundary[:, :-1] |= lab[:, 1:] != lab[:, :-1]
    boundary[1:, :] |= lab[1:, :] != lab[:-1, :]
    boundary[:-1, :] |= lab[1:, :] != lab[:-1, :]
    band = ndimage.distance_transform_edt(~boundary) <= band_px
    return depth_stats(pred, gt, region=band)
