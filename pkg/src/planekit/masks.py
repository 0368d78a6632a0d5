"""Per-pixel label maps and probabilistic mask stacks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LabelMap:
    """Integer plane-id per pixel; the value `num_planes` means non-planar."""

    labels: np.ndarray
    num_planes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or not np.issubdtype(lab.dtype, np.integer):
            raise ValueError("labels must be a 2-D integer array")
        if lab.size and (lab.min() < 0 or lab.max() > self.num_planes):
            raise ValueError("labels out of range")
        object.__setattr__(self, "labels", lab.astype(np.int32))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def planar_mask(self) -> np.ndarray:
        return self.labels < self.num_planes


@dataclass(frozen=True)
class ProbMaskStack:
    """H x W x (K+1) per-pixel probability distributions (last channel non-planar)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 3:
            raise ValueError("probs must be H x W x C")
        if p.size and (p.min() < 0 or np.max(np.abs(p.sum(axis=2) - 1.0)) > 1e-6):
            raise ValueError("per-pixel probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def channels(self) -> int:
        return self.probs.shape[2]


def masks_to_labels(masks: ProbMaskStack) -> LabelMap:
    """Winner-takes-all labeling; ties break to the lowest channel index."""
    return LabelMap(np.argmax(masks.probs, axis=2).astype(np.int32),
                    masks.channels - 1)


def labels_to_masks(labels: LabelMap) -> ProbMaskStack:
    """One-hot mask stack for a discrete labeling."""
    probs = np.zeros((labels.height, labels.width, labels.num_planes + 1))
    np.put_along_axis(probs, labels.labels[..., None], 1.0, axis=2)
    return ProbMaskStack(probs)
