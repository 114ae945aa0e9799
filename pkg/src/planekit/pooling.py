"""Instance plane soft-pooling and final-output assembly.

An instance's plane is the soft-mask-weighted mean of the per-pixel plane
vectors inside its thresholded (binary) region; areas without an instance
keep the raw per-pixel prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInstanceError, InvalidInputError
from .geometry import PlaneParams

DEFAULT_MASK_THRESHOLD = 0.5
DEFAULT_SCORE_MIN = 0.3


@dataclass
class InstancePrediction:
    soft_mask: np.ndarray          # (H, W) in [0, 1]
    score: float
    class_id: int
    pooled_plane: PlaneParams | None = None

    def __post_init__(self):
        if np.any(self.soft_mask < 0.0) or np.any(self.soft_mask > 1.0):
            raise InvalidInputError("soft mask values must lie in [0, 1]")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError("score must lie in [0, 1]")


def binarize(soft_mask: np.ndarray, threshold: float = DEFAULT_MASK_THRESHOLD
             ) -> np.ndarray:
    """Binary region of a soft mask: pixels with m* > threshold."""
    if not 0.0 < threshold < 1.0:
        raise InvalidInputError("threshold must be in (0, 1)")
    return soft_mask > threshold


def soft_pool(plane_map: np.ndarray, soft_mask: np.ndarray,
              threshold: float = DEFAULT_MASK_THRESHOLD) -> PlaneParams:
    """Soft-mask-weighted mean plane over the binarized region.

    The region is binary (m* > threshold) but the weights inside it stay
    soft. Raises EmptyInstanceError when the region is empty.
    """
    if plane_map.shape[:2] != soft_mask.shape:
        raise InvalidInputError("plane map and mask sizes differ")
    region = binarize(soft_mask, threshold)
    if not region.any():
        raise EmptyInstanceError("binarized instance region is empty")
    w = soft_mask[region]
    total = w.sum()
    if total <= 0.0:
        raise EmptyInstanceError("soft-mask weight sums to zero over the region")
    pooled = (w[:, None] * plane_map[region]).sum(axis=0) / total
    return PlaneParams(pooled)


def assemble_output(instances: list[InstancePrediction], per_pixel: np.ndarray,
                    threshold: float = DEFAULT_MASK_THRESHOLD,
                    score_min: float = DEFAULT_SCORE_MIN
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Paint pooled instance planes over the per-pixel prediction.

    Instances must arrive sorted by score descending; they are painted in
    that order and a later (lower-score) instance never overwrites pixels
    an earlier one owns. Uncovered pixels keep the per-pixel plane vectors.
    Returns (final plane map, instance map); the instance map holds each
    pixel's owner as the 1-based index into ``instances`` (0 = unowned).
    Instances below score_min or with an empty region are skipped.
    """
    scores = [inst.score for inst in instances]
    if any(a < b for a, b in zip(scores, scores[1:])):
        raise InvalidInputError("instances must be sorted by score descending")
    final = per_pixel.copy()
    owner = np.zeros(per_pixel.shape[:2], dtype=np.int32)
    for idx, inst in enumerate(instances, start=1):
        if inst.score < score_min:
            continue
        try:
            pooled = soft_pool(per_pixel, inst.soft_mask, threshold)
        except EmptyInstanceError:
            continue
        inst.pooled_plane = pooled
        region = binarize(inst.soft_mask, threshold) & (owner == 0)
        final[region] = pooled.p
        owner[region] = idx
    return final, owner
