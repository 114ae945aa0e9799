"""Evaluation metrics: depth error statistics, instance AP/mAP, and the
per-pixel depth recall curve."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyMetricError, InvalidInputError
from .geometry import CameraIntrinsics, PlaneParams, induced_depth_map

DEFAULT_IOU_MIN = 0.5


@dataclass(frozen=True)
class DepthMetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    log_rmse: float
    delta1: float
    delta2: float
    delta3: float


class Match(NamedTuple):
    pred_id: int
    gt_id: int
    iou: float


@dataclass(frozen=True)
class DetectionReport:
    ap: float
    map: float
    per_class_ap: dict[int, float]
    matches: list[Match]


@dataclass(frozen=True)
class RecallCurve:
    thresholds: np.ndarray
    recall: np.ndarray


def depth_metrics(pred_depth: np.ndarray, gt_depth: np.ndarray,
                  valid=None) -> DepthMetricsReport:
    """Standard monocular-depth error statistics over the valid pixels."""
    if pred_depth.shape != gt_depth.shape:
        raise InvalidInputError("depth map shapes differ")
    m = np.ones(gt_depth.shape, dtype=bool) if valid is None else valid.astype(bool)
    m = m & (gt_depth > 0.0) & (pred_depth > 0.0)
    if not m.any():
        raise EmptyMetricError("no valid pixels for depth metrics")
    gt = gt_depth[m]
    pred = pred_depth[m]
    diff = gt - pred
    ratio = np.maximum(gt / pred, pred / gt)
    return DepthMetricsReport(
        abs_rel=float(np.mean(np.abs(diff) / gt)),
        sq_rel=float(np.mean(diff ** 2 / gt)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        log_rmse=float(np.sqrt(np.mean((np.log(gt) - np.log(pred)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)))


def _region_sizes(label_map: np.ndarray) -> dict[int, int]:
    ids, counts = np.unique(label_map, return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts) if i != 0}


def _intersections(pred_map: np.ndarray, gt_map: np.ndarray) -> dict[tuple[int, int], int]:
    both = (pred_map != 0) & (gt_map != 0)
    if not both.any():
        return {}
    pairs = np.stack([pred_map[both], gt_map[both]], axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    return {(int(p), int(g)): int(c) for (p, g), c in zip(uniq, counts)}


def match_instances(pred_map: np.ndarray, pred_scores: dict[int, float],
                    gt_map: np.ndarray, iou_min: float = DEFAULT_IOU_MIN,
                    pred_classes: dict[int, int] | None = None,
                    gt_classes: dict[int, int] | None = None) -> list[Match]:
    """Greedy score-ordered matching of predicted to ground-truth regions.

    Each prediction claims the unclaimed GT instance with the highest mask
    IoU, provided IoU >= iou_min; IoU ties break to the lower GT id. When
    class tables are given, a prediction may only claim a GT of its class.
    """
    if pred_map.shape != gt_map.shape:
        raise InvalidInputError("instance map shapes differ")
    pred_sizes = _region_sizes(pred_map)
    gt_sizes = _region_sizes(gt_map)
    inter = _intersections(pred_map, gt_map)

    order = sorted(pred_sizes, key=lambda pid: (-pred_scores.get(pid, 0.0), pid))
    claimed: set[int] = set()
    matches: list[Match] = []
    for pid in order:
        best_gid, best_iou = None, 0.0
        for gid in sorted(gt_sizes):
            if gid in claimed:
                continue
            if pred_classes is not None and gt_classes is not None \
                    and pred_classes.get(pid) != gt_classes.get(gid):
                continue
            i = inter.get((pid, gid), 0)
            if i == 0:
                continue
            iou = i / (pred_sizes[pid] + gt_sizes[gid] - i)
            if iou > best_iou:
                best_gid, best_iou = gid, iou
        if best_gid is not None and best_iou >= iou_min:
            claimed.add(best_gid)
            matches.append(Match(pid, best_gid, best_iou))
    return matches


def average_precision(matches: list[Match], n_gt: int,
                      scores: dict[int, float]) -> float:
    """Area under the precision-recall curve, all-point interpolation.

    ``scores`` lists every prediction (matched or not); predictions are
    ranked by descending score with id as the deterministic tie-break.
    """
    if n_gt < 1:
        raise InvalidInputError("need at least one ground-truth instance")
    matched = {m.pred_id for m in matches}
    order = sorted(scores, key=lambda pid: (-scores[pid], pid))
    if not order:
        return 0.0
    tp = np.cumsum([1.0 if pid in matched else 0.0 for pid in order])
    fp = np.cumsum([0.0 if pid in matched else 1.0 for pid in order])
    recall = tp / n_gt
    precision = tp / (tp + fp)

    # Precision envelope (max precision at recall >= r), integrated over recall.
    ap = 0.0
    prev_r = 0.0
    for i in range(len(order)):
        r = recall[i]
        if r > prev_r:
            ap += (r - prev_r) * precision[i:].max()
            prev_r = r
    return float(ap)


def mean_ap(pred_map: np.ndarray, pred_scores: dict[int, float],
            pred_classes: dict[int, int], gt_map: np.ndarray,
            gt_classes: dict[int, int], iou_min: float = DEFAULT_IOU_MIN
            ) -> tuple[float, dict[int, float]]:
    """Mean of per-class AP over the classes with at least one GT instance.

    Within each class, a prediction can only match a GT of the same class.
    """
    gt_ids = _region_sizes(gt_map)
    class_gts: dict[int, list[int]] = {}
    for gid in gt_ids:
        class_gts.setdefault(gt_classes[gid], []).append(gid)
    if not class_gts:
        raise EmptyMetricError("no ground-truth instances present")

    per_class: dict[int, float] = {}
    for cls, gids in sorted(class_gts.items()):
        cls_pred = {pid: s for pid, s in pred_scores.items()
                    if pred_classes.get(pid) == cls}
        cls_pred_map = np.where(np.isin(pred_map, list(cls_pred)), pred_map, 0)
        cls_gt_map = np.where(np.isin(gt_map, gids), gt_map, 0)
        m = match_instances(cls_pred_map, cls_pred, cls_gt_map, iou_min)
        per_class[cls] = average_precision(m, len(gids), cls_pred)
    return float(np.mean(list(per_class.values()))), per_class


def detection_report(pred_map: np.ndarray, pred_scores: dict[int, float],
                     pred_classes: dict[int, int], gt_map: np.ndarray,
                     gt_classes: dict[int, int],
                     iou_min: float = DEFAULT_IOU_MIN) -> DetectionReport:
    """Class-agnostic AP plus semantics-aware mAP in one report."""
    matches = match_instances(pred_map, pred_scores, gt_map, iou_min)
    n_gt = len(_region_sizes(gt_map))
    if n_gt == 0:
        raise EmptyMetricError("no ground-truth instances present")
    ap = average_precision(matches, n_gt, pred_scores)
    mapv, per_class = mean_ap(pred_map, pred_scores, pred_classes,
                              gt_map, gt_classes, iou_min)
    return DetectionReport(ap=ap, map=mapv, per_class_ap=per_class,
                           matches=matches)


def pixel_recall_curve(pred_map: np.ndarray, pred_planes: dict[int, PlaneParams],
                       pred_scores: dict[int, float], gt_map: np.ndarray,
                       gt_depth: np.ndarray, camera: CameraIntrinsics,
                       thresholds, iou_min: float = DEFAULT_IOU_MIN
                       ) -> RecallCurve:
    """Fraction of GT planar pixels explained within each depth threshold.

    A GT pixel counts at threshold tau when its instance is matched (mask
    IoU >= iou_min) and the matched prediction's plane-induced depth is
    within tau meters of the GT depth at that pixel.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.ndim != 1 or np.any(np.diff(thresholds) < 0):
        raise InvalidInputError("thresholds must be sorted ascending")
    total = int((gt_map != 0).sum())
    if total == 0:
        raise EmptyMetricError("no ground-truth planar pixels")

    matches = match_instances(pred_map, pred_scores, gt_map, iou_min)
    counts = np.zeros(len(thresholds), dtype=np.int64)
    for m in matches:
        region = gt_map == m.gt_id
        plane = pred_planes[m.pred_id]
        plane_field = np.broadcast_to(plane.p, gt_depth.shape + (3,))
        induced, ok = induced_depth_map(camera, plane_field, region)
        err = np.abs(gt_depth - induced)
        usable = region & ok
        for k, tau in enumerate(thresholds):
            counts[k] += int((usable & (err <= tau)).sum())
    return RecallCurve(thresholds=thresholds, recall=counts / total)
