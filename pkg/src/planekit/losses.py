"""Training losses over per-pixel plane maps, masks, and category grids.

Every map-level loss takes an optional validity mask, averages over the
valid pixels it can use, and returns an analytic gradient with respect to
its prediction. ``finite_diff_check`` verifies any of them against central
differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import EmptyLossError, InvalidInputError
from .geometry import PLANE_NORM_EPS, RAY_EPS, CameraIntrinsics

SURFACE_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Weights and switches for the combined loss."""

    w_mask: float = 3.0
    use_plane: bool = True
    use_surface: bool = True
    use_geom: bool = True
    use_depth: bool = True
    gradient_weighting: bool = False
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    l1_mode: str = "elementwise"        # or "euclidean"
    edge_weight_mode: str = "literal"   # or "plus_one"
    ray_eps: float = RAY_EPS            # degenerate-ray exclusion threshold

    def __post_init__(self):
        if self.w_mask <= 0:
            raise InvalidInputError("w_mask must be positive")
        if not 0.0 < self.focal_alpha < 1.0:
            raise InvalidInputError("focal alpha must be in (0, 1)")
        if self.focal_gamma < 0.0:
            raise InvalidInputError("focal gamma must be >= 0")
        if self.l1_mode not in ("elementwise", "euclidean"):
            raise InvalidInputError(f"unknown l1_mode: {self.l1_mode!r}")
        if self.edge_weight_mode not in ("literal", "plus_one"):
            raise InvalidInputError(f"unknown edge_weight_mode: {self.edge_weight_mode!r}")
        if self.ray_eps <= 0:
            raise InvalidInputError("ray_eps must be positive")


@dataclass
class LossReport:
    """Per-term loss values; the combined total follows the paper's weighting."""

    l_plane: float = 0.0
    l_surface: float = 0.0
    l_geom: float = 0.0
    l_depth: float = 0.0
    l_p: float = 0.0
    l_mask: float = 0.0
    l_category: float = 0.0
    l_total: float = 0.0
    valid_pixel_count: int = 0


@dataclass
class GradBuffer:
    """Gradients with respect to the predicted quantities."""

    d_plane: np.ndarray | None = None   # (H, W, 3)
    d_mask: np.ndarray | None = None    # (H, W)
    d_scores: np.ndarray | None = None  # matches CategoryGrid.scores


@dataclass
class CategoryGrid:
    """SOLO-style category scores: (S, S, n_classes) post-sigmoid scores and
    (S, S) integer targets with -1 marking cells without an instance."""

    scores: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.scores.ndim != 3 or self.targets.shape != self.scores.shape[:2]:
            raise InvalidInputError("scores must be (S, S, C) with (S, S) targets")
        if np.any(self.scores < 0.0) or np.any(self.scores > 1.0):
            raise InvalidInputError("scores must lie in [0, 1]")
        n_classes = self.scores.shape[2]
        if np.any(self.targets < -1) or np.any(self.targets >= n_classes):
            raise InvalidInputError("targets must be -1 or a valid class id")


class LossTerm(NamedTuple):
    value: float
    grad: np.ndarray
    n_valid: int


def _base_mask(pred, gt, valid):
    if pred.shape != gt.shape:
        raise InvalidInputError("prediction and ground truth shapes differ")
    if valid is None:
        return np.ones(pred.shape[:2], dtype=bool)
    if valid.shape != pred.shape[:2]:
        raise InvalidInputError("validity mask shape mismatch")
    return valid.astype(bool)


def l_plane(pred: np.ndarray, gt: np.ndarray, valid=None,
            mode: str = "elementwise") -> LossTerm:
    """Mean L1 distance between predicted and ground-truth plane vectors.

    The default is the element-wise L1 norm (sum of absolute component
    differences); mode="euclidean" uses the per-pixel 2-norm instead.
    """
    m = _base_mask(pred, gt, valid)
    n = int(m.sum())
    if n == 0:
        raise EmptyLossError("no valid pixels for l_plane")
    diff = pred - gt
    grad = np.zeros_like(pred)
    if mode == "elementwise":
        value = float(np.abs(diff[m]).sum() / n)
        grad[m] = np.sign(diff[m]) / n
    elif mode == "euclidean":
        norms = np.linalg.norm(diff, axis=-1)
        value = float(norms[m].sum() / n)
        safe = m & (norms > 0)
        grad[safe] = diff[safe] / (norms[safe][:, None] * n)
    else:
        raise InvalidInputError(f"unknown mode: {mode!r}")
    return LossTerm(value, grad, n)


def l_surface(pred: np.ndarray, gt: np.ndarray, valid=None) -> LossTerm:
    """Mean (1 - cosine similarity) of plane vectors; scale invariant.

    Pixels whose predicted vector is near zero are excluded from the mean.
    """
    m = _base_mask(pred, gt, valid)
    pn = np.linalg.norm(pred, axis=-1)
    gn = np.linalg.norm(gt, axis=-1)
    ok = m & (pn > SURFACE_EPS) & (gn > SURFACE_EPS)
    n = int(ok.sum())
    if n == 0:
        raise EmptyLossError("no valid pixels for l_surface")
    dot = np.einsum("...c,...c->...", pred, gt)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = dot / (pn * gn)
    value = float((1.0 - cos[ok]).sum() / n)
    grad = np.zeros_like(pred)
    grad[ok] = -(gt[ok] / (pn[ok] * gn[ok])[:, None]
                 - (cos[ok] / (pn[ok] ** 2))[:, None] * pred[ok]) / n
    return LossTerm(value, grad, n)


def _edge_weight(edge_weights, shape, mode):
    if edge_weights is None:
        return np.ones(shape)
    if edge_weights.shape != shape:
        raise InvalidInputError("edge-weight map shape mismatch")
    if mode == "plus_one":
        return 1.0 + edge_weights
    return edge_weights


def _depth_geom_mask(pred, gt_depth, valid, xhat, yhat, ray_eps):
    m = _base_mask(pred, np.broadcast_to(gt_depth[..., None], pred.shape), valid)
    pn = np.linalg.norm(pred, axis=-1)
    pr = pred[..., 0] * xhat + pred[..., 1] * yhat + pred[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        unit_denom = pr / pn
    ok = m & (gt_depth > 0.0) & (pn > PLANE_NORM_EPS) & (np.abs(unit_denom) >= ray_eps)
    return ok, pn, pr


def l_depth(pred: np.ndarray, gt_depth: np.ndarray, camera: CameraIntrinsics,
            valid=None, edge_weights=None, edge_mode: str = "literal",
            ray_eps: float = RAY_EPS, rays=None) -> LossTerm:
    """Mean |D - D*| with D* the plane-induced depth of the prediction.

    Degenerate rays (|n . K^-1 q| below ray_eps) and near-zero plane vectors
    are excluded. With edge_weights given, each pixel term is multiplied by
    its weight before the mean (the literal edge-weighting form). ``rays``
    optionally carries precomputed (xhat, yhat) pixel-ray slopes, letting
    callers evaluate stacked multi-view maps in one call.
    """
    xhat, yhat = camera.pixel_rays() if rays is None else rays
    ok, pn, pr = _depth_geom_mask(pred, gt_depth, valid, xhat, yhat, ray_eps)
    n = int(ok.sum())
    if n == 0:
        raise EmptyLossError("no valid pixels for l_depth")
    w = _edge_weight(edge_weights, gt_depth.shape, edge_mode)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_star = (pn * pn) / pr
    resid = gt_depth - d_star
    value = float((w[ok] * np.abs(resid[ok])).sum() / n)

    grad = np.zeros_like(pred)
    r = np.stack([xhat, yhat, np.ones_like(xhat)], axis=-1)
    coeff = (-np.sign(resid[ok]) * w[ok] / n)
    d_dstar = (2.0 * pred[ok] / pr[ok][:, None]
               - ((pn[ok] ** 2) / (pr[ok] ** 2))[:, None] * r[ok])
    grad[ok] = coeff[:, None] * d_dstar
    return LossTerm(value, grad, n)


def l_geom(pred: np.ndarray, gt_depth: np.ndarray, camera: CameraIntrinsics,
           valid=None, edge_weights=None, edge_mode: str = "literal",
           ray_eps: float = RAY_EPS, rays=None) -> LossTerm:
    """Mean |n . Q - d| over backprojected ground-truth points Q.

    Measures how far the true 3D point at each pixel lies from the predicted
    plane. Same exclusions and optional edge weighting as ``l_depth``.
    """
    xhat, yhat = camera.pixel_rays() if rays is None else rays
    ok, pn, _ = _depth_geom_mask(pred, gt_depth, valid, xhat, yhat, ray_eps)
    n = int(ok.sum())
    if n == 0:
        raise EmptyLossError("no valid pixels for l_geom")
    w = _edge_weight(edge_weights, gt_depth.shape, edge_mode)
    q = np.stack([gt_depth * xhat, gt_depth * yhat, gt_depth], axis=-1)
    pq = np.einsum("...c,...c->...", pred, q)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = pq / pn - pn
    value = float((w[ok] * np.abs(e[ok])).sum() / n)

    grad = np.zeros_like(pred)
    de = (q[ok] / pn[ok][:, None]
          - (pq[ok] / pn[ok] ** 3)[:, None] * pred[ok]
          - pred[ok] / pn[ok][:, None])
    grad[ok] = (np.sign(e[ok]) * w[ok] / n)[:, None] * de
    return LossTerm(value, grad, n)


def total_plane_loss(pred: np.ndarray, gt_plane: np.ndarray, gt_depth: np.ndarray,
                     camera: CameraIntrinsics, valid=None,
                     weights: LossWeights = LossWeights(),
                     edge_weights=None, rays=None) -> tuple[LossReport, GradBuffer]:
    """The plane-guidance loss: L_plane + L_surface + L_geom + L_depth.

    Edge weighting, when enabled, applies to the geom and depth terms only.
    Gradients of the enabled terms accumulate additively.
    """
    m = _base_mask(pred, gt_plane, valid)
    grad = np.zeros_like(pred)
    report = LossReport(valid_pixel_count=int(m.sum()))
    ew = edge_weights if weights.gradient_weighting else None
    if weights.use_plane:
        term = l_plane(pred, gt_plane, m, mode=weights.l1_mode)
        report.l_plane = term.value
        grad += term.grad
    if weights.use_surface:
        term = l_surface(pred, gt_plane, m)
        report.l_surface = term.value
        grad += term.grad
    if weights.use_geom:
        term = l_geom(pred, gt_depth, camera, m, ew, weights.edge_weight_mode,
                      weights.ray_eps, rays)
        report.l_geom = term.value
        grad += term.grad
    if weights.use_depth:
        term = l_depth(pred, gt_depth, camera, m, ew, weights.edge_weight_mode,
                       weights.ray_eps, rays)
        report.l_depth = term.value
        grad += term.grad
    report.l_p = report.l_plane + report.l_surface + report.l_geom + report.l_depth
    report.l_total = report.l_p
    return report, GradBuffer(d_plane=grad)


DICE_EPS = 1e-8


def dice_loss(pred_mask: np.ndarray, gt_mask: np.ndarray):
    """Dice loss 1 - 2 sum(m m*) / (sum m^2 + sum m*^2 + eps) and its gradient."""
    if pred_mask.shape != gt_mask.shape:
        raise InvalidInputError("mask shapes differ")
    s = float((pred_mask * gt_mask).sum())
    den = float((pred_mask ** 2).sum() + (gt_mask ** 2).sum() + DICE_EPS)
    value = 1.0 - 2.0 * s / den
    grad = -2.0 * (gt_mask * den - s * 2.0 * pred_mask) / den ** 2
    return value, grad


def focal_loss_positive(grid: CategoryGrid, alpha: float = 0.25,
                        gamma: float = 2.0):
    """Focal loss restricted to grid cells that contain an instance.

    At each positive cell the term sums over all classes; the target class
    uses p_t = score, every other class p_t = 1 - score. The result is the
    mean over positive cells. Returns (value, d_scores).
    """
    pos = grid.targets >= 0
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise EmptyLossError("no positive cells in the category grid")
    scores = grid.scores
    n_classes = scores.shape[2]
    is_target = np.zeros_like(scores, dtype=bool)
    ii, jj = np.nonzero(pos)
    is_target[ii, jj, grid.targets[ii, jj]] = True
    p_t = np.where(is_target, scores, 1.0 - scores)

    one_m = 1.0 - p_t
    with np.errstate(divide="ignore", invalid="ignore"):
        log_pt = np.log(p_t)
        pow_g = one_m ** gamma
        pow_gm1 = np.where(one_m > 0.0, one_m ** (gamma - 1.0), 0.0)
        inv_pt = pow_g / p_t
    terms = -alpha * pow_g * log_pt
    terms = np.where(pow_g == 0.0, 0.0, terms)  # p_t == 1 contributes exactly 0
    value = float(terms[pos].sum() / n_pos)

    d_pt = -alpha * (-gamma * pow_gm1 * log_pt + inv_pt)
    d_pt = np.where(one_m == 0.0, -alpha * (0.0 if gamma > 0 else 1.0 / p_t), d_pt)
    d_scores = np.where(is_target, d_pt, -d_pt) / n_pos
    d_scores[~pos] = 0.0
    return value, d_scores


def combined_loss(plane_report: LossReport, l_mask: float, l_category: float,
                  weights: LossWeights = LossWeights()) -> LossReport:
    """Final combination L_total = L_M * w_M + L_C + L_P."""
    out = LossReport(
        l_plane=plane_report.l_plane, l_surface=plane_report.l_surface,
        l_geom=plane_report.l_geom, l_depth=plane_report.l_depth,
        l_p=plane_report.l_p, l_mask=l_mask, l_category=l_category,
        valid_pixel_count=plane_report.valid_pixel_count)
    out.l_total = l_mask * weights.w_mask + l_category + out.l_p
    return out


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    resampled: bool
    n_coords: int


def finite_diff_check(fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
                      x0: np.ndarray, h: float = 1e-5,
                      tie_detector: Callable[[np.ndarray], bool] | None = None,
                      resampler: Callable[[], np.ndarray] | None = None,
                      max_resamples: int = 20) -> FiniteDiffReport:
    """Compare fn's analytic gradient against central finite differences.

    fn maps the input array to (value, gradient). When a tie detector flags
    the sample point as non-differentiable, the point is redrawn with the
    resampler before checking. Reports the max relative error over all
    input coordinates.
    """
    x = np.array(x0, dtype=np.float64)
    resampled = False
    tries = 0
    while tie_detector is not None and tie_detector(x):
        if resampler is None or tries >= max_resamples:
            raise InvalidInputError("could not move off a non-differentiable point")
        x = np.array(resampler(), dtype=np.float64)
        resampled = True
        tries += 1

    _, grad = fn(x)
    if grad.shape != x.shape:
        raise InvalidInputError("gradient shape must match the input")
    max_rel = 0.0
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        vp, _ = fn(x)
        flat[i] = orig - h
        vm, _ = fn(x)
        flat[i] = orig
        fd = (vp - vm) / (2.0 * h)
        rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-6)
        max_rel = max(max_rel, rel)
    return FiniteDiffReport(max_rel_error=max_rel, resampled=resampled,
                            n_coords=flat.size)
