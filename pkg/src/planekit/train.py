"""Toy training of the plane head on synthetic stereo pairs.

Every step takes one full-batch Adam update. All views are stacked into a
single tall map (they share one camera), warped guidance features are
precomputed once (warp coordinates depend only on ground truth), and the
learning rate holds a plateau before decaying. The depth and geom terms
run with a strict degenerate-ray threshold so early garbage predictions
cannot inject unbounded values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMetricError, InvalidInputError
from .geometry import induced_depth_map, subsample_map
from .losses import LossReport, LossWeights, l_surface, total_plane_loss
from .metrics import depth_metrics
from .planehead import AdamState, HeadGrads, PlaneHead, head_backward, head_forward, optimizer_step
from .synth import RenderedView, StereoSample
from .warpguide import (
    FEATURE_CHANNELS,
    _transform_backward,
    make_features,
    warp_features,
)
from .geometry import image_gradient, transform_plane_map

TRAIN_RAY_EPS = 0.05  # stricter than the loss default; keeps early steps bounded


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 0.05
    guidance: bool = True
    grad_weight: bool = False
    seed: int = 0
    stride: int = 2
    hidden: int = 64
    tau_occ: float = 0.05
    lr_plateau: float = 0.4   # fraction of steps at full lr before decay
    lr_decay_pow: float = 10  # total decay of 2**-pow by the last step

    def weights(self) -> LossWeights:
        return LossWeights(gradient_weighting=self.grad_weight,
                           ray_eps=TRAIN_RAY_EPS)


class _Stack:
    """Views stacked along the height axis, sharing one camera's rays."""

    def __init__(self, views: list[RenderedView], stride: int, grad_weight: bool):
        cam = views[0].camera.scaled(stride)
        xhat, yhat = cam.pixel_rays()
        n = len(views)
        self.camera = cam
        self.rays = (np.tile(xhat, (n, 1)), np.tile(yhat, (n, 1)))
        self.features = np.concatenate(
            [make_features(v, stride) for v in views], axis=0)
        self.gt_plane = np.concatenate(
            [subsample_map(v.plane_map, stride) for v in views], axis=0)
        self.gt_depth = np.concatenate(
            [subsample_map(v.depth, stride) for v in views], axis=0)
        self.valid = np.concatenate(
            [subsample_map(v.instances, stride) > 0 for v in views], axis=0)
        self.edge = None
        if grad_weight:
            self.edge = np.concatenate(
                [image_gradient(subsample_map(v.rgb, stride)) for v in views],
                axis=0)


class _GuidanceStack:
    """Warped neighbour features against stacked source ground truth.

    Valid only when every pair shares the same relative transform, which
    holds for datasets generated with one baseline/yaw setting.
    """

    def __init__(self, samples: list[StereoSample], stride: int, tau_occ: float,
                 grad_weight: bool):
        t0 = samples[0].t_ns
        for s in samples[1:]:
            if (np.max(np.abs(s.t_ns.rotation - t0.rotation)) > 1e-12
                    or np.max(np.abs(s.t_ns.translation - t0.translation)) > 1e-12):
                raise InvalidInputError(
                    "stacked guidance needs a common relative transform")
        self.t_ns = t0
        self.gt = _Stack([s.source for s in samples], stride, grad_weight)
        warped, masks = [], []
        for s in samples:
            f_nbr = make_features(s.neighbour, stride)
            w, m = warp_features(s, f_nbr, stride, tau_occ)
            warped.append(w)
            masks.append(m)
        self.features = np.concatenate(warped, axis=0)
        self.outproj = np.concatenate(masks, axis=0)


def _self_step(stack: _Stack, head: PlaneHead, weights: LossWeights):
    pred = head_forward(head, stack.features)
    report, buf = total_plane_loss(pred, stack.gt_plane, stack.gt_depth,
                                   stack.camera, stack.valid, weights,
                                   stack.edge, rays=stack.rays)
    grads, _ = head_backward(head, stack.features, buf.d_plane)
    return report, grads


def _guidance_step(gs: _GuidanceStack, head: PlaneHead, weights: LossWeights):
    planes_nbr = head_forward(head, gs.features)
    planes_src, ok = transform_plane_map(gs.t_ns, planes_nbr)
    mask = gs.outproj & gs.gt.valid & ok
    report, buf = total_plane_loss(planes_src, gs.gt.gt_plane, gs.gt.gt_depth,
                                   gs.gt.camera, mask, weights, gs.gt.edge,
                                   rays=gs.gt.rays)
    d_nbr = _transform_backward(gs.t_ns, planes_nbr, buf.d_plane, ok)
    grads, _ = head_backward(head, gs.features, d_nbr)
    return report, grads


def _merge_reports(reports: list[LossReport]) -> LossReport:
    out = LossReport()
    for r in reports:
        out.l_plane += r.l_plane
        out.l_surface += r.l_surface
        out.l_geom += r.l_geom
        out.l_depth += r.l_depth
        out.valid_pixel_count += r.valid_pixel_count
    out.l_p = out.l_plane + out.l_surface + out.l_geom + out.l_depth
    out.l_total = out.l_p
    return out


def train_toy(samples: list[StereoSample],
              cfg: TrainConfig = TrainConfig()) -> tuple[PlaneHead, list[LossReport]]:
    """Train a fresh head on the given pairs; returns it with per-step rows.

    Row k holds the loss used for update k; one more row records the loss
    after the final update, so steps=0 logs only the initial loss.
    """
    if not samples:
        raise InvalidInputError("no training pairs given")
    weights = cfg.weights()
    views = [v for s in samples for v in (s.source, s.neighbour)]
    stack = _Stack(views, cfg.stride, cfg.grad_weight)
    guidance_stacks = []
    if cfg.guidance:
        backward = [StereoSample(source=s.neighbour, neighbour=s.source,
                                 t_ns=s.t_sn, t_sn=s.t_ns) for s in samples]
        guidance_stacks = [
            _GuidanceStack(samples, cfg.stride, cfg.tau_occ, cfg.grad_weight),
            _GuidanceStack(backward, cfg.stride, cfg.tau_occ, cfg.grad_weight),
        ]

    def evaluate(head):
        reports = []
        grads = HeadGrads.zeros_like(head)
        rep, g = _self_step(stack, head, weights)
        reports.append(rep)
        grads += g
        for gs in guidance_stacks:
            rep, g = _guidance_step(gs, head, weights)
            reports.append(rep)
            grads += g
        return _merge_reports(reports), grads

    head = PlaneHead.create(FEATURE_CHANNELS, cfg.hidden, seed=cfg.seed)
    state = AdamState(lr=cfg.lr)
    rows: list[LossReport] = []
    for step in range(cfg.steps):
        report, grads = evaluate(head)
        rows.append(report)
        frac = step / cfg.steps
        if frac >= cfg.lr_plateau:
            ramp = (frac - cfg.lr_plateau) / (1.0 - cfg.lr_plateau)
            state.lr = cfg.lr * 0.5 ** (ramp * cfg.lr_decay_pow)
        head, state = optimizer_step(head, grads, state)
    final, _ = evaluate(head)
    rows.append(final)
    return head, rows


def evaluate_views(head: PlaneHead, views: list[RenderedView],
                   stride: int = 2) -> dict[str, float]:
    """Held-out quality of the head's per-pixel plane predictions.

    Reports the AbsRel of the plane-induced depth against ground-truth
    depth and the surface (cosine) loss against ground-truth planes,
    averaged over views.
    """
    if not views:
        raise EmptyMetricError("no views to evaluate")
    abs_rels, surfaces = [], []
    for view in views:
        cam = view.camera.scaled(stride)
        pred = head_forward(head, make_features(view, stride))
        gt_depth = subsample_map(view.depth, stride)
        gt_plane = subsample_map(view.plane_map, stride)
        gt_valid = subsample_map(view.instances, stride) > 0
        induced, ok = induced_depth_map(cam, pred, gt_valid)
        abs_rels.append(depth_metrics(induced, gt_depth, ok).abs_rel)
        surfaces.append(l_surface(pred, gt_plane, gt_valid).value)
    return {"abs_rel": float(np.mean(abs_rels)),
            "l_surface": float(np.mean(surfaces))}


def dropped_region_error(head: PlaneHead, view: RenderedView,
                         dropped_ids: list[int], stride: int = 2) -> float | None:
    """Mean element-wise L1 plane error on pixels of the dropped instances.

    The view must carry full ground truth (instances not dropped); returns
    None when none of the dropped instances are visible at this stride.
    """
    if not dropped_ids:
        return None
    mask = np.isin(subsample_map(view.instances, stride), dropped_ids)
    if not mask.any():
        return None
    pred = head_forward(head, make_features(view, stride))
    gt_plane = subsample_map(view.plane_map, stride)
    return float(np.abs(pred[mask] - gt_plane[mask]).sum(axis=-1).mean())


def loss_row_header() -> list[str]:
    return ["step", "l_plane", "l_surface", "l_geom", "l_depth", "l_p",
            "l_mask", "l_category", "l_total", "valid_pixel_count"]


def loss_row(step: int, r: LossReport) -> list:
    return [step, r.l_plane, r.l_surface, r.l_geom, r.l_depth, r.l_p,
            r.l_mask, r.l_category, r.l_total, r.valid_pixel_count]
