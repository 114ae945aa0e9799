"""Multi-view plane-feature guidance.

Warps a neighbour view's feature map into the source frame using ground
truth depth and the relative pose, decodes the warped features to plane
parameters, re-expresses them in source camera coordinates, and scores
them against the source ground truth on the outprojection mask. Gradients
flow through the decode and the plane transform; warp coordinates come
from ground-truth depth and are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    DEFAULT_TAU_OCC,
    RigidTransform,
    bilinear_sample,
    compute_warp_grid,
    image_gradient,
    outprojection_mask,
    subsample_map,
    transform_plane_map,
)
from .losses import GradBuffer, LossReport, LossWeights, total_plane_loss
from .planehead import HeadGrads, PlaneHead, head_backward, head_forward
from .synth import RenderedView, StereoSample

FEATURE_CHANNELS = 9


@dataclass(frozen=True)
class WarpGuidanceConfig:
    tau_occ: float = DEFAULT_TAU_OCC
    include_self_loss: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    stride: int = 4
    guidance_weight: float = 1.0

    def __post_init__(self):
        if self.tau_occ <= 0:
            raise InvalidInputError("tau_occ must be positive")


def make_features(view: RenderedView, stride: int = 4) -> np.ndarray:
    """Synthesized per-pixel features standing in for learned plane features.

    Channels: ray slopes (x, y), inverse depth, rgb, and the backprojected
    camera-frame point (X, Y, Z). All are view-local quantities; with the 3D
    point included, each instance's plane vector is a linear function of the
    features, so a small per-pixel decoder can recover it.
    """
    cam = view.camera.scaled(stride)
    xhat, yhat = cam.pixel_rays()
    rgb = subsample_map(view.rgb, stride)
    depth = subsample_map(view.depth, stride)
    # Point channels are scaled to roughly unit range so the decoder's tanh
    # layer starts in its linear regime.
    scale = 0.25
    return np.stack([
        xhat, yhat, 1.0 / depth,
        rgb[..., 0], rgb[..., 1], rgb[..., 2],
        xhat * depth * scale, yhat * depth * scale, depth * scale,
    ], axis=-1)


def swap_sample(sample: StereoSample) -> StereoSample:
    """The same pair with the source and neighbour roles exchanged."""
    return StereoSample(source=sample.neighbour, neighbour=sample.source,
                        t_ns=sample.t_sn, t_sn=sample.t_ns)


def warp_features(sample: StereoSample, f_nbr: np.ndarray, stride: int = 4,
                  tau_occ: float = DEFAULT_TAU_OCC):
    """Warp neighbour features onto the source grid at the feature stride.

    Depth and intrinsics are resampled to the feature resolution; the warp
    uses the source view's ground-truth depth. Returns the warped features
    and the outprojection mask (in-bounds and unoccluded pixels).
    """
    cam_src = sample.source.camera.scaled(stride)
    cam_nbr = sample.neighbour.camera.scaled(stride)
    if f_nbr.shape[:2] != (cam_nbr.height, cam_nbr.width):
        raise InvalidInputError(
            f"feature map must be {(cam_nbr.height, cam_nbr.width)} at stride "
            f"{stride}, got {f_nbr.shape[:2]}")
    depth_src = subsample_map(sample.source.depth, stride)
    depth_nbr = subsample_map(sample.neighbour.depth, stride)
    grid = compute_warp_grid(cam_src, cam_nbr, depth_src, sample.t_sn)
    warped, _ = bilinear_sample(f_nbr, grid)
    outproj = outprojection_mask(grid, depth_nbr, tau_occ)
    return warped, outproj


def _transform_backward(transform: RigidTransform, p_in: np.ndarray,
                        d_out: np.ndarray, ok: np.ndarray) -> np.ndarray:
    """Pull loss gradients back through the per-pixel plane transform.

    For p_out = (R p) (1 + (R p) . t / |p|^2) the Jacobian is
    (1 + c) R + (R p) k^T with k = R^T t / |p|^2 - 2 c p / |p|^2.
    """
    rot, t = transform.rotation, transform.translation
    q2 = np.einsum("...c,...c->...", p_in, p_in)
    u = p_in @ rot.T
    w = rot.T @ t
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (u @ t) / q2
        k = w / q2[..., None] - (2.0 * c / q2)[..., None] * p_in
    ud = np.einsum("...c,...c->...", u, d_out)
    d_in = (1.0 + c)[..., None] * (d_out @ rot) + k * ud[..., None]
    return np.where(ok[..., None], d_in, 0.0)


def _source_ground_truth(view: RenderedView, stride: int, weights: LossWeights):
    cam = view.camera.scaled(stride)
    gt_plane = subsample_map(view.plane_map, stride)
    gt_depth = subsample_map(view.depth, stride)
    gt_valid = subsample_map(view.instances, stride) > 0
    edge = None
    if weights.gradient_weighting:
        edge = image_gradient(subsample_map(view.rgb, stride))
    return cam, gt_plane, gt_depth, gt_valid, edge


def guidance_loss(sample: StereoSample, f_nbr: np.ndarray, head: PlaneHead,
                  cfg: WarpGuidanceConfig = WarpGuidanceConfig()
                  ) -> tuple[LossReport, HeadGrads]:
    """The full guidance path: warp, decode, transform, score.

    Decodes the warped neighbour features (planes in neighbour camera
    coordinates), moves them to source coordinates with the neighbour-to-
    source transform, and evaluates the plane-guidance loss against the
    source ground truth restricted to the outprojection mask. When
    include_self_loss is set, the loss on the source view's own (unwarped)
    features is added. Returns the summed report and head-parameter grads.
    """
    weights = cfg.weights
    cam, gt_plane, gt_depth, gt_valid, edge = _source_ground_truth(
        sample.source, cfg.stride, weights)

    warped, outproj = warp_features(sample, f_nbr, cfg.stride, cfg.tau_occ)
    planes_nbr = head_forward(head, warped)
    planes_src, ok = transform_plane_map(sample.t_ns, planes_nbr)
    mask = outproj & gt_valid & ok
    report, buf = total_plane_loss(planes_src, gt_plane, gt_depth, cam,
                                   mask, weights, edge)
    d_planes_nbr = _transform_backward(sample.t_ns, planes_nbr,
                                       buf.d_plane, ok)
    grads, _ = head_backward(head, warped, d_planes_nbr)

    gw = cfg.guidance_weight
    total = LossReport(
        l_plane=gw * report.l_plane, l_surface=gw * report.l_surface,
        l_geom=gw * report.l_geom, l_depth=gw * report.l_depth,
        valid_pixel_count=report.valid_pixel_count)
    for arr in grads.params():
        arr *= gw

    if cfg.include_self_loss:
        f_src = make_features(sample.source, cfg.stride)
        planes_self = head_forward(head, f_src)
        report_s, buf_s = total_plane_loss(planes_self, gt_plane, gt_depth,
                                           cam, gt_valid, weights, edge)
        grads_self, _ = head_backward(head, f_src, buf_s.d_plane)
        grads += grads_self
        total.l_plane += report_s.l_plane
        total.l_surface += report_s.l_surface
        total.l_geom += report_s.l_geom
        total.l_depth += report_s.l_depth
        total.valid_pixel_count += report_s.valid_pixel_count

    total.l_p = total.l_plane + total.l_surface + total.l_geom + total.l_depth
    total.l_total = total.l_p
    return total, grads


def self_loss(view: RenderedView, head: PlaneHead,
              cfg: WarpGuidanceConfig = WarpGuidanceConfig()
              ) -> tuple[LossReport, HeadGrads, GradBuffer]:
    """Single-view plane loss on the view's own features (no warping)."""
    weights = cfg.weights
    cam, gt_plane, gt_depth, gt_valid, edge = _source_ground_truth(
        view, cfg.stride, weights)
    feats = make_features(view, cfg.stride)
    planes = head_forward(head, feats)
    report, buf = total_plane_loss(planes, gt_plane, gt_depth, cam,
                                   gt_valid, weights, edge)
    grads, _ = head_backward(head, feats, buf.d_plane)
    return report, grads, buf
