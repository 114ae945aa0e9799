"""Pinhole camera math, plane-parameter algebra, and cross-view warping.

Conventions used throughout the package:

* Pixel (u, v) refers to the pixel center at exactly (u, v); u runs along
  the image width, v along the height. Sampling bounds are
  [0, W-1] x [0, H-1].
* Camera frames are right-handed with x right, y down, z forward
  (viewing direction). Depth is the camera-space z coordinate.
* A plane is the point set {Q : n . Q = d} with unit normal n and offset
  d > 0, encoded as the single vector p = n * d. The encoding is
  orientation-free: p and the flipped (-n, -d) pair map to the same p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    DegenerateRayError,
    InvalidInputError,
    PlaneThroughOriginError,
)

RAY_EPS = 1e-8         # |n . K^-1 q| below this is a degenerate ray
PLANE_NORM_EPS = 1e-8  # plane vectors shorter than this are invalid
DEFAULT_TAU_OCC = 0.05  # meters; occlusion threshold for the outprojection mask


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidInputError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    def ray_slopes(self, u, v):
        """Camera-normalized ray slopes ((u-cx)/fx, (v-cy)/fy) of pixel coords."""
        return (np.asarray(u) - self.cx) / self.fx, (np.asarray(v) - self.cy) / self.fy

    def pixel_rays(self):
        """Ray slopes for the full pixel grid, as two (H, W) arrays."""
        u = np.arange(self.width, dtype=np.float64)
        v = np.arange(self.height, dtype=np.float64)
        xhat, yhat = self.ray_slopes(u[None, :], v[:, None])
        return np.broadcast_to(xhat, (self.height, self.width)).copy(), \
            np.broadcast_to(yhat, (self.height, self.width)).copy()

    def scaled(self, stride: int) -> "CameraIntrinsics":
        """Intrinsics of the stride-subsampled grid (see ``subsample_map``).

        Grid point (i, j) of the subsampled image sits on source pixel
        (stride*i + stride//2, stride*j + stride//2).
        """
        if stride < 1 or self.width % stride or self.height % stride:
            raise InvalidInputError("image size must be divisible by the stride")
        off = stride // 2
        return CameraIntrinsics(
            fx=self.fx / stride, fy=self.fy / stride,
            cx=(self.cx - off) / stride, cy=(self.cy - off) / stride,
            width=self.width // stride, height=self.height // stride)


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion Q -> R @ Q + t."""

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidInputError("rotation must be 3x3 and translation a 3-vector")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise InvalidInputError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise InvalidInputError("rotation determinant is not 1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidInputError("expected a 4x4 matrix")
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-12:
            raise InvalidInputError("bottom row must be (0, 0, 0, 1) within 1e-12")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying ``inner`` first, then ``self``."""
        return RigidTransform(self.rotation @ inner.rotation,
                              self.rotation @ inner.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -(self.rotation.T @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to points of shape (..., 3)."""
        return np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class PlaneParams:
    """A plane encoded as the single vector p = n * d (meters)."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (3,):
            raise InvalidInputError("plane vector must have 3 components")
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("plane vector must be finite")
        if np.linalg.norm(p) <= PLANE_NORM_EPS:
            raise InvalidInputError("plane passes through the camera origin")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_normal_offset(cls, normal, offset: float) -> "PlaneParams":
        normal = np.asarray(normal, dtype=np.float64)
        norm = np.linalg.norm(normal)
        if norm == 0.0:
            raise InvalidInputError("normal must be nonzero")
        if offset <= 0.0:
            raise InvalidInputError("offset must be positive (orientation convention)")
        return cls(normal / norm * offset)

    @property
    def offset(self) -> float:
        return float(np.linalg.norm(self.p))

    @property
    def normal(self) -> np.ndarray:
        return self.p / self.offset


@dataclass(frozen=True)
class WarpGrid:
    """Per-pixel sample locations in a neighbour image.

    coords holds (u, v) in neighbour pixel units; z is the source point's
    depth expressed in the neighbour camera frame (used by the occlusion
    test); valid is false outside [0, W-1] x [0, H-1] or behind the camera.
    """

    coords: np.ndarray  # (H, W, 2)
    valid: np.ndarray   # (H, W) bool
    z: np.ndarray       # (H, W)

    @property
    def height(self) -> int:
        return self.coords.shape[0]

    @property
    def width(self) -> int:
        return self.coords.shape[1]


def backproject(camera: CameraIntrinsics, q, depth: float) -> np.ndarray:
    """3D point of pixel q = (u, v) at the given depth: D * K^-1 (u, v, 1)."""
    if depth <= 0.0:
        raise InvalidInputError("depth must be positive")
    xhat, yhat = camera.ray_slopes(q[0], q[1])
    return np.array([depth * xhat, depth * yhat, depth])


def backproject_map(camera: CameraIntrinsics, depth: np.ndarray) -> np.ndarray:
    """Backprojected 3D points of the full grid, (H, W, 3)."""
    xhat, yhat = camera.pixel_rays()
    return np.stack([depth * xhat, depth * yhat, depth], axis=-1)


def plane_induced_depth(camera: CameraIntrinsics, plane: PlaneParams, q,
                        ray_eps: float = RAY_EPS) -> float:
    """Depth at which the ray through pixel q meets the plane (Eq. style d / n.r)."""
    xhat, yhat = camera.ray_slopes(q[0], q[1])
    n = plane.normal
    denom = n[0] * xhat + n[1] * yhat + n[2]
    if abs(denom) < ray_eps:
        raise DegenerateRayError(f"ray at {q} is parallel to the plane")
    return float(plane.offset / denom)


def induced_depth_map(camera: CameraIntrinsics, plane_map: np.ndarray,
                      valid=None, ray_eps: float = RAY_EPS):
    """Per-pixel plane-induced depth of a (H, W, 3) plane-vector map.

    Returns (depth, ok); ok is false where the input was invalid, the plane
    vector is (near) zero, or the ray is degenerate. Depth is 0 there.
    """
    xhat, yhat = camera.pixel_rays()
    norm = np.linalg.norm(plane_map, axis=-1)
    pr = plane_map[..., 0] * xhat + plane_map[..., 1] * yhat + plane_map[..., 2]
    ok = norm > PLANE_NORM_EPS
    if valid is not None:
        ok = ok & valid
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = pr / norm
        depth = norm / denom
    ok = ok & (np.abs(denom) >= ray_eps)
    return np.where(ok, depth, 0.0), ok


def transform_plane(transform: RigidTransform, plane: PlaneParams) -> PlaneParams:
    """Re-express a plane under the point map Q -> R @ Q + t.

    n' = R n and d' = d + (R n) . t; the rotated-normal form keeps
    transformed points exactly on the transformed plane for any R.
    """
    n_out = transform.rotation @ plane.normal
    d_out = plane.offset + n_out @ transform.translation
    if d_out <= 0.0:
        raise PlaneThroughOriginError(
            "transformed plane crosses the camera center (d <= 0)")
    return PlaneParams(n_out * d_out)


def transform_plane_map(transform: RigidTransform, plane_map: np.ndarray,
                        valid=None):
    """Vectorized ``transform_plane`` over a (H, W, 3) map.

    Pixels whose transformed offset is <= 0 (or whose input vector is near
    zero) are flagged invalid instead of raising; their output is 0.
    """
    norm = np.linalg.norm(plane_map, axis=-1)
    ok = norm > PLANE_NORM_EPS
    if valid is not None:
        ok = ok & valid
    with np.errstate(divide="ignore", invalid="ignore"):
        n = plane_map / norm[..., None]
    n_out = n @ transform.rotation.T
    d_out = norm + n_out @ transform.translation
    ok = ok & (d_out > 0.0)
    out = np.where(ok[..., None], n_out * d_out[..., None], 0.0)
    return out, ok


def compute_warp_grid(camera_src: CameraIntrinsics, camera_nbr: CameraIntrinsics,
                      depth_src: np.ndarray,
                      t_src_to_nbr: RigidTransform) -> WarpGrid:
    """Where each source pixel lands in the neighbour image.

    Each source pixel is backprojected with its depth, moved with the
    source-to-neighbour transform, and projected through the neighbour
    intrinsics. Validity requires positive source depth, positive projected
    z, and in-bounds coordinates.
    """
    if depth_src.shape != (camera_src.height, camera_src.width):
        raise InvalidInputError("depth map size must match the source intrinsics")
    xhat, yhat = camera_src.pixel_rays()
    rot = t_src_to_nbr.rotation
    t = t_src_to_nbr.translation
    wx = rot[0, 0] * xhat + rot[0, 1] * yhat + rot[0, 2]
    wy = rot[1, 0] * xhat + rot[1, 1] * yhat + rot[1, 2]
    wz = rot[2, 0] * xhat + rot[2, 1] * yhat + rot[2, 2]
    positive = depth_src > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_d = 1.0 / depth_src
        a = wx + t[0] * inv_d
        b = wy + t[1] * inv_d
        c = wz + t[2] * inv_d
        u = camera_nbr.fx * (a / c) + camera_nbr.cx
        v = camera_nbr.fy * (b / c) + camera_nbr.cy
    z = depth_src * c
    valid = (
        positive & (c > 0.0)
        & (u >= 0.0) & (u <= camera_nbr.width - 1.0)
        & (v >= 0.0) & (v <= camera_nbr.height - 1.0)
    )
    coords = np.stack([np.where(valid, u, 0.0), np.where(valid, v, 0.0)], axis=-1)
    return WarpGrid(coords=coords, valid=valid, z=np.where(valid, z, 0.0))


def bilinear_sample(src: np.ndarray, grid: WarpGrid):
    """Bilinear resampling of src (H, W[, C]) at the grid's coords.

    Returns (warped, weight); invalid grid entries give zeros with weight 0.
    """
    if src.shape[0] < 1 or src.shape[1] < 1:
        raise InvalidInputError("source map is empty")
    return kernels.bilinear_gather(src, grid.coords[..., 0], grid.coords[..., 1],
                                   grid.valid)


def outprojection_mask(grid: WarpGrid, depth_nbr: np.ndarray,
                       tau_occ: float = DEFAULT_TAU_OCC) -> np.ndarray:
    """Pixels whose projection is in-bounds and not occluded in the neighbour.

    A pixel survives when the source point's neighbour-frame z agrees with
    the neighbour's own depth (bilinearly sampled) within tau_occ meters.
    """
    sampled, _ = kernels.bilinear_gather(depth_nbr, grid.coords[..., 0],
                                         grid.coords[..., 1], grid.valid)
    return grid.valid & (np.abs(grid.z - sampled) <= tau_occ)


def image_gradient(rgb: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude of the luminance image, normalized to [0, 1].

    Luminance is 0.299 R + 0.587 G + 0.114 B; borders use mirror padding.
    A constant image maps to all zeros.
    """
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidInputError("expected an (H, W, 3) RGB map")
    lum = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    p = np.pad(lum, 1, mode="reflect")
    gx = (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:]
          - p[:-2, :-2] - 2.0 * p[1:-1, :-2] - p[2:, :-2])
    gy = (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:]
          - p[:-2, :-2] - 2.0 * p[:-2, 1:-1] - p[:-2, 2:])
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak == 0.0:
        return np.zeros_like(mag)
    return mag / peak


def subsample_map(arr: np.ndarray, stride: int) -> np.ndarray:
    """Stride-subsample a dense map at the grid of ``CameraIntrinsics.scaled``.

    Equivalent to bilinear sampling at the scaled grid's pixel centers; those
    centers land on integer source pixels, so values are taken exactly.
    """
    if stride == 1:
        return arr
    h, w = arr.shape[:2]
    if h % stride or w % stride:
        raise InvalidInputError("map size must be divisible by the stride")
    off = stride // 2
    return arr[off::stride, off::stride]
