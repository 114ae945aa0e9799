"""Numba-compiled twins of the numpy kernels.

Every expression mirrors ``_kernels_numpy`` term for term (no fastmath) so
the two backends return bit-identical arrays. Loops are parallel over
pixels; each output element is written exactly once, which keeps results
independent of the worker-thread count.
"""

import warnings

import numpy as np

warnings.filterwarnings("ignore", message=".*TBB.*")

from numba import njit, prange  # noqa: E402

from ._kernels_numpy import INSIDE_TOL, MIN_RAY_T  # noqa: E402


@njit(parallel=True, cache=True)
def raycast(xhat, yhat, rot_cw, origin, normals, numers, corner0, edge1, edge2,
            inv_e1, inv_e2):
    h, w = xhat.shape
    n_rects = normals.shape[0]
    depth = np.full((h, w), np.inf)
    best = np.full((h, w), -1, dtype=np.int32)
    for i in prange(h):
        for j in range(w):
            xh = xhat[i, j]
            yh = yhat[i, j]
            vx = rot_cw[0, 0] * xh + rot_cw[0, 1] * yh + rot_cw[0, 2]
            vy = rot_cw[1, 0] * xh + rot_cw[1, 1] * yh + rot_cw[1, 2]
            vz = rot_cw[2, 0] * xh + rot_cw[2, 1] * yh + rot_cw[2, 2]
            best_t = np.inf
            best_r = -1
            for r in range(n_rects):
                denom = normals[r, 0] * vx + normals[r, 1] * vy + normals[r, 2] * vz
                if denom == 0.0:
                    continue
                t = numers[r] / denom
                if not (t > MIN_RAY_T and t < best_t):
                    continue
                px = origin[0] + t * vx
                py = origin[1] + t * vy
                pz = origin[2] + t * vz
                dx = px - corner0[r, 0]
                dy = py - corner0[r, 1]
                dz = pz - corner0[r, 2]
                s = (dx * edge1[r, 0] + dy * edge1[r, 1] + dz * edge1[r, 2]) * inv_e1[r]
                if not (s >= -INSIDE_TOL and s <= 1.0 + INSIDE_TOL):
                    continue
                u2 = (dx * edge2[r, 0] + dy * edge2[r, 1] + dz * edge2[r, 2]) * inv_e2[r]
                if not (u2 >= -INSIDE_TOL and u2 <= 1.0 + INSIDE_TOL):
                    continue
                best_t = t
                best_r = r
            depth[i, j] = best_t
            best[i, j] = best_r
    return depth, best


@njit(parallel=True, cache=True)
def bilinear_gather(src, us, vs, valid):
    h_src, w_src, channels = src.shape
    h, w = us.shape
    out = np.zeros((h, w, channels))
    weight = np.zeros((h, w))
    for i in prange(h):
        for j in range(w):
            if not valid[i, j]:
                continue
            u = us[i, j]
            v = vs[i, j]
            x0 = np.floor(u)
            y0 = np.floor(v)
            fx = u - x0
            fy = v - y0
            ix0 = min(max(np.int64(x0), 0), w_src - 1)
            iy0 = min(max(np.int64(y0), 0), h_src - 1)
            ix1 = min(ix0 + 1, w_src - 1)
            iy1 = min(iy0 + 1, h_src - 1)
            for c in range(channels):
                top = (1.0 - fx) * src[iy0, ix0, c] + fx * src[iy0, ix1, c]
                bot = (1.0 - fx) * src[iy1, ix0, c] + fx * src[iy1, ix1, c]
                out[i, j, c] = (1.0 - fy) * top + fy * bot
            weight[i, j] = 1.0
    return out, weight
