"""Pure-numpy implementations of the hot per-pixel kernels.

These are the reference implementations. The numba twins in
``_kernels_numba`` evaluate the same arithmetic expressions per pixel so
that both backends return bit-identical arrays.
"""

import numpy as np

INSIDE_TOL = 1e-9  # slack on the in-rectangle test, closes hairline gaps at shared edges
MIN_RAY_T = 1e-9


def raycast(xhat, yhat, rot_cw, origin, normals, numers, corner0, edge1, edge2,
            inv_e1, inv_e2):
    """Nearest positive ray/rectangle hit for every pixel.

    Rays start at ``origin`` (world) with direction ``rot_cw @ (xhat, yhat, 1)``
    per pixel; the ray parameter equals camera-space depth. ``numers`` holds
    the precomputed ``d - n . origin`` per rectangle.

    Returns (depth, hit_index) with hit_index -1 where nothing is hit.
    """
    vx = rot_cw[0, 0] * xhat + rot_cw[0, 1] * yhat + rot_cw[0, 2]
    vy = rot_cw[1, 0] * xhat + rot_cw[1, 1] * yhat + rot_cw[1, 2]
    vz = rot_cw[2, 0] * xhat + rot_cw[2, 1] * yhat + rot_cw[2, 2]

    best_t = np.full(xhat.shape, np.inf)
    best = np.full(xhat.shape, -1, dtype=np.int32)
    for r in range(normals.shape[0]):
        n0, n1, n2 = normals[r]
        denom = n0 * vx + n1 * vy + n2 * vz
        with np.errstate(divide="ignore", invalid="ignore"):
            t = numers[r] / denom
            px = origin[0] + t * vx
            py = origin[1] + t * vy
            pz = origin[2] + t * vz
            dx = px - corner0[r, 0]
            dy = py - corner0[r, 1]
            dz = pz - corner0[r, 2]
            s = (dx * edge1[r, 0] + dy * edge1[r, 1] + dz * edge1[r, 2]) * inv_e1[r]
            w = (dx * edge2[r, 0] + dy * edge2[r, 1] + dz * edge2[r, 2]) * inv_e2[r]
            ok = (
                (t > MIN_RAY_T)
                & (t < best_t)
                & (s >= -INSIDE_TOL)
                & (s <= 1.0 + INSIDE_TOL)
                & (w >= -INSIDE_TOL)
                & (w <= 1.0 + INSIDE_TOL)
            )
        best_t = np.where(ok, t, best_t)
        best = np.where(ok, np.int32(r), best)
    return best_t, best


def bilinear_gather(src, us, vs, valid):
    """Bilinear samples of ``src`` (H, W, C) at real-valued coords (us, vs).

    Invalid entries produce zeros; the returned weight mask is 1 where the
    sample was taken. Exact integer coords reproduce source texels exactly.
    """
    h_src, w_src = src.shape[:2]
    x0 = np.floor(us)
    y0 = np.floor(vs)
    fx = us - x0
    fy = vs - y0
    ix0 = np.clip(x0.astype(np.int64), 0, w_src - 1)
    iy0 = np.clip(y0.astype(np.int64), 0, h_src - 1)
    ix1 = np.minimum(ix0 + 1, w_src - 1)
    iy1 = np.minimum(iy0 + 1, h_src - 1)

    v00 = src[iy0, ix0]
    v01 = src[iy0, ix1]
    v10 = src[iy1, ix0]
    v11 = src[iy1, ix1]
    fx = fx[..., None]
    fy = fy[..., None]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    out = (1.0 - fy) * top + fy * bot
    out[~valid] = 0.0
    return out, valid.astype(np.float64)
