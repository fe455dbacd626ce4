"""Pure-numpy reference implementations of the hot kernels.

The compiled Cython core (``_core.pyx``) mirrors these signatures exactly;
``mqbank._kernels`` picks whichever is available at import time.
"""

from __future__ import annotations

import numpy as np


def nearest_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-point Euclidean distance from each row of ``a`` to nearest row of ``b``."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)


def bilinear_forward(grid: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of ``grid`` (H,W,C) at grid coords (gx, gy).

    Coordinates are expected pre-clamped into [0, H-1] x [0, W-1].
    """
    h, w, _ = grid.shape
    x0 = np.clip(np.floor(gx).astype(np.intp), 0, max(h - 2, 0))
    y0 = np.clip(np.floor(gy).astype(np.intp), 0, max(w - 2, 0))
    x1 = np.minimum(x0 + 1, h - 1)
    y1 = np.minimum(y0 + 1, w - 1)
    tx = (gx - x0)[:, None]
    ty = (gy - y0)[:, None]
    return ((1 - tx) * (1 - ty) * grid[x0, y0]
            + tx * (1 - ty) * grid[x1, y0]
            + (1 - tx) * ty * grid[x0, y1]
            + tx * ty * grid[x1, y1])


def bilinear_backward(grid: np.ndarray, gx: np.ndarray, gy: np.ndarray,
                      gout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``(bilinear_forward(...) * gout).sum()`` w.r.t. gx and gy."""
    h, w, _ = grid.shape
    x0 = np.clip(np.floor(gx).astype(np.intp), 0, max(h - 2, 0))
    y0 = np.clip(np.floor(gy).astype(np.intp), 0, max(w - 2, 0))
    x1 = np.minimum(x0 + 1, h - 1)
    y1 = np.minimum(y0 + 1, w - 1)
    tx = (gx - x0)[:, None]
    ty = (gy - y0)[:, None]
    dx = ((1 - ty) * (grid[x1, y0] - grid[x0, y0])
          + ty * (grid[x1, y1] - grid[x0, y1]))
    dy = ((1 - tx) * (grid[x0, y1] - grid[x0, y0])
          + tx * (grid[x1, y1] - grid[x1, y0]))
    return (gout * dx).sum(axis=1), (gout * dy).sum(axis=1)


def gather_cells(values: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rows ``values[u[i], v[i]]`` of a (H,W,D) grid."""
    return values[u, v]


def scatter_add_cells(buf: np.ndarray, u: np.ndarray, v: np.ndarray,
                      gout: np.ndarray) -> None:
    """Accumulate ``gout`` rows into ``buf`` cells in place (repeats sum)."""
    np.add.at(buf, (u, v), gout)


def neighborhood_gather(grid: np.ndarray, cu: np.ndarray, cv: np.ndarray,
                        k: int) -> np.ndarray:
    """The k*k cell vectors around centers (cu, cv), edge-clamped. -> (N, k*k, C)."""
    h, w, _ = grid.shape
    half = k // 2
    offs = np.arange(-half, half + 1)
    uu = np.clip(cu[:, None, None] + offs[None, :, None], 0, h - 1)
    vv = np.clip(cv[:, None, None] + offs[None, None, :], 0, w - 1)
    uu, vv = np.broadcast_arrays(uu, vv)
    return grid[uu.reshape(len(cu), -1), vv.reshape(len(cv), -1)]


def equal_points_costs(pred: np.ndarray, gt: np.ndarray,
                       closed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Order-robust mean L1 point cost between every pred/gt polyline pair.

    pred: (P, n, 2); gt: (G, n, 2); closed: (G,) bool. Allowed orderings are
    forward/reversed for open lines and all cyclic shifts of both directions
    for closed rings. Returns (costs (P,G), order codes (P,G)) where code
    c = rev * n + shift, ties resolved to the smallest code.
    """
    p_cnt, n, _ = pred.shape
    g_cnt = gt.shape[0]
    costs = np.empty((p_cnt, g_cnt))
    orders = np.empty((p_cnt, g_cnt), dtype=np.int64)
    for j in range(g_cnt):
        variants, codes = _orderings(gt[j], bool(closed[j]))
        diff = np.abs(pred[:, None, :, :] - variants[None, :, :, :]).sum(axis=3)
        per = diff.mean(axis=2)  # (P, n_orders)
        best = per.argmin(axis=1)
        costs[:, j] = per[np.arange(p_cnt), best]
        orders[:, j] = codes[best]
    return costs, orders


def _orderings(pts: np.ndarray, closed: bool) -> tuple[np.ndarray, np.ndarray]:
    n = pts.shape[0]
    if not closed:
        return np.stack([pts, pts[::-1]]), np.array([0, n], dtype=np.int64)
    variants = []
    codes = []
    for rev in (0, 1):
        base = pts[::-1] if rev else pts
        for shift in range(n):
            variants.append(np.roll(base, -shift, axis=0))
            codes.append(rev * n + shift)
    return np.stack(variants), np.array(codes, dtype=np.int64)


def apply_ordering(pts: np.ndarray, code: int) -> np.ndarray:
    """Reorder ``pts`` according to an order code from equal_points_costs."""
    n = pts.shape[0]
    rev, shift = divmod(int(code), n)
    base = pts[::-1] if rev else pts
    return np.roll(base, -shift, axis=0)
