# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels; semantics match ``_pure`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt

cnp.import_array()


def nearest_dists(a, b):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t na = av.shape[0], nb = bv.shape[0]
    out = np.empty(na, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, j
    cdef double best, dx, dy, d2
    for i in range(na):
        best = 1e300
        for j in range(nb):
            dx = av[i, 0] - bv[j, 0]
            dy = av[i, 1] - bv[j, 1]
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
        ov[i] = sqrt(best)
    return out


def bilinear_forward(grid, gx, gy):
    cdef double[:, :, ::1] gv = np.ascontiguousarray(grid, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(gx, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t h = gv.shape[0], w = gv.shape[1], c = gv.shape[2]
    cdef Py_ssize_t n = xv.shape[0]
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, k, x0, y0, x1, y1
    cdef double tx, ty, w00, w10, w01, w11
    for i in range(n):
        x0 = <Py_ssize_t>floor(xv[i])
        if x0 > h - 2:
            x0 = h - 2
        if x0 < 0:
            x0 = 0
        y0 = <Py_ssize_t>floor(yv[i])
        if y0 > w - 2:
            y0 = w - 2
        if y0 < 0:
            y0 = 0
        x1 = x0 + 1 if x0 + 1 < h else h - 1
        y1 = y0 + 1 if y0 + 1 < w else w - 1
        tx = xv[i] - x0
        ty = yv[i] - y0
        w00 = (1 - tx) * (1 - ty)
        w10 = tx * (1 - ty)
        w01 = (1 - tx) * ty
        w11 = tx * ty
        for k in range(c):
            ov[i, k] = (w00 * gv[x0, y0, k] + w10 * gv[x1, y0, k]
                        + w01 * gv[x0, y1, k] + w11 * gv[x1, y1, k])
    return out


def bilinear_backward(grid, gx, gy, gout):
    cdef double[:, :, ::1] gv = np.ascontiguousarray(grid, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(gx, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, ::1] go = np.ascontiguousarray(gout, dtype=np.float64)
    cdef Py_ssize_t h = gv.shape[0], w = gv.shape[1], c = gv.shape[2]
    cdef Py_ssize_t n = xv.shape[0]
    dgx = np.zeros(n, dtype=np.float64)
    dgy = np.zeros(n, dtype=np.float64)
    cdef double[::1] dxv = dgx
    cdef double[::1] dyv = dgy
    cdef Py_ssize_t i, k, x0, y0, x1, y1
    cdef double tx, ty, ax, ay
    for i in range(n):
        x0 = <Py_ssize_t>floor(xv[i])
        if x0 > h - 2:
            x0 = h - 2
        if x0 < 0:
            x0 = 0
        y0 = <Py_ssize_t>floor(yv[i])
        if y0 > w - 2:
            y0 = w - 2
        if y0 < 0:
            y0 = 0
        x1 = x0 + 1 if x0 + 1 < h else h - 1
        y1 = y0 + 1 if y0 + 1 < w else w - 1
        tx = xv[i] - x0
        ty = yv[i] - y0
        ax = 0.0
        ay = 0.0
        for k in range(c):
            ax += go[i, k] * ((1 - ty) * (gv[x1, y0, k] - gv[x0, y0, k])
                              + ty * (gv[x1, y1, k] - gv[x0, y1, k]))
            ay += go[i, k] * ((1 - tx) * (gv[x0, y1, k] - gv[x0, y0, k])
                              + tx * (gv[x1, y1, k] - gv[x1, y0, k]))
        dxv[i] = ax
        dyv[i] = ay
    return dgx, dgy


def gather_cells(values, u, v):
    cdef double[:, :, ::1] gv = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t[::1] uv = np.ascontiguousarray(u, dtype=np.intp)
    cdef Py_ssize_t[::1] vv = np.ascontiguousarray(v, dtype=np.intp)
    cdef Py_ssize_t n = uv.shape[0], d = gv.shape[2]
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, k
    for i in range(n):
        for k in range(d):
            ov[i, k] = gv[uv[i], vv[i], k]
    return out


def scatter_add_cells(buf, u, v, gout):
    cdef double[:, :, ::1] bv = buf
    cdef Py_ssize_t[::1] uv = np.ascontiguousarray(u, dtype=np.intp)
    cdef Py_ssize_t[::1] vv = np.ascontiguousarray(v, dtype=np.intp)
    cdef double[:, ::1] go = np.ascontiguousarray(gout, dtype=np.float64)
    cdef Py_ssize_t n = uv.shape[0], d = bv.shape[2]
    cdef Py_ssize_t i, k
    for i in range(n):
        for k in range(d):
            bv[uv[i], vv[i], k] += go[i, k]


def neighborhood_gather(grid, cu, cv, int k):
    cdef double[:, :, ::1] gv = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t[::1] uv = np.ascontiguousarray(cu, dtype=np.intp)
    cdef Py_ssize_t[::1] vv = np.ascontiguousarray(cv, dtype=np.intp)
    cdef Py_ssize_t h = gv.shape[0], w = gv.shape[1], c = gv.shape[2]
    cdef Py_ssize_t n = uv.shape[0]
    cdef int half = k // 2
    out = np.empty((n, k * k, c), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t i, m, q, du, dv, iu, iv
    for i in range(n):
        m = 0
        for du in range(-half, half + 1):
            iu = uv[i] + du
            if iu < 0:
                iu = 0
            if iu > h - 1:
                iu = h - 1
            for dv in range(-half, half + 1):
                iv = vv[i] + dv
                if iv < 0:
                    iv = 0
                if iv > w - 1:
                    iv = w - 1
                for q in range(c):
                    ov[i, m, q] = gv[iu, iv, q]
                m += 1
    return out


def equal_points_costs(pred, gt, closed):
    cdef double[:, :, ::1] pv = np.ascontiguousarray(pred, dtype=np.float64)
    cdef double[:, :, ::1] gvv = np.ascontiguousarray(gt, dtype=np.float64)
    cdef cnp.uint8_t[::1] cl = np.ascontiguousarray(closed, dtype=np.uint8)
    cdef Py_ssize_t p_cnt = pv.shape[0], n = pv.shape[1], g_cnt = gvv.shape[0]
    costs = np.empty((p_cnt, g_cnt), dtype=np.float64)
    orders = np.empty((p_cnt, g_cnt), dtype=np.int64)
    cdef double[:, ::1] co = costs
    cdef cnp.int64_t[:, ::1] oo = orders
    cdef Py_ssize_t i, j, rev, shift, t, src
    cdef double best, cost
    cdef cnp.int64_t best_code
    cdef int n_shifts
    for i in range(p_cnt):
        for j in range(g_cnt):
            best = 1e300
            best_code = 0
            for rev in range(2):
                n_shifts = n if cl[j] else 1
                for shift in range(n_shifts):
                    cost = 0.0
                    for t in range(n):
                        src = (t + shift) % n
                        if rev:
                            src = n - 1 - src
                        cost += fabs(pv[i, t, 0] - gvv[j, src, 0]) \
                            + fabs(pv[i, t, 1] - gvv[j, src, 1])
                    cost /= n
                    if cost < best:
                        best = cost
                        best_code = rev * n + shift
            co[i, j] = best
            oo[i, j] = best_code
    return costs, orders
