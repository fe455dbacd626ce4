"""Compiled kernel core must agree with the pure-numpy fallback bit-for-bit
(within float64 rounding)."""

import numpy as np
import pytest

from mqbank import _kernels
from mqbank._kernels import _pure

core = pytest.importorskip("mqbank._kernels._core")

RNG = np.random.default_rng(5)


def test_selected_implementation_reported():
    assert isinstance(_kernels.COMPILED, bool)


def test_nearest_dists_equivalence():
    a = RNG.uniform(-30, 30, size=(57, 2))
    b = RNG.uniform(-30, 30, size=(83, 2))
    assert np.allclose(core.nearest_dists(a, b), _pure.nearest_dists(a, b),
                       atol=1e-12)


def test_bilinear_equivalence():
    grid = RNG.normal(size=(21, 11, 8))
    gx = RNG.uniform(0, 20, size=40)
    gy = RNG.uniform(0, 10, size=40)
    assert np.allclose(core.bilinear_forward(grid, gx, gy),
                       _pure.bilinear_forward(grid, gx, gy), atol=1e-12)
    gout = RNG.normal(size=(40, 8))
    cx, cy = core.bilinear_backward(grid, gx, gy, gout)
    px, py = _pure.bilinear_backward(grid, gx, gy, gout)
    assert np.allclose(cx, px, atol=1e-12) and np.allclose(cy, py, atol=1e-12)


def test_gather_scatter_equivalence():
    values = RNG.normal(size=(9, 7, 5))
    u = RNG.integers(0, 9, size=30)
    v = RNG.integers(0, 7, size=30)
    assert np.allclose(core.gather_cells(values, u, v),
                       _pure.gather_cells(values, u, v), atol=0)
    gout = RNG.normal(size=(30, 5))
    buf_a = np.zeros_like(values)
    buf_b = np.zeros_like(values)
    core.scatter_add_cells(buf_a, u, v, gout)
    _pure.scatter_add_cells(buf_b, u, v, gout)
    assert np.allclose(buf_a, buf_b, atol=1e-12)


def test_neighborhood_gather_equivalence():
    grid = RNG.normal(size=(12, 9, 4))
    cu = RNG.integers(0, 12, size=25)
    cv = RNG.integers(0, 9, size=25)
    for k in (1, 3, 5):
        assert np.allclose(core.neighborhood_gather(grid, cu, cv, k),
                           _pure.neighborhood_gather(grid, cu, cv, k), atol=0)


@pytest.mark.parametrize("closed", [False, True])
def test_equal_points_costs_equivalence(closed):
    pred = RNG.uniform(-10, 10, size=(6, 8, 2))
    gt = RNG.uniform(-10, 10, size=(4, 8, 2))
    flags = np.full(4, closed, dtype=bool)
    cc, oc = core.equal_points_costs(pred, gt, flags)
    cp, op = _pure.equal_points_costs(pred, gt, flags)
    assert np.allclose(cc, cp, atol=1e-12)
    assert np.array_equal(oc, op)
