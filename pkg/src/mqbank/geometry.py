"""Polyline geometry in BEV meters: resampling, grid index transforms,
Chamfer distance, bilinear feature sampling and SD-map shift augmentation.

All coordinates are local bird's-eye-view meters, x forward and y left.
Everything here is a pure function; see :mod:`mqbank.rng` for determinism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kernels
from .rng import stream_rng


class DegeneratePolylineError(ValueError):
    """Polyline has zero total length and cannot be resampled."""


@dataclass(frozen=True)
class Polyline:
    """Ordered 2D point sequence; closed rings do not repeat the first point."""

    points: np.ndarray
    closed: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"polyline points must be (n, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError("polyline needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def vertices(self) -> np.ndarray:
        """Vertex array including the implicit closing point for rings."""
        if self.closed:
            return np.vstack([self.points, self.points[:1]])
        return self.points

    def length(self) -> float:
        seg = np.diff(self.vertices(), axis=0)
        return float(np.hypot(seg[:, 0], seg[:, 1]).sum())

    def reversed(self) -> "Polyline":
        return Polyline(self.points[::-1].copy(), closed=self.closed)


@dataclass(frozen=True)
class BevExtent:
    """Axis-aligned BEV window in meters."""

    x_min: float = -50.0
    x_max: float = 50.0
    y_min: float = -25.0
    y_max: float = 25.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("extent must have positive spans")

    @property
    def span_x(self) -> float:
        return self.x_max - self.x_min

    @property
    def span_y(self) -> float:
        return self.y_max - self.y_min

    def clamp(self, points: np.ndarray) -> np.ndarray:
        out = np.array(points, dtype=np.float64, copy=True)
        out[..., 0] = np.clip(out[..., 0], self.x_min, self.x_max)
        out[..., 1] = np.clip(out[..., 1], self.y_min, self.y_max)
        return out

    def contains(self, points: np.ndarray) -> bool:
        pts = np.asarray(points, dtype=np.float64)
        return bool(np.all((pts[..., 0] >= self.x_min) & (pts[..., 0] <= self.x_max)
                           & (pts[..., 1] >= self.y_min) & (pts[..., 1] <= self.y_max)))

    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2.0,
                         (self.y_min + self.y_max) / 2.0])


@dataclass(frozen=True)
class GridSpec:
    """Discretization of an extent into h x w cells at ``cells_per_meter``."""

    extent: BevExtent = field(default_factory=BevExtent)
    cells_per_meter: float = 1.0
    h: int = 0
    w: int = 0

    def __post_init__(self):
        if self.cells_per_meter <= 0:
            raise ValueError("cells_per_meter must be positive")
        lam = self.cells_per_meter
        h = int(math.floor(self.extent.span_x * lam + 0.5)) + 1
        w = int(math.floor(self.extent.span_y * lam + 0.5)) + 1
        if self.h == 0:
            object.__setattr__(self, "h", h)
        if self.w == 0:
            object.__setattr__(self, "w", w)
        if (self.h, self.w) != (h, w):
            raise ValueError(f"grid dims {(self.h, self.w)} inconsistent with "
                             f"extent/scale (expected {(h, w)})")


@dataclass(frozen=True)
class PositionIndexPath:
    """Ordered (u, v) integer cell indices for one polyline's reference points."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        if idx.ndim != 2 or idx.shape[1] != 2:
            raise ValueError(f"indices must be (n, 2), got {idx.shape}")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.shape[0]


def resample_polyline(poly: Polyline, n: int) -> Polyline:
    """Resample to exactly ``n`` points equally spaced by arc length.

    Open polylines keep both endpoints; closed rings are spaced over the full
    ring perimeter (including the implicit closing edge) starting from the
    first point.
    """
    if n < 2:
        raise ValueError("need n >= 2 resample points")
    verts = poly.vertices()
    seg = np.diff(verts, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    total = cum[-1]
    if total <= 0.0:
        raise DegeneratePolylineError("degenerate polyline")
    if poly.closed:
        targets = np.arange(n) * (total / n)
    else:
        targets = np.linspace(0.0, total, n)
    xs = np.interp(targets, cum, verts[:, 0])
    ys = np.interp(targets, cum, verts[:, 1])
    return Polyline(np.column_stack([xs, ys]), closed=poly.closed)


def index_transform_batch(points: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Meters -> integer (u, v) cell indices, clamped into the grid."""
    pts = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinates")
    lam = spec.cells_per_meter
    u = np.floor((pts[..., 0] - spec.extent.x_min) * lam + 0.5).astype(np.intp)
    v = np.floor((pts[..., 1] - spec.extent.y_min) * lam + 0.5).astype(np.intp)
    u = np.clip(u, 0, spec.h - 1)
    v = np.clip(v, 0, spec.w - 1)
    return np.stack([u, v], axis=-1)


def index_transform(point, spec: GridSpec) -> tuple[int, int]:
    """Single-point version of :func:`index_transform_batch`."""
    uv = index_transform_batch(np.asarray(point, dtype=np.float64)[None, :], spec)
    return int(uv[0, 0]), int(uv[0, 1])


def path_indices(poly: Polyline, n: int, spec: GridSpec) -> PositionIndexPath:
    """Resample to n reference points and integerize each into grid cells."""
    pts = resample_polyline(poly, n).points
    return PositionIndexPath(index_transform_batch(pts, spec))


def random_shift_augment(sd, shift_range: float = 10.0,
                         samples_per_road: int = 1, seed: int = 0):
    """Shifted copies of every SD road, semantics inherited unchanged.

    Each copy r/s draws its (dx, dy) uniformly from [-shift_range, shift_range]^2
    on an independent stream keyed by (seed, road index, sample index).
    """
    from .maps import SdMap, SdRoad

    if shift_range <= 0:
        raise ValueError("shift_range must be positive")
    if samples_per_road < 1:
        raise ValueError("samples_per_road must be >= 1")
    roads = []
    for r_idx, road in enumerate(sd.roads):
        for s_idx in range(samples_per_road):
            rng = stream_rng(seed, "shift-augment", r_idx, s_idx)
            delta = rng.uniform(-shift_range, shift_range, size=2)
            roads.append(SdRoad(
                id=f"{road.id}+s{s_idx}",
                polyline=Polyline(road.polyline.points + delta,
                                  closed=road.polyline.closed),
                road_type=road.road_type,
                lane_count=road.lane_count,
            ))
    return SdMap(roads=roads, extent=sd.extent, frame_id=sd.frame_id)


def chamfer_distance(a: Polyline, b: Polyline, n_samples: int = 100) -> float:
    """Symmetric Chamfer distance over uniformly resampled points."""
    pa = resample_polyline(a, n_samples).points
    pb = resample_polyline(b, n_samples).points
    d_ab = kernels.nearest_dists(pa, pb).mean()
    d_ba = kernels.nearest_dists(pb, pa).mean()
    return float((d_ab + d_ba) / 2.0)


def grid_coords(points: np.ndarray, extent: BevExtent,
                h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Meters -> continuous grid coordinates, clamped into the cell lattice."""
    pts = np.asarray(points, dtype=np.float64)
    gx = (pts[..., 0] - extent.x_min) / extent.span_x * (h - 1)
    gy = (pts[..., 1] - extent.y_min) / extent.span_y * (w - 1)
    return np.clip(gx, 0.0, h - 1), np.clip(gy, 0.0, w - 1)


def bilinear_sample_batch(grid: np.ndarray, points: np.ndarray,
                          extent: BevExtent) -> np.ndarray:
    """Bilinear interpolation of a dense (H, W, C) grid at N metric points."""
    h, w, _ = grid.shape
    gx, gy = grid_coords(points, extent, h, w)
    return kernels.bilinear_forward(grid, np.atleast_1d(gx), np.atleast_1d(gy))


def bilinear_sample(grid: np.ndarray, point, extent: BevExtent) -> np.ndarray:
    """Single-point bilinear sample; points outside the extent are clamped."""
    pt = np.asarray(point, dtype=np.float64)
    return bilinear_sample_batch(grid, pt[None, :], extent)[0]
