"""The map query bank: a learnable h x w grid of d-dimensional embeddings.

Cells are addressed through the integerized BEV index transform; lookups are
pure gathers whose gradients scatter-add back into exactly the touched cells.
SD-map-prior initialization turns augmented SD polylines into instance
queries by fusing their per-point bank vectors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kernels
from .geometry import BevExtent, GridSpec, PositionIndexPath, path_indices
from .rng import stream_rng
from .tape import Tensor

BANK_MAGIC = b"MQB1"


@dataclass
class MapQueryBank:
    spec: GridSpec
    d: int
    values: Tensor  # (h, w, d), learnable

    def __post_init__(self):
        if self.values.shape != (self.spec.h, self.spec.w, self.d):
            raise ValueError(f"bank values {self.values.shape} inconsistent with "
                             f"spec ({self.spec.h}, {self.spec.w}, {self.d})")
        if not np.all(np.isfinite(self.values.data)):
            raise ValueError("bank values must be finite")

    def cell_count(self) -> int:
        return self.spec.h * self.spec.w


@dataclass
class PointQuerySequence:
    vectors: Tensor  # (n, d)
    source_path: PositionIndexPath

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.source_path):
            raise ValueError("vector count must match the index path length")


@dataclass
class InstanceQuery:
    vector: Tensor  # (d,)
    semantic_tag: str | None = None


def new_bank(spec: GridSpec, d: int, init_scale: float = 0.1,
             seed: int = 0) -> MapQueryBank:
    """Fresh bank with values i.i.d. uniform in [-init_scale, init_scale]."""
    if d < 1:
        raise ValueError("embedding dim must be >= 1")
    rng = stream_rng(seed, "bank-init")
    vals = rng.uniform(-init_scale, init_scale, size=(spec.h, spec.w, d))
    return MapQueryBank(spec=spec, d=d,
                        values=Tensor(vals, requires_grad=True, name="bank.values"))


def gather(bank: MapQueryBank, uv: np.ndarray) -> Tensor:
    """Differentiable gather of bank cells at integer (u, v) rows."""
    uv = np.asarray(uv, dtype=np.intp)
    if uv.size and (uv.min() < 0 or uv[:, 0].max() >= bank.spec.h
                    or uv[:, 1].max() >= bank.spec.w):
        raise IndexError("bank index outside the grid")
    u, v = uv[:, 0].copy(), uv[:, 1].copy()
    vals = bank.values
    data = kernels.gather_cells(vals.data, u, v)

    def bward(g):
        if vals.grad is None:
            vals.grad = np.zeros_like(vals.data)
        kernels.scatter_add_cells(vals.grad, u, v, np.ascontiguousarray(g))

    return Tensor._node(data, (vals,), bward)


def lookup(bank: MapQueryBank, path: PositionIndexPath) -> PointQuerySequence:
    """Point queries for one reference-point index path."""
    return PointQuerySequence(vectors=gather(bank, path.indices),
                              source_path=path)


def init_query_matrix(bank: MapQueryBank, sd_aug, n: int, fuse):
    """Batched SD-prior initialization: one fused instance query per road.

    Returns (queries (m, d) Tensor or None when the map is empty, tags).
    """
    roads = sd_aug.roads
    if not roads:
        return None, []
    paths = [path_indices(r.polyline, n, bank.spec).indices for r in roads]
    uv = np.concatenate(paths, axis=0)
    point_queries = gather(bank, uv)  # (m*n, d)
    flat = point_queries.reshape(len(roads), n * bank.d)
    return fuse(flat), [r.road_type for r in roads]


def init_queries_from_sdmap(bank: MapQueryBank, sd_aug, n: int,
                            fuse) -> list[InstanceQuery]:
    """SD-map-prior initial instance queries, input order preserved."""
    matrix, tags = init_query_matrix(bank, sd_aug, n, fuse)
    if matrix is None:
        return []
    return [InstanceQuery(vector=matrix[i], semantic_tag=tag)
            for i, tag in enumerate(tags)]


def parameters(bank: MapQueryBank) -> np.ndarray:
    """Flat write-through view of the bank grid for the optimizer."""
    return bank.values.data.reshape(-1)


def save_bank(bank: MapQueryBank, path) -> None:
    header = {
        "h": bank.spec.h, "w": bank.spec.w, "d": bank.d,
        "cells_per_meter": bank.spec.cells_per_meter,
        "extent": {"x_min": bank.spec.extent.x_min, "x_max": bank.spec.extent.x_max,
                   "y_min": bank.spec.extent.y_min, "y_max": bank.spec.extent.y_max},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(bank.values.data).tobytes())


def load_bank(path) -> MapQueryBank:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BANK_MAGIC:
            raise ValueError(f"not a bank checkpoint (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        raw = fh.read()
    spec = GridSpec(extent=BevExtent(**header["extent"]),
                    cells_per_meter=header["cells_per_meter"],
                    h=header["h"], w=header["w"])
    vals = np.frombuffer(raw, dtype=np.float64).reshape(
        header["h"], header["w"], header["d"]).copy()
    return MapQueryBank(spec=spec, d=header["d"],
                        values=Tensor(vals, requires_grad=True, name="bank.values"))
