"""Map decoder stack: self-attention over instance queries, reference-point
decoding, instance-level lane attention, point-level bank attention and the
prediction heads. Forward passes build a tape so every parameter has an
analytic gradient.

Queries are handled as (m, d) tensors throughout; the per-instance
``InstanceQuery``/``MapPrediction`` views exist at the module boundaries.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kernels
from . import tape
from .bank import MapQueryBank, gather, load_bank, save_bank, BANK_MAGIC
from .geometry import BevExtent, GridSpec, grid_coords, index_transform_batch
from .rng import stream_rng
from .tape import Tensor

MODEL_MAGIC = b"MQD1"

ATTENTION_MODES = ("mqbank", "lane")


@dataclass(frozen=True)
class DecoderConfig:
    d: int = 64
    n: int = 10                 # reference points per instance
    layers: int = 3
    neighborhood_k: int = 3     # BEV keys per point: k x k cells
    num_classes: int = 3        # lane, pedestrian area, background
    num_laneline_types: int = 3
    attention_mode: str = "mqbank"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one decoder layer")
        if self.neighborhood_k < 1 or self.neighborhood_k % 2 == 0:
            raise ValueError("neighborhood_k must be odd and >= 1")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")


@dataclass
class MapPrediction:
    """Per-instance decoded map element (plain numpy views)."""

    class_logits: np.ndarray          # (3,)
    laneline_type_logits: np.ndarray  # (2, 3): left, right
    centerline: np.ndarray            # (n, 2) meters
    left_line: np.ndarray
    right_line: np.ndarray


@dataclass
class LayerOutput:
    """One decoder layer's batched predictions (tape tensors)."""

    class_logits: Tensor      # (m, 3)
    laneline_logits: Tensor   # (m, 2, 3)
    lines: Tensor             # (m, 3, n, 2): centerline, left, right
    ref_points: Tensor        # (m, n, 2)
    queries: Tensor           # (m, d) after this layer

    def predictions(self) -> list[MapPrediction]:
        out = []
        for i in range(self.class_logits.shape[0]):
            out.append(MapPrediction(
                class_logits=self.class_logits.data[i].copy(),
                laneline_type_logits=self.laneline_logits.data[i].copy(),
                centerline=self.lines.data[i, 0].copy(),
                left_line=self.lines.data[i, 1].copy(),
                right_line=self.lines.data[i, 2].copy(),
            ))
        return out


# -- building blocks -----------------------------------------------------------


class Linear:
    def __init__(self, n_in: int, n_out: int, rng, name: str):
        scale = 1.0 / math.sqrt(n_in)
        self.w = Tensor(rng.uniform(-scale, scale, size=(n_in, n_out)),
                        requires_grad=True, name=f"{name}.w")
        self.b = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def params(self) -> list[Tensor]:
        return [self.w, self.b]


class Mlp:
    """Two-layer perceptron with a rectifier nonlinearity."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng, name: str):
        self.l1 = Linear(n_in, hidden, rng, f"{name}.l1")
        self.l2 = Linear(hidden, n_out, rng, f"{name}.l2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(self.l1(x).relu())

    def params(self) -> list[Tensor]:
        return self.l1.params() + self.l2.params()


class PointFusionNet(Mlp):
    """Fuses n concatenated point queries (n*d) into one instance query (d)."""

    def __init__(self, n: int, d: int, rng, name: str = "fusion"):
        super().__init__(n * d, 2 * d, d, rng, name)


class AttentionBlock:
    """Learned Q/K/V projections for single-head scaled dot-product attention."""

    def __init__(self, d_query: int, d_key: int, d: int, rng, name: str):
        self.d = d
        self.wq = Linear(d_query, d, rng, f"{name}.wq")
        self.wk = Linear(d_key, d, rng, f"{name}.wk")
        self.wv = Linear(d_key, d, rng, f"{name}.wv")

    def params(self) -> list[Tensor]:
        return self.wq.params() + self.wk.params() + self.wv.params()


# -- core operations ---------------------------------------------------------------


def self_attention(queries: Tensor, block: AttentionBlock) -> Tensor:
    """softmax(QK^T / sqrt(d)) V over the instance queries, plus residual."""
    q = block.wq(queries)
    k = block.wk(queries)
    v = block.wv(queries)
    scores = (q @ k.T) * (1.0 / math.sqrt(block.d))
    attn = scores.softmax(axis=-1)
    return queries + attn @ v


def decode_reference_points(q_ins: Tensor, net: Mlp, extent: BevExtent,
                            n: int) -> Tensor:
    """Instance query -> n BEV points, sigmoid-squashed into the extent."""
    single = q_ins.ndim == 1
    q = q_ins.reshape(1, -1) if single else q_ins
    raw = net(q).reshape(q.shape[0], n, 2).sigmoid()
    span = np.array([extent.span_x, extent.span_y])
    origin = np.array([extent.x_min, extent.y_min])
    pts = raw * span + origin
    return pts[0] if single else pts


def bev_sample(grid: np.ndarray, extent: BevExtent, points: Tensor) -> Tensor:
    """Differentiable bilinear BEV read at metric points (grad w.r.t. points).

    The feature grid itself is a frozen oracle, so no gradient flows into it.
    """
    h, w, _ = grid.shape
    pts = points.data.reshape(-1, 2)
    gx_raw = (pts[:, 0] - extent.x_min) / extent.span_x * (h - 1)
    gy_raw = (pts[:, 1] - extent.y_min) / extent.span_y * (w - 1)
    gx = np.clip(gx_raw, 0.0, h - 1)
    gy = np.clip(gy_raw, 0.0, w - 1)
    data = kernels.bilinear_forward(grid, gx, gy)
    sx = (h - 1) / extent.span_x
    sy = (w - 1) / extent.span_y
    live_x = (gx_raw > 0.0) & (gx_raw < h - 1)
    live_y = (gy_raw > 0.0) & (gy_raw < w - 1)

    def bward(g):
        dgx, dgy = kernels.bilinear_backward(grid, gx, gy, np.ascontiguousarray(g))
        dpts = np.column_stack([dgx * sx * live_x, dgy * sy * live_y])
        points.accumulate(dpts.reshape(points.shape))

    return Tensor._node(data, (points,), bward)


def lane_attention_baseline(q_ins: Tensor, bev, p: Tensor,
                            block: AttentionBlock) -> Tensor:
    """Instance-level attention over the n bilinear BEV samples at p."""
    m, n, _ = p.shape
    samples = bev_sample(bev.grid, bev.extent, p).reshape(m, n, -1)
    q = block.wq(q_ins)                      # (m, d)
    k = block.wk(samples)                    # (m, n, d)
    v = block.wv(samples)
    scores = (q.reshape(m, 1, block.d) * k).sum(axis=2) * (1.0 / math.sqrt(block.d))
    attn = scores.softmax(axis=-1)           # (m, n)
    out = (attn.reshape(m, n, 1) * v).sum(axis=1)
    return q_ins + out


def mqbank_attention(q_ins: Tensor, bank: MapQueryBank, bev, p: Tensor,
                     fuse: PointFusionNet, block: AttentionBlock,
                     neighborhood_k: int = 3) -> Tensor:
    """Point-level bank attention: per reference point, gather the bank query,
    add the instance query, attend over the k x k BEV cell neighborhood, then
    fuse the n point readouts back into the instance query (residual)."""
    m, n, _ = p.shape
    flat_pts = p.data.reshape(-1, 2)
    # bank point queries at the integerized reference points
    uv = index_transform_batch(flat_pts, bank.spec)
    q_pts = gather(bank, uv).reshape(m, n, bank.d)
    q2 = (q_pts + q_ins.reshape(m, 1, bank.d)).reshape(m * n, bank.d)

    # constant BEV keys: k*k cells around each point's cell
    h, w, _ = bev.grid.shape
    gx, gy = grid_coords(flat_pts, bev.extent, h, w)
    cu = np.floor(gx + 0.5).astype(np.intp)
    cv = np.floor(gy + 0.5).astype(np.intp)
    keys = Tensor(kernels.neighborhood_gather(bev.grid, cu, cv, neighborhood_k))

    k2 = neighborhood_k * neighborhood_k
    q = block.wq(q2)                                   # (m*n, d)
    kk = block.wk(keys)                                # (m*n, k2, d)
    vv = block.wv(keys)
    scores = (q.reshape(m * n, 1, block.d) * kk).sum(axis=2)
    attn = (scores * (1.0 / math.sqrt(block.d))).softmax(axis=-1)
    readout = (attn.reshape(m * n, k2, 1) * vv).sum(axis=1)   # (m*n, d)
    fused = fuse(readout.reshape(m, n * bank.d))
    return q_ins + fused


def clip_to_extent(points: Tensor, extent: BevExtent) -> Tensor:
    """Clamp (..., 2) metric points into the extent (zero grad once clamped)."""
    center = np.array([(extent.x_min + extent.x_max) / 2.0,
                       (extent.y_min + extent.y_max) / 2.0])
    half = np.array([extent.span_x / 2.0, extent.span_y / 2.0])
    return ((points - center) / half).clip(-1.0, 1.0) * half + center


@dataclass
class PredictionHeads:
    class_head: Mlp
    left_type_head: Mlp
    right_type_head: Mlp
    geometry_head: Mlp

    def params(self) -> list[Tensor]:
        return (self.class_head.params() + self.left_type_head.params()
                + self.right_type_head.params() + self.geometry_head.params())


def prediction_heads(q_ins: Tensor, p_ref: Tensor, heads: PredictionHeads,
                     extent: BevExtent) -> LayerOutput:
    """Class / laneline-type logits plus per-point offsets on p_ref."""
    m, n, _ = p_ref.shape
    class_logits = heads.class_head(q_ins)
    left = heads.left_type_head(q_ins)
    right = heads.right_type_head(q_ins)
    lane_logits = tape.stack([left, right], axis=1)        # (m, 2, 3)
    offsets = heads.geometry_head(q_ins).reshape(m, 3, n, 2)
    lines = clip_to_extent(p_ref.reshape(m, 1, n, 2) + offsets, extent)
    return LayerOutput(class_logits=class_logits, laneline_logits=lane_logits,
                       lines=lines, ref_points=p_ref, queries=q_ins)


# -- the full stack ---------------------------------------------------------------------


class DecoderLayer:
    def __init__(self, cfg: DecoderConfig, bev_channels: int, rng, name: str):
        self.sa = AttentionBlock(cfg.d, cfg.d, cfg.d, rng, f"{name}.sa")
        self.cross = AttentionBlock(cfg.d, bev_channels, cfg.d, rng, f"{name}.cross")

    def params(self) -> list[Tensor]:
        return self.sa.params() + self.cross.params()


class MapDecoder:
    """Decoder parameters: L layers plus shared refpoint/fusion/head networks."""

    def __init__(self, cfg: DecoderConfig, bev_channels: int,
                 extent: BevExtent | None = None, seed: int = 0):
        self.cfg = cfg
        self.bev_channels = bev_channels
        self.extent = extent if extent is not None else BevExtent()
        rng = stream_rng(seed, "decoder-init")
        self.layer_blocks = [DecoderLayer(cfg, bev_channels, rng, f"layer{i}")
                             for i in range(cfg.layers)]
        self.refpoint_net = Mlp(cfg.d, 2 * cfg.d, 2 * cfg.n, rng, "refpoints")
        self.fusion = PointFusionNet(cfg.n, cfg.d, rng)
        self.heads = PredictionHeads(
            class_head=Mlp(cfg.d, 2 * cfg.d, cfg.num_classes, rng, "head.class"),
            left_type_head=Mlp(cfg.d, 2 * cfg.d, cfg.num_laneline_types, rng,
                               "head.left_type"),
            right_type_head=Mlp(cfg.d, 2 * cfg.d, cfg.num_laneline_types, rng,
                                "head.right_type"),
            geometry_head=Mlp(cfg.d, 2 * cfg.d, 6 * cfg.n, rng, "head.geometry"),
        )

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in self.layer_blocks:
            out.extend(layer.params())
        out.extend(self.refpoint_net.params())
        out.extend(self.fusion.params())
        out.extend(self.heads.params())
        return out


def decoder_forward(init_queries, bank: MapQueryBank | None, bev,
                    cfg: DecoderConfig, model: MapDecoder) -> list[LayerOutput]:
    """Run the L-layer decoder; every layer emits predictions (deep supervision)."""
    if isinstance(init_queries, Tensor):
        q = init_queries
    else:
        if not init_queries:
            raise ValueError("need at least one initial query")
        q = tape.stack([iq.vector for iq in init_queries], axis=0)
    if cfg.attention_mode == "mqbank" and bank is None:
        raise ValueError("mqbank attention requires a bank")
    outputs: list[LayerOutput] = []
    for layer in model.layer_blocks:
        q = self_attention(q, layer.sa)
        p = decode_reference_points(q, model.refpoint_net, model.extent, cfg.n)
        if cfg.attention_mode == "mqbank":
            q = mqbank_attention(q, bank, bev, p, model.fusion, layer.cross,
                                 cfg.neighborhood_k)
        else:
            q = lane_attention_baseline(q, bev, p, layer.cross)
        outputs.append(prediction_heads(q, p, model.heads, model.extent))
    return outputs


# -- checkpointing ------------------------------------------------------------------------


def save_checkpoint(path, bank: MapQueryBank, model: MapDecoder,
                    extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """MQD1 bundle: decoder config + named parameters + bank + extras."""
    import io

    extra = extra or {}
    params = model.params()
    header = {
        "config": {
            "d": model.cfg.d, "n": model.cfg.n, "layers": model.cfg.layers,
            "neighborhood_k": model.cfg.neighborhood_k,
            "num_classes": model.cfg.num_classes,
            "num_laneline_types": model.cfg.num_laneline_types,
            "attention_mode": model.cfg.attention_mode,
        },
        "bev_channels": model.bev_channels,
        "extent": {"x_min": model.extent.x_min, "x_max": model.extent.x_max,
                   "y_min": model.extent.y_min, "y_max": model.extent.y_max},
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
        "extra": {k: list(v.shape) for k, v in extra.items()},
        "meta": meta or {},
    }
    bank_buf = io.BytesIO()
    _write_bank_to(bank_buf, bank)
    bank_blob = bank_buf.getvalue()
    hdr_blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(hdr_blob)))
        fh.write(hdr_blob)
        fh.write(struct.pack("<I", len(bank_blob)))
        fh.write(bank_blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.data).tobytes())
        for key in sorted(extra):
            fh.write(np.ascontiguousarray(extra[key], dtype=np.float64).tobytes())


def _write_bank_to(fh, bank: MapQueryBank) -> None:
    header = {
        "h": bank.spec.h, "w": bank.spec.w, "d": bank.d,
        "cells_per_meter": bank.spec.cells_per_meter,
        "extent": {"x_min": bank.spec.extent.x_min, "x_max": bank.spec.extent.x_max,
                   "y_min": bank.spec.extent.y_min, "y_max": bank.spec.extent.y_max},
    }
    blob = json.dumps(header).encode("utf-8")
    fh.write(BANK_MAGIC)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    fh.write(np.ascontiguousarray(bank.values.data).tobytes())


def load_checkpoint(path):
    """Load an MQD1 bundle -> (bank, model, extra arrays, meta dict)."""
    import io

    from .bank import MapQueryBank as _Bank

    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise ValueError("not a model checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (blen,) = struct.unpack("<I", fh.read(4))
        bank_blob = fh.read(blen)
        tail = fh.read()

    bank = _read_bank_blob(bank_blob)
    cfg = DecoderConfig(**header["config"])
    extent = BevExtent(**header["extent"])
    model = MapDecoder(cfg, header["bev_channels"], extent=extent)
    offset = 0
    for p, spec in zip(model.params(), header["params"]):
        if p.name != spec["name"] or list(p.shape) != spec["shape"]:
            raise ValueError(f"checkpoint parameter mismatch at {spec['name']}")
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        p.data[...] = np.frombuffer(tail, dtype=np.float64, count=count,
                                    offset=offset).reshape(p.shape)
        offset += count * 8
    extra = {}
    for key in sorted(header["extra"]):
        shape = header["extra"][key]
        count = int(np.prod(shape)) if shape else 1
        extra[key] = np.frombuffer(tail, dtype=np.float64, count=count,
                                   offset=offset).reshape(shape).copy()
        offset += count * 8
    return bank, model, extra, header.get("meta", {})


def _read_bank_blob(blob: bytes):
    from .bank import MapQueryBank as _Bank

    if blob[:4] != BANK_MAGIC:
        raise ValueError("embedded bank blob is corrupt")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    vals = np.frombuffer(blob[8 + hlen:], dtype=np.float64).reshape(
        header["h"], header["w"], header["d"]).copy()
    spec = GridSpec(extent=BevExtent(**header["extent"]),
                    cells_per_meter=header["cells_per_meter"],
                    h=header["h"], w=header["w"])
    return _Bank(spec=spec, d=header["d"],
                 values=Tensor(vals, requires_grad=True, name="bank.values"))
