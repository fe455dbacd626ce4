"""Training and evaluation harness: AdamW with warmup+cosine schedule, the
scene pipeline for all three query-initialization modes, detection AP,
query-budget sweeps, PCA query projections and gradient checking.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tape
from .bank import MapQueryBank, init_query_matrix, new_bank
from .decoder import (DecoderConfig, LayerOutput, MapDecoder, MapPrediction,
                      Mlp, decoder_forward, load_checkpoint, save_checkpoint)
from .geometry import (BevExtent, GridSpec, Polyline, chamfer_distance,
                       random_shift_augment, resample_polyline)
from .maps import HdMap, SdMap
from .matching import (CLASS_BACKGROUND, CLASS_LANE, CLASS_PED, LossWeights,
                       total_loss)
from .rng import stream_rng
from .synth import (BevFeature, SceneConfig, generate_scene,
                    rasterize_bev_oracle)
from .tape import Tensor

INIT_MODES = ("random", "linear", "mqbank")
QUERY_BUDGETS = (50, 100, 200, 400, 800)
AP_THRESHOLDS = (0.5, 1.0, 1.5)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    learning_rate: float = 2e-4
    warmup_iters: int = 500
    warmup_ratio: float = 0.333
    min_lr: float = 2e-7
    weight_decay: float = 0.01
    seed: int = 0
    init_mode: str = "mqbank"
    attention_mode: str = "mqbank"
    query_budget: int = 50
    d: int = 64
    n: int = 10
    layers: int = 3
    neighborhood_k: int = 3
    bev_channels: int = 64
    cells_per_meter: float = 1.0
    bank_init_scale: float = 0.1
    shift_range: float = 10.0
    embed_seed: int = 0

    aug_variants: int = 2  # fixed shift draws cycled per scene during training

    def __post_init__(self):
        if self.learning_rate < 0 or self.min_lr < 0:
            raise ValueError("rates must be nonnegative")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.query_budget < 1:
            raise ValueError("query_budget must be positive")
        if self.aug_variants < 1:
            raise ValueError("aug_variants must be >= 1")

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(d=self.d, n=self.n, layers=self.layers,
                             neighborhood_k=self.neighborhood_k,
                             attention_mode=self.attention_mode)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        return TrainConfig(**json.loads(text))


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from warmup_ratio*lr, then cosine to min_lr at the final
    step (steps-1)."""
    base = cfg.learning_rate
    if step < cfg.warmup_iters:
        frac = step / cfg.warmup_iters
        return base * (cfg.warmup_ratio + (1.0 - cfg.warmup_ratio) * frac)
    last = max(cfg.steps - 1, cfg.warmup_iters + 1)
    t = min((step - cfg.warmup_iters) / (last - cfg.warmup_iters), 1.0)
    return cfg.min_lr + (base - cfg.min_lr) * 0.5 * (1.0 + math.cos(math.pi * t))


class AdamW:
    """First-order moment-adaptive optimizer with decoupled weight decay."""

    def __init__(self, params: list[Tensor], weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class Scene:
    scene_id: str
    hd: HdMap
    sd: SdMap
    bev: BevFeature


def build_scene(seed: int, cfg: TrainConfig,
                scene_cfg: SceneConfig | None = None) -> Scene:
    scene_cfg = scene_cfg or SceneConfig()
    hd, sd, _ = generate_scene(seed, scene_cfg)
    spec = GridSpec(extent=scene_cfg.extent,
                    cells_per_meter=cfg.cells_per_meter)
    bev = rasterize_bev_oracle(hd, spec, cfg.bev_channels, cfg.embed_seed)
    return Scene(scene_id=f"scene_{seed:05d}", hd=hd, sd=sd, bev=bev)


class TrainState:
    """Bank + decoder (+ init-mode extras) with a deterministic param order."""

    def __init__(self, cfg: TrainConfig, extent: BevExtent | None = None):
        self.cfg = cfg
        extent = extent if extent is not None else BevExtent()
        self.extent = extent
        spec = GridSpec(extent=extent, cells_per_meter=cfg.cells_per_meter)
        self.bank = new_bank(spec, cfg.d, cfg.bank_init_scale, cfg.seed)
        self.dec_cfg = cfg.decoder_config()
        self.model = MapDecoder(self.dec_cfg, cfg.bev_channels, extent=extent,
                                seed=cfg.seed)
        self.query_embedding: Tensor | None = None
        self.linear_init_net: Mlp | None = None
        if cfg.init_mode == "random":
            rng = stream_rng(cfg.seed, "query-embedding")
            self.query_embedding = Tensor(
                rng.uniform(-cfg.bank_init_scale, cfg.bank_init_scale,
                            size=(cfg.query_budget, cfg.d)),
                requires_grad=True, name="query_embedding")
        elif cfg.init_mode == "linear":
            self.linear_init_net = Mlp(2 * cfg.n, 2 * cfg.d, cfg.d,
                                       stream_rng(cfg.seed, "linear-init"),
                                       "linear_init")

    def params(self) -> list[Tensor]:
        out = [self.bank.values] + self.model.params()
        if self.query_embedding is not None:
            out.append(self.query_embedding)
        if self.linear_init_net is not None:
            out.extend(self.linear_init_net.params())
        return out

    # -- query initialization -------------------------------------------------

    def initial_queries(self, scene: Scene, aug_seed: int) -> Tensor:
        cfg = self.cfg
        budget = cfg.query_budget
        if cfg.init_mode == "random":
            return self.query_embedding
        n_roads = len(scene.sd.roads)
        if n_roads:
            samples = max(1, math.ceil(budget / n_roads))
            aug = random_shift_augment(scene.sd, cfg.shift_range, samples,
                                       aug_seed)
        else:
            aug = scene.sd
        if cfg.init_mode == "mqbank":
            matrix, _ = init_query_matrix(self.bank, aug, cfg.n,
                                          self.model.fusion)
        else:  # linear
            matrix = self._linear_init(aug)
        return self._reconcile_budget(matrix, budget)

    def _linear_init(self, aug: SdMap) -> Tensor | None:
        if not aug.roads:
            return None
        feats = np.stack([
            self._normalized_coords(road.polyline) for road in aug.roads])
        return self.linear_init_net(Tensor(feats))

    def _normalized_coords(self, poly: Polyline) -> np.ndarray:
        pts = resample_polyline(poly, self.cfg.n).points
        ext = self.extent
        nx = (pts[:, 0] - ext.x_min) / ext.span_x
        ny = (pts[:, 1] - ext.y_min) / ext.span_y
        return np.clip(np.column_stack([nx, ny]), 0.0, 1.0).reshape(-1)

    def _reconcile_budget(self, matrix: Tensor | None, budget: int) -> Tensor:
        """Pad with bank-average queries / truncate by input order."""
        if matrix is not None and matrix.shape[0] == budget:
            return matrix
        if matrix is not None and matrix.shape[0] > budget:
            return matrix[:budget]
        pad_count = budget - (0 if matrix is None else matrix.shape[0])
        bank_mean = self.bank.values.mean(axis=(0, 1)).reshape(1, -1)
        pad = bank_mean * np.ones((pad_count, 1))
        if matrix is None:
            return pad
        return tape.concat([matrix, pad], axis=0)

    def forward(self, scene: Scene, aug_seed: int) -> list[LayerOutput]:
        q0 = self.initial_queries(scene, aug_seed)
        return decoder_forward(q0, self.bank, scene.bev, self.dec_cfg,
                               self.model)

    def save(self, path) -> None:
        extra = {}
        if self.query_embedding is not None:
            extra["query_embedding"] = self.query_embedding.data
        if self.linear_init_net is not None:
            for p in self.linear_init_net.params():
                extra[p.name] = p.data
        meta = {"train_config": asdict(self.cfg)}
        save_checkpoint(path, self.bank, self.model, extra=extra, meta=meta)

    @staticmethod
    def load(path) -> "TrainState":
        bank, model, extra, meta = load_checkpoint(path)
        cfg = TrainConfig(**meta["train_config"])
        state = TrainState(cfg, extent=model.extent)
        state.bank = bank
        state.model = model
        if state.query_embedding is not None:
            state.query_embedding.data[...] = extra["query_embedding"]
        if state.linear_init_net is not None:
            for p in state.linear_init_net.params():
                p.data[...] = extra[p.name]
        return state


@dataclass
class TrainResult:
    state: TrainState
    trace: list[dict]

    def final_loss(self) -> float:
        return self.trace[-1]["total"] if self.trace else math.nan

    def initial_loss(self) -> float:
        return self.trace[0]["total"] if self.trace else math.nan


def train(cfg: TrainConfig, scenes: list[Scene],
          weights: LossWeights | None = None,
          trace_path=None) -> TrainResult:
    """Deterministic single-worker training over the scene list (round-robin).

    Aborts with a diagnostic if the loss leaves the finite range.
    """
    if not scenes:
        raise ValueError("need at least one scene")
    weights = weights or LossWeights()
    state = TrainState(cfg, extent=scenes[0].hd.extent)
    opt = AdamW(state.params(), weight_decay=cfg.weight_decay)
    from .matching import prepare_targets
    targets_cache = [prepare_targets(s.hd, cfg.n) for s in scenes]
    trace: list[dict] = []
    sink = open(trace_path, "w") if trace_path else None
    try:
        for step in range(cfg.steps):
            scene_idx = step % len(scenes)
            scene = scenes[scene_idx]
            variant = (step // len(scenes)) % cfg.aug_variants
            aug_seed = _aug_seed(cfg.seed, variant, scene_idx)
            outputs = state.forward(scene, aug_seed)
            breakdown = total_loss(outputs, scene.hd, weights, state.dec_cfg,
                                   targets=targets_cache[scene_idx])
            if not math.isfinite(breakdown.total):
                raise RuntimeError(
                    f"training diverged at step {step}: total loss "
                    f"{breakdown.total!r} on {scene.scene_id}")
            lr = lr_schedule(step, cfg)
            opt.zero_grad()
            breakdown.node.backward()
            opt.step(lr)
            record = {"step": step, "scene": scene.scene_id, "lr": lr,
                      "total": breakdown.total,
                      "l1": breakdown.l1_geometry,
                      "focal": breakdown.focal_class,
                      "ce": breakdown.ce_laneline}
            trace.append(record)
            if sink:
                sink.write(json.dumps(record) + "\n")
    finally:
        if sink:
            sink.close()
    return TrainResult(state=state, trace=trace)


def _aug_seed(seed: int, variant: int, scene_idx: int) -> int:
    return (seed * 1_000_003 + variant * 1009 + scene_idx) % (2 ** 31)


def eval_aug_seed(seed: int, scene_idx: int) -> int:
    """Evaluation reuses the first training augmentation variant."""
    return _aug_seed(seed, 0, scene_idx)


# -- evaluation ------------------------------------------------------------------


@dataclass
class EvalResult:
    det_lane: float
    det_ped: float
    det_avg: float
    chamfer_lane: float
    chamfer_ped: float
    per_threshold: dict[float, dict[str, float]] = field(default_factory=dict)

    def det_avg_at(self, threshold: float) -> float:
        row = self.per_threshold[threshold]
        return (row["lane"] + row["ped"]) / 2.0


def predictions_with_confidence(layer: LayerOutput):
    """Final-layer predictions paired with their class probability vectors."""
    out = []
    for p in layer.predictions():
        e = np.exp(p.class_logits - p.class_logits.max())
        out.append((p, e / e.sum()))
    return out


def evaluate(preds, gt: HdMap) -> EvalResult:
    """Detection AP per class, averaged over Chamfer thresholds.

    ``preds`` is a list of (MapPrediction, class_probs) pairs (see
    :func:`predictions_with_confidence`); every prediction is a candidate for
    every class, ranked by that class's probability, which follows the usual
    set-prediction mAP convention.
    """
    return evaluate_scenes([(preds, gt)])


def evaluate_scenes(pairs) -> EvalResult:
    """Aggregate AP over (preds, gt) scene pairs; matching stays per scene."""
    class_names = {CLASS_LANE: "lane", CLASS_PED: "ped"}
    per_threshold: dict[float, dict[str, float]] = {t: {} for t in AP_THRESHOLDS}
    chamfer_by_class = {CLASS_LANE: [], CLASS_PED: []}
    ap_means = {}
    for cls in (CLASS_LANE, CLASS_PED):
        aps = {}
        for thr in AP_THRESHOLDS:
            aps[thr], matched = _class_ap(pairs, cls, thr)
            if thr == max(AP_THRESHOLDS):
                chamfer_by_class[cls] = matched
        for thr in AP_THRESHOLDS:
            per_threshold[thr][class_names[cls]] = aps[thr]
        ap_means[cls] = float(np.mean([aps[t] for t in AP_THRESHOLDS]))
    det_lane, det_ped = ap_means[CLASS_LANE], ap_means[CLASS_PED]
    return EvalResult(
        det_lane=det_lane, det_ped=det_ped,
        det_avg=(det_lane + det_ped) / 2.0,
        chamfer_lane=_mean_or_nan(chamfer_by_class[CLASS_LANE]),
        chamfer_ped=_mean_or_nan(chamfer_by_class[CLASS_PED]),
        per_threshold=per_threshold,
    )


def _mean_or_nan(vals):
    return float(np.mean(vals)) if vals else math.nan


def _class_ap(pairs, cls: int, threshold: float):
    """Greedy confidence-ordered matching + 11-point interpolated AP."""
    rows = []  # (confidence, order, is_tp, chamfer)
    total_gt = 0
    order = 0
    for preds, gt in pairs:
        gt_lines = []
        for inst in gt.instances:
            gcls = CLASS_PED if inst.cls == "pedestrian_area" else CLASS_LANE
            if gcls == cls:
                gt_lines.append(inst.centerline)
        total_gt += len(gt_lines)
        cand = [(p, float(probs[cls]), i)
                for i, (p, probs) in enumerate(preds)]
        # equal confidence: higher index later
        cand.sort(key=lambda t: (-t[1], t[2]))
        taken = [False] * len(gt_lines)
        for p, conf, idx in cand:
            best_j, best_d = -1, math.inf
            for j, line in enumerate(gt_lines):
                if taken[j]:
                    continue
                pred_line = Polyline(p.centerline, closed=line.closed)
                d = chamfer_distance(pred_line, line)
                if d < best_d:
                    best_j, best_d = j, d
            if best_j >= 0 and best_d <= threshold:
                taken[best_j] = True
                rows.append((conf, order, True, best_d))
            else:
                rows.append((conf, order, False, math.nan))
            order += 1
    if total_gt == 0:
        return 0.0, []
    rows.sort(key=lambda r: (-r[0], r[1]))
    tp = np.cumsum([1.0 if r[2] else 0.0 for r in rows]) if rows else np.array([])
    fp = np.cumsum([0.0 if r[2] else 1.0 for r in rows]) if rows else np.array([])
    if not rows:
        return 0.0, []
    recall = tp / total_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        mask = recall >= r - 1e-12
        ap += precision[mask].max() if mask.any() else 0.0
    matched = [r[3] for r in rows if r[2]]
    return ap / 11.0, matched


def eval_state(state: TrainState, scenes: list[Scene]) -> EvalResult:
    pairs = []
    for idx, scene in enumerate(scenes):
        outputs = state.forward(scene, eval_aug_seed(state.cfg.seed, idx))
        pairs.append((predictions_with_confidence(outputs[-1]), scene.hd))
    return evaluate_scenes(pairs)


# -- sweeps -----------------------------------------------------------------------


def sweep_queries(cfg_template: TrainConfig, budgets,
                  scenes: list[Scene], modes=("mqbank", "random"),
                  seeds=(0,), out_path=None) -> list[dict]:
    """Train/evaluate per (budget, init mode, seed); returns plot-ready rows."""
    rows = []
    for budget in budgets:
        for mode in modes:
            for seed in seeds:
                cfg = replace(cfg_template, query_budget=int(budget),
                              init_mode=mode, seed=int(seed))
                result = train(cfg, scenes)
                ev = eval_state(result.state, scenes)
                rows.append({
                    "budget": int(budget), "init_mode": mode, "seed": int(seed),
                    "det_lane": ev.det_lane, "det_ped": ev.det_ped,
                    "det_avg": ev.det_avg,
                    "det_avg_1p5": ev.det_avg_at(1.5),
                    "final_loss": result.final_loss(),
                })
    if out_path:
        Path(out_path).write_text(json.dumps(rows, indent=2))
    return rows


# -- PCA --------------------------------------------------------------------------


def pca_project(queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project d-vectors onto the top-2 principal axes by power iteration.

    Returns (N, 2) coordinates and the two explained-variance ratios. The
    sign convention makes each axis's first nonzero component positive.
    """
    x = np.asarray(queries, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 queries")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (x.shape[0] - 1)
    trace = float(np.trace(cov))
    if trace <= 1e-300:
        return np.zeros((x.shape[0], 2)), np.zeros(2)
    axes = []
    values = []
    work = cov.copy()
    for comp in range(2):
        vec, val = _power_iteration(work, previous=axes)
        axes.append(vec)
        values.append(val)
        work = work - val * np.outer(vec, vec)
    basis = np.column_stack(axes)
    for k in range(2):
        col = basis[:, k]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if len(nz) and col[nz[0]] < 0:
            basis[:, k] = -col
    proj = centered @ basis
    ratios = np.array(values) / trace
    return proj, np.clip(ratios, 0.0, 1.0)


def _power_iteration(mat: np.ndarray, previous, iters: int = 100000,
                     tol: float = 1e-13):
    d = mat.shape[0]
    vec = np.ones(d) / math.sqrt(d)
    for prev in previous:
        vec -= (vec @ prev) * prev
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        vec = _orthogonal_seed(previous, d)
    else:
        vec /= norm
    val = 0.0
    for _ in range(iters):
        nxt = mat @ vec
        for prev in previous:
            nxt -= (nxt @ prev) * prev
        norm = np.linalg.norm(nxt)
        if norm < 1e-15:
            return _orthogonal_seed(previous, d), 0.0
        nxt /= norm
        val = float(nxt @ mat @ nxt)
        # converge on the vector, not the (quadratically early) eigenvalue
        if min(np.linalg.norm(nxt - vec), np.linalg.norm(nxt + vec)) <= tol:
            return nxt, val
        vec = nxt
    return vec, val


def _orthogonal_seed(previous, d: int) -> np.ndarray:
    for k in range(d):
        cand = np.zeros(d)
        cand[k] = 1.0
        for prev in previous:
            cand -= (cand @ prev) * prev
        norm = np.linalg.norm(cand)
        if norm > 1e-9:
            return cand / norm
    return np.zeros(d)


# -- gradient checking -------------------------------------------------------------


GRAD_COMPONENTS = ("bank", "self_attention", "lane_attention",
                   "mqbank_attention", "refpoints", "fusion", "heads",
                   "losses", "full")


@dataclass
class GradCheckEntry:
    component: str
    max_rel_err: float
    n_entries: int


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e.max_rel_err <= self.tol for e in self.entries)

    def worst(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)


def grad_check(selector="full", tol: float = 1e-4,
               corrupt=None) -> GradCheckReport:
    """Compare every parameter entry's analytic gradient against central
    finite differences (step 1e-5, double precision) on fixed tiny instances.

    Relative error uses an absolute floor of 1e-4 in the denominator so that
    mathematically-zero gradients are compared against FD cancellation noise
    absolutely. ``corrupt(name, grad) -> grad`` perturbs analytic gradients
    (negative-control fixture). Unknown selectors yield an empty passing
    report.
    """
    if isinstance(selector, str):
        wanted = GRAD_COMPONENTS if selector == "all" else (selector,)
    else:
        wanted = tuple(selector)
    entries = []
    for comp in wanted:
        build = _GRAD_FIXTURES.get(comp)
        if build is None:
            continue
        loss_fn, params = build()
        err, count = _fd_compare(loss_fn, params, corrupt)
        entries.append(GradCheckEntry(component=comp, max_rel_err=err,
                                      n_entries=count))
    return GradCheckReport(entries=entries, tol=tol)


def _fd_compare(loss_fn, params, corrupt=None, step: float = 1e-5):
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        g = np.array(g)
        if corrupt is not None:
            g = corrupt(p.name, g)
        analytic.append(g)
    worst = 0.0
    count = 0
    for p, ana in zip(params, analytic):
        flat = p.data.ravel()
        aflat = ana.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn().item()
            flat[i] = orig - step
            fm = loss_fn().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * step)
            denom = max(abs(aflat[i]), abs(fd), 1e-4)
            worst = max(worst, abs(aflat[i] - fd) / denom)
            count += 1
    return worst, count


def _tiny_setup():
    extent = BevExtent(0.0, 10.0, 0.0, 10.0)
    cfg = TrainConfig(steps=1, d=8, n=4, layers=2, bev_channels=6,
                      cells_per_meter=0.5, query_budget=3, seed=13)
    state = TrainState(cfg, extent=extent)
    rng = stream_rng(99, "gradcheck")
    grid = rng.normal(size=(state.bank.spec.h, state.bank.spec.w, 6))
    bev = BevFeature(grid=grid, extent=extent)
    q0 = Tensor(rng.normal(size=(3, 8)), requires_grad=True, name="q0")
    p_ref = Tensor(rng.uniform(2.0, 8.0, size=(3, 4, 2)), requires_grad=True,
                   name="p_ref")
    return state, bev, q0, p_ref, rng


def _tiny_gt(extent: BevExtent) -> HdMap:
    from .maps import HdInstance
    line = np.column_stack([np.linspace(1.0, 9.0, 4), np.full(4, 3.0)])
    ring = Polyline(np.array([[4.0, 6.0], [6.5, 6.0], [6.5, 8.0], [4.0, 8.0]]),
                    closed=True)
    return HdMap(instances=[
        HdInstance(id="lane_0_0", cls="lane", centerline=Polyline(line),
                   left_line=Polyline(line + [0, 0.5]),
                   right_line=Polyline(line - [0, 0.5]),
                   laneline_types=("solid", "dashed")),
        HdInstance(id="ped_0", cls="pedestrian_area", centerline=ring,
                   left_line=ring, right_line=ring,
                   laneline_types=("none", "none")),
    ], extent=extent)


def _fixture_bank():
    from .bank import gather
    state, bev, q0, p_ref, rng = _tiny_setup()
    uv = np.array([[0, 0], [3, 4], [3, 4], [5, 2]])
    w = rng.normal(size=(4, 8))
    return (lambda: (gather(state.bank, uv) * w).sum(),
            [state.bank.values])


def _fixture_self_attention():
    from .decoder import self_attention
    state, bev, q0, p_ref, rng = _tiny_setup()
    block = state.model.layer_blocks[0].sa
    return (lambda: (self_attention(q0, block) ** 2.0).sum(),
            [q0] + block.params())


def _fixture_lane_attention():
    from .decoder import lane_attention_baseline
    state, bev, q0, p_ref, rng = _tiny_setup()
    block = state.model.layer_blocks[0].cross
    return (lambda: (lane_attention_baseline(q0, bev, p_ref, block) ** 2.0).sum(),
            [q0, p_ref] + block.params())


def _fixture_mqbank_attention():
    from .decoder import mqbank_attention
    state, bev, q0, p_ref, rng = _tiny_setup()
    block = state.model.layer_blocks[0].cross
    fuse = state.model.fusion
    return (lambda: (mqbank_attention(q0, state.bank, bev, p_ref, fuse,
                                      block) ** 2.0).sum(),
            [q0, state.bank.values] + fuse.params() + block.params())


def _fixture_refpoints():
    from .decoder import decode_reference_points
    state, bev, q0, p_ref, rng = _tiny_setup()
    net = state.model.refpoint_net
    w = rng.normal(size=(3, 4, 2))
    return (lambda: (decode_reference_points(q0, net, state.extent, 4) * w).sum(),
            [q0] + net.params())


def _fixture_fusion():
    state, bev, q0, p_ref, rng = _tiny_setup()
    fuse = state.model.fusion
    x = Tensor(rng.normal(size=(3, 4 * 8)), requires_grad=True, name="fuse_in")
    return (lambda: (fuse(x) ** 2.0).sum(), [x] + fuse.params())


def _fixture_heads():
    from .decoder import prediction_heads
    state, bev, q0, p_ref, rng = _tiny_setup()
    heads = state.model.heads
    w = rng.normal(size=(3, 3, 4, 2))

    def loss():
        out = prediction_heads(q0, p_ref, heads, state.extent)
        return ((out.lines * w).sum() + (out.class_logits ** 2.0).sum()
                + (out.laneline_logits ** 2.0).sum())

    return loss, [q0, p_ref] + heads.params()


def _fixture_losses():
    from .matching import ce_loss, dice_loss, focal_loss
    state, bev, q0, p_ref, rng = _tiny_setup()
    logits = Tensor(rng.normal(size=(5, 3)), requires_grad=True, name="logits")
    targets = rng.integers(0, 3, size=5)
    mask = Tensor(rng.uniform(0.05, 0.95, size=(6, 5)), requires_grad=True,
                  name="mask")
    gt_mask = (rng.uniform(size=(6, 5)) > 0.5).astype(float)
    lines = Tensor(rng.uniform(1.0, 9.0, size=(2, 3, 4, 2)),
                   requires_grad=True, name="lines")
    gt_lines = rng.uniform(1.0, 9.0, size=(2, 3, 4, 2))

    def loss():
        return (focal_loss(logits, targets, 0.25, 2.0)
                + ce_loss(logits, targets)
                + dice_loss(mask, gt_mask)
                + (lines - gt_lines).abs().mean())

    return loss, [logits, mask, lines]


def _fixture_full():
    """End-to-end decoder stack (bank -> attention -> heads, L=2) under a
    fixed random linear readout of every output head.

    The Hungarian/equal-points matching is deliberately not inside this
    functional: the composed loss is only piecewise-smooth in the parameters,
    so finite differences across an assignment flip would compare garbage.
    Its differentiable path is checked at a stable point by the losses
    fixture and the matching test suite.
    """
    state, bev, q0, p_ref, rng = _tiny_setup()
    w_lines = rng.normal(size=(3, 3, 4, 2))
    w_cls = rng.normal(size=(3, 3))
    w_lane = rng.normal(size=(3, 2, 3))

    def loss():
        outputs = decoder_forward(q0, state.bank, bev, state.dec_cfg,
                                  state.model)
        acc = None
        for layer in outputs:
            term = ((layer.lines * w_lines).sum()
                    + ((layer.class_logits * w_cls).sum() ** 2.0)
                    + (layer.laneline_logits * w_lane).sum())
            acc = term if acc is None else acc + term
        return acc

    return loss, [q0] + state.params()


_GRAD_FIXTURES = {
    "bank": _fixture_bank,
    "self_attention": _fixture_self_attention,
    "lane_attention": _fixture_lane_attention,
    "mqbank_attention": _fixture_mqbank_attention,
    "refpoints": _fixture_refpoints,
    "fusion": _fixture_fusion,
    "heads": _fixture_heads,
    "losses": _fixture_losses,
    "full": _fixture_full,
}
