"""Set-prediction matching and the loss stack.

Instance-level Hungarian assignment over a class+geometry cost, the
order/direction-robust equal-points geometry cost, and the L1 / focal /
cross-entropy / Dice losses with analytic gradients through the tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels as kernels
from . import tape
from .geometry import DegeneratePolylineError, Polyline, resample_polyline
from .maps import HdMap, INSTANCE_CLASSES, LANELINE_TYPES
from .tape import Tensor

CLASS_LANE, CLASS_PED, CLASS_BACKGROUND = 0, 1, 2
_CLASS_INDEX = {name: i for i, name in enumerate(INSTANCE_CLASSES)}
_LANELINE_INDEX = {name: i for i, name in enumerate(LANELINE_TYPES)}

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class Ordering:
    """A permitted reordering of ground-truth points (direction/cyclic shift)."""

    reversed: bool
    shift: int
    code: int

    @staticmethod
    def from_code(code: int, n: int) -> "Ordering":
        rev, shift = divmod(int(code), n)
        return Ordering(reversed=bool(rev), shift=shift, code=int(code))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return kernels.apply_ordering(points, self.code)


@dataclass
class Assignment:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    total_cost: float = 0.0

    def matched_predictions(self) -> list[int]:
        return [p for p, _ in self.pairs]


@dataclass
class LossBreakdown:
    l1_geometry: float
    focal_class: float
    ce_laneline: float
    dice_mask: float
    weights: dict[str, float]
    total: float
    node: Tensor | None = None  # differentiable scalar, backward() entry point


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    focal: float = 1.0
    ce: float = 0.5
    dice: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    match_cls: float = 2.0
    match_geo: float = 1.0
    mask_branch: bool = False

    def as_dict(self) -> dict[str, float]:
        return {"l1": self.l1, "focal": self.focal, "ce": self.ce,
                "dice": self.dice}


# -- geometry cost -------------------------------------------------------------


def equal_points_cost(pred, gt: Polyline, closed: bool | None = None,
                      n: int | None = None) -> tuple[float, Ordering]:
    """Min over permitted orderings of the mean per-point L1 distance.

    Open lines may match forward or reversed; closed rings additionally try
    every cyclic shift (2n orderings total). Ties go to the first ordering
    in code order, so an exact forward match reports "forward".
    """
    pred_pts = pred.points if isinstance(pred, Polyline) else np.asarray(pred, float)
    if closed is None:
        closed = gt.closed
    count = n if n is not None else pred_pts.shape[0]
    if pred_pts.shape[0] != count:
        raise ValueError(f"prediction must carry {count} points")
    gt_pts = resample_polyline(gt, count).points
    costs, orders = kernels.equal_points_costs(
        pred_pts[None, :, :], gt_pts[None, :, :], np.array([closed]))
    return float(costs[0, 0]), Ordering.from_code(int(orders[0, 0]), count)


# -- Hungarian assignment ----------------------------------------------------------


def hungarian_assign(cost_matrix: np.ndarray,
                     refine_ties: bool = True) -> Assignment:
    """Minimum-cost bipartite assignment of predictions to ground truths.

    With ``refine_ties`` the result is the lexicographically smallest optimal
    pair sequence; the refinement costs extra solver calls, so the training
    hot path disables it (the solver itself is deterministic either way).
    """
    cost = np.asarray(cost_matrix, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost matrix must be 2D")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    best_total = float(cost[rows, cols].sum())
    if not refine_ties:
        pairs = sorted(zip(rows.tolist(), cols.tolist()))
        return Assignment(pairs=pairs, total_cost=best_total)
    return Assignment(pairs=_lexicographic_refine(cost, best_total),
                      total_cost=best_total)


def _lexicographic_refine(cost: np.ndarray, best_total: float,
                          tol: float = 1e-9) -> list[tuple[int, int]]:
    """Lexicographically smallest pair sequence among optimal assignments."""
    n_pred, n_gt = cost.shape
    rem_p = list(range(n_pred))
    rem_g = list(range(n_gt))
    pairs: list[tuple[int, int]] = []
    fixed = 0.0
    while len(pairs) < min(n_pred, n_gt) and rem_p:
        p = rem_p[0]
        chosen = None
        for g in rem_g:
            sub_p = [x for x in rem_p if x != p]
            sub_g = [y for y in rem_g if y != g]
            completion = 0.0
            if sub_p and sub_g:
                sub = cost[np.ix_(sub_p, sub_g)]
                r2, c2 = linear_sum_assignment(sub)
                completion = float(sub[r2, c2].sum())
            if fixed + cost[p, g] + completion <= best_total + tol:
                chosen = g
                break
        if chosen is None:
            rem_p.pop(0)  # p stays unmatched in every optimal completion
            continue
        pairs.append((p, chosen))
        fixed += cost[p, chosen]
        rem_p.pop(0)
        rem_g.remove(chosen)
    return pairs


# -- classification losses -----------------------------------------------------------


def _softmax_prob(logits: Tensor, index) -> Tensor:
    probs = Tensor.as_tensor(logits).softmax(axis=-1)
    if probs.ndim == 1:
        return probs[int(index)]
    targets = np.asarray(index, dtype=np.intp)
    return probs[np.arange(probs.shape[0]), targets]


def focal_loss(logits, target, alpha: float = 0.25, gamma: float = 0.0) -> Tensor:
    """-alpha_t (1 - p_t)^gamma log p_t; alpha weights foreground, 1-alpha
    background. Accepts one (3,) logit row or an (m, 3) batch (returns mean)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if gamma < 0.0:
        raise ValueError("gamma must be >= 0")
    logits = Tensor.as_tensor(logits)
    p_t = _softmax_prob(logits, target)
    log_p = p_t.maximum(_LOG_FLOOR).log()
    if logits.ndim == 1:
        alpha_t = alpha if int(target) != CLASS_BACKGROUND else 1.0 - alpha
    else:
        tgt = np.asarray(target, dtype=np.intp)
        alpha_t = np.where(tgt == CLASS_BACKGROUND, 1.0 - alpha, alpha)
    if gamma == 0.0:
        focal = -(log_p * alpha_t)
    else:
        focal = -((1.0 - p_t) ** gamma) * alpha_t * log_p
    return focal if focal.ndim == 0 else focal.mean()


def ce_loss(logits, target) -> Tensor:
    """Softmax cross-entropy, log clamped at 1e-12; batches return the mean."""
    p_t = _softmax_prob(Tensor.as_tensor(logits), target)
    loss = -p_t.maximum(_LOG_FLOOR).log()
    return loss if loss.ndim == 0 else loss.mean()


def dice_loss(pred_mask, gt_mask, eps: float = 1.0) -> Tensor:
    """1 - (2 sum(p*g) + eps) / (sum(p) + sum(g) + eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    pred = Tensor.as_tensor(pred_mask)
    gt = np.asarray(gt_mask, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    inter = (pred * gt).sum()
    denom = pred.sum() + float(gt.sum()) + eps
    return 1.0 - (inter * 2.0 + eps) / denom


# -- the full per-scene loss ------------------------------------------------------------


@dataclass
class GtTargets:
    """Ground truth pre-resampled to n points per line, ready for matching."""

    lines: np.ndarray        # (G, 3, n, 2): centerline, left, right
    classes: np.ndarray      # (G,) int
    laneline_types: np.ndarray  # (G, 2) int
    closed: np.ndarray       # (G,) bool


def prepare_targets(gt: HdMap, n: int) -> GtTargets:
    count = len(gt.instances)
    lines = np.zeros((count, 3, n, 2))
    classes = np.zeros(count, dtype=np.intp)
    lanelines = np.zeros((count, 2), dtype=np.intp)
    closed = np.zeros(count, dtype=bool)
    for j, inst in enumerate(gt.instances):
        for li, line in enumerate((inst.centerline, inst.left_line,
                                   inst.right_line)):
            lines[j, li] = resample_polyline(line, n).points
        classes[j] = _CLASS_INDEX[inst.cls]
        lanelines[j] = [_LANELINE_INDEX[t] for t in inst.laneline_types]
        closed[j] = inst.centerline.closed
    return GtTargets(lines=lines, classes=classes, laneline_types=lanelines,
                     closed=closed)


def match_layer(class_logits: np.ndarray, pred_centers: np.ndarray,
                targets: GtTargets, weights: LossWeights,
                refine_ties: bool = False):
    """Cost matrix (class + equal-points geometry) -> assignment + orderings."""
    probs = _np_softmax(class_logits)
    cls_cost = 1.0 - probs[:, targets.classes]          # (m, G)
    geo_cost, orders = kernels.equal_points_costs(
        np.ascontiguousarray(pred_centers), targets.lines[:, 0], targets.closed)
    cost = weights.match_cls * cls_cost + weights.match_geo * geo_cost
    assignment = hungarian_assign(cost, refine_ties=refine_ties)
    return assignment, orders


def _np_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def rasterize_mask(points: np.ndarray, grid_hw: tuple[int, int],
                   extent) -> np.ndarray:
    """Hard 1-cell strokes of a point chain on the BEV grid (for GT masks)."""
    from .geometry import GridSpec, index_transform_batch
    h, w = grid_hw
    spec = GridSpec(extent=extent, cells_per_meter=(h - 1) / extent.span_x,
                    h=h, w=w)
    uv = index_transform_batch(points, spec)
    mask = np.zeros((h, w))
    mask[uv[:, 0], uv[:, 1]] = 1.0
    return mask


def soft_splat_mask(points: Tensor, grid_hw: tuple[int, int], extent) -> Tensor:
    """Differentiable occupancy from predicted points: bilinear splats with a
    saturating 1 - exp(-s) squash. Only used when the mask branch is on."""
    h, w = grid_hw
    flat = points.reshape(-1, 2)
    gx = (flat[:, 0:1] - extent.x_min) * ((h - 1) / extent.span_x)
    gy = (flat[:, 1:2] - extent.y_min) * ((w - 1) / extent.span_y)
    gx = gx.clip(0.0, h - 1)
    gy = gy.clip(0.0, w - 1)
    xs = np.arange(h)
    ys = np.arange(w)
    wx = (1.0 - (gx - xs).abs()).maximum(0.0)   # (N, h)
    wy = (1.0 - (gy - ys).abs()).maximum(0.0)   # (N, w)
    accum = wx.T @ wy                            # (h, w)
    return 1.0 - (-accum).exp()


def total_loss(per_layer_preds, gt_scene: HdMap, weights: LossWeights,
               cfg, bev_grid_hw: tuple[int, int] | None = None,
               refine_ties: bool = False,
               targets: GtTargets | None = None) -> LossBreakdown:
    """Deep-supervision loss: match and score every decoder layer, sum layers.

    Geometry L1 uses the matched equal-points ordering; focal classification
    targets background for unmatched predictions; laneline-type CE and the
    optional Dice mask branch apply to matched pairs only. ``targets`` may be
    passed precomputed (the training loop caches them per scene).
    """
    n = cfg.n
    if targets is None:
        targets = prepare_targets(gt_scene, n)
    terms = {"l1": [], "focal": [], "ce": [], "dice": []}

    for layer in per_layer_preds:
        m = layer.class_logits.shape[0]
        if targets.lines.shape[0] == 0:
            tgt_classes = np.full(m, CLASS_BACKGROUND, dtype=np.intp)
            terms["focal"].append(focal_loss(
                layer.class_logits, tgt_classes,
                alpha=weights.focal_alpha, gamma=weights.focal_gamma))
            continue
        assignment, orders = match_layer(layer.class_logits.data,
                                         layer.lines.data[:, 0], targets,
                                         weights, refine_ties=refine_ties)
        pred_idx = np.array([p for p, _ in assignment.pairs], dtype=np.intp)
        gt_idx = np.array([g for _, g in assignment.pairs], dtype=np.intp)

        # geometry: all three lines under the centerline's matched ordering
        reordered = np.empty((len(pred_idx), 3, n, 2))
        for row, (pi, gj) in enumerate(assignment.pairs):
            order = Ordering.from_code(int(orders[pi, gj]), n)
            for li in range(3):
                reordered[row, li] = order.apply(targets.lines[gj, li])
        pred_lines = layer.lines[pred_idx]               # (k, 3, n, 2)
        terms["l1"].append((pred_lines - reordered).abs().mean())

        # classification: matched -> gt class, unmatched -> background
        tgt_classes = np.full(m, CLASS_BACKGROUND, dtype=np.intp)
        tgt_classes[pred_idx] = targets.classes[gt_idx]
        terms["focal"].append(focal_loss(
            layer.class_logits, tgt_classes,
            alpha=weights.focal_alpha, gamma=weights.focal_gamma))

        # laneline types for matched pairs, both sides
        lane_logits = layer.laneline_logits[pred_idx].reshape(-1, 3)
        lane_targets = targets.laneline_types[gt_idx].reshape(-1)
        terms["ce"].append(ce_loss(lane_logits, lane_targets))

        if weights.mask_branch and bev_grid_hw is not None:
            pred_mask = soft_splat_mask(layer.lines[pred_idx][:, 0],
                                        bev_grid_hw, gt_scene.extent)
            gt_mask = np.zeros(bev_grid_hw)
            for gj in gt_idx:
                gt_mask = np.maximum(gt_mask, rasterize_mask(
                    targets.lines[gj, 0], bev_grid_hw, gt_scene.extent))
            terms["dice"].append(dice_loss(pred_mask, gt_mask))

    def _tally(key):
        vals = terms[key]
        if not vals:
            return Tensor(0.0)
        acc = vals[0]
        for v in vals[1:]:
            acc = acc + v
        return acc

    l1 = _tally("l1")
    focal = _tally("focal")
    ce = _tally("ce")
    dice = _tally("dice")
    node = (l1 * weights.l1 + focal * weights.focal + ce * weights.ce
            + dice * weights.dice)
    wdict = weights.as_dict()
    return LossBreakdown(
        l1_geometry=l1.item(), focal_class=focal.item(), ce_laneline=ce.item(),
        dice_mask=dice.item(),
        weights=wdict,
        total=node.item(),
        node=node,
    )
