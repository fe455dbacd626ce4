"""Matching and loss stack: equal-points cost, Hungarian, focal/CE/Dice, and
the composed per-scene loss with its gradients."""

import itertools
import math

import numpy as np
import pytest

from mqbank.geometry import BevExtent, Polyline
from mqbank.maps import HdInstance, HdMap
from mqbank.matching import (Assignment, LossWeights, Ordering, ce_loss,
                             dice_loss, equal_points_cost, focal_loss,
                             hungarian_assign, prepare_targets, total_loss)
from mqbank.tape import Tensor

from helpers import param_grad_check, rel_err

RNG = np.random.default_rng(23)


# -- equal_points_cost ---------------------------------------------------------

def test_equal_points_forward_match():
    from mqbank.geometry import resample_polyline
    gt = Polyline(RNG.uniform(-10, 10, size=(6, 2)))
    pred = resample_polyline(gt, 6).points
    cost, order = equal_points_cost(pred, gt)
    assert cost == pytest.approx(0.0, abs=1e-12)
    assert not order.reversed and order.shift == 0


def test_equal_points_reversed_match():
    from mqbank.geometry import resample_polyline
    gt = Polyline(RNG.uniform(-10, 10, size=(6, 2)))
    pred = resample_polyline(gt, 6).points[::-1]
    cost, order = equal_points_cost(pred, gt)
    assert cost == pytest.approx(0.0, abs=1e-12)
    assert order.reversed and order.shift == 0


def test_equal_points_open_reversal_symmetry():
    a = RNG.uniform(-10, 10, size=(5, 2))
    b = RNG.uniform(-10, 10, size=(5, 2))
    c1, _ = equal_points_cost(a, Polyline(b))
    c2, _ = equal_points_cost(a, Polyline(b[::-1]))
    assert c1 == pytest.approx(c2, abs=1e-12)


def _bruteforce_equal_points(pred, gt, closed):
    n = len(pred)
    best = math.inf
    best_code = None
    codes = []
    for rev in (0, 1):
        shifts = range(n) if closed else [0]
        for s in shifts:
            codes.append(rev * n + s)
    for code in codes:
        rev, s = divmod(code, n)
        base = gt[::-1] if rev else gt
        reordered = np.roll(base, -s, axis=0)
        cost = np.abs(pred - reordered).sum(axis=1).mean()
        if cost < best - 1e-15:
            best = cost
            best_code = code
    return best, best_code


def test_equal_points_closed_ring_shift():
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    ring = Polyline(square, closed=True)
    n = 8
    from mqbank.geometry import resample_polyline
    gt8 = resample_polyline(ring, n).points
    pred = np.roll(gt8, -2, axis=0)
    cost, order = equal_points_cost(pred, ring, n=n)
    assert cost == pytest.approx(0.0, abs=1e-12)
    assert order.shift == 2 and not order.reversed
    brute_cost, brute_code = _bruteforce_equal_points(pred, gt8, closed=True)
    assert cost == pytest.approx(brute_cost, abs=1e-12)
    assert order.code == brute_code


def test_equal_points_matches_bruteforce_random():
    for closed in (False, True):
        for _ in range(20):
            n = 7
            pred = RNG.uniform(-5, 5, size=(n, 2))
            gt = RNG.uniform(-5, 5, size=(n, 2))
            got_cost, got_order = equal_points_cost(
                pred, Polyline(gt, closed=closed), n=n)
            from mqbank.geometry import resample_polyline
            gt_rs = resample_polyline(Polyline(gt, closed=closed), n).points
            want_cost, want_code = _bruteforce_equal_points(pred, gt_rs, closed)
            assert got_cost == pytest.approx(want_cost, abs=1e-12)
            assert got_order.code == want_code


def test_ordering_apply_roundtrip():
    pts = RNG.uniform(-5, 5, size=(6, 2))
    order = Ordering.from_code(6 + 2, 6)  # reversed, shift 2
    out = order.apply(pts)
    assert np.allclose(out, np.roll(pts[::-1], -2, axis=0))


# -- hungarian_assign -------------------------------------------------------------

def test_hungarian_simple_cases():
    a = hungarian_assign(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert a.pairs == [(0, 0), (1, 1)]
    assert a.total_cost == pytest.approx(2.0)
    b = hungarian_assign(np.array([[0.5]]))
    assert b.pairs == [(0, 0)]


def _bruteforce_assignment(cost):
    n_pred, n_gt = cost.shape
    best_total = math.inf
    best_pairs = None
    if n_pred >= n_gt:
        for preds in itertools.permutations(range(n_pred), n_gt):
            pairs = sorted(zip(preds, range(n_gt)))
            total = sum(cost[p, g] for p, g in pairs)
            if (total < best_total - 1e-12
                    or (abs(total - best_total) <= 1e-12
                        and (best_pairs is None or pairs < best_pairs))):
                best_total = total
                best_pairs = pairs
    else:
        for gts in itertools.permutations(range(n_gt), n_pred):
            pairs = sorted(zip(range(n_pred), gts))
            total = sum(cost[p, g] for p, g in pairs)
            if (total < best_total - 1e-12
                    or (abs(total - best_total) <= 1e-12
                        and (best_pairs is None or pairs < best_pairs))):
                best_total = total
                best_pairs = pairs
    return best_pairs, best_total


def test_hungarian_matches_bruteforce_100_trials():
    for trial in range(100):
        cost = RNG.uniform(0, 10, size=(6, 6))
        got = hungarian_assign(cost)
        want_pairs, want_total = _bruteforce_assignment(cost)
        assert got.pairs == want_pairs
        assert got.total_cost == pytest.approx(want_total, abs=1e-9)


def test_hungarian_rectangular_and_ties():
    cost = RNG.uniform(0, 5, size=(5, 3))
    got = hungarian_assign(cost)
    want_pairs, want_total = _bruteforce_assignment(cost)
    assert got.pairs == want_pairs and len(got.pairs) == 3
    # all-equal costs: lexicographic tie-break picks the identity prefix
    tied = hungarian_assign(np.ones((3, 3)))
    assert tied.pairs == [(0, 0), (1, 1), (2, 2)]


def test_hungarian_total_not_worse_than_any_permutation():
    for _ in range(10):
        cost = RNG.uniform(0, 1, size=(4, 4))
        got = hungarian_assign(cost)
        for perm in itertools.permutations(range(4)):
            assert got.total_cost <= sum(
                cost[i, p] for i, p in enumerate(perm)) + 1e-12


def test_hungarian_rejects_nonfinite():
    with pytest.raises(ValueError):
        hungarian_assign(np.array([[np.inf, 1.0], [1.0, 2.0]]))


# -- focal / ce / dice --------------------------------------------------------------

def test_focal_gamma_zero_alpha_half():
    # logits chosen so the target's softmax probability is exactly 0.5
    logits = np.array([math.log(0.5), math.log(0.25), math.log(0.25)])
    loss = focal_loss(logits, 0, alpha=0.5, gamma=0.0)
    assert loss.item() == pytest.approx(0.5 * math.log(2.0), abs=1e-12)


def test_focal_confident_correct_goes_to_zero():
    logits = np.array([30.0, 0.0, 0.0])
    assert focal_loss(logits, 0, alpha=0.25, gamma=2.0).item() < 1e-20


def test_focal_reference_value():
    # p_t = 0.9 on a foreground target
    p = np.array([0.9, 0.06, 0.04])
    logits = np.log(p)
    want = 0.25 * (0.1 ** 2) * (-math.log(0.9))
    assert focal_loss(logits, 0, alpha=0.25, gamma=2.0).item() == pytest.approx(
        want, rel=1e-9)
    assert want == pytest.approx(2.634e-4, rel=1e-3)


def test_focal_background_uses_one_minus_alpha():
    p = np.array([0.2, 0.3, 0.5])
    logits = np.log(p)
    loss = focal_loss(logits, 2, alpha=0.25, gamma=0.0)
    assert loss.item() == pytest.approx(0.75 * -math.log(0.5), rel=1e-12)


def test_ce_uniform_logits():
    assert ce_loss(np.zeros(3), 1).item() == pytest.approx(math.log(3.0),
                                                           abs=1e-12)


def test_ce_dominant_logit():
    assert ce_loss(np.array([0.0, 40.0, 0.0]), 1).item() < 1e-15


def test_focal_equals_half_ce_for_1000_draws():
    logits = RNG.normal(size=(1000, 3)) * 3.0
    targets = RNG.integers(0, 3, size=1000)
    for i in range(0, 1000, 100):
        f = focal_loss(logits[i], int(targets[i]), alpha=0.5, gamma=0.0).item()
        c = ce_loss(logits[i], int(targets[i])).item()
        assert f == pytest.approx(0.5 * c, abs=1e-12)
    # batched forms agree too
    f_all = focal_loss(logits, targets, alpha=0.5, gamma=0.0).item()
    c_all = ce_loss(logits, targets).item()
    assert f_all == pytest.approx(0.5 * c_all, abs=1e-12)


def test_dice_identity_and_degenerate():
    gt = (RNG.uniform(size=(8, 6)) > 0.5).astype(float)
    assert dice_loss(gt, gt).item() == pytest.approx(0.0, abs=1e-15)
    zero = np.zeros((8, 6))
    assert dice_loss(zero, zero).item() == pytest.approx(0.0, abs=1e-15)


def test_dice_all_zero_pred_formula():
    gt = np.zeros((5, 5))
    gt[0, :5] = 1.0  # s = 5... use 10 ones
    gt[1, :5] = 1.0
    pred = np.zeros((5, 5))
    assert dice_loss(pred, gt, eps=1.0).item() == pytest.approx(10.0 / 11.0,
                                                                abs=1e-12)


def test_dice_shape_mismatch():
    with pytest.raises(ValueError, match="shapes differ"):
        dice_loss(np.zeros((3, 3)), np.zeros((4, 3)))


def test_loss_gradients_match_fd():
    logits = Tensor(RNG.normal(size=3), requires_grad=True)
    err = param_grad_check(lambda: focal_loss(logits, 1, 0.25, 2.0), [logits])
    assert err <= 1e-4
    err = param_grad_check(lambda: ce_loss(logits, 2), [logits])
    assert err <= 1e-4
    pred = Tensor(RNG.uniform(0.05, 0.95, size=(6, 5)), requires_grad=True)
    gt = (RNG.uniform(size=(6, 5)) > 0.6).astype(float)
    err = param_grad_check(lambda: dice_loss(pred, gt), [pred])
    assert err <= 1e-4


# -- total_loss ------------------------------------------------------------------------

def _tiny_gt(extent):
    line = np.column_stack([np.linspace(1, 9, 4), np.full(4, 2.0)])
    up = line + [0.0, 0.5]
    dn = line - [0.0, 0.5]
    inst0 = HdInstance(id="lane_0_0", cls="lane",
                       centerline=Polyline(line), left_line=Polyline(up),
                       right_line=Polyline(dn),
                       laneline_types=("solid", "dashed"))
    ring = Polyline(np.array([[4, 6], [6, 6], [6, 8], [4, 8]], dtype=float),
                    closed=True)
    inst1 = HdInstance(id="ped_0", cls="pedestrian_area", centerline=ring,
                       left_line=ring, right_line=ring,
                       laneline_types=("none", "none"))
    return HdMap(instances=[inst0, inst1], extent=extent)


class _FakeLayer:
    def __init__(self, class_logits, laneline_logits, lines):
        self.class_logits = class_logits
        self.laneline_logits = laneline_logits
        self.lines = lines


def _perfect_layer(gt, n):
    targets = prepare_targets(gt, n)
    g = len(gt.instances)
    logits = np.full((g, 3), -30.0)
    logits[np.arange(g), targets.classes] = 30.0
    lane_logits = np.full((g, 2, 3), -30.0)
    for j in range(g):
        lane_logits[j, 0, targets.laneline_types[j, 0]] = 30.0
        lane_logits[j, 1, targets.laneline_types[j, 1]] = 30.0
    return _FakeLayer(Tensor(logits), Tensor(lane_logits),
                      Tensor(targets.lines.copy()))


def test_total_loss_zero_at_perfect_prediction():
    extent = BevExtent(0, 10, 0, 10)
    gt = _tiny_gt(extent)
    layer = _perfect_layer(gt, n=4)
    from mqbank.decoder import DecoderConfig
    cfg = DecoderConfig(d=8, n=4, layers=1)
    breakdown = total_loss([layer], gt, LossWeights(), cfg)
    assert breakdown.l1_geometry == pytest.approx(0.0, abs=1e-12)
    assert breakdown.ce_laneline == pytest.approx(0.0, abs=1e-12)
    assert breakdown.focal_class < 1e-12
    assert breakdown.total < 1e-10


def test_total_loss_empty_gt_classification_only():
    extent = BevExtent(0, 10, 0, 10)
    gt = HdMap(instances=[], extent=extent)
    m, n = 3, 4
    layer = _FakeLayer(Tensor(RNG.normal(size=(m, 3))),
                       Tensor(RNG.normal(size=(m, 2, 3))),
                       Tensor(RNG.uniform(0, 10, size=(m, 3, n, 2))))
    from mqbank.decoder import DecoderConfig
    cfg = DecoderConfig(d=8, n=4, layers=1)
    breakdown = total_loss([layer], gt, LossWeights(), cfg)
    assert breakdown.l1_geometry == 0.0 and breakdown.ce_laneline == 0.0
    assert breakdown.focal_class > 0.0


def test_total_loss_matches_hand_composition():
    """2 preds / 2 gts tiny scene equals the hand-composed four-op pipeline."""
    extent = BevExtent(0, 10, 0, 10)
    gt = _tiny_gt(extent)
    n = 4
    targets = prepare_targets(gt, n)
    m = 2
    class_logits = RNG.normal(size=(m, 3))
    lane_logits = RNG.normal(size=(m, 2, 3))
    lines = RNG.uniform(0, 10, size=(m, 3, n, 2))
    layer = _FakeLayer(Tensor(class_logits), Tensor(lane_logits), Tensor(lines))
    from mqbank.decoder import DecoderConfig
    cfg = DecoderConfig(d=8, n=4, layers=1)
    weights = LossWeights()
    breakdown = total_loss([layer], gt, weights, cfg)

    # hand composition
    def np_softmax(x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    probs = np_softmax(class_logits)
    cost = np.zeros((m, 2))
    orders = {}
    for i in range(m):
        for j in range(2):
            geo, order = equal_points_cost(
                lines[i, 0], Polyline(targets.lines[j, 0],
                                      closed=bool(targets.closed[j])), n=n)
            cost[i, j] = (weights.match_cls * (1 - probs[i, targets.classes[j]])
                          + weights.match_geo * geo)
            orders[(i, j)] = order
    assign = hungarian_assign(cost)
    l1_terms = []
    ce_terms = []
    tgt_cls = np.full(m, 2)
    for (i, j) in assign.pairs:
        order = orders[(i, j)]
        diffs = [np.abs(lines[i, li] - order.apply(targets.lines[j, li])).mean()
                 for li in range(3)]
        l1_terms.append(np.mean(diffs))
        tgt_cls[i] = targets.classes[j]
        for side in range(2):
            ce_terms.append(ce_loss(lane_logits[i, side],
                                    int(targets.laneline_types[j, side])).item())
    focal_terms = [focal_loss(class_logits[i], int(tgt_cls[i]),
                              alpha=weights.focal_alpha,
                              gamma=weights.focal_gamma).item()
                   for i in range(m)]
    assert breakdown.l1_geometry == pytest.approx(np.mean(l1_terms), abs=1e-12)
    assert breakdown.focal_class == pytest.approx(np.mean(focal_terms), abs=1e-12)
    assert breakdown.ce_laneline == pytest.approx(np.mean(ce_terms), abs=1e-12)
    want_total = (weights.l1 * breakdown.l1_geometry
                  + weights.focal * breakdown.focal_class
                  + weights.ce * breakdown.ce_laneline
                  + weights.dice * breakdown.dice_mask)
    assert breakdown.total == pytest.approx(want_total, abs=1e-12)


def test_total_loss_invariant_to_gt_order():
    extent = BevExtent(0, 10, 0, 10)
    gt = _tiny_gt(extent)
    swapped = HdMap(instances=list(reversed(gt.instances)), extent=extent)
    m, n = 3, 4
    layer_args = (RNG.normal(size=(m, 3)), RNG.normal(size=(m, 2, 3)),
                  RNG.uniform(0, 10, size=(m, 3, n, 2)))
    from mqbank.decoder import DecoderConfig
    cfg = DecoderConfig(d=8, n=4, layers=1)
    mk = lambda: _FakeLayer(Tensor(layer_args[0]), Tensor(layer_args[1]),
                            Tensor(layer_args[2]))
    a = total_loss([mk()], gt, LossWeights(), cfg)
    b = total_loss([mk()], swapped, LossWeights(), cfg)
    assert a.total == pytest.approx(b.total, abs=1e-12)


def test_total_loss_gradients_match_fd():
    extent = BevExtent(0, 10, 0, 10)
    gt = _tiny_gt(extent)
    m, n = 3, 4
    class_logits = Tensor(RNG.normal(size=(m, 3)), requires_grad=True)
    lane_logits = Tensor(RNG.normal(size=(m, 2, 3)), requires_grad=True)
    lines = Tensor(RNG.uniform(1, 9, size=(m, 3, n, 2)), requires_grad=True)
    from mqbank.decoder import DecoderConfig
    cfg = DecoderConfig(d=8, n=4, layers=1)

    def loss():
        layer = _FakeLayer(class_logits, lane_logits, lines)
        return total_loss([layer], gt, LossWeights(), cfg).node

    err = param_grad_check(loss, [class_logits, lane_logits, lines])
    assert err <= 1e-4, err


def test_total_loss_breakdown_weight_identity():
    extent = BevExtent(0, 10, 0, 10)
    gt = _tiny_gt(extent)
    m, n = 4, 4
    layer = _FakeLayer(Tensor(RNG.normal(size=(m, 3))),
                       Tensor(RNG.normal(size=(m, 2, 3))),
                       Tensor(RNG.uniform(0, 10, size=(m, 3, n, 2))))
    from mqbank.decoder import DecoderConfig
    cfg = DecoderConfig(d=8, n=4, layers=1)
    w = LossWeights(l1=2.0, focal=0.7, ce=1.3, dice=0.5)
    got = total_loss([layer], gt, w, cfg)
    want = (w.l1 * got.l1_geometry + w.focal * got.focal_class
            + w.ce * got.ce_laneline + w.dice * got.dice_mask)
    assert got.total == pytest.approx(want, abs=1e-12)
    for term in (got.l1_geometry, got.focal_class, got.ce_laneline,
                 got.dice_mask):
        assert term >= 0.0
