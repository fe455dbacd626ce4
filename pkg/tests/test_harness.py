"""Harness: schedule, optimizer no-op, determinism, evaluation AP, PCA,
gradient-check plumbing and checkpointing."""

import math

import numpy as np
import pytest

import mqbank.harness as harness
from mqbank.decoder import MapPrediction
from mqbank.geometry import BevExtent, Polyline
from mqbank.harness import (AdamW, EvalResult, Scene, TrainConfig, TrainState,
                            build_scene, eval_state, evaluate, evaluate_scenes,
                            grad_check, lr_schedule, pca_project,
                            predictions_with_confidence, sweep_queries, train)
from mqbank.maps import HdInstance, HdMap, SdMap
from mqbank.synth import SceneConfig
from mqbank.tape import Tensor

RNG = np.random.default_rng(41)

TINY = TrainConfig(steps=20, d=8, n=4, layers=1, bev_channels=8,
                   query_budget=6, seed=3, warmup_iters=5)
TINY_SCENE_CFG = SceneConfig(max_roads=3, max_ped_areas=1)


def _tiny_scenes(count=1, cfg=TINY):
    return [build_scene(100 + i, cfg, TINY_SCENE_CFG) for i in range(count)]


# -- learning rate schedule ---------------------------------------------------

def test_schedule_pointwise_values():
    cfg = TrainConfig(steps=2000)
    assert lr_schedule(0, cfg) == pytest.approx(0.333 * 2e-4, rel=1e-12)
    assert lr_schedule(500, cfg) == pytest.approx(2e-4, rel=1e-12)
    assert lr_schedule(1999, cfg) == pytest.approx(2e-7, rel=1e-12)


def test_schedule_monotone_warmup_then_decay():
    cfg = TrainConfig(steps=1500)
    warm = [lr_schedule(s, cfg) for s in range(0, 501)]
    assert all(b >= a for a, b in zip(warm, warm[1:]))
    decay = [lr_schedule(s, cfg) for s in range(500, 1500)]
    assert all(b <= a for a, b in zip(decay, decay[1:]))
    assert min(decay) >= cfg.min_lr - 1e-18


# -- optimizer -----------------------------------------------------------------

def test_adamw_zero_lr_is_noop():
    p = Tensor(RNG.normal(size=(4, 3)), requires_grad=True)
    before = p.data.copy()
    opt = AdamW([p], weight_decay=0.01)
    for _ in range(3):
        p.zero_grad()
        ((p * p).sum()).backward()
        opt.step(lr=0.0)
    assert np.array_equal(p.data, before)


def test_train_zero_lr_leaves_parameters_unchanged():
    cfg = TrainConfig(steps=4, learning_rate=0.0, min_lr=0.0, d=8, n=4,
                      layers=1, bev_channels=8, query_budget=6, seed=3,
                      warmup_iters=2)
    scenes = _tiny_scenes(1, cfg)
    result = train(cfg, scenes)
    fresh = TrainState(cfg, extent=scenes[0].hd.extent)
    for got, want in zip(result.state.params(), fresh.params()):
        assert np.array_equal(got.data, want.data), got.name


def test_train_deterministic_traces():
    scenes = _tiny_scenes(2)
    a = train(TINY, scenes)
    b = train(TINY, scenes)
    assert a.trace == b.trace
    for pa, pb in zip(a.state.params(), b.state.params()):
        assert np.array_equal(pa.data, pb.data)


def test_train_divergence_aborts(monkeypatch):
    scenes = _tiny_scenes(1)

    def bad_total_loss(*args, **kwargs):
        from mqbank.matching import LossBreakdown
        return LossBreakdown(math.nan, 0, 0, 0, {}, math.nan, Tensor(0.0))

    monkeypatch.setattr(harness, "total_loss", bad_total_loss)
    with pytest.raises(RuntimeError, match="diverged at step 0"):
        train(TINY, scenes)


@pytest.mark.parametrize("mode", ["random", "linear", "mqbank"])
def test_train_modes_run_and_pad_to_budget(mode):
    cfg = TrainConfig(steps=3, d=8, n=4, layers=1, bev_channels=8,
                      query_budget=9, seed=5, warmup_iters=2, init_mode=mode)
    scenes = _tiny_scenes(1, cfg)
    result = train(cfg, scenes)
    assert len(result.trace) == 3
    q0 = result.state.initial_queries(scenes[0], aug_seed=1)
    assert q0.shape == (9, cfg.d)


def test_state_checkpoint_roundtrip(tmp_path):
    cfg = TrainConfig(steps=2, d=8, n=4, layers=1, bev_channels=8,
                      query_budget=5, seed=7, warmup_iters=1,
                      init_mode="linear")
    scenes = _tiny_scenes(1, cfg)
    result = train(cfg, scenes)
    path = tmp_path / "state.mqd"
    result.state.save(path)
    loaded = TrainState.load(path)
    for pa, pb in zip(result.state.params(), loaded.params()):
        assert pa.name == pb.name and np.array_equal(pa.data, pb.data)
    a = eval_state(result.state, scenes)
    b = eval_state(loaded, scenes)
    assert a == b


# -- evaluation ---------------------------------------------------------------------

def _line_instance(iid, y, x0=0.0, x1=20.0, n=10):
    pts = np.column_stack([np.linspace(x0, x1, n), np.full(n, y)])
    return HdInstance(id=iid, cls="lane", centerline=Polyline(pts),
                      left_line=Polyline(pts + [0, 1.75]),
                      right_line=Polyline(pts - [0, 1.75]),
                      laneline_types=("solid", "solid"))


def _pred(centerline, cls=0, conf=1.0):
    logits = np.full(3, -20.0)
    logits[cls] = 20.0 + math.log(conf)
    pred = MapPrediction(class_logits=logits,
                         laneline_type_logits=np.zeros((2, 3)),
                         centerline=centerline,
                         left_line=centerline, right_line=centerline)
    e = np.exp(logits - logits.max())
    return (pred, e / e.sum())


def test_evaluate_perfect_predictions():
    gt = HdMap(instances=[_line_instance("lane_0_0", 0.0),
                          _line_instance("lane_0_1", 10.0)],
               extent=BevExtent())
    preds = [_pred(inst.centerline.points) for inst in gt.instances]
    res = evaluate(preds, gt)
    assert res.det_lane == pytest.approx(1.0)
    assert res.det_avg == pytest.approx((1.0 + 0.0) / 2)  # no ped GT
    assert res.chamfer_lane == pytest.approx(0.0, abs=1e-9)


def test_evaluate_no_predictions_zero_ap():
    gt = HdMap(instances=[_line_instance("lane_0_0", 0.0)], extent=BevExtent())
    res = evaluate([], gt)
    assert res.det_lane == 0.0 and res.det_avg == 0.0


def test_evaluate_handcrafted_pr_area():
    """3 preds / 2 gts: TP(conf .9), FP(conf .8), TP(conf .7) -> AP = 28/33."""
    g1 = _line_instance("lane_0_0", 0.0)
    g2 = _line_instance("lane_1_0", 15.0)
    gt = HdMap(instances=[g1, g2], extent=BevExtent())
    far = g1.centerline.points + [0.0, 7.0]  # beyond every threshold
    preds = [_pred(g1.centerline.points, conf=0.9),
             _pred(far, conf=0.8),
             _pred(g2.centerline.points, conf=0.7)]
    res = evaluate(preds, gt)
    want = (6 * 1.0 + 5 * (2.0 / 3.0)) / 11.0
    assert res.det_lane == pytest.approx(want, abs=1e-12)


def test_evaluate_monotone_in_correct_predictions():
    g1 = _line_instance("lane_0_0", 0.0)
    g2 = _line_instance("lane_1_0", 15.0)
    gt = HdMap(instances=[g1, g2], extent=BevExtent())
    partial = [_pred(g1.centerline.points, conf=0.9)]
    fuller = partial + [_pred(g2.centerline.points, conf=0.8)]
    assert evaluate(fuller, gt).det_lane >= evaluate(partial, gt).det_lane


def test_evaluate_det_avg_identity():
    gt = HdMap(instances=[_line_instance("lane_0_0", 0.0)], extent=BevExtent())
    res = evaluate([_pred(gt.instances[0].centerline.points)], gt)
    assert res.det_avg == pytest.approx((res.det_lane + res.det_ped) / 2,
                                        abs=1e-12)
    for t, row in res.per_threshold.items():
        assert 0.0 <= row["lane"] <= 1.0 and 0.0 <= row["ped"] <= 1.0


# -- PCA ----------------------------------------------------------------------------

def test_pca_planar_data_ratios_sum_to_one():
    basis = np.linalg.qr(RNG.normal(size=(8, 2)))[0]
    coords = RNG.normal(size=(40, 2)) * [3.0, 1.0]
    data = coords @ basis.T + RNG.normal(size=8)
    proj, ratios = pca_project(data)
    assert ratios.sum() == pytest.approx(1.0, abs=1e-9)
    assert proj.shape == (40, 2)


def test_pca_duplication_invariance():
    data = RNG.normal(size=(30, 6))
    p1, r1 = pca_project(data)
    p2, r2 = pca_project(np.vstack([data, data]))
    assert np.allclose(p2[:30], p1, atol=1e-6)
    assert np.allclose(r1, r2, atol=1e-9)


def test_pca_matches_dense_eigendecomposition():
    data = RNG.normal(size=(50, 8)) @ np.diag(np.linspace(2.0, 0.3, 8))
    proj, ratios = pca_project(data)
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / (len(data) - 1)
    evals, evecs = np.linalg.eigh(cov)
    top = evecs[:, ::-1][:, :2]
    want = centered @ top
    for k in range(2):
        same = np.allclose(proj[:, k], want[:, k], atol=1e-6)
        flipped = np.allclose(proj[:, k], -want[:, k], atol=1e-6)
        assert same or flipped
    assert np.allclose(ratios, evals[::-1][:2] / evals.sum(), atol=1e-9)


def test_pca_zero_variance():
    data = np.ones((5, 4)) * 2.5
    proj, ratios = pca_project(data)
    assert np.all(proj == 0.0) and np.all(ratios == 0.0)


def test_pca_rejects_single_point():
    with pytest.raises(ValueError):
        pca_project(np.ones((1, 4)))


# -- gradient check plumbing -----------------------------------------------------------

def test_grad_check_unknown_selector_empty_pass():
    report = grad_check(selector="nothing_here")
    assert report.entries == [] and report.passed


def test_grad_check_bank_and_losses_pass():
    report = grad_check(selector=["bank", "losses"])
    assert {e.component for e in report.entries} == {"bank", "losses"}
    assert report.passed, [(e.component, e.max_rel_err) for e in report.entries]


def test_grad_check_negative_control_fails():
    def corrupt(name, g):
        return g + 0.5

    report = grad_check(selector="bank", corrupt=corrupt)
    assert not report.passed


# -- sweep shape ------------------------------------------------------------------------

def test_sweep_rows_shape(tmp_path):
    cfg = TrainConfig(steps=3, d=8, n=4, layers=1, bev_channels=8,
                      query_budget=4, seed=1, warmup_iters=2)
    scenes = _tiny_scenes(1, cfg)
    out = tmp_path / "sweep.json"
    rows = sweep_queries(cfg, budgets=[4, 6], scenes=scenes,
                         modes=("mqbank", "random"), seeds=(0,), out_path=out)
    assert len(rows) == 4
    assert out.exists()
    budgets = sorted({r["budget"] for r in rows})
    assert budgets == [4, 6]
    for row in rows:
        assert set(row) >= {"budget", "init_mode", "seed", "det_avg"}
