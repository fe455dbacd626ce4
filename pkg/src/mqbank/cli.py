"""Command-line entry points.

Subcommands: synth, train, eval, sweep, gradcheck, pca, rectify {scan,apply,
serve}, bench. Train configs are JSON files mirroring TrainConfig; metric
traces are line-delimited JSON records.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .geometry import GridSpec
from .harness import (QUERY_BUDGETS, Scene, TrainConfig, TrainState,
                      eval_state, grad_check, pca_project, sweep_queries,
                      train)
from .maps import HdMap, SdMap
from .rectify import (Edit, RectificationReport, ScanThresholds,
                      accept_all_edits, apply_edits, load_map, load_report,
                      save_map, save_report, scan)
from .synth import (BevFeature, FaultConfig, SceneConfig, degrade_sdmap,
                    generate_scene, load_scene, rasterize_bev_oracle,
                    save_scene)


def _cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene_cfg = SceneConfig(sd_jitter_sigma=args.jitter)
    fault_cfg = FaultConfig(drop_rate=args.drop_rate, add_rate=args.add_rate,
                            wrong_lane_rate=args.wrong_lane_rate,
                            missing_lane_rate=args.missing_lane_rate,
                            wrong_type_rate=args.wrong_type_rate)
    spec = GridSpec(extent=scene_cfg.extent)
    for i in range(args.scenes):
        seed = args.seed + i
        hd, sd, labels = generate_scene(seed, scene_cfg)
        if any((args.drop_rate, args.add_rate, args.wrong_lane_rate,
                args.missing_lane_rate, args.wrong_type_rate)):
            sd, labels = degrade_sdmap(sd, hd, fault_cfg, seed=seed)
        bev = None
        if args.bev:
            bev = rasterize_bev_oracle(hd, spec, args.channels,
                                       args.embed_seed)
        scene_id = f"scene_{seed:05d}"
        save_scene(out / f"{scene_id}.json", hd, sd, labels, scene_id, bev=bev)
    print(f"wrote {args.scenes} scenes to {out}")
    return 0


def load_scenes_dir(path, cfg: TrainConfig) -> list[Scene]:
    """Scenes from a synth output directory; BEV from sidecars when present."""
    files = sorted(p for p in Path(path).glob("*.json")
                   if not p.name.endswith(".report.json")
                   and not p.name.endswith(".rectified.json"))
    if not files:
        raise FileNotFoundError(f"no scene files in {path}")
    scenes = []
    for f in files:
        hd, sd, _, scene_id = load_scene(f)
        sidecar = f.with_suffix(".bev.npz")
        if sidecar.exists():
            blob = np.load(sidecar)
            from .geometry import BevExtent
            e = blob["extent"]
            bev = BevFeature(grid=blob["grid"],
                             extent=BevExtent(e[0], e[1], e[2], e[3]))
        else:
            spec = GridSpec(extent=hd.extent,
                            cells_per_meter=cfg.cells_per_meter)
            bev = rasterize_bev_oracle(hd, spec, cfg.bev_channels,
                                       cfg.embed_seed)
        scenes.append(Scene(scene_id=scene_id or f.stem, hd=hd, sd=sd,
                            bev=bev))
    return scenes


def _gen_scenes(count: int, base_seed: int, cfg: TrainConfig) -> list[Scene]:
    from .harness import build_scene
    return [build_scene(base_seed + i, cfg) for i in range(count)]


def _scenes_for(args, cfg: TrainConfig) -> list[Scene]:
    if args.scenes_dir:
        return load_scenes_dir(args.scenes_dir, cfg)
    return _gen_scenes(args.gen_scenes, args.scene_seed, cfg)


def _cmd_train(args) -> int:
    cfg = TrainConfig.from_json(Path(args.config).read_text())
    scenes = _scenes_for(args, cfg)
    result = train(cfg, scenes, trace_path=args.trace)
    if args.out:
        result.state.save(args.out)
        print(f"checkpoint -> {args.out}")
    ev = eval_state(result.state, scenes)
    print(f"steps={cfg.steps} final_loss={result.final_loss():.4f} "
          f"det_lane={ev.det_lane:.3f} det_ped={ev.det_ped:.3f} "
          f"det_avg={ev.det_avg:.3f}")
    return 0


def _cmd_eval(args) -> int:
    state = TrainState.load(args.checkpoint)
    scenes = load_scenes_dir(args.scenes, state.cfg)
    ev = eval_state(state, scenes)
    print(json.dumps({
        "det_lane": ev.det_lane, "det_ped": ev.det_ped, "det_avg": ev.det_avg,
        "chamfer_lane": ev.chamfer_lane, "chamfer_ped": ev.chamfer_ped,
        "per_threshold": {str(k): v for k, v in ev.per_threshold.items()},
    }, indent=2))
    return 0


def _cmd_sweep(args) -> int:
    if args.config:
        cfg = TrainConfig.from_json(Path(args.config).read_text())
    else:
        cfg = TrainConfig(steps=args.steps)
    scenes = _scenes_for(args, cfg)
    budgets = [int(b) for b in args.budgets.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = sweep_queries(cfg, budgets, scenes, modes=tuple(args.modes.split(",")),
                         seeds=seeds, out_path=args.out)
    for row in rows:
        print(f"budget={row['budget']:4d} init={row['init_mode']:7s} "
              f"seed={row['seed']} det_avg={row['det_avg']:.3f}")
    if args.out:
        print(f"table -> {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = grad_check(selector=args.component, tol=args.tol)
    for entry in report.entries:
        status = "pass" if entry.max_rel_err <= args.tol else "FAIL"
        print(f"{entry.component:18s} entries={entry.n_entries:6d} "
              f"max_rel_err={entry.max_rel_err:.3e}  {status}")
    print("gradcheck:", "PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def _cmd_pca(args) -> int:
    state = TrainState.load(args.checkpoint)
    sd = load_map(args.sdmap)
    if not isinstance(sd, SdMap):
        print("pca needs an SD map file", file=sys.stderr)
        return 2
    scene = Scene(scene_id="pca", hd=HdMap(extent=sd.extent), sd=sd,
                  bev=BevFeature(grid=np.zeros((state.bank.spec.h,
                                                state.bank.spec.w,
                                                state.cfg.bev_channels)),
                                 extent=sd.extent))
    queries = state.initial_queries(scene, aug_seed=args.aug_seed)
    proj, ratios = pca_project(queries.data)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pc1", "pc2"])
        writer.writerows(proj.tolist())
    print(f"explained variance ratios: {ratios[0]:.4f}, {ratios[1]:.4f}")
    print(f"projection -> {args.out}")
    return 0


def _cmd_rectify_scan(args) -> int:
    sd = load_map(args.sd)
    hd = load_map(args.hd)
    if not isinstance(sd, SdMap) or not isinstance(hd, HdMap):
        print("scan needs --sd an SD file and --hd an HD file",
              file=sys.stderr)
        return 2
    findings = scan(sd, hd, ScanThresholds(tau=args.tau, theta=args.theta))
    report = RectificationReport(scene_id=Path(args.sd).stem,
                                 findings=findings)
    save_report(report, args.out)
    print(f"{len(findings)} findings -> {args.out}")
    return 0


def _cmd_rectify_apply(args) -> int:
    sd = load_map(args.sd)
    raw = json.loads(Path(args.edits).read_text())
    if isinstance(raw, dict) and "findings" in raw:
        # report file: prefer its edit log, else accept every suggestion
        report = load_report(args.edits)
        edits = ([Edit.from_dict(e) for e in raw.get("edits", [])]
                 or accept_all_edits(report.findings))
    elif isinstance(raw, dict) and "edits" in raw:
        edits = [Edit.from_dict(e) for e in raw["edits"]]
    else:
        edits = [Edit.from_dict(e) for e in raw]
    out = apply_edits(sd, edits)
    save_map(out, args.out)
    print(f"applied {len(edits)} edits -> {args.out}")
    return 0


def _cmd_rectify_serve(args) -> int:
    from .server import serve
    serve(args.corpus, host=args.host, port=args.port,
          thresholds=ScanThresholds(tau=args.tau, theta=args.theta))
    return 0


def _cmd_bench(args) -> int:
    bench = Path(__file__).resolve().parents[2] / "benchmarks" / "bench_kernels.py"
    import runpy
    sys.argv = [str(bench)]
    runpy.run_path(str(bench), run_name="__main__")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mqbank")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scene files")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--jitter", type=float, default=2.0)
    p.add_argument("--drop-rate", type=float, default=0.0)
    p.add_argument("--add-rate", type=float, default=0.0)
    p.add_argument("--wrong-lane-rate", type=float, default=0.0)
    p.add_argument("--missing-lane-rate", type=float, default=0.0)
    p.add_argument("--wrong-type-rate", type=float, default=0.0)
    p.add_argument("--bev", action=argparse.BooleanOptionalAction,
                   default=True, help="write BEV feature sidecars")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--embed-seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--scenes-dir")
    p.add_argument("--gen-scenes", type=int, default=8)
    p.add_argument("--scene-seed", type=int, default=100)
    p.add_argument("--out", help="checkpoint path (MQD1)")
    p.add_argument("--trace", help="JSONL metric trace path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on scenes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenes", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="query-budget sweep")
    p.add_argument("--budgets", default=",".join(str(b) for b in QUERY_BUDGETS))
    p.add_argument("--modes", default="mqbank,random")
    p.add_argument("--seeds", default="0")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--config")
    p.add_argument("--scenes-dir")
    p.add_argument("--gen-scenes", type=int, default=8)
    p.add_argument("--scene-seed", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gradcheck", help="analytic vs finite differences")
    p.add_argument("--component", default="all")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("pca", help="project initial queries to 2D")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sdmap", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--aug-seed", type=int, default=0)
    p.set_defaults(func=_cmd_pca)

    p = sub.add_parser("rectify", help="SD map rectification toolchain")
    rsub = p.add_subparsers(dest="rectify_command", required=True)

    rp = rsub.add_parser("scan")
    rp.add_argument("--sd", required=True)
    rp.add_argument("--hd", required=True)
    rp.add_argument("--out", required=True)
    rp.add_argument("--tau", type=float, default=10.0)
    rp.add_argument("--theta", type=float, default=0.5)
    rp.set_defaults(func=_cmd_rectify_scan)

    rp = rsub.add_parser("apply")
    rp.add_argument("--sd", required=True)
    rp.add_argument("--edits", required=True)
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=_cmd_rectify_apply)

    rp = rsub.add_parser("serve")
    rp.add_argument("--corpus", required=True)
    rp.add_argument("--port", type=int, default=8808)
    rp.add_argument("--host", default="127.0.0.1")
    rp.add_argument("--tau", type=float, default=10.0)
    rp.add_argument("--theta", type=float, default=0.5)
    rp.set_defaults(func=_cmd_rectify_serve)

    p = sub.add_parser("bench", help="compiled vs pure kernel benchmark")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
