"""HTTP review service for the rectification workflow.

Serves a scene corpus (synthetic scene JSON files), persists accepted edits
to per-scene report files, exports rectified SD maps, and hosts the browser
UI's static assets when built.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles

from .maps import MapSchemaError, hd_to_dict, sd_to_dict
from .rectify import (Edit, EditError, RectificationReport, ScanThresholds,
                      apply_edits, load_report, save_report, scan, stamp)
from .synth import load_scene


class SceneEntry:
    def __init__(self, path: Path, thresholds: ScanThresholds):
        self.path = path
        hd, sd, labels, scene_id = load_scene(path)
        self.hd = hd
        self.sd = sd  # as shipped (possibly degraded); edits live in the report
        self.scene_id = scene_id or path.stem
        self.lock = threading.Lock()
        self.report_path = path.with_name(path.stem + ".report.json")
        if self.report_path.exists():
            self.report = load_report(self.report_path)
        else:
            findings = scan(sd, hd, thresholds)
            self.report = RectificationReport(scene_id=self.scene_id,
                                              findings=findings)
            save_report(self.report, self.report_path)

    def current_sd(self):
        return apply_edits(self.sd, self.report.edits)

    def persist(self):
        save_report(self.report, self.report_path)


def _scene_files(corpus: Path):
    return sorted(p for p in corpus.glob("*.json")
                  if not p.name.endswith(".report.json")
                  and not p.name.endswith(".rectified.json"))


def create_app(corpus_dir, thresholds: ScanThresholds | None = None,
               static_dir=None) -> FastAPI:
    corpus = Path(corpus_dir)
    if not corpus.is_dir():
        raise FileNotFoundError(f"corpus directory {corpus} does not exist")
    thresholds = thresholds or ScanThresholds()
    files = _scene_files(corpus)
    if not files:
        raise FileNotFoundError(f"no scene files in {corpus}")
    scenes: dict[str, SceneEntry] = {}
    for path in files:
        try:
            entry = SceneEntry(path, thresholds)
        except (MapSchemaError, json.JSONDecodeError) as exc:
            raise RuntimeError(f"corrupt corpus: {path.name}: {exc}") from exc
        scenes[entry.scene_id] = entry

    app = FastAPI(title="SD map rectification review")

    def entry_of(scene_id: str) -> SceneEntry:
        entry = scenes.get(scene_id)
        if entry is None:
            raise HTTPException(status_code=404,
                                detail=f"no scene {scene_id!r}")
        return entry

    @app.get("/scenes")
    def list_scenes():
        out = []
        for sid in sorted(scenes):
            e = scenes[sid]
            out.append({
                "id": sid,
                "counts": {"roads": len(e.sd.roads),
                           "instances": len(e.hd.instances)},
                "open_findings": e.report.open_findings(),
            })
        return out

    @app.get("/scenes/{scene_id}")
    def get_scene(scene_id: str):
        e = entry_of(scene_id)
        with e.lock:
            return {
                "id": e.scene_id,
                "sd": sd_to_dict(e.current_sd()),
                "sd_original": sd_to_dict(e.sd),
                "hd": hd_to_dict(e.hd),
                "findings": [f.to_dict() for f in e.report.findings],
                "edits": [ed.to_dict() for ed in e.report.edits],
            }

    @app.post("/scenes/{scene_id}/edits")
    def post_edit(scene_id: str, body: dict = Body(...)):
        e = entry_of(scene_id)
        raw = body.get("edit")
        if not isinstance(raw, dict):
            raise HTTPException(status_code=400, detail="body needs an edit")
        try:
            edit = Edit.from_dict(raw)
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if not edit.timestamp:
            edit.timestamp = stamp()
        with e.lock:
            try:
                apply_edits(e.sd, e.report.edits + [edit])
            except EditError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            e.report.edits.append(edit)
            e.persist()
            return {
                "sd": sd_to_dict(e.current_sd()),
                "findings": [f.to_dict() for f in e.report.findings],
                "edits": [ed.to_dict() for ed in e.report.edits],
            }

    @app.post("/scenes/{scene_id}/findings/{finding_id}/status")
    def post_status(scene_id: str, finding_id: str, body: dict = Body(...)):
        e = entry_of(scene_id)
        status = body.get("status")
        if status not in ("open", "accepted", "rejected"):
            raise HTTPException(status_code=400,
                                detail=f"bad status {status!r}")
        with e.lock:
            try:
                finding = e.report.finding(finding_id)
            except KeyError:
                raise HTTPException(status_code=404,
                                    detail=f"no finding {finding_id!r}")
            finding.status = status
            e.persist()
            return {"findings": [f.to_dict() for f in e.report.findings]}

    @app.post("/scenes/{scene_id}/export")
    def post_export(scene_id: str):
        e = entry_of(scene_id)
        with e.lock:
            rectified = e.current_sd()
            out_path = e.path.with_name(e.path.stem + ".rectified.json")
            out_path.write_text(json.dumps(sd_to_dict(rectified), indent=1))
            return {"path": str(out_path)}

    if static_dir is None:
        static_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    static_dir = Path(static_dir)
    if static_dir.is_dir():
        app.mount("/ui", StaticFiles(directory=static_dir, html=True),
                  name="ui")

        @app.get("/")
        def index():
            return FileResponse(static_dir / "index.html")

    return app


def serve(corpus_dir, host: str = "127.0.0.1", port: int = 8808,
          thresholds: ScanThresholds | None = None) -> None:
    """Run the review service; raises on a busy port or corrupt corpus."""
    import uvicorn

    app = create_app(corpus_dir, thresholds)
    uvicorn.run(app, host=host, port=port, log_level="warning")
