"""SD-map verification and correction: coverage checks between SD roads and
HD annotations, defect findings with suggested edits, and the edit log that
turns a degraded SD map into its rectified form.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Polyline, resample_polyline
from .maps import (HdMap, MapSchemaError, SdMap, SdRoad, hd_from_dict,
                   hd_to_dict, sd_from_dict, sd_to_dict)

FINDING_KINDS = ("hd_missing_road", "sd_extra_or_missing", "lane_count_issue",
                 "road_type_issue")
EDIT_OPS = ("add_road", "remove_road", "set_lane_count", "set_road_type")
FINDING_STATUSES = ("open", "accepted", "rejected")

_COVERAGE_SAMPLES = 100


class EditError(ValueError):
    """Invalid edit; the message names the offending edit index."""


@dataclass(frozen=True)
class ScanThresholds:
    tau: float = 10.0     # meters: SD positional error ceiling
    theta: float = 0.5    # coverage fraction below which a line is uncovered
    cluster_dist: float = 6.0  # single-linkage gap grouping lanes of one road

    def __post_init__(self):
        if self.tau <= 0 or not (0 < self.theta <= 1):
            raise ValueError("bad scan thresholds")


@dataclass
class Edit:
    op: str
    payload: dict
    author: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        if self.op not in EDIT_OPS:
            raise ValueError(f"bad edit op {self.op!r}")

    def to_dict(self) -> dict:
        return {"op": self.op, "payload": self.payload, "author": self.author,
                "timestamp": self.timestamp}

    @staticmethod
    def from_dict(raw: dict) -> "Edit":
        return Edit(op=raw["op"], payload=raw.get("payload", {}),
                    author=raw.get("author", ""),
                    timestamp=raw.get("timestamp", 0.0))


@dataclass
class Finding:
    id: str
    kind: str
    subject_id: str
    evidence: dict = field(default_factory=dict)
    suggested_edit: Edit | None = None
    status: str = "open"

    def __post_init__(self):
        if self.kind not in FINDING_KINDS:
            raise ValueError(f"bad finding kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "subject_id": self.subject_id,
                "evidence": self.evidence, "status": self.status,
                "suggested_edit": (self.suggested_edit.to_dict()
                                   if self.suggested_edit else None)}

    @staticmethod
    def from_dict(raw: dict) -> "Finding":
        sugg = raw.get("suggested_edit")
        return Finding(id=raw["id"], kind=raw["kind"],
                       subject_id=raw.get("subject_id", ""),
                       evidence=raw.get("evidence", {}),
                       suggested_edit=Edit.from_dict(sugg) if sugg else None,
                       status=raw.get("status", "open"))


@dataclass
class RectificationReport:
    scene_id: str
    findings: list[Finding] = field(default_factory=list)
    edits: list[Edit] = field(default_factory=list)

    def finding(self, fid: str) -> Finding:
        for f in self.findings:
            if f.id == fid:
                return f
        raise KeyError(fid)

    def open_findings(self) -> int:
        return sum(1 for f in self.findings if f.status == "open")

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id,
                "findings": [f.to_dict() for f in self.findings],
                "edits": [e.to_dict() for e in self.edits]}

    @staticmethod
    def from_dict(raw: dict) -> "RectificationReport":
        return RectificationReport(
            scene_id=raw.get("scene_id", ""),
            findings=[Finding.from_dict(f) for f in raw.get("findings", [])],
            edits=[Edit.from_dict(e) for e in raw.get("edits", [])])


# -- map file IO ------------------------------------------------------------------


def load_map(path) -> SdMap | HdMap:
    """Load a map JSON file; the schema ("roads" vs "instances") picks the type."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MapSchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise MapSchemaError(f"{path}: expected a JSON object")
    if "roads" in raw:
        return sd_from_dict(raw)
    if "instances" in raw:
        return hd_from_dict(raw)
    raise MapSchemaError(f"{path}: neither 'roads' nor 'instances' present")


def save_map(map_obj, path) -> None:
    data = sd_to_dict(map_obj) if isinstance(map_obj, SdMap) else hd_to_dict(map_obj)
    Path(path).write_text(json.dumps(data, indent=1))


# -- coverage ----------------------------------------------------------------------


def _point_to_polyline_dists(points: np.ndarray, poly: Polyline) -> np.ndarray:
    """Exact point-to-segment distances (N,) against one polyline."""
    verts = poly.vertices()
    a = verts[:-1]
    b = verts[1:]
    ab = b - a                                       # (S, 2)
    denom = (ab ** 2).sum(axis=1)
    denom[denom == 0] = 1.0
    ap = points[:, None, :] - a[None, :, :]          # (N, S, 2)
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / denom[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = np.hypot(*(points[:, None, :] - closest).transpose(2, 0, 1))
    return d.min(axis=1)


def coverage(line: Polyline, reference, tau: float = 10.0) -> float:
    """Fraction of 100 uniform samples of ``line`` within tau of the nearest
    reference polyline; empty references give 0."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    refs = list(reference)
    if not refs:
        return 0.0
    samples = resample_polyline(line, _COVERAGE_SAMPLES).points
    best = np.full(_COVERAGE_SAMPLES, np.inf)
    for ref in refs:
        best = np.minimum(best, _point_to_polyline_dists(samples, ref))
    return float((best <= tau).mean())


# -- the scan ---------------------------------------------------------------------


def scan(sd: SdMap, hd: HdMap,
         thresholds: ScanThresholds | None = None) -> list[Finding]:
    """Detect the three defect classes by two-directional coverage checks.

    1. SD road uncovered by HD centerlines -> hd_missing_road (either the HD
       annotation misses it or the SD road is spurious; remove suggested).
    2. HD centerline uncovered by SD roads -> sd_extra_or_missing, one finding
       per single-linkage cluster of uncovered instances (lanes of one road
       collapse into one finding) with an add_road suggestion.
    3. For covered, type-consistent vehicle roads: inferred lane count =
       number of HD lane instances associated to that road; mismatch or a
       missing count -> lane_count_issue. Type inconsistency between the
       road_type and the associated HD classes -> road_type_issue (checked
       first; such roads skip the lane-count check).
    """
    th = thresholds or ScanThresholds()
    findings: list[Finding] = []
    counter = 0

    def next_id() -> str:
        nonlocal counter
        fid = f"f{counter:03d}"
        counter += 1
        return fid

    centerlines = [inst.centerline for inst in hd.instances]
    road_polys = [r.polyline for r in sd.roads]

    # direction 1: SD roads against HD
    uncovered_roads: set[str] = set()
    for road in sd.roads:
        cov = coverage(road.polyline, centerlines, th.tau)
        if cov < th.theta:
            uncovered_roads.add(road.id)
            findings.append(Finding(
                id=next_id(), kind="hd_missing_road", subject_id=road.id,
                evidence={"coverage": cov},
                suggested_edit=Edit(op="remove_road",
                                    payload={"id": road.id})))

    # direction 2: HD instances against SD
    uncovered = []
    for inst in hd.instances:
        cov = coverage(inst.centerline, road_polys, th.tau)
        if cov < th.theta:
            uncovered.append((inst, cov))
    for cluster in _cluster_instances([u for u, _ in uncovered],
                                      th.cluster_dist):
        cov = min(c for i, c in uncovered if i.id in {m.id for m in cluster})
        suggestion = _add_road_suggestion(cluster)
        findings.append(Finding(
            id=next_id(), kind="sd_extra_or_missing",
            subject_id=cluster[0].id,
            evidence={"coverage": cov,
                      "instance_ids": [m.id for m in cluster]},
            suggested_edit=suggestion))

    # direction 3: semantics of covered roads
    for road in sd.roads:
        if road.id in uncovered_roads:
            continue
        associated = [inst for inst in hd.instances
                      if coverage(inst.centerline, [road.polyline], th.tau)
                      >= th.theta]
        if not associated:
            continue
        lane_like = [i for i in associated if i.cls == "lane"]
        ped_like = [i for i in associated if i.cls == "pedestrian_area"]
        majority = "vehicle" if len(lane_like) >= len(ped_like) else "pedestrian"
        if majority != road.road_type:
            lanes = len(lane_like) if majority == "vehicle" else None
            findings.append(Finding(
                id=next_id(), kind="road_type_issue", subject_id=road.id,
                evidence={"road_type": road.road_type,
                          "associated_classes":
                              sorted({i.cls for i in associated})},
                suggested_edit=Edit(op="set_road_type",
                                    payload={"id": road.id, "value": majority,
                                             "lane_count": lanes})))
            continue
        if road.road_type != "vehicle":
            continue
        inferred = len(lane_like)
        if inferred < 1:
            continue
        if road.lane_count is None or road.lane_count != inferred:
            findings.append(Finding(
                id=next_id(), kind="lane_count_issue", subject_id=road.id,
                evidence={"lane_count": road.lane_count,
                          "inferred_lane_count": inferred},
                suggested_edit=Edit(op="set_lane_count",
                                    payload={"id": road.id,
                                             "value": inferred})))
    return findings


def _cluster_instances(instances, cluster_dist: float):
    """Single-linkage clusters by centerline chamfer distance."""
    from .geometry import chamfer_distance

    remaining = list(instances)
    clusters = []
    while remaining:
        seed = remaining.pop(0)
        cluster = [seed]
        changed = True
        while changed:
            changed = False
            for other in list(remaining):
                if any(chamfer_distance(m.centerline, other.centerline, 50)
                       <= cluster_dist for m in cluster):
                    cluster.append(other)
                    remaining.remove(other)
                    changed = True
        clusters.append(cluster)
    return clusters


def _add_road_suggestion(cluster) -> Edit:
    """Suggested SD road rebuilt from the uncovered HD cluster's centerlines."""
    n_pts = 15
    ref = resample_polyline(cluster[0].centerline, n_pts).points
    acc = np.zeros_like(ref)
    for member in cluster:
        pts = resample_polyline(member.centerline, n_pts).points
        if np.abs(pts - ref).sum() > np.abs(pts[::-1] - ref).sum():
            pts = pts[::-1]
        acc += pts
    mean_line = acc / len(cluster)
    is_ped = all(m.cls == "pedestrian_area" for m in cluster)
    lane_members = [m for m in cluster if m.cls == "lane"]
    return Edit(op="add_road", payload={"road": {
        "id": f"add_{cluster[0].id}",
        "road_type": "pedestrian" if is_ped else "vehicle",
        "lane_count": None if is_ped else len(lane_members),
        "points": [[float(x), float(y)] for x, y in mean_line],
        "closed": bool(cluster[0].centerline.closed),
    }})


# -- edits -------------------------------------------------------------------------


def apply_edits(sd: SdMap, edits: list[Edit]) -> SdMap:
    """Apply edits in order; invalid references raise with the edit index."""
    roads = list(sd.roads)
    for idx, edit in enumerate(edits):
        where = f"edits[{idx}]"
        if edit.op == "add_road":
            raw = edit.payload.get("road")
            if not isinstance(raw, dict):
                raise EditError(f"{where}: add_road needs a road payload")
            new = _road_from_payload(raw, where)
            if any(r.id == new.id for r in roads):
                raise EditError(f"{where}: road {new.id!r} already exists")
            roads.append(new)
        elif edit.op == "remove_road":
            rid = edit.payload.get("id")
            keep = [r for r in roads if r.id != rid]
            if len(keep) == len(roads):
                raise EditError(f"{where}: no road {rid!r} to remove")
            roads = keep
        elif edit.op == "set_lane_count":
            rid = edit.payload.get("id")
            value = edit.payload.get("value")
            if value is not None and (not isinstance(value, int) or value < 1):
                raise EditError(f"{where}: lane count must be null or >= 1")
            roads = _replace_road(roads, rid, where,
                                  lambda r: _with(r, lane_count=value))
        elif edit.op == "set_road_type":
            rid = edit.payload.get("id")
            value = edit.payload.get("value")
            if value not in ("vehicle", "pedestrian"):
                raise EditError(f"{where}: bad road type {value!r}")
            lanes = edit.payload.get("lane_count", "__keep__")
            def change(r, value=value, lanes=lanes):
                if lanes == "__keep__":
                    return _with(r, road_type=value)
                return _with(r, road_type=value, lane_count=lanes)
            roads = _replace_road(roads, rid, where, change)
        else:  # unreachable; Edit validates op
            raise EditError(f"{where}: unknown op {edit.op!r}")
    return SdMap(roads=roads, extent=sd.extent, frame_id=sd.frame_id)


def _with(road: SdRoad, **kw) -> SdRoad:
    from dataclasses import replace
    return replace(road, **kw)


def _replace_road(roads, rid, where, fn):
    out = []
    hit = False
    for r in roads:
        if r.id == rid:
            out.append(fn(r))
            hit = True
        else:
            out.append(r)
    if not hit:
        raise EditError(f"{where}: no road {rid!r}")
    return out


def _road_from_payload(raw: dict, where: str) -> SdRoad:
    try:
        pts = np.asarray(raw["points"], dtype=np.float64)
        return SdRoad(id=raw["id"],
                      polyline=Polyline(pts, closed=bool(raw.get("closed",
                                                                 False))),
                      road_type=raw["road_type"],
                      lane_count=raw.get("lane_count"))
    except (KeyError, ValueError, TypeError) as exc:
        raise EditError(f"{where}: bad road payload ({exc})") from exc


def accept_all_edits(findings: list[Finding]) -> list[Edit]:
    """The suggested edit of every finding that carries one, in finding order."""
    return [f.suggested_edit for f in findings if f.suggested_edit is not None]


# -- report files ---------------------------------------------------------------------


def save_report(report: RectificationReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1))


def load_report(path) -> RectificationReport:
    return RectificationReport.from_dict(json.loads(Path(path).read_text()))


def stamp() -> float:
    return time.time()
