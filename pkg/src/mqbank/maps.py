"""Vectorized map records (SD roads, HD instances) and their JSON schema.

The JSON wire format is shared by the synthetic scene generator, the
rectification toolchain, the review service and the browser UI:

SD map::

    {"version": "1", "frame_id": str, "extent": {x_min, x_max, y_min, y_max},
     "roads": [{"id", "road_type": "vehicle"|"pedestrian",
                "lane_count": int|null, "points": [[x, y], ...],
                "closed": bool (optional, default false)}]}

HD map::

    {"instances": [{"id", "class": "lane"|"pedestrian_area",
                    "centerline": [[x, y], ...], "left": [...], "right": [...],
                    "laneline_types": [t_left, t_right]}]}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BevExtent, Polyline

ROAD_TYPES = ("vehicle", "pedestrian")
INSTANCE_CLASSES = ("lane", "pedestrian_area")
LANELINE_TYPES = ("solid", "dashed", "none")

FAULT_NONE = "none"
FAULT_SD_EXTRA = "sd_extra_road"
FAULT_SD_MISSING = "sd_missing_road"
FAULT_WRONG_LANES = "wrong_lane_count"
FAULT_MISSING_LANES = "missing_lane_count"
FAULT_WRONG_TYPE = "wrong_road_type"
FAULT_KINDS = (FAULT_NONE, FAULT_SD_EXTRA, FAULT_SD_MISSING,
               FAULT_WRONG_LANES, FAULT_MISSING_LANES, FAULT_WRONG_TYPE)


class MapSchemaError(ValueError):
    """Raised by the JSON loaders; the message names the offending field."""


@dataclass
class SdRoad:
    id: str
    polyline: Polyline
    road_type: str
    lane_count: int | None = None

    def __post_init__(self):
        if self.road_type not in ROAD_TYPES:
            raise ValueError(f"bad road_type {self.road_type!r}")
        if self.lane_count is not None and self.lane_count < 1:
            raise ValueError("lane_count must be >= 1 when present")


@dataclass
class SdMap:
    roads: list[SdRoad] = field(default_factory=list)
    extent: BevExtent = field(default_factory=BevExtent)
    frame_id: str = ""

    def road(self, road_id: str) -> SdRoad:
        for r in self.roads:
            if r.id == road_id:
                return r
        raise KeyError(road_id)

    def has_road(self, road_id: str) -> bool:
        return any(r.id == road_id for r in self.roads)


@dataclass
class HdInstance:
    id: str
    cls: str
    centerline: Polyline
    left_line: Polyline
    right_line: Polyline
    laneline_types: tuple[str, str] = ("none", "none")

    def __post_init__(self):
        if self.cls not in INSTANCE_CLASSES:
            raise ValueError(f"bad instance class {self.cls!r}")
        for t in self.laneline_types:
            if t not in LANELINE_TYPES:
                raise ValueError(f"bad laneline type {t!r}")


@dataclass
class HdMap:
    instances: list[HdInstance] = field(default_factory=list)
    extent: BevExtent = field(default_factory=BevExtent)
    frame_id: str = ""

    def instance(self, inst_id: str) -> HdInstance:
        for inst in self.instances:
            if inst.id == inst_id:
                return inst
        raise KeyError(inst_id)


@dataclass
class FaultLabel:
    """One injected SD defect; ``original`` restores the clean record."""

    subject_id: str
    kind: str
    original: dict | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"bad fault kind {self.kind!r}")


@dataclass
class FaultLabels:
    entries: list[FaultLabel] = field(default_factory=list)

    def injected(self) -> list[FaultLabel]:
        return [e for e in self.entries if e.kind != FAULT_NONE]

    def by_kind(self, kind: str) -> list[FaultLabel]:
        return [e for e in self.entries if e.kind == kind]


# ---------------------------------------------------------------------------
# JSON conversion


def _check_points(raw, where: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) < 2:
        raise MapSchemaError(f"{where}: need a list of >= 2 points")
    out = np.empty((len(raw), 2), dtype=np.float64)
    for i, pt in enumerate(raw):
        if not isinstance(pt, (list, tuple)) or len(pt) != 2:
            raise MapSchemaError(f"{where}[{i}]: expected [x, y]")
        for j in range(2):
            val = pt[j]
            if not isinstance(val, (int, float)) or isinstance(val, bool) \
                    or not np.isfinite(val):
                raise MapSchemaError(f"{where}[{i}][{j}]: not a finite number")
            out[i, j] = float(val)
    return out


def extent_to_dict(extent: BevExtent) -> dict:
    return {"x_min": extent.x_min, "x_max": extent.x_max,
            "y_min": extent.y_min, "y_max": extent.y_max}


def extent_from_dict(raw, where: str = "extent") -> BevExtent:
    if not isinstance(raw, dict):
        raise MapSchemaError(f"{where}: expected an object")
    vals = {}
    for key in ("x_min", "x_max", "y_min", "y_max"):
        if key not in raw:
            raise MapSchemaError(f"{where}.{key}: missing")
        val = raw[key]
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise MapSchemaError(f"{where}.{key}: not a number")
        vals[key] = float(val)
    return BevExtent(**vals)


def sd_to_dict(sd: SdMap) -> dict:
    roads = []
    for r in sd.roads:
        roads.append({
            "id": r.id,
            "road_type": r.road_type,
            "lane_count": r.lane_count,
            "points": [[float(x), float(y)] for x, y in r.polyline.points],
            "closed": bool(r.polyline.closed),
        })
    return {"version": "1", "frame_id": sd.frame_id,
            "extent": extent_to_dict(sd.extent), "roads": roads}


def sd_from_dict(raw, where: str = "") -> SdMap:
    if not isinstance(raw, dict):
        raise MapSchemaError(f"{where or 'map'}: expected an object")
    if raw.get("version") not in ("1", None):
        raise MapSchemaError(f"{where}version: unsupported {raw.get('version')!r}")
    extent = extent_from_dict(raw.get("extent", extent_to_dict(BevExtent())),
                              where=f"{where}extent")
    raw_roads = raw.get("roads", [])
    if not isinstance(raw_roads, list):
        raise MapSchemaError(f"{where}roads: expected a list")
    roads = []
    for i, rr in enumerate(raw_roads):
        loc = f"{where}roads[{i}]"
        if not isinstance(rr, dict):
            raise MapSchemaError(f"{loc}: expected an object")
        if "id" not in rr or not isinstance(rr["id"], str):
            raise MapSchemaError(f"{loc}.id: missing or not a string")
        rtype = rr.get("road_type")
        if rtype not in ROAD_TYPES:
            raise MapSchemaError(f"{loc}.road_type: expected one of {ROAD_TYPES}")
        lanes = rr.get("lane_count")
        if lanes is not None:
            if not isinstance(lanes, int) or isinstance(lanes, bool) or lanes < 1:
                raise MapSchemaError(f"{loc}.lane_count: expected null or int >= 1")
        pts = _check_points(rr.get("points"), f"{loc}.points")
        roads.append(SdRoad(id=rr["id"],
                            polyline=Polyline(pts, closed=bool(rr.get("closed", False))),
                            road_type=rtype, lane_count=lanes))
    return SdMap(roads=roads, extent=extent, frame_id=str(raw.get("frame_id", "")))


def hd_to_dict(hd: HdMap) -> dict:
    instances = []
    for inst in hd.instances:
        instances.append({
            "id": inst.id,
            "class": inst.cls,
            "centerline": [[float(x), float(y)] for x, y in inst.centerline.points],
            "left": [[float(x), float(y)] for x, y in inst.left_line.points],
            "right": [[float(x), float(y)] for x, y in inst.right_line.points],
            "laneline_types": list(inst.laneline_types),
        })
    return {"version": "1", "frame_id": hd.frame_id,
            "extent": extent_to_dict(hd.extent), "instances": instances}


def hd_from_dict(raw, where: str = "") -> HdMap:
    if not isinstance(raw, dict):
        raise MapSchemaError(f"{where or 'map'}: expected an object")
    raw_inst = raw.get("instances")
    if not isinstance(raw_inst, list):
        raise MapSchemaError(f"{where}instances: expected a list")
    extent = extent_from_dict(raw.get("extent", extent_to_dict(BevExtent())),
                              where=f"{where}extent")
    instances = []
    for i, ri in enumerate(raw_inst):
        loc = f"{where}instances[{i}]"
        if not isinstance(ri, dict):
            raise MapSchemaError(f"{loc}: expected an object")
        if "id" not in ri or not isinstance(ri["id"], str):
            raise MapSchemaError(f"{loc}.id: missing or not a string")
        cls = ri.get("class")
        if cls not in INSTANCE_CLASSES:
            raise MapSchemaError(f"{loc}.class: expected one of {INSTANCE_CLASSES}")
        closed = cls == "pedestrian_area"
        lines = {}
        for key in ("centerline", "left", "right"):
            lines[key] = Polyline(_check_points(ri.get(key), f"{loc}.{key}"),
                                  closed=closed)
        lt = ri.get("laneline_types", ["none", "none"])
        if (not isinstance(lt, list) or len(lt) != 2
                or any(t not in LANELINE_TYPES for t in lt)):
            raise MapSchemaError(f"{loc}.laneline_types: expected two of "
                                 f"{LANELINE_TYPES}")
        instances.append(HdInstance(id=ri["id"], cls=cls,
                                    centerline=lines["centerline"],
                                    left_line=lines["left"],
                                    right_line=lines["right"],
                                    laneline_types=(lt[0], lt[1])))
    return HdMap(instances=instances, extent=extent,
                 frame_id=str(raw.get("frame_id", "")))


def faults_to_dict(labels: FaultLabels) -> list:
    return [{"subject_id": e.subject_id, "kind": e.kind, "original": e.original}
            for e in labels.entries]


def faults_from_dict(raw) -> FaultLabels:
    if not isinstance(raw, list):
        raise MapSchemaError("fault_labels: expected a list")
    entries = []
    for i, re_ in enumerate(raw):
        if not isinstance(re_, dict) or "kind" not in re_:
            raise MapSchemaError(f"fault_labels[{i}]: expected an object with kind")
        entries.append(FaultLabel(subject_id=str(re_.get("subject_id", "")),
                                  kind=re_["kind"], original=re_.get("original")))
    return FaultLabels(entries=entries)


def sd_equal(a: SdMap, b: SdMap, tol: float = 0.0) -> bool:
    """Structural equality of two SD maps (ids, semantics, geometry)."""
    if len(a.roads) != len(b.roads):
        return False
    for ra, rb in zip(a.roads, b.roads):
        if (ra.id != rb.id or ra.road_type != rb.road_type
                or ra.lane_count != rb.lane_count
                or ra.polyline.closed != rb.polyline.closed
                or ra.polyline.points.shape != rb.polyline.points.shape):
            return False
        if not np.allclose(ra.polyline.points, rb.polyline.points, atol=tol, rtol=0):
            return False
    return True
