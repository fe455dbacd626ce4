"""Synthetic scene generation: ground-truth HD maps, degraded SD maps with
labeled injected faults, and a frozen random-code BEV feature oracle.

Scenes are rejection-sampled until every HD instance associates (by coverage)
only with its own SD source road, so the downstream defect scan has an
unambiguous ground truth to hit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels as kernels
from .geometry import BevExtent, GridSpec, Polyline, index_transform_batch, \
    resample_polyline
from .maps import (FAULT_MISSING_LANES, FAULT_NONE, FAULT_SD_EXTRA,
                   FAULT_SD_MISSING, FAULT_WRONG_LANES, FAULT_WRONG_TYPE,
                   FaultLabel, FaultLabels, HdInstance, HdMap, SdMap, SdRoad,
                   faults_from_dict, faults_to_dict, hd_from_dict, hd_to_dict,
                   sd_from_dict, sd_to_dict)
from .rng import stream_rng

LANE_WIDTH = 3.5
HALF_LANE = LANE_WIDTH / 2.0
SD_JITTER_CLAMP = 10.0  # SD error ceiling in meters
_STORED_LINE_POINTS = 15


@dataclass(frozen=True)
class SceneConfig:
    extent: BevExtent = field(default_factory=BevExtent)
    min_roads: int = 2
    max_roads: int = 5
    min_lanes: int = 1
    max_lanes: int = 3
    min_ped_areas: int = 0
    max_ped_areas: int = 2
    lane_width: float = LANE_WIDTH
    arc_radius_range: tuple[float, float] = (40.0, 200.0)
    straight_prob: float = 0.5
    min_road_length: float = 25.0
    sd_spacing: float = 5.0
    sd_jitter_sigma: float = 2.0

    def __post_init__(self):
        if not (1 <= self.min_roads <= self.max_roads):
            raise ValueError("bad road count range")
        if not (1 <= self.min_lanes <= self.max_lanes <= 3):
            raise ValueError("bad lane count range")
        if self.sd_jitter_sigma < 0:
            raise ValueError("jitter sigma must be >= 0")

    def instance_bounds(self) -> tuple[int, int]:
        return (self.min_roads * self.min_lanes + self.min_ped_areas,
                self.max_roads * self.max_lanes + self.max_ped_areas)


@dataclass(frozen=True)
class FaultConfig:
    drop_rate: float = 0.0          # SD road removed (HD partner uncovered)
    add_rate: float = 0.0           # spurious SD road per scene
    wrong_lane_rate: float = 0.0
    missing_lane_rate: float = 0.0
    wrong_type_rate: float = 0.0

    def __post_init__(self):
        rates = (self.drop_rate, self.add_rate, self.wrong_lane_rate,
                 self.missing_lane_rate, self.wrong_type_rate)
        if any(r < 0 or r > 1 for r in rates):
            raise ValueError("fault rates must be in [0, 1]")
        per_road = (self.drop_rate + self.wrong_lane_rate
                    + self.missing_lane_rate + self.wrong_type_rate)
        if per_road > 1.0:
            raise ValueError("per-road fault rates must sum to <= 1")


@dataclass
class BevFeature:
    grid: np.ndarray  # (H, W, C)
    extent: BevExtent

    def __post_init__(self):
        if not np.all(np.isfinite(self.grid)):
            raise ValueError("BEV feature grid must be finite")


# -- scene generation --------------------------------------------------------------


def _tangent_normals(points: np.ndarray) -> np.ndarray:
    """Unit left-hand normals from central-difference tangents."""
    tang = np.gradient(points, axis=0)
    norm = np.hypot(tang[:, 0], tang[:, 1])
    norm[norm == 0] = 1.0
    tang = tang / norm[:, None]
    return np.column_stack([-tang[:, 1], tang[:, 0]])


def _axis_candidate(rng, extent: BevExtent, cfg: SceneConfig) -> np.ndarray | None:
    """A road axis: dense 1 m point chain, cropped to stay inside the extent
    with enough margin for the outermost lane boundary."""
    margin = (cfg.max_lanes - 1) / 2.0 * cfg.lane_width + HALF_LANE + 0.5
    anchor = np.array([
        rng.uniform(extent.x_min + margin + 4, extent.x_max - margin - 4),
        rng.uniform(extent.y_min + margin + 4, extent.y_max - margin - 4),
    ])
    heading = rng.uniform(0.0, 2.0 * np.pi)
    reach = np.arange(-150.0, 150.0001, 1.0)
    if rng.uniform() < cfg.straight_prob:
        d = np.array([np.cos(heading), np.sin(heading)])
        pts = anchor[None, :] + reach[:, None] * d[None, :]
    else:
        radius = rng.uniform(*cfg.arc_radius_range)
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        normal = np.array([-np.sin(heading), np.cos(heading)]) * side
        center = anchor + radius * normal
        base = np.arctan2(anchor[1] - center[1], anchor[0] - center[0])
        angles = base + reach / radius * (-side)
        pts = center[None, :] + radius * np.column_stack(
            [np.cos(angles), np.sin(angles)])
    inside = ((pts[:, 0] >= extent.x_min + margin)
              & (pts[:, 0] <= extent.x_max - margin)
              & (pts[:, 1] >= extent.y_min + margin)
              & (pts[:, 1] <= extent.y_max - margin))
    mid = len(reach) // 2
    if not inside[mid]:
        return None
    lo = mid
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = mid
    while hi < len(pts) - 1 and inside[hi + 1]:
        hi += 1
    run = pts[lo:hi + 1]
    if len(run) < cfg.min_road_length:
        return None
    return run


def _coverage_fraction(line_pts: np.ndarray, ref_pts: np.ndarray,
                       tau: float) -> float:
    if len(ref_pts) == 0:
        return 0.0
    return float((kernels.nearest_dists(line_pts, ref_pts) <= tau).mean())


def _dense(poly_pts: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    seg = np.diff(poly_pts, axis=0)
    total = np.hypot(seg[:, 0], seg[:, 1]).sum()
    n = max(int(np.ceil(total / spacing)) + 1, 2)
    return resample_polyline(Polyline(poly_pts), n).points


def _axes_compatible(axes: list[np.ndarray], candidate: np.ndarray,
                     tau: float = 10.0) -> bool:
    """A lane of one road must never sit mostly within tau of another road."""
    pad = (3 - 1) / 2.0 * LANE_WIDTH  # outermost possible lane offset
    for other in axes:
        if _coverage_fraction(candidate, other, tau + pad) > 0.2:
            return False
        if _coverage_fraction(other, candidate, tau + pad) > 0.2:
            return False
    return True


def _ring_far_from(axes: list[np.ndarray], ring: np.ndarray,
                   tau: float = 10.0) -> bool:
    for other in axes:
        if _coverage_fraction(ring, other, tau + HALF_LANE) > 0.2:
            return False
    return True


def generate_scene(seed: int, cfg: SceneConfig | None = None
                   ) -> tuple[HdMap, SdMap, FaultLabels]:
    """Deterministic synthetic scene: HD lanes + pedestrian areas, a clean SD
    map (jittered road axes), and all-clear fault labels."""
    cfg = cfg or SceneConfig()
    extent = cfg.extent
    for attempt in range(200):
        rng = stream_rng(seed, "scene", attempt)
        n_roads = int(rng.integers(cfg.min_roads, cfg.max_roads + 1))
        axes: list[np.ndarray] = []
        draws = 0
        while len(axes) < n_roads and draws < 80:
            draws += 1
            cand = _axis_candidate(rng, extent, cfg)
            if cand is None or not _axes_compatible(axes, cand):
                continue
            axes.append(cand)
        if len(axes) < cfg.min_roads:
            continue

        instances: list[HdInstance] = []
        roads: list[SdRoad] = []
        for r_idx, axis in enumerate(axes):
            lanes = int(rng.integers(cfg.min_lanes, cfg.max_lanes + 1))
            normals = _tangent_normals(axis)
            for k in range(lanes):
                off = (k - (lanes - 1) / 2.0) * cfg.lane_width
                center = axis + off * normals
                left = center + HALF_LANE * normals
                right = center - HALF_LANE * normals
                types = tuple(rng.choice(["solid", "dashed", "none"],
                                         p=[0.5, 0.4, 0.1]) for _ in range(2))
                instances.append(HdInstance(
                    id=f"lane_{r_idx}_{k}", cls="lane",
                    centerline=_stored(center), left_line=_stored(left),
                    right_line=_stored(right), laneline_types=types))
            sd_pts = _sd_polyline(axis, cfg, rng)
            roads.append(SdRoad(id=f"road_{r_idx}", polyline=Polyline(sd_pts),
                                road_type="vehicle", lane_count=lanes))

        n_ped = int(rng.integers(cfg.min_ped_areas, cfg.max_ped_areas + 1))
        placed = 0
        for p_idx in range(n_ped):
            ring = _ped_ring(rng, extent)
            if ring is None:
                continue
            dense_ring = _dense(np.vstack([ring, ring[:1]]))
            if not _ring_far_from(axes, dense_ring):
                continue
            poly = Polyline(ring, closed=True)
            instances.append(HdInstance(
                id=f"ped_{p_idx}", cls="pedestrian_area",
                centerline=poly, left_line=poly, right_line=poly,
                laneline_types=("none", "none")))
            sd_ring = _sd_polyline(np.vstack([ring, ring[:1]]), cfg, rng,
                                   closed=True)
            roads.append(SdRoad(id=f"pedroad_{p_idx}",
                                polyline=Polyline(sd_ring, closed=True),
                                road_type="pedestrian", lane_count=None))
            placed += 1

        hd = HdMap(instances=instances, extent=extent,
                   frame_id=f"scene_{seed:05d}")
        sd = SdMap(roads=roads, extent=extent, frame_id=f"scene_{seed:05d}")
        if _scan_unambiguous(hd, sd):
            labels = FaultLabels([FaultLabel(subject_id=r.id, kind=FAULT_NONE)
                                  for r in sd.roads])
            return hd, sd, labels
    raise RuntimeError("infeasible scene config: could not place a valid layout")


def _stored(points: np.ndarray) -> Polyline:
    return resample_polyline(Polyline(points), _STORED_LINE_POINTS)


def _sd_polyline(axis: np.ndarray, cfg: SceneConfig, rng,
                 closed: bool = False) -> np.ndarray:
    """Subsample the road axis to ~5 m spacing and add truncated jitter."""
    seg = np.diff(axis, axis=0)
    total = np.hypot(seg[:, 0], seg[:, 1]).sum()
    n = max(int(np.ceil(total / cfg.sd_spacing)) + 1, 2)
    pts = resample_polyline(Polyline(axis), n).points
    if closed:
        pts = pts[:-1] if np.allclose(pts[0], pts[-1]) else pts
    if cfg.sd_jitter_sigma > 0:
        jitter = np.clip(rng.normal(0.0, cfg.sd_jitter_sigma, size=pts.shape),
                         -SD_JITTER_CLAMP, SD_JITTER_CLAMP)
        pts = pts + jitter
    return cfg.extent.clamp(pts)


def _ped_ring(rng, extent: BevExtent) -> np.ndarray | None:
    half_w = rng.uniform(1.5, 4.0)
    half_h = rng.uniform(1.5, 4.0)
    cx = rng.uniform(extent.x_min + half_w + 1, extent.x_max - half_w - 1)
    cy = rng.uniform(extent.y_min + half_h + 1, extent.y_max - half_h - 1)
    return np.array([[cx - half_w, cy - half_h], [cx + half_w, cy - half_h],
                     [cx + half_w, cy + half_h], [cx - half_w, cy + half_h]])


def _scan_unambiguous(hd: HdMap, sd: SdMap, tau: float = 10.0) -> bool:
    """Every HD instance must clearly belong to exactly one SD road."""
    road_dense = {r.id: _dense(r.polyline.vertices()) for r in sd.roads}
    for inst in hd.instances:
        line = resample_polyline(inst.centerline, 100).points
        parent = _parent_road_id(inst.id)
        for road in sd.roads:
            cov = _coverage_fraction(line, road_dense[road.id], tau)
            if road.id == parent:
                if cov < 0.75:
                    return False
            elif cov > 0.25:
                return False
    for road in sd.roads:
        own = [inst for inst in hd.instances
               if _parent_road_id(inst.id) == road.id]
        ref = np.vstack([resample_polyline(i.centerline, 100).points
                         for i in own])
        pts = resample_polyline(road.polyline, 100).points
        if _coverage_fraction(pts, ref, tau) < 0.75:
            return False
    return True


def _parent_road_id(instance_id: str) -> str:
    if instance_id.startswith("lane_"):
        return f"road_{instance_id.split('_')[1]}"
    if instance_id.startswith("ped_"):
        return f"pedroad_{instance_id.split('_')[1]}"
    return ""


# -- fault injection -----------------------------------------------------------------


def degrade_sdmap(sd: SdMap, hd: HdMap, fault_cfg: FaultConfig,
                  seed: int) -> tuple[SdMap, FaultLabels]:
    """Inject labeled defects; at most one fault per road, plus optional
    spurious roads. FaultLabels carry enough to reconstruct the clean map."""
    labels: list[FaultLabel] = []
    roads: list[SdRoad] = []
    for idx, road in enumerate(sd.roads):
        rng = stream_rng(seed, "degrade", idx)
        x = rng.uniform()
        fault = FAULT_NONE
        edges = np.cumsum([fault_cfg.drop_rate, fault_cfg.wrong_lane_rate,
                           fault_cfg.missing_lane_rate,
                           fault_cfg.wrong_type_rate])
        if x < edges[0]:
            fault = FAULT_SD_MISSING
        elif x < edges[1] and road.road_type == "vehicle" \
                and road.lane_count is not None:
            fault = FAULT_WRONG_LANES
        elif x < edges[2] and road.road_type == "vehicle" \
                and road.lane_count is not None:
            fault = FAULT_MISSING_LANES
        elif x < edges[3]:
            fault = FAULT_WRONG_TYPE

        original = {"index": idx, "road": _road_dict(road)}
        if fault == FAULT_NONE:
            roads.append(road)
            labels.append(FaultLabel(road.id, FAULT_NONE, {"index": idx}))
            continue
        if fault == FAULT_SD_MISSING:
            labels.append(FaultLabel(road.id, FAULT_SD_MISSING, original))
            continue
        if fault == FAULT_WRONG_LANES:
            options = [c for c in (road.lane_count - 1, road.lane_count + 1,
                                   road.lane_count + 2)
                       if c >= 1 and c != road.lane_count]
            new_count = int(rng.choice(options))
            roads.append(replace(road, lane_count=new_count))
            labels.append(FaultLabel(road.id, FAULT_WRONG_LANES, original))
            continue
        if fault == FAULT_MISSING_LANES:
            roads.append(replace(road, lane_count=None))
            labels.append(FaultLabel(road.id, FAULT_MISSING_LANES, original))
            continue
        if fault == FAULT_WRONG_TYPE:
            flipped = "pedestrian" if road.road_type == "vehicle" else "vehicle"
            lanes = None if flipped == "pedestrian" else 1
            roads.append(replace(road, road_type=flipped, lane_count=lanes))
            labels.append(FaultLabel(road.id, FAULT_WRONG_TYPE, original))

    rng_add = stream_rng(seed, "degrade-add")
    if rng_add.uniform() < fault_cfg.add_rate:
        spur = _spurious_road(rng_add, sd.extent, hd)
        if spur is not None:
            roads.append(spur)
            labels.append(FaultLabel(spur.id, FAULT_SD_EXTRA,
                                     {"index": len(roads) - 1,
                                      "road": _road_dict(spur)}))
    return (SdMap(roads=roads, extent=sd.extent, frame_id=sd.frame_id),
            FaultLabels(labels))


def _road_dict(road: SdRoad) -> dict:
    return {"id": road.id, "road_type": road.road_type,
            "lane_count": road.lane_count,
            "points": [[float(x), float(y)] for x, y in road.polyline.points],
            "closed": bool(road.polyline.closed)}


def _road_from_dict(raw: dict) -> SdRoad:
    return SdRoad(id=raw["id"], road_type=raw["road_type"],
                  lane_count=raw["lane_count"],
                  polyline=Polyline(np.array(raw["points"], dtype=np.float64),
                                    closed=bool(raw.get("closed", False))))


def _spurious_road(rng, extent: BevExtent, hd: HdMap,
                   tau: float = 10.0) -> SdRoad | None:
    """A fake SD road genuinely far from every HD centerline."""
    if hd.instances:
        ref = np.vstack([resample_polyline(i.centerline, 60).points
                         for i in hd.instances])
    else:
        ref = np.zeros((0, 2))
    for _ in range(80):
        a = np.array([rng.uniform(extent.x_min + 2, extent.x_max - 2),
                      rng.uniform(extent.y_min + 2, extent.y_max - 2)])
        ang = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(20, 45)
        b = a + length * np.array([np.cos(ang), np.sin(ang)])
        if not extent.contains(b[None, :]):
            continue
        pts = np.linspace(a, b, max(int(length / 5) + 1, 2))
        if len(ref) and _coverage_fraction(pts, ref, tau) > 0.05:
            continue
        return SdRoad(id="spur_0", polyline=Polyline(pts),
                      road_type="vehicle", lane_count=int(rng.integers(1, 4)))
    return None


def restore_clean_sd(degraded: SdMap, labels: FaultLabels) -> SdMap:
    """Round-trip: undo every labeled fault to recover the clean SD map."""
    roads = {r.id: r for r in degraded.roads}
    restored: list[tuple[int, SdRoad]] = []
    for entry in labels.entries:
        if entry.kind == FAULT_SD_EXTRA:
            continue  # spurious road: simply not restored
        if entry.original is None or "index" not in entry.original:
            raise ValueError(f"fault label for {entry.subject_id!r} lacks the "
                             "original record")
        idx = entry.original["index"]
        if entry.kind == FAULT_NONE:
            restored.append((idx, roads[entry.subject_id]))
        else:
            restored.append((idx, _road_from_dict(entry.original["road"])))
    restored.sort(key=lambda pair: pair[0])
    return SdMap(roads=[r for _, r in restored], extent=degraded.extent,
                 frame_id=degraded.frame_id)


# -- BEV oracle ------------------------------------------------------------------------

_OCC_CHANNELS = 4  # lane centerline, lane left, lane right, pedestrian ring


def rasterize_bev_oracle(hd: HdMap, spec: GridSpec, channels: int = 64,
                         embed_seed: int = 0) -> BevFeature:
    """Occupancy strokes of every HD line mapped through a fixed random linear
    code; cells off all lines carry the all-zero-occupancy embedding."""
    occ = np.zeros((spec.h, spec.w, _OCC_CHANNELS))
    for inst in hd.instances:
        if inst.cls == "pedestrian_area":
            _stroke(occ, inst.centerline, spec, 3)
        else:
            _stroke(occ, inst.centerline, spec, 0)
            _stroke(occ, inst.left_line, spec, 1)
            _stroke(occ, inst.right_line, spec, 2)
    rng = stream_rng(embed_seed, "bev-embed")
    code = rng.uniform(-1.0, 1.0, size=(_OCC_CHANNELS, channels))
    bias = rng.uniform(-0.5, 0.5, size=channels)
    grid = occ @ code + bias
    return BevFeature(grid=grid, extent=spec.extent)


def _stroke(occ: np.ndarray, line: Polyline, spec: GridSpec, channel: int):
    step = 0.4 / spec.cells_per_meter
    pts = _dense(line.vertices(), spacing=step)
    uv = index_transform_batch(pts, spec)
    occ[uv[:, 0], uv[:, 1], channel] = 1.0


# -- scene files -------------------------------------------------------------------------


def scene_to_dict(hd: HdMap, sd: SdMap, labels: FaultLabels,
                  scene_id: str) -> dict:
    return {"version": "1", "scene_id": scene_id,
            "sd": sd_to_dict(sd), "hd": hd_to_dict(hd),
            "fault_labels": faults_to_dict(labels)}


def scene_from_dict(raw: dict):
    sd = sd_from_dict(raw["sd"], where="sd.")
    hd = hd_from_dict(raw["hd"], where="hd.")
    labels = faults_from_dict(raw.get("fault_labels", []))
    return hd, sd, labels, raw.get("scene_id", "")


def save_scene(path, hd: HdMap, sd: SdMap, labels: FaultLabels,
               scene_id: str, bev: BevFeature | None = None) -> None:
    path = Path(path)
    path.write_text(json.dumps(scene_to_dict(hd, sd, labels, scene_id)))
    if bev is not None:
        np.savez_compressed(path.with_suffix(".bev.npz"), grid=bev.grid,
                            extent=np.array([bev.extent.x_min, bev.extent.x_max,
                                             bev.extent.y_min, bev.extent.y_max]))


def load_scene(path):
    raw = json.loads(Path(path).read_text())
    return scene_from_dict(raw)
