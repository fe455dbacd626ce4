// Wire types for the rectification review API.

export interface ExtentJson {
  x_min: number;
  x_max: number;
  y_min: number;
  y_max: number;
}

export interface SdRoadJson {
  id: string;
  road_type: "vehicle" | "pedestrian";
  lane_count: number | null;
  points: [number, number][];
  closed?: boolean;
}

export interface SdMapJson {
  version: string;
  frame_id: string;
  extent: ExtentJson;
  roads: SdRoadJson[];
}

export interface HdInstanceJson {
  id: string;
  class: "lane" | "pedestrian_area";
  centerline: [number, number][];
  left: [number, number][];
  right: [number, number][];
  laneline_types: [string, string];
}

export interface HdMapJson {
  version?: string;
  frame_id?: string;
  extent?: ExtentJson;
  instances: HdInstanceJson[];
}

export type EditOp = "add_road" | "remove_road" | "set_lane_count" | "set_road_type";

export interface EditJson {
  op: EditOp;
  payload: Record<string, unknown>;
  author?: string;
  timestamp?: number;
}

export type FindingKind =
  | "hd_missing_road"
  | "sd_extra_or_missing"
  | "lane_count_issue"
  | "road_type_issue";

export type FindingStatus = "open" | "accepted" | "rejected";

export interface FindingJson {
  id: string;
  kind: FindingKind;
  subject_id: string;
  evidence: Record<string, unknown>;
  suggested_edit: EditJson | null;
  status: FindingStatus;
}

export interface SceneSummary {
  id: string;
  counts: { roads: number; instances: number };
  open_findings: number;
}

export interface SceneDetail {
  id: string;
  sd: SdMapJson;
  sd_original: SdMapJson;
  hd: HdMapJson;
  findings: FindingJson[];
  edits: EditJson[];
}

export interface EditResponse {
  sd: SdMapJson;
  findings: FindingJson[];
  edits: EditJson[];
}
