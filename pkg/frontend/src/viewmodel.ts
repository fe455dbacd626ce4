// Review state for one scene. The server is the single source of truth:
// every list shown here is refreshed from a POST response or a reload, so
// reloading the page always reproduces the persisted report.

import type { ApiClient } from "./api.js";
import type {
  EditJson,
  FindingJson,
  HdMapJson,
  SceneDetail,
  SdMapJson,
} from "./types.js";

export class SceneReview {
  readonly sceneId: string;
  sd: SdMapJson;
  sdOriginal: SdMapJson;
  hd: HdMapJson;
  findings: FindingJson[];
  edits: EditJson[];
  selected = 0;
  laneCountDraft: number | null = null;
  lastError: string | null = null;
  exportedPath: string | null = null;

  constructor(private api: ApiClient, detail: SceneDetail) {
    this.sceneId = detail.id;
    this.sd = detail.sd;
    this.sdOriginal = detail.sd_original;
    this.hd = detail.hd;
    this.findings = detail.findings;
    this.edits = detail.edits;
    this.clampSelection();
  }

  static async load(api: ApiClient, sceneId: string): Promise<SceneReview> {
    return new SceneReview(api, await api.getScene(sceneId));
  }

  get selectedFinding(): FindingJson | null {
    return this.findings.length ? this.findings[this.selected] : null;
  }

  openFindings(): number {
    return this.findings.filter((f) => f.status === "open").length;
  }

  private clampSelection(): void {
    if (this.findings.length === 0) {
      this.selected = 0;
    } else {
      this.selected = Math.min(
        Math.max(this.selected, 0),
        this.findings.length - 1,
      );
    }
  }

  selectNext(): void {
    if (this.findings.length) {
      this.selected = (this.selected + 1) % this.findings.length;
      this.laneCountDraft = null;
    }
  }

  selectPrev(): void {
    if (this.findings.length) {
      this.selected =
        (this.selected - 1 + this.findings.length) % this.findings.length;
      this.laneCountDraft = null;
    }
  }

  selectFirstOpen(): void {
    const idx = this.findings.findIndex((f) => f.status === "open");
    if (idx >= 0) this.selected = idx;
  }

  /** The edit an accept would post: the suggestion, with any user override. */
  effectiveEdit(finding: FindingJson): EditJson | null {
    const suggested = finding.suggested_edit;
    if (!suggested) return null;
    if (finding.kind === "lane_count_issue" && this.laneCountDraft !== null) {
      return {
        op: suggested.op,
        payload: { ...suggested.payload, value: this.laneCountDraft },
      };
    }
    return suggested;
  }

  async accept(): Promise<void> {
    const finding = this.selectedFinding;
    if (!finding || finding.status !== "open") return;
    this.lastError = null;
    try {
      const edit = this.effectiveEdit(finding);
      if (edit) {
        const res = await this.api.postEdit(this.sceneId, edit);
        this.sd = res.sd;
        this.edits = res.edits;
      }
      const res = await this.api.postStatus(this.sceneId, finding.id, "accepted");
      this.findings = res.findings;
      this.laneCountDraft = null;
      this.clampSelection();
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
    }
  }

  async reject(): Promise<void> {
    const finding = this.selectedFinding;
    if (!finding || finding.status !== "open") return;
    this.lastError = null;
    try {
      const res = await this.api.postStatus(this.sceneId, finding.id, "rejected");
      this.findings = res.findings;
      this.laneCountDraft = null;
      this.clampSelection();
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
    }
  }

  async acceptAll(): Promise<void> {
    for (let i = 0; i < this.findings.length; i += 1) {
      this.selected = i;
      if (this.findings[i].status === "open") {
        await this.accept();
        if (this.lastError) return;
      }
    }
  }

  async export(): Promise<string | null> {
    this.lastError = null;
    try {
      const res = await this.api.exportScene(this.sceneId);
      this.exportedPath = res.path;
      return res.path;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      return null;
    }
  }

  /** Geometry to highlight for the selected finding (meters). */
  highlightGeometry(): [number, number][][] {
    const finding = this.selectedFinding;
    if (!finding) return [];
    const out: [number, number][][] = [];
    if (finding.kind === "sd_extra_or_missing") {
      const ids = (finding.evidence["instance_ids"] as string[]) ?? [
        finding.subject_id,
      ];
      for (const inst of this.hd.instances) {
        if (ids.includes(inst.id)) out.push(inst.centerline);
      }
      const road = finding.suggested_edit?.payload?.["road"] as
        | { points?: [number, number][] }
        | undefined;
      if (road?.points) out.push(road.points);
    } else {
      for (const road of this.sd.roads) {
        if (road.id === finding.subject_id) out.push(road.points);
      }
      // removed roads still exist in the original map
      if (!out.length) {
        for (const road of this.sdOriginal.roads) {
          if (road.id === finding.subject_id) out.push(road.points);
        }
      }
    }
    return out;
  }
}
