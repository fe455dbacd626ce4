// Browser bootstrap: scene list sidebar, canvas overlay, findings panel.

import { ApiClient } from "./api.js";
import { handleKey } from "./keyboard.js";
import { renderError, renderScene } from "./render.js";
import { SceneReview } from "./viewmodel.js";
import type { FindingJson } from "./types.js";

const api = new ApiClient("");
let review: SceneReview | null = null;
let pulsePhase = 0;

const canvas = document.getElementById("map") as HTMLCanvasElement;
const sceneList = document.getElementById("scene-list") as HTMLElement;
const findingList = document.getElementById("finding-list") as HTMLElement;
const statusBar = document.getElementById("status") as HTMLElement;

function describe(f: FindingJson): string {
  switch (f.kind) {
    case "hd_missing_road":
      return `${f.subject_id}: not covered by HD (remove or review)`;
    case "sd_extra_or_missing":
      return `${f.subject_id}: HD road missing from SD (add suggested)`;
    case "lane_count_issue":
      return `${f.subject_id}: lane count ${f.evidence["lane_count"] ?? "?"} ` +
        `vs inferred ${f.evidence["inferred_lane_count"]}`;
    case "road_type_issue":
      return `${f.subject_id}: road type ${f.evidence["road_type"]} disagrees`;
  }
}

function draw(): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  if (!review) {
    renderError(ctx, canvas.width, canvas.height, "no scene loaded");
    return;
  }
  renderScene(ctx, {
    extent: review.sd.extent,
    hd: review.hd,
    sd: review.sd,
    highlight: review.highlightGeometry(),
    width: canvas.width,
    height: canvas.height,
    pulsePhase,
  });
}

function refreshPanel(): void {
  findingList.replaceChildren();
  if (!review) return;
  review.findings.forEach((f, idx) => {
    const li = document.createElement("li");
    li.textContent = `[${f.status}] ${describe(f)}`;
    li.className = idx === review!.selected ? "selected" : "";
    if (f.kind === "lane_count_issue" && idx === review!.selected
        && review!.laneCountDraft !== null) {
      li.textContent += `  -> draft ${review!.laneCountDraft}`;
    }
    li.onclick = () => {
      review!.selected = idx;
      refreshAll();
    };
    findingList.appendChild(li);
  });
  const err = review.lastError ? `  error: ${review.lastError}` : "";
  const exported = review.exportedPath
    ? `  exported: ${review.exportedPath}`
    : "";
  statusBar.textContent =
    `${review.sceneId}  open findings: ${review.openFindings()}` +
    `  (j/k select, a accept, r reject, 1-9 lane count, e export)` +
    err + exported;
}

function refreshAll(): void {
  refreshPanel();
  draw();
}

async function openScene(id: string): Promise<void> {
  try {
    review = await SceneReview.load(api, id);
    review.selectFirstOpen();
  } catch (err) {
    review = null;
    statusBar.textContent = `failed to load ${id}: ${err}`;
  }
  refreshAll();
}

async function boot(): Promise<void> {
  let scenes;
  try {
    scenes = await api.listScenes();
  } catch (err) {
    const ctx = canvas.getContext("2d");
    if (ctx) renderError(ctx, canvas.width, canvas.height, String(err));
    statusBar.textContent = `cannot reach review service: ${err}`;
    return;
  }
  sceneList.replaceChildren();
  for (const s of scenes) {
    const li = document.createElement("li");
    li.textContent = `${s.id}  (${s.open_findings} open)`;
    li.onclick = () => void openScene(s.id);
    sceneList.appendChild(li);
  }
  if (scenes.length) await openScene(scenes[0].id);

  document.addEventListener("keydown", (ev) => {
    if (handleKey(review, ev.key, { refresh: refreshAll })) {
      ev.preventDefault();
    }
  });

  const tick = () => {
    pulsePhase = (performance.now() / 800) % 1;
    draw();
    requestAnimationFrame(tick);
  };
  requestAnimationFrame(tick);
}

void boot();
