// Canvas rendering: meters -> pixels with a fixed-aspect affine, HD lines in
// gray, SD roads colored by road type, the selected finding highlighted.

import type { ExtentJson, HdMapJson, SdMapJson } from "./types.js";

export const STYLE = {
  background: "#10141a",
  frame: "#3a4454",
  hd: "#8a939f",
  sdVehicle: "#4aa3ff",
  sdPedestrian: "#53c97a",
  highlight: "#ff5470",
  hdWidth: 1.25,
  sdWidth: 2.5,
  highlightWidth: 4,
} as const;

export interface Transform {
  scale: number;
  px(x: number): number;
  py(y: number): number;
}

export function fitTransform(
  extent: ExtentJson,
  width: number,
  height: number,
  pad = 12,
): Transform {
  const spanX = extent.x_max - extent.x_min;
  const spanY = extent.y_max - extent.y_min;
  const scale = Math.min((width - 2 * pad) / spanX, (height - 2 * pad) / spanY);
  const offX = (width - spanX * scale) / 2;
  const offY = (height - spanY * scale) / 2;
  return {
    scale,
    px: (x: number) => offX + (x - extent.x_min) * scale,
    // canvas y grows downward; BEV y grows left
    py: (y: number) => height - offY - (y - extent.y_min) * scale,
  };
}

type Ctx = CanvasRenderingContext2D;

function polyline(
  ctx: Ctx,
  t: Transform,
  points: [number, number][],
  closed = false,
): void {
  if (points.length < 2) return;
  ctx.beginPath();
  ctx.moveTo(t.px(points[0][0]), t.py(points[0][1]));
  for (let i = 1; i < points.length; i += 1) {
    ctx.lineTo(t.px(points[i][0]), t.py(points[i][1]));
  }
  if (closed) ctx.closePath();
  ctx.stroke();
}

export interface RenderInput {
  extent: ExtentJson;
  hd: HdMapJson;
  sd: SdMapJson;
  highlight: [number, number][][];
  width: number;
  height: number;
  pulsePhase?: number; // 0..1, drives the highlight dash animation
}

export function renderScene(ctx: Ctx, input: RenderInput): Transform {
  const { extent, width, height } = input;
  const t = fitTransform(extent, width, height);

  ctx.fillStyle = STYLE.background;
  ctx.fillRect(0, 0, width, height);

  // extent frame
  ctx.strokeStyle = STYLE.frame;
  ctx.lineWidth = 1;
  ctx.setLineDash([]);
  ctx.strokeRect(
    t.px(extent.x_min),
    t.py(extent.y_max),
    (extent.x_max - extent.x_min) * t.scale,
    (extent.y_max - extent.y_min) * t.scale,
  );

  // HD layer: gray centerlines (and boundary lines, fainter)
  ctx.strokeStyle = STYLE.hd;
  ctx.lineWidth = STYLE.hdWidth;
  for (const inst of input.hd.instances) {
    polyline(ctx, t, inst.centerline, inst.class === "pedestrian_area");
  }

  // SD layer: colored by road type
  for (const road of input.sd.roads) {
    ctx.strokeStyle =
      road.road_type === "pedestrian" ? STYLE.sdPedestrian : STYLE.sdVehicle;
    ctx.lineWidth = STYLE.sdWidth;
    polyline(ctx, t, road.points, !!road.closed);
  }

  // highlighted finding geometry pulses via an animated dash offset
  if (input.highlight.length) {
    ctx.strokeStyle = STYLE.highlight;
    ctx.lineWidth = STYLE.highlightWidth;
    ctx.setLineDash([6, 4]);
    ctx.lineDashOffset = (input.pulsePhase ?? 0) * 10;
    for (const geom of input.highlight) {
      polyline(ctx, t, geom);
    }
    ctx.setLineDash([]);
  }
  return t;
}

export function renderError(ctx: Ctx, width: number, height: number,
                            message: string): void {
  ctx.fillStyle = STYLE.background;
  ctx.fillRect(0, 0, width, height);
  ctx.fillStyle = STYLE.highlight;
  ctx.font = "14px system-ui, sans-serif";
  ctx.fillText(`error: ${message}`, 16, 24);
}
