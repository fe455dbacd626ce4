import { describe, expect, it } from "vitest";

import { STYLE, fitTransform, renderScene } from "../src/render.js";
import type { HdMapJson, SdMapJson } from "../src/types.js";

const extent = { x_min: -50, x_max: 50, y_min: -25, y_max: 25 };

/** Records the 2D-context calls the renderer makes. */
class FakeCtx {
  ops: string[] = [];
  strokes: { style: string; width: number; points: number }[] = [];
  strokeStyle = "";
  fillStyle = "";
  lineWidth = 0;
  lineDashOffset = 0;
  font = "";
  private pathPoints = 0;

  beginPath() {
    this.pathPoints = 0;
  }
  moveTo() {
    this.pathPoints += 1;
  }
  lineTo() {
    this.pathPoints += 1;
  }
  closePath() {}
  stroke() {
    this.strokes.push({
      style: this.strokeStyle,
      width: this.lineWidth,
      points: this.pathPoints,
    });
  }
  strokeRect() {
    this.ops.push("strokeRect");
  }
  fillRect() {
    this.ops.push("fillRect");
  }
  fillText() {
    this.ops.push("fillText");
  }
  setLineDash() {}
}

function render(
  sdRoads: SdMapJson["roads"],
  instances: HdMapJson["instances"],
  highlight: [number, number][][] = [],
) {
  const ctx = new FakeCtx();
  renderScene(ctx as unknown as CanvasRenderingContext2D, {
    extent,
    sd: { version: "1", frame_id: "", extent, roads: sdRoads },
    hd: { instances },
    highlight,
    width: 800,
    height: 400,
  });
  return ctx;
}

describe("renderScene", () => {
  it("empty scene draws just the extent frame", () => {
    const ctx = render([], []);
    expect(ctx.ops).toContain("strokeRect");
    expect(ctx.strokes).toHaveLength(0);
  });

  it("SD and HD layers use distinct styles", () => {
    const ctx = render(
      [
        {
          id: "r",
          road_type: "vehicle",
          lane_count: 1,
          points: [
            [0, 0],
            [10, 0],
          ],
        },
        {
          id: "p",
          road_type: "pedestrian",
          lane_count: null,
          points: [
            [0, 5],
            [10, 5],
          ],
        },
      ],
      [
        {
          id: "lane",
          class: "lane",
          centerline: [
            [0, -5],
            [10, -5],
          ],
          left: [],
          right: [],
          laneline_types: ["solid", "solid"],
        },
      ],
    );
    const styles = ctx.strokes.map((s) => s.style);
    expect(styles).toContain(STYLE.hd);
    expect(styles).toContain(STYLE.sdVehicle);
    expect(styles).toContain(STYLE.sdPedestrian);
  });

  it("highlight strokes exactly the given geometry", () => {
    const ctx = render([], [], [
      [
        [0, 0],
        [5, 5],
        [10, 0],
      ],
    ]);
    const hl = ctx.strokes.filter((s) => s.style === STYLE.highlight);
    expect(hl).toHaveLength(1);
    expect(hl[0].points).toBe(3);
    expect(hl[0].width).toBe(STYLE.highlightWidth);
  });
});

describe("fitTransform", () => {
  it("keeps aspect and maps the extent inside the canvas", () => {
    const t = fitTransform(extent, 800, 400, 0);
    expect(t.px(extent.x_min)).toBeCloseTo(0, 6);
    expect(t.px(extent.x_max)).toBeCloseTo(800, 6);
    // y flipped: max metric y at the top
    expect(t.py(extent.y_max)).toBeLessThan(t.py(extent.y_min));
    const sx = (t.px(10) - t.px(0)) / 10;
    const sy = (t.py(0) - t.py(10)) / 10;
    expect(sx).toBeCloseTo(sy, 9);
  });
});
