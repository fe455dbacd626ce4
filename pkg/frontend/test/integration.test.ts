// Scripted end-to-end review flow against the real Python service:
// load a degraded scene, accept every finding through the view model,
// export, and verify the file is byte-identical to the CLI apply path.

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SceneReview } from "../src/viewmodel.js";

const PORT = 8907 + Math.floor(Math.random() * 500);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;
let corpus = "";

async function waitForService(timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${BASE}/scenes`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("review service did not come up");
}

beforeAll(async () => {
  corpus = mkdtempSync(join(tmpdir(), "rectify-ui-"));
  execFileSync("python3", [
    "-m", "mqbank.cli", "synth",
    "--scenes", "3", "--seed", "7", "--out", corpus,
    "--drop-rate", "0.3", "--add-rate", "0.6",
    "--wrong-lane-rate", "0.25", "--missing-lane-rate", "0.15",
    "--wrong-type-rate", "0.15",
    "--no-bev",
  ]);
  server = spawn("python3", [
    "-m", "mqbank.cli", "rectify", "serve",
    "--corpus", corpus, "--port", String(PORT),
  ], { stdio: "ignore" });
  await waitForService();
}, 40000);

afterAll(() => {
  server?.kill();
});

describe("review flow against the live service", () => {
  it("accept-all then export matches the CLI apply byte for byte", async () => {
    const api = new ApiClient(BASE);
    const scenes = await api.listScenes();
    const target = scenes.find((s) => s.open_findings > 0);
    expect(target).toBeDefined();

    const review = await SceneReview.load(api, target!.id);
    expect(review.openFindings()).toBeGreaterThan(0);

    await review.acceptAll();
    expect(review.lastError).toBeNull();
    expect(review.openFindings()).toBe(0);

    const exported = await review.export();
    expect(exported).toBeTruthy();
    const exportedBytes = readFileSync(exported!);

    // CLI apply with the same persisted edit log
    const sceneFile = join(corpus, `${target!.id}.json`);
    const reportFile = join(corpus, `${target!.id}.report.json`);
    const sdFile = join(corpus, "sd_only.json");
    const scene = JSON.parse(readFileSync(sceneFile, "utf-8"));
    const { writeFileSync } = await import("node:fs");
    writeFileSync(sdFile, JSON.stringify(scene.sd));
    const cliOut = join(corpus, "cli_rectified.json");
    execFileSync("python3", [
      "-m", "mqbank.cli", "rectify", "apply",
      "--sd", sdFile, "--edits", reportFile, "--out", cliOut,
    ]);
    // the CLI writes via save_map; the service export uses the same encoder
    const cliBytes = readFileSync(cliOut);
    expect(exportedBytes.equals(cliBytes)).toBe(true);
  }, 30000);

  it("reload reproduces the server-persisted report exactly", async () => {
    const api = new ApiClient(BASE);
    const scenes = await api.listScenes();
    const id = scenes[0].id;
    const a = await SceneReview.load(api, id);
    const b = await SceneReview.load(api, id);
    expect(JSON.stringify(b.findings)).toBe(JSON.stringify(a.findings));
    expect(JSON.stringify(b.edits)).toBe(JSON.stringify(a.edits));
    expect(JSON.stringify(b.sd)).toBe(JSON.stringify(a.sd));
  });
});
