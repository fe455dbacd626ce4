import { describe, expect, it, vi } from "vitest";

import { handleKey } from "../src/keyboard.js";
import type { SceneReview } from "../src/viewmodel.js";

function fakeReview() {
  return {
    selectNext: vi.fn(),
    selectPrev: vi.fn(),
    accept: vi.fn().mockResolvedValue(undefined),
    reject: vi.fn().mockResolvedValue(undefined),
    export: vi.fn().mockResolvedValue("/tmp/x"),
    laneCountDraft: null as number | null,
    selectedFinding: {
      id: "f0",
      kind: "lane_count_issue",
      subject_id: "r",
      evidence: {},
      suggested_edit: null,
      status: "open",
    },
  };
}

describe("handleKey", () => {
  it("j/k navigate findings", () => {
    const review = fakeReview();
    const refresh = vi.fn();
    expect(handleKey(review as unknown as SceneReview, "j", { refresh })).toBe(true);
    expect(review.selectNext).toHaveBeenCalled();
    handleKey(review as unknown as SceneReview, "k", { refresh });
    expect(review.selectPrev).toHaveBeenCalled();
  });

  it("a accepts, r rejects, e exports", () => {
    const review = fakeReview();
    const refresh = vi.fn();
    handleKey(review as unknown as SceneReview, "a", { refresh });
    expect(review.accept).toHaveBeenCalled();
    handleKey(review as unknown as SceneReview, "r", { refresh });
    expect(review.reject).toHaveBeenCalled();
    handleKey(review as unknown as SceneReview, "e", { refresh });
    expect(review.export).toHaveBeenCalled();
  });

  it("digits draft a lane count only on lane findings", () => {
    const review = fakeReview();
    const refresh = vi.fn();
    expect(handleKey(review as unknown as SceneReview, "3", { refresh })).toBe(true);
    expect(review.laneCountDraft).toBe(3);
    review.selectedFinding.kind = "road_type_issue";
    review.laneCountDraft = null;
    expect(handleKey(review as unknown as SceneReview, "3", { refresh })).toBe(false);
    expect(review.laneCountDraft).toBeNull();
  });

  it("ignores keys with no scene loaded", () => {
    expect(handleKey(null, "a", { refresh: vi.fn() })).toBe(false);
  });
});
