// Keyboard-first review loop: j/k walk findings, a/r accept/reject,
// digits draft a lane count, e exports.

import type { SceneReview } from "./viewmodel.js";

export interface KeyActions {
  refresh(): void;
}

export function handleKey(
  review: SceneReview | null,
  key: string,
  actions: KeyActions,
): boolean {
  if (!review) return false;
  switch (key) {
    case "j":
    case "ArrowDown":
      review.selectNext();
      actions.refresh();
      return true;
    case "k":
    case "ArrowUp":
      review.selectPrev();
      actions.refresh();
      return true;
    case "a":
      void review.accept().then(() => actions.refresh());
      return true;
    case "r":
      void review.reject().then(() => actions.refresh());
      return true;
    case "e":
      void review.export().then(() => actions.refresh());
      return true;
    case "Escape":
      review.laneCountDraft = null;
      actions.refresh();
      return true;
    default:
      if (/^[1-9]$/.test(key)) {
        const finding = review.selectedFinding;
        if (finding?.kind === "lane_count_issue") {
          review.laneCountDraft = Number(key);
          actions.refresh();
          return true;
        }
      }
      return false;
  }
}
