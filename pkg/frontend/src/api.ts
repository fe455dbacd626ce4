// Thin fetch client for the review service; every mutation goes through the
// documented POST endpoints (the UI never persists edits itself).

import type {
  EditJson,
  EditResponse,
  FindingJson,
  FindingStatus,
  SceneDetail,
  SceneSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const res = await fetch(url, init);
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // keep the status text
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  constructor(private base: string = "") {}

  listScenes(): Promise<SceneSummary[]> {
    return request(`${this.base}/scenes`);
  }

  getScene(id: string): Promise<SceneDetail> {
    return request(`${this.base}/scenes/${id}`);
  }

  postEdit(sceneId: string, edit: EditJson): Promise<EditResponse> {
    return request(`${this.base}/scenes/${sceneId}/edits`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ edit }),
    });
  }

  postStatus(
    sceneId: string,
    findingId: string,
    status: FindingStatus,
  ): Promise<{ findings: FindingJson[] }> {
    return request(`${this.base}/scenes/${sceneId}/findings/${findingId}/status`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ status }),
    });
  }

  exportScene(sceneId: string): Promise<{ path: string }> {
    return request(`${this.base}/scenes/${sceneId}/export`, { method: "POST" });
  }
}
