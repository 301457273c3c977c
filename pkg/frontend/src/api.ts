/** Typed HTTP client for the gsculpt session service. */

export type Polarity = "pos" | "neg";

export interface ViewInfo {
  id: number;
  width: number;
  height: number;
}

export interface SessionInfo {
  session_id: string;
  n_gaussians: number;
  views: number[];
}

export interface ClickPoint {
  view_id: number;
  x: number;
  y: number;
  polarity: Polarity;
}

export interface GenerateSpec {
  seed?: number;
  n_objects?: number;
  gaussians_per_object?: number;
  clutter_count?: number;
  orbit_views?: number;
  image_size?: number;
}

export interface SessionConfig {
  threshold?: number;
  mode?: string;
  iim?: boolean;
  epipolar?: boolean;
  segmenter?: string;
  features?: string;
  patch?: number;
}

export interface CreateSessionRequest {
  scene?: string;
  cameras?: string;
  labels?: string;
  generate?: GenerateSpec;
  config?: SessionConfig;
}

export type JobState = "queued" | "running" | "done" | "error";

export interface JobStatus {
  state: JobState;
  progress: number;
  error: string | null;
  result: Record<string, unknown> | null;
  loss_trace: number[] | null;
}

export interface SelectionInfo {
  scene_hash: string;
  indices: number[];
}

export interface OpResult {
  versions: number;
  n_gaussians: number;
  selected: number;
}

/** Error carrying the HTTP status and the server's detail message. */
export class ApiError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class Client {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const text = await resp.text();
    if (!resp.ok) {
      let detail = text;
      try {
        const doc = JSON.parse(text);
        if (typeof doc.detail === "string") detail = doc.detail;
      } catch {
        /* non-JSON error body: use raw text */
      }
      throw new ApiError(resp.status, detail);
    }
    return JSON.parse(text) as T;
  }

  createSession(req: CreateSessionRequest): Promise<SessionInfo> {
    return this.request("POST", "/session", req);
  }

  views(sessionId: string): Promise<{ views: ViewInfo[] }> {
    return this.request("GET", `/session/${sessionId}/views`);
  }

  /** URL for the rendered view image; `cacheKey` busts the browser cache
   * after an op changes the scene. */
  renderUrl(
    sessionId: string,
    view: number,
    overlay: "none" | "mask" = "none",
    cacheKey = 0,
  ): string {
    return (
      `${this.baseUrl}/session/${sessionId}/render` +
      `?view=${view}&overlay=${overlay}&v=${cacheKey}`
    );
  }

  maskUrl(sessionId: string, view: number): string {
    return `${this.baseUrl}/session/${sessionId}/mask?view=${view}`;
  }

  addClick(
    sessionId: string,
    click: ClickPoint,
  ): Promise<{ clicks: ClickPoint[] }> {
    return this.request("POST", `/session/${sessionId}/click`, click);
  }

  clearClicks(sessionId: string): Promise<{ clicks: number }> {
    return this.request("DELETE", `/session/${sessionId}/clicks`);
  }

  segment(sessionId: string): Promise<{ job_id: string }> {
    return this.request("POST", `/session/${sessionId}/segment`, {});
  }

  job(jobId: string): Promise<JobStatus> {
    return this.request("GET", `/job/${jobId}`);
  }

  selection(sessionId: string): Promise<SelectionInfo> {
    return this.request("GET", `/session/${sessionId}/selection`);
  }

  applyOp(
    sessionId: string,
    op: Record<string, unknown>,
  ): Promise<OpResult & { job_id?: string }> {
    return this.request("POST", `/session/${sessionId}/op`, op);
  }

  undo(sessionId: string): Promise<{ versions: number }> {
    return this.request("POST", `/session/${sessionId}/undo`);
  }
}
