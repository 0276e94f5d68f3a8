/** Typed client for the annotation service REST API. */

export interface WindowSummary {
  id: string;
  frame_count: number;
  event_frame_index: number;
  kind: string;
  annotated_count: number;
}

export interface FrameView {
  sample_id: string;
  frame_time: number;
  image_url: string;
  binary_mask_url: string;
  instance_mask_url: string;
  can_text: string;
  label: string;
  explanation: string;
  keep: boolean;
}

export interface WindowDetail {
  id: string;
  event_frame_index: number;
  kind: string;
  frames: FrameView[];
}

export interface Progress {
  total: number;
  annotated: number;
  kept: number;
  discarded: number;
}

export interface AnnotationBody {
  sample_id: string;
  keep: boolean;
  label: "Yes" | "No";
  explanation: string;
  annotator: string;
  nonce: string;
}

export interface AnnotationAck extends Omit<AnnotationBody, "nonce"> {
  annotated_at: number;
  duplicate: boolean;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listWindows(): Promise<WindowSummary[]> {
    return this.request("/api/windows");
  }

  windowDetail(id: string): Promise<WindowDetail> {
    return this.request(`/api/windows/${encodeURIComponent(id)}`);
  }

  progress(): Promise<Progress> {
    return this.request("/api/progress");
  }

  postAnnotation(body: AnnotationBody): Promise<AnnotationAck> {
    return this.request("/api/annotations", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }
}
