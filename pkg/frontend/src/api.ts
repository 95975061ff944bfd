/**
 * Typed client for the detection service.
 *
 * Every method rejects with ApiError when the server answers with an
 * `{"error": ...}` body, so callers can show the message verbatim.
 */

export interface Detection {
  /** [x1, y1, x2, y2] in image pixel coordinates */
  box: [number, number, number, number];
  confidence: number;
  alignment: number;
  score: number;
}

export interface InferenceResponse {
  detections: Detection[];
  image_size: number;
  timing_ms: number;
}

export interface ExampleEntry {
  id: string;
  query: string;
}

export interface HealthResponse {
  status: string;
  model: {
    image_size: number;
    anchor_size: number;
    feature_stride: number;
    embed_dim: number;
  };
}

export interface InferRequest {
  /** base64-encoded PNG; exactly one of image / image_id */
  image?: string;
  image_id?: string;
  query: string;
  score_threshold: number;
  top_k: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const res = await fetch(url, init);
  if (!res.ok) {
    const body = await res.json().catch(() => null);
    const message =
      body && typeof body.error === "string" ? body.error : `HTTP ${res.status}`;
    throw new ApiError(res.status, message);
  }
  return res.json() as Promise<T>;
}

export class ApiClient {
  /** baseUrl is empty when the UI is served by the inference service itself. */
  constructor(readonly baseUrl = "") {}

  health(): Promise<HealthResponse> {
    return request<HealthResponse>(`${this.baseUrl}/health`);
  }

  examples(): Promise<ExampleEntry[]> {
    return request<ExampleEntry[]>(`${this.baseUrl}/examples`);
  }

  exampleImageUrl(id: string): string {
    return `${this.baseUrl}/examples/${encodeURIComponent(id)}/image`;
  }

  infer(req: InferRequest): Promise<InferenceResponse> {
    return request<InferenceResponse>(`${this.baseUrl}/infer`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }
}
