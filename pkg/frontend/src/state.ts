/**
 * UI state and the query loop.
 *
 * Inference always requests the full ranked list (score_threshold 0); the
 * threshold kept here only filters the stored response, so slider moves
 * re-render without any network traffic. Responses are claimed by request
 * sequence number: only the most recently issued request may update state,
 * anything older is discarded on arrival.
 */
import { ApiClient, Detection, InferenceResponse, InferRequest } from "./api.js";

export type ImageSelection =
  | { kind: "example"; id: string }
  | { kind: "upload"; name: string; base64: string };

export interface UiState {
  image: ImageSelection | null;
  query: string;
  threshold: number;
  topK: number;
  response: InferenceResponse | null;
  inFlight: boolean;
  error: string | null;
}

export function initialState(): UiState {
  return {
    image: null,
    query: "",
    threshold: 0.5,
    topK: 20,
    response: null,
    inFlight: false,
    error: null,
  };
}

/** Detections from the last response that clear the current threshold (strict >). */
export function visibleDetections(state: UiState): Detection[] {
  if (!state.response) return [];
  return state.response.detections.filter((d) => d.score > state.threshold);
}

/** The submit button is enabled only with an image, a non-empty query, and
 * no request already in flight. */
export function canSubmit(state: UiState): boolean {
  return state.image !== null && state.query.trim() !== "" && !state.inFlight;
}

export type Listener = (state: UiState) => void;

export class Store {
  private state = initialState();
  private listeners: Listener[] = [];
  private seq = 0;

  constructor(private readonly api: ApiClient) {}

  get(): UiState {
    return this.state;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  update(patch: Partial<UiState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  /** Pure re-filter of the stored response; never issues a request. */
  setThreshold(value: number): void {
    this.update({ threshold: value });
  }

  async submit(): Promise<void> {
    const s = this.state;
    if (s.image === null || s.query.trim() === "") {
      throw new Error("need a selected image and a non-empty query");
    }
    // The UI disables submit while a request is in flight; the ticket still
    // guards state if requests ever overlap (retries, slow servers).
    const ticket = ++this.seq;
    this.update({ inFlight: true, error: null });
    const req: InferRequest = {
      ...(s.image.kind === "example"
        ? { image_id: s.image.id }
        : { image: s.image.base64 }),
      query: s.query,
      score_threshold: 0,
      top_k: s.topK,
    };
    try {
      const response = await this.api.infer(req);
      if (ticket !== this.seq) return;
      this.update({ response, inFlight: false });
    } catch (e) {
      if (ticket !== this.seq) return;
      const message = e instanceof Error ? e.message : String(e);
      this.update({ error: message, inFlight: false });
    }
  }
}
