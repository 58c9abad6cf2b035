/**
 * Typed client for the editing service (/api/v1).
 *
 * The fetch implementation is injectable so tests can count, stub, and
 * audit every request. All mutation goes through POST submitEdit /
 * swapLatents; everything else is GET.
 */

export interface SchemaLabel {
  id: number;
  name: string;
  color: [number, number, number];
}

export interface SessionSchema {
  regions: number;
  labels: SchemaLabel[];
}

export interface SessionInfo {
  session_id: string;
  checkpoint: string;
  status: string;
  active_job: string | null;
  regions: number;
  resolution: number;
  history_length: number;
}

export interface JobStatus {
  job_id: string;
  kind: string;
  session_id: string;
  status: "pending" | "running" | "done" | "failed";
  iteration: number;
  budget: number;
  loss: number | null;
  first_loss: number | null;
  preview_url: string | null;
  error: string | null;
}

export interface ViewAngles {
  azimuth?: number;
  elevation?: number;
  size?: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly detail: string = "",
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

function query(view: ViewAngles): string {
  const params = new URLSearchParams();
  if (view.azimuth !== undefined) params.set("azimuth", String(view.azimuth));
  if (view.elevation !== undefined) params.set("elevation", String(view.elevation));
  if (view.size !== undefined) params.set("size", String(view.size));
  const text = params.toString();
  return text ? `?${text}` : "";
}

function toBase64(bytes: Uint8Array): string {
  let binary = "";
  for (const byte of bytes) binary += String.fromCharCode(byte);
  return btoa(binary);
}

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchImpl(`${this.base}/api/v1${path}`, init);
    if (!response.ok) {
      let code = "http_error";
      let message = `HTTP ${response.status}`;
      let detail = "";
      try {
        const body = await response.json();
        code = body.code ?? code;
        message = body.message ?? message;
        detail = body.detail ?? "";
      } catch {
        // Non-JSON error body; keep the generic message.
      }
      throw new ApiError(response.status, code, message, detail);
    }
    return response;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    return (await this.request(path, init)).json() as Promise<T>;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.json<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  private async bytes(path: string): Promise<Uint8Array> {
    const response = await this.request(path);
    return new Uint8Array(await response.arrayBuffer());
  }

  listCheckpoints(): Promise<{ checkpoints: string[] }> {
    return this.json("/checkpoints");
  }

  createSession(checkpoint: string, seed: number): Promise<{ session_id: string }> {
    return this.post("/sessions", { checkpoint, seed });
  }

  describeSession(sessionId: string): Promise<SessionInfo> {
    return this.json(`/sessions/${sessionId}`);
  }

  getSchema(sessionId: string): Promise<SessionSchema> {
    return this.json(`/sessions/${sessionId}/schema`);
  }

  getRender(sessionId: string, view: ViewAngles = {}): Promise<Uint8Array> {
    return this.bytes(`/sessions/${sessionId}/render${query(view)}`);
  }

  getMask(sessionId: string, view: ViewAngles = {}): Promise<Uint8Array> {
    return this.bytes(`/sessions/${sessionId}/mask${query(view)}`);
  }

  submitEdit(sessionId: string, maskPng: Uint8Array, regionIds: number[],
    iterations?: number): Promise<{ job_id: string }> {
    const payload: Record<string, unknown> = {
      mask_png: toBase64(maskPng),
      region_ids: regionIds,
    };
    if (iterations !== undefined) payload.iterations = iterations;
    return this.post(`/sessions/${sessionId}/edits`, payload);
  }

  getJob(jobId: string): Promise<JobStatus> {
    return this.json(`/jobs/${jobId}`);
  }

  getPreview(jobId: string, iteration?: number): Promise<Uint8Array> {
    const suffix = iteration === undefined ? "" : `?iteration=${iteration}`;
    return this.bytes(`/jobs/${jobId}/preview${suffix}`);
  }

  swapLatents(sessionId: string, regionId: number | number[] | "all",
    which: "geometry" | "texture" | "both",
    donor: { session: string } | { file: Uint8Array },
  ): Promise<{ history_length: number }> {
    const payload: Record<string, unknown> = { region_id: regionId, which };
    if ("session" in donor) {
      payload.donor = donor.session;
    } else {
      payload.donor_file = toBase64(donor.file);
    }
    return this.post(`/sessions/${sessionId}/latents/swap`, payload);
  }
}
