/**
 * Editor state machine, free of DOM concerns.
 *
 * Owns the painted mask with its undo history, the view-angle render
 * cache, and the single in-flight edit job. The browser layer renders
 * from this state and forwards pointer/keyboard input; tests drive it
 * with a stubbed fetch.
 */

import { ApiClient, ApiError, JobStatus, SchemaLabel } from "./api.js";
import { Brush, MaskBitmap, paintStroke, Point, UndoStack } from "./mask.js";
import { decodeIndexedPng, encodeIndexedPng } from "./png.js";

const AZIMUTH_LIMIT = Math.PI;
const ELEVATION_LIMIT = Math.PI / 2;

export interface SubmitResult {
  sent: boolean;
  warning?: string;
  jobId?: string;
}

export interface EditorEvents {
  /** Fired whenever observable state changes; UI repaints from here. */
  onChange?: () => void;
  /** Fired with preview PNG bytes as a running job produces them. */
  onPreview?: (png: Uint8Array) => void;
}

function clamp(value: number, limit: number): number {
  return Math.max(-limit, Math.min(limit, value));
}

export class Editor {
  sessionId = "";
  azimuth = 0;
  elevation = 0;
  palette: SchemaLabel[] = [];
  brush: Brush = { label: 1, radius: 3 };
  job: JobStatus | null = null;
  lastError = "";

  private history: UndoStack | null = null;
  private serverMask: MaskBitmap | null = null;
  private renderCache = new Map<string, Uint8Array>();
  private lastPreviewUrl: string | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly events: EditorEvents = {},
    readonly pollIntervalMs = 500,
  ) {}

  get mask(): MaskBitmap {
    if (!this.history) throw new Error("no session loaded");
    return this.history.value;
  }

  get canUndo(): boolean {
    return this.history?.canUndo ?? false;
  }

  get canRedo(): boolean {
    return this.history?.canRedo ?? false;
  }

  /** A job is in flight: mutations are disabled, viewing is not. */
  get busy(): boolean {
    return this.job !== null && (this.job.status === "pending" || this.job.status === "running");
  }

  /** The painted mask differs from the server's render of it. */
  get dirty(): boolean {
    if (!this.history || !this.serverMask) return false;
    return !this.history.value.equals(this.serverMask);
  }

  private changed(): void {
    this.events.onChange?.();
  }

  private viewKey(): string {
    return `${this.azimuth},${this.elevation}`;
  }

  async open(checkpoint: string, seed: number): Promise<void> {
    const { session_id } = await this.api.createSession(checkpoint, seed);
    await this.attach(session_id);
  }

  async attach(sessionId: string): Promise<void> {
    this.sessionId = sessionId;
    const schema = await this.api.getSchema(sessionId);
    this.palette = schema.labels;
    this.azimuth = 0;
    this.elevation = 0;
    this.renderCache.clear();
    this.job = null;
    await this.refreshFromServer();
  }

  /** Fetch render + mask at the current pose; resets paint history. */
  private async refreshFromServer(): Promise<void> {
    const view = { azimuth: this.azimuth, elevation: this.elevation };
    const render = await this.api.getRender(this.sessionId, view);
    this.renderCache.set(this.viewKey(), render);
    const maskPng = await this.api.getMask(this.sessionId, view);
    const decoded = decodeIndexedPng(maskPng);
    const bitmap = new MaskBitmap(decoded.width, decoded.height, decoded.labels);
    this.serverMask = bitmap;
    if (this.history) {
      this.history.reset(bitmap.clone());
    } else {
      this.history = new UndoStack(bitmap.clone());
    }
    this.changed();
  }

  /** Current render PNG, from cache when the pose was already fetched. */
  async render(): Promise<Uint8Array> {
    const hit = this.renderCache.get(this.viewKey());
    if (hit) return hit;
    const bytes = await this.api.getRender(this.sessionId, {
      azimuth: this.azimuth,
      elevation: this.elevation,
    });
    this.renderCache.set(this.viewKey(), bytes);
    return bytes;
  }

  /**
   * Move the camera. Angles clamp to the server's accepted range; a
   * zero-delta orbit is a cache hit and issues no request. Orbiting
   * only reads, so it stays enabled while a job runs.
   */
  async orbit(deltaAzimuth: number, deltaElevation: number): Promise<Uint8Array> {
    this.azimuth = clamp(this.azimuth + deltaAzimuth, AZIMUTH_LIMIT);
    this.elevation = clamp(this.elevation + deltaElevation, ELEVATION_LIMIT);
    const bytes = await this.render();
    this.changed();
    return bytes;
  }

  /** Mask overlay for the current pose, straight from the server. */
  async overlay(): Promise<MaskBitmap> {
    const png = await this.api.getMask(this.sessionId, {
      azimuth: this.azimuth,
      elevation: this.elevation,
    });
    const decoded = decodeIndexedPng(png);
    return new MaskBitmap(decoded.width, decoded.height, decoded.labels);
  }

  paint(path: Point[]): void {
    if (!this.history) throw new Error("no session loaded");
    if (this.brush.label >= this.palette.length) {
      throw new Error(`brush label ${this.brush.label} outside the schema`);
    }
    this.history.push(paintStroke(this.history.value, this.brush, path));
    this.changed();
  }

  undo(): void {
    this.history?.undo();
    this.changed();
  }

  redo(): void {
    this.history?.redo();
    this.changed();
  }

  /** The painted mask as an indexed PNG; same bytes POST and export. */
  exportMask(): Uint8Array {
    if (!this.history) throw new Error("no session loaded");
    return encodeIndexedPng({
      width: this.mask.width,
      height: this.mask.height,
      labels: this.mask.labels,
      palette: this.palette.map((label) => label.color),
    });
  }

  /**
   * Submit the painted mask as an edit job. An unchanged mask is
   * warned about and not sent; a second submission while a job runs is
   * refused the same way the server would (409, "edit in progress").
   */
  async submitEdit(regionIds: number[], iterations?: number): Promise<SubmitResult> {
    if (this.busy) {
      return { sent: false, warning: "edit in progress" };
    }
    if (!this.dirty) {
      return { sent: false, warning: "mask unchanged; nothing to submit" };
    }
    try {
      const { job_id } = await this.api.submitEdit(
        this.sessionId, this.exportMask(), regionIds, iterations);
      this.job = await this.api.getJob(job_id);
      this.lastPreviewUrl = null;
      this.lastError = "";
      this.changed();
      return { sent: true, jobId: job_id };
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        return { sent: false, warning: "edit in progress" };
      }
      // The mask stays dirty and no job is recorded, so submitting
      // again after a failure retries the same edit.
      this.lastError = error instanceof Error ? error.message : String(error);
      this.changed();
      throw error;
    }
  }

  /** One poll tick: refresh telemetry, pull new previews, finish up. */
  async pollOnce(): Promise<JobStatus | null> {
    if (!this.job) return null;
    this.job = await this.api.getJob(this.job.job_id);
    if (this.job.preview_url && this.job.preview_url !== this.lastPreviewUrl) {
      this.lastPreviewUrl = this.job.preview_url;
      const iteration = Number(new URL(this.job.preview_url, "http://x").searchParams.get("iteration"));
      this.events.onPreview?.(await this.api.getPreview(this.job.job_id, iteration));
    }
    if (this.job.status === "done" || this.job.status === "failed") {
      // The model changed under this pose: drop stale renders, pull the
      // new base render and mask, which also clears the dirty flag.
      this.renderCache.clear();
      await this.refreshFromServer();
    }
    this.changed();
    return this.job;
  }

  /** Poll until the job settles; resolves to the final status. */
  async pollToCompletion(): Promise<JobStatus> {
    if (!this.job) throw new Error("no job in flight");
    for (;;) {
      const status = await this.pollOnce();
      if (status && (status.status === "done" || status.status === "failed")) {
        return status;
      }
      await new Promise((resolve) => setTimeout(resolve, this.pollIntervalMs));
    }
  }

  /** Copy donor style rows in; refused while an edit job is running. */
  async swapLatents(regionId: number | number[] | "all",
    which: "geometry" | "texture" | "both",
    donor: { session: string } | { file: Uint8Array }): Promise<SubmitResult> {
    if (this.busy) {
      return { sent: false, warning: "edit in progress" };
    }
    try {
      await this.api.swapLatents(this.sessionId, regionId, which, donor);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        return { sent: false, warning: "edit in progress" };
      }
      this.lastError = error instanceof Error ? error.message : String(error);
      this.changed();
      throw error;
    }
    this.lastError = "";
    this.renderCache.clear();
    await this.refreshFromServer();
    return { sent: true };
  }
}
