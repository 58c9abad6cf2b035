import { describe, expect, it, vi } from "vitest";
import { ApiClient, type FetchLike, type JobStatus, type SessionSchema } from "../src/api.js";
import { Editor, type EditorEvents } from "../src/editor.js";
import { encodeIndexedPng } from "../src/png.js";

const SIZE = 16;

const SCHEMA: SessionSchema = {
  regions: 3,
  labels: [
    { id: 0, name: "background", color: [0, 0, 0] },
    { id: 1, name: "face", color: [255, 64, 64] },
    { id: 2, name: "hair", color: [64, 255, 64] },
  ],
};

function jobState(
  status: JobStatus["status"],
  iteration: number,
  withPreview = false,
  error: string | null = null,
): JobStatus {
  return {
    job_id: "j1",
    kind: "mask_edit",
    session_id: "s1",
    status,
    iteration,
    budget: 100,
    loss: status === "pending" ? null : 0.5,
    first_loss: status === "pending" ? null : 1.0,
    preview_url: withPreview ? `/api/v1/jobs/j1/preview?iteration=${iteration}` : null,
    error,
  };
}

interface Recorded {
  method: string;
  path: string;
  body: Record<string, unknown> | null;
}

/**
 * In-memory stand-in for the editing service. `generation` changes the
 * served render and mask whenever a mutation lands, so tests can observe
 * whether the editor actually refreshed.
 */
class StubServer {
  requests: Recorded[] = [];
  generation = 0;
  busy = false;
  jobStates: JobStatus[] = [jobState("pending", 0)];
  jobCursor = 0;
  lastEditBody: Record<string, unknown> | null = null;

  plan(...states: JobStatus[]): void {
    this.jobStates = states;
    this.jobCursor = 0;
  }

  serverLabels(): Uint8Array {
    const labels = new Uint8Array(SIZE * SIZE);
    for (let i = 0; i < labels.length; i++) {
      labels[i] = (i + this.generation) % 3 === 0 ? 1 : 0;
    }
    return labels;
  }

  fetch: FetchLike = async (url, init) => {
    const parsed = new URL(url, "http://stub");
    const method = (init?.method ?? "GET").toUpperCase();
    const body = init?.body ? (JSON.parse(String(init.body)) as Record<string, unknown>) : null;
    this.requests.push({ method, path: parsed.pathname, body });

    const json = (payload: unknown, status = 200) =>
      new Response(JSON.stringify(payload), {
        status,
        headers: { "content-type": "application/json" },
      });
    const blob = (bytes: Uint8Array) => new Response(bytes.slice().buffer);
    const conflict = () =>
      json({ code: "job_conflict", message: "an edit job is already running", detail: "" }, 409);

    const path = parsed.pathname;
    if (method === "POST" && path === "/api/v1/sessions") {
      return json({ session_id: "s1" });
    }
    if (method === "GET" && path === "/api/v1/sessions/s1/schema") {
      return json(SCHEMA);
    }
    if (method === "GET" && path === "/api/v1/sessions/s1/render") {
      const az = parsed.searchParams.get("azimuth");
      const el = parsed.searchParams.get("elevation");
      return blob(new TextEncoder().encode(`render:${az}:${el}:gen${this.generation}`));
    }
    if (method === "GET" && path === "/api/v1/sessions/s1/mask") {
      return blob(
        encodeIndexedPng({
          width: SIZE,
          height: SIZE,
          labels: this.serverLabels(),
          palette: SCHEMA.labels.map((label) => label.color),
        }),
      );
    }
    if (method === "POST" && path === "/api/v1/sessions/s1/edits") {
      if (this.busy) return conflict();
      this.lastEditBody = body;
      this.generation += 1;
      return json({ job_id: "j1" });
    }
    if (method === "GET" && path === "/api/v1/jobs/j1") {
      const state = this.jobStates[Math.min(this.jobCursor, this.jobStates.length - 1)];
      this.jobCursor += 1;
      return json(state);
    }
    if (method === "GET" && path === "/api/v1/jobs/j1/preview") {
      return blob(new TextEncoder().encode(`preview:${parsed.searchParams.get("iteration")}`));
    }
    if (method === "POST" && path === "/api/v1/sessions/s1/latents/swap") {
      if (this.busy) return conflict();
      this.generation += 1;
      return json({ history_length: 2 });
    }
    return json({ code: "not_found", message: `no stub route for ${method} ${path}`, detail: "" }, 404);
  };

  renderRequests(): Recorded[] {
    return this.requests.filter((r) => r.path === "/api/v1/sessions/s1/render");
  }

  mutations(): Recorded[] {
    return this.requests.filter((r) => r.method !== "GET");
  }
}

async function openEditor(
  server: StubServer,
  events: EditorEvents = {},
  pollIntervalMs = 0,
): Promise<Editor> {
  const editor = new Editor(new ApiClient("", server.fetch), events, pollIntervalMs);
  await editor.open("toy.lcnf", 7);
  return editor;
}

function paintSomething(editor: Editor): void {
  editor.brush = { label: 2, radius: 3 };
  editor.paint([{ x: 4, y: 4 }, { x: 10, y: 10 }]);
}

describe("session loading", () => {
  it("loads the schema palette and the server mask", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    expect(editor.palette.map((label) => label.name)).toEqual(["background", "face", "hair"]);
    expect(Array.from(editor.mask.labels)).toEqual(Array.from(server.serverLabels()));
    expect(editor.dirty).toBe(false);
    expect(editor.busy).toBe(false);
  });

  it("polling interval defaults to 500 ms and is configurable", () => {
    const server = new StubServer();
    const api = new ApiClient("", server.fetch);
    expect(new Editor(api).pollIntervalMs).toBe(500);
    expect(new Editor(api, {}, 125).pollIntervalMs).toBe(125);
  });
});

describe("orbiting", () => {
  it("treats a zero-delta orbit as a cache hit with no request", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    const before = server.renderRequests().length;
    await editor.orbit(0, 0);
    expect(server.renderRequests().length).toBe(before);
  });

  it("produces distinct render bytes across a sweep", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    const seen = new Set<string>();
    seen.add(new TextDecoder().decode(await editor.render()));
    for (let i = 0; i < 3; i++) {
      seen.add(new TextDecoder().decode(await editor.orbit(0.3, 0)));
    }
    expect(seen.size).toBe(4);
  });

  it("clamps angles to the server-accepted range", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    await editor.orbit(100, 0);
    expect(editor.azimuth).toBe(Math.PI);
    await editor.orbit(0, -100);
    expect(editor.elevation).toBe(-Math.PI / 2);
  });

  it("reuses the cache when returning to a visited pose", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    await editor.orbit(0.2, 0);
    const count = server.renderRequests().length;
    await editor.orbit(-0.2, 0); // back to the starting pose, already cached
    expect(server.renderRequests().length).toBe(count);
  });

  it("keeps overlay labels inside the schema", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    const overlay = await editor.overlay();
    for (const label of overlay.labels) {
      expect(label).toBeLessThan(editor.palette.length);
    }
  });
});

describe("painting", () => {
  it("marks the mask dirty and undo/redo restore sync", async () => {
    const editor = await openEditor(new StubServer());
    expect(editor.dirty).toBe(false);
    paintSomething(editor);
    expect(editor.dirty).toBe(true);
    editor.undo();
    expect(editor.dirty).toBe(false);
    editor.redo();
    expect(editor.dirty).toBe(true);
  });

  it("refuses brush labels outside the schema", async () => {
    const editor = await openEditor(new StubServer());
    editor.brush = { label: 7, radius: 2 };
    expect(() => editor.paint([{ x: 1, y: 1 }])).toThrow(/schema/);
  });
});

describe("submitting edits", () => {
  it("warns on an unchanged mask and sends nothing", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    const result = await editor.submitEdit([1]);
    expect(result.sent).toBe(false);
    expect(result.warning).toMatch(/unchanged/);
    expect(server.mutations().filter((r) => r.path.endsWith("/edits"))).toHaveLength(0);
  });

  it("posts exactly the bytes that exportMask returns", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    paintSomething(editor);
    const exported = editor.exportMask();
    const result = await editor.submitEdit([2], 40);
    expect(result.sent).toBe(true);
    const posted = server.lastEditBody;
    expect(posted).not.toBeNull();
    const postedBytes = Uint8Array.from(atob(String(posted!.mask_png)), (c) => c.charCodeAt(0));
    expect(Array.from(postedBytes)).toEqual(Array.from(exported));
    expect(posted!.region_ids).toEqual([2]);
    expect(posted!.iterations).toBe(40);
    expect(editor.busy).toBe(true);
  });

  it("refuses a second submit locally while a job runs", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    paintSomething(editor);
    await editor.submitEdit([2]);
    const posts = server.mutations().length;
    const second = await editor.submitEdit([2]);
    expect(second.sent).toBe(false);
    expect(second.warning).toBe("edit in progress");
    expect(server.mutations().length).toBe(posts);
  });

  it("translates a server 409 into the same warning", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    server.busy = true;
    paintSomething(editor);
    const result = await editor.submitEdit([2]);
    expect(result.sent).toBe(false);
    expect(result.warning).toBe("edit in progress");
  });

  it("records a retryable error when the network fails", async () => {
    const server = new StubServer();
    let broken = true;
    const flaky: FetchLike = (url, init) => {
      if (broken && (init?.method ?? "GET") === "POST" && url.includes("/edits")) {
        return Promise.reject(new TypeError("fetch failed"));
      }
      return server.fetch(url, init);
    };
    const editor = new Editor(new ApiClient("", flaky), {}, 0);
    await editor.open("toy.lcnf", 7);
    paintSomething(editor);
    await expect(editor.submitEdit([2])).rejects.toThrow("fetch failed");
    expect(editor.lastError).toContain("fetch failed");
    expect(editor.dirty).toBe(true); // the stroke is kept for the retry
    expect(editor.busy).toBe(false);
    broken = false;
    const retry = await editor.submitEdit([2]);
    expect(retry.sent).toBe(true);
    expect(editor.lastError).toBe("");
  });
});

describe("polling a job", () => {
  it("fetches each preview once and refreshes when the job is done", async () => {
    const server = new StubServer();
    const onPreview = vi.fn();
    const editor = await openEditor(server, { onPreview });
    const baseRender = new TextDecoder().decode(await editor.render());

    server.plan(
      jobState("pending", 0),
      jobState("running", 10, true),
      jobState("running", 10, true), // same preview snapshot, must not re-fetch
      jobState("done", 100),
    );
    paintSomething(editor);
    await editor.submitEdit([2]);

    await editor.pollOnce();
    await editor.pollOnce();
    expect(onPreview).toHaveBeenCalledTimes(1);
    expect(new TextDecoder().decode(onPreview.mock.calls[0][0])).toBe("preview:10");
    expect(server.requests.filter((r) => r.path === "/api/v1/jobs/j1/preview")).toHaveLength(1);

    const final = await editor.pollOnce();
    expect(final?.status).toBe("done");
    expect(editor.busy).toBe(false);
    expect(editor.dirty).toBe(false); // refreshed mask replaces the painted one
    expect(Array.from(editor.mask.labels)).toEqual(Array.from(server.serverLabels()));
    const refreshed = new TextDecoder().decode(await editor.render());
    expect(refreshed).not.toBe(baseRender); // stale cache dropped
  });

  it("pollToCompletion resolves the terminal status", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    server.plan(jobState("pending", 0), jobState("running", 50), jobState("done", 100));
    paintSomething(editor);
    await editor.submitEdit([2]);
    const status = await editor.pollToCompletion();
    expect(status.status).toBe("done");
  });

  it("a failed job re-enables editing", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    server.plan(jobState("pending", 0), jobState("failed", 12, false, "optimizer diverged"));
    paintSomething(editor);
    await editor.submitEdit([2]);
    const status = await editor.pollToCompletion();
    expect(status.status).toBe("failed");
    expect(status.error).toBe("optimizer diverged");
    expect(editor.busy).toBe(false);
    server.plan(jobState("pending", 0));
    paintSomething(editor);
    const again = await editor.submitEdit([2]);
    expect(again.sent).toBe(true);
  });

  it("only issues GET requests while orbiting during a job", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    paintSomething(editor);
    await editor.submitEdit([2]);
    expect(editor.busy).toBe(true);
    const mutationsBefore = server.mutations().length;
    await editor.orbit(0.4, 0.1);
    await editor.orbit(-0.2, 0);
    expect(server.mutations().length).toBe(mutationsBefore);
  });
});

describe("latent swaps", () => {
  it("swaps and refreshes the view", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    const before = new TextDecoder().decode(await editor.render());
    const result = await editor.swapLatents(2, "texture", { session: "donor-1" });
    expect(result.sent).toBe(true);
    const swap = server.mutations().find((r) => r.path.endsWith("/latents/swap"));
    expect(swap?.body).toEqual({ region_id: 2, which: "texture", donor: "donor-1" });
    const after = new TextDecoder().decode(await editor.render());
    expect(after).not.toBe(before);
  });

  it("is refused while an edit job runs", async () => {
    const server = new StubServer();
    const editor = await openEditor(server);
    paintSomething(editor);
    await editor.submitEdit([2]);
    const result = await editor.swapLatents(1, "both", { session: "donor-1" });
    expect(result.sent).toBe(false);
    expect(result.warning).toBe("edit in progress");
  });
});

describe("mutation audit", () => {
  it("touches the server only via session creation, edits, and latent swaps", async () => {
    const server = new StubServer();
    const editor = await openEditor(server, {}, 0);
    await editor.orbit(0.3, 0.1);
    await editor.overlay();
    paintSomething(editor);
    editor.undo();
    editor.redo();
    editor.exportMask();
    server.plan(jobState("pending", 0), jobState("running", 10, true), jobState("done", 100));
    await editor.submitEdit([2]);
    await editor.pollToCompletion();
    await editor.swapLatents("all", "texture", { session: "donor-1" });

    const allowed = new Set([
      "/api/v1/sessions",
      "/api/v1/sessions/s1/edits",
      "/api/v1/sessions/s1/latents/swap",
    ]);
    for (const request of server.mutations()) {
      expect(request.method).toBe("POST");
      expect(allowed.has(request.path), `unexpected mutation ${request.method} ${request.path}`).toBe(true);
    }
  });
});
