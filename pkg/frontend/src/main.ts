/**
 * Browser shell: wires the editor state machine to the page.
 *
 * Thin by design; everything testable lives in editor/mask/png/api.
 */

import { ApiClient } from "./api.js";
import { Editor } from "./editor.js";
import { Point } from "./mask.js";

const api = new ApiClient("");
let editor: Editor;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const renderImage = () => el<HTMLImageElement>("render");
const previewImage = () => el<HTMLImageElement>("preview");
const maskCanvas = () => el<HTMLCanvasElement>("mask");
const statusLine = () => el<HTMLElement>("status");

function showPng(image: HTMLImageElement, bytes: Uint8Array): void {
  const url = URL.createObjectURL(new Blob([bytes.slice().buffer], { type: "image/png" }));
  const previous = image.src;
  image.src = url;
  if (previous.startsWith("blob:")) URL.revokeObjectURL(previous);
}

function drawMask(): void {
  const canvas = maskCanvas();
  const mask = editor.mask;
  canvas.width = mask.width;
  canvas.height = mask.height;
  const context = canvas.getContext("2d");
  if (!context) return;
  const pixels = context.createImageData(mask.width, mask.height);
  for (let i = 0; i < mask.labels.length; i++) {
    const label = editor.palette[mask.labels[i]];
    const [r, g, b] = label ? label.color : [0, 0, 0];
    pixels.data.set([r, g, b, mask.labels[i] === 0 ? 64 : 168], i * 4);
  }
  context.putImageData(pixels, 0, 0);
}

function refreshControls(): void {
  el<HTMLButtonElement>("submit").disabled = editor.busy;
  el<HTMLButtonElement>("swap").disabled = editor.busy;
  el<HTMLButtonElement>("undo").disabled = !editor.canUndo;
  el<HTMLButtonElement>("redo").disabled = !editor.canRedo;
  const job = editor.job;
  statusLine().textContent = job
    ? `job ${job.job_id}: ${job.status} ${job.iteration}/${job.budget}`
      + (job.loss !== null ? ` loss ${job.loss.toFixed(5)}` : "")
    : editor.dirty ? "mask edited; submit when ready" : "in sync with server";
}

function paletteButtons(): void {
  const bar = el<HTMLElement>("palette");
  bar.innerHTML = "";
  for (const label of editor.palette) {
    const button = document.createElement("button");
    button.textContent = label.name;
    button.style.background = `rgb(${label.color.join(",")})`;
    button.onclick = () => {
      editor.brush.label = label.id;
      statusLine().textContent = `brush: ${label.name}`;
    };
    bar.appendChild(button);
  }
}

function canvasPoint(event: PointerEvent): Point {
  const canvas = maskCanvas();
  const box = canvas.getBoundingClientRect();
  return {
    x: ((event.clientX - box.left) / box.width) * canvas.width,
    y: ((event.clientY - box.top) / box.height) * canvas.height,
  };
}

function wirePainting(): void {
  const canvas = maskCanvas();
  let path: Point[] = [];
  canvas.onpointerdown = (event) => {
    canvas.setPointerCapture(event.pointerId);
    path = [canvasPoint(event)];
  };
  canvas.onpointermove = (event) => {
    if (path.length) path.push(canvasPoint(event));
  };
  canvas.onpointerup = () => {
    if (path.length) editor.paint(path);
    path = [];
  };
}

async function start(): Promise<void> {
  editor = new Editor(api, {
    onChange: () => {
      drawMask();
      refreshControls();
      void editor.render().then((bytes) => showPng(renderImage(), bytes));
    },
    onPreview: (bytes) => showPng(previewImage(), bytes),
  });

  const { checkpoints } = await api.listCheckpoints();
  if (!checkpoints.length) {
    statusLine().textContent = "no checkpoints served";
    return;
  }
  await editor.open(checkpoints[0], 7);
  paletteButtons();
  wirePainting();

  el<HTMLButtonElement>("undo").onclick = () => editor.undo();
  el<HTMLButtonElement>("redo").onclick = () => editor.redo();
  const orbit = (da: number, de: number) => () => void editor.orbit(da, de);
  el<HTMLButtonElement>("left").onclick = orbit(-0.15, 0);
  el<HTMLButtonElement>("right").onclick = orbit(0.15, 0);
  el<HTMLButtonElement>("up").onclick = orbit(0, 0.1);
  el<HTMLButtonElement>("down").onclick = orbit(0, -0.1);

  el<HTMLButtonElement>("submit").onclick = async () => {
    const regions = [editor.brush.label];
    try {
      const result = await editor.submitEdit(regions);
      refreshControls();
      if (!result.sent) {
        statusLine().textContent = result.warning ?? "not sent";
        return;
      }
      await editor.pollToCompletion();
    } catch {
      // The mask is still dirty, so submit acts as the retry button.
      statusLine().textContent = `submit failed: ${editor.lastError} — press submit to retry`;
    }
  };

  el<HTMLButtonElement>("swap").onclick = async () => {
    const donor = el<HTMLInputElement>("donor").value.trim();
    if (!donor) {
      statusLine().textContent = "enter a donor session id";
      return;
    }
    try {
      const result = await editor.swapLatents(
        editor.brush.label, "texture", { session: donor });
      statusLine().textContent = result.sent
        ? "texture swapped" : result.warning ?? "not sent";
    } catch {
      statusLine().textContent = `swap failed: ${editor.lastError} — press swap to retry`;
    }
  };

  el<HTMLButtonElement>("export").onclick = () => {
    const bytes = editor.exportMask();
    const url = URL.createObjectURL(new Blob([bytes.slice().buffer], { type: "image/png" }));
    const link = document.createElement("a");
    link.href = url;
    link.download = "mask.png";
    link.click();
    URL.revokeObjectURL(url);
  };
}

void start();
