/**
 * Label bitmap editing: brush strokes and an undo/redo stack.
 *
 * Everything here is pure data manipulation so it runs identically in
 * the browser and under the test runner.
 */

export interface Brush {
  label: number;
  radius: number;
}

export interface Point {
  x: number;
  y: number;
}

export class MaskBitmap {
  readonly width: number;
  readonly height: number;
  readonly labels: Uint8Array;

  constructor(width: number, height: number, labels?: Uint8Array) {
    if (labels && labels.length !== width * height) {
      throw new Error(`labels length ${labels.length} != ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.labels = labels ?? new Uint8Array(width * height);
  }

  clone(): MaskBitmap {
    return new MaskBitmap(this.width, this.height, this.labels.slice());
  }

  equals(other: MaskBitmap): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    return this.labels.every((value, i) => value === other.labels[i]);
  }

  get(x: number, y: number): number {
    return this.labels[y * this.width + x];
  }
}

function distanceToSegment(p: Point, a: Point, b: Point): number {
  const dx = b.x - a.x;
  const dy = b.y - a.y;
  const lengthSq = dx * dx + dy * dy;
  let t = 0;
  if (lengthSq > 0) {
    t = Math.max(0, Math.min(1, ((p.x - a.x) * dx + (p.y - a.y) * dy) / lengthSq));
  }
  const cx = a.x + t * dx;
  const cy = a.y + t * dy;
  return Math.hypot(p.x - cx, p.y - cy);
}

/**
 * Paint `brush.label` onto every pixel within `brush.radius` of the
 * polyline `path`. A single point paints a disc. Off-canvas portions
 * are clipped silently. Returns a new bitmap; the input is untouched.
 */
export function paintStroke(mask: MaskBitmap, brush: Brush, path: Point[]): MaskBitmap {
  if (!Number.isInteger(brush.label) || brush.label < 0 || brush.label > 255) {
    throw new Error(`brush label ${brush.label} is not a byte`);
  }
  if (!(brush.radius > 0)) {
    throw new Error(`brush radius must be positive, got ${brush.radius}`);
  }
  if (path.length === 0) return mask.clone();

  const out = mask.clone();
  const segments: Array<[Point, Point]> = [];
  for (let i = 0; i + 1 < path.length; i++) {
    segments.push([path[i], path[i + 1]]);
  }
  if (segments.length === 0) segments.push([path[0], path[0]]);

  // Only pixels inside the stroke's bounding box need a distance test.
  const xs = path.map((p) => p.x);
  const ys = path.map((p) => p.y);
  const x0 = Math.max(0, Math.floor(Math.min(...xs) - brush.radius));
  const x1 = Math.min(mask.width - 1, Math.ceil(Math.max(...xs) + brush.radius));
  const y0 = Math.max(0, Math.floor(Math.min(...ys) - brush.radius));
  const y1 = Math.min(mask.height - 1, Math.ceil(Math.max(...ys) + brush.radius));

  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const pixel = { x, y };
      for (const [a, b] of segments) {
        if (distanceToSegment(pixel, a, b) <= brush.radius) {
          out.labels[y * mask.width + x] = brush.label;
          break;
        }
      }
    }
  }
  return out;
}

/** Snapshot-based history: undo/redo restore bitmaps bit-exactly. */
export class UndoStack {
  private past: MaskBitmap[] = [];
  private future: MaskBitmap[] = [];

  constructor(private current: MaskBitmap) {}

  get value(): MaskBitmap {
    return this.current;
  }

  get canUndo(): boolean {
    return this.past.length > 0;
  }

  get canRedo(): boolean {
    return this.future.length > 0;
  }

  push(next: MaskBitmap): void {
    this.past.push(this.current);
    this.current = next;
    this.future = [];
  }

  /** Replace history wholesale, e.g. after the server's mask refreshes. */
  reset(next: MaskBitmap): void {
    this.past = [];
    this.future = [];
    this.current = next;
  }

  undo(): MaskBitmap {
    const previous = this.past.pop();
    if (previous) {
      this.future.push(this.current);
      this.current = previous;
    }
    return this.current;
  }

  redo(): MaskBitmap {
    const next = this.future.pop();
    if (next) {
      this.past.push(this.current);
      this.current = next;
    }
    return this.current;
  }
}
