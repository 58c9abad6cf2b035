/**
 * Indexed (palette) PNG codec for label masks.
 *
 * The encoder always writes 8-bit color-type-3 scanlines with filter 0
 * inside an uncompressed zlib stream, so the same bitmap always yields
 * the same bytes; that byte-stability is what lets one exported mask be
 * both POSTed to the service and fed to the CLI with a clean equality
 * check. The decoder accepts anything the server may send back: bit
 * depths 1/2/4/8, all five scanline filters, multiple IDAT chunks.
 */

import { inflate } from "pako";

export interface IndexedImage {
  width: number;
  height: number;
  /** Row-major label ids, one per pixel. */
  labels: Uint8Array;
  /** RGB triples, one per label id. */
  palette: Array<[number, number, number]>;
}

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let crc = 0xffffffff;
  for (const byte of bytes) {
    crc = CRC_TABLE[(crc ^ byte) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (const byte of bytes) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

/** zlib wrapper around deflate "stored" blocks: valid, deterministic. */
function zlibStored(data: Uint8Array): Uint8Array {
  const blocks: number[] = [0x78, 0x01];
  const max = 0xffff;
  for (let offset = 0; offset < data.length || offset === 0; offset += max) {
    const chunk = data.subarray(offset, Math.min(offset + max, data.length));
    const final = offset + max >= data.length ? 1 : 0;
    blocks.push(final, chunk.length & 0xff, chunk.length >>> 8,
      ~chunk.length & 0xff, (~chunk.length >>> 8) & 0xff);
    for (const byte of chunk) blocks.push(byte);
    if (final) break;
  }
  const checksum = adler32(data);
  blocks.push((checksum >>> 24) & 0xff, (checksum >>> 16) & 0xff,
    (checksum >>> 8) & 0xff, checksum & 0xff);
  return Uint8Array.from(blocks);
}

function chunk(name: string, body: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + body.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, body.length);
  for (let i = 0; i < 4; i++) out[4 + i] = name.charCodeAt(i);
  out.set(body, 8);
  view.setUint32(8 + body.length, crc32(out.subarray(4, 8 + body.length)));
  return out;
}

export function encodeIndexedPng(image: IndexedImage): Uint8Array {
  const { width, height, labels, palette } = image;
  if (labels.length !== width * height) {
    throw new Error(`labels length ${labels.length} != ${width}x${height}`);
  }
  if (palette.length === 0 || palette.length > 256) {
    throw new Error(`palette must hold 1..256 colors, got ${palette.length}`);
  }
  for (const id of labels) {
    if (id >= palette.length) {
      throw new Error(`label ${id} has no palette entry`);
    }
  }

  const ihdr = new Uint8Array(13);
  const view = new DataView(ihdr.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  ihdr[8] = 8; // bit depth
  ihdr[9] = 3; // indexed color
  const plte = new Uint8Array(palette.length * 3);
  palette.forEach(([r, g, b], i) => plte.set([r, g, b], i * 3));

  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw.set(labels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }

  const parts = [Uint8Array.from(SIGNATURE), chunk("IHDR", ihdr),
    chunk("PLTE", plte), chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0))];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  return out;
}

function unfilter(data: Uint8Array, width: number, height: number,
  bitsPerPixel: number): Uint8Array {
  const stride = Math.ceil((width * bitsPerPixel) / 8);
  const step = Math.max(1, bitsPerPixel >> 3);
  const out = new Uint8Array(height * stride);
  let pos = 0;
  for (let y = 0; y < height; y++) {
    const filter = data[pos++];
    const row = y * stride;
    const prior = row - stride;
    for (let x = 0; x < stride; x++) {
      const value = data[pos++];
      const left = x >= step ? out[row + x - step] : 0;
      const up = y > 0 ? out[prior + x] : 0;
      const upLeft = y > 0 && x >= step ? out[prior + x - step] : 0;
      let reconstructed: number;
      switch (filter) {
        case 0:
          reconstructed = value;
          break;
        case 1:
          reconstructed = value + left;
          break;
        case 2:
          reconstructed = value + up;
          break;
        case 3:
          reconstructed = value + ((left + up) >> 1);
          break;
        case 4: {
          const p = left + up - upLeft;
          const pa = Math.abs(p - left);
          const pb = Math.abs(p - up);
          const pc = Math.abs(p - upLeft);
          reconstructed = value + (pa <= pb && pa <= pc ? left : pb <= pc ? up : upLeft);
          break;
        }
        default:
          throw new Error(`unknown scanline filter ${filter}`);
      }
      out[row + x] = reconstructed & 0xff;
    }
  }
  return out;
}

export function decodeIndexedPng(bytes: Uint8Array): IndexedImage {
  for (let i = 0; i < SIGNATURE.length; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
  let width = 0;
  let height = 0;
  let depth = 0;
  const palette: Array<[number, number, number]> = [];
  const idat: Uint8Array[] = [];
  let pos = 8;
  while (pos + 8 <= bytes.length) {
    const view = new DataView(bytes.buffer, bytes.byteOffset + pos);
    const length = view.getUint32(0);
    const name = String.fromCharCode(...bytes.subarray(pos + 4, pos + 8));
    const body = bytes.subarray(pos + 8, pos + 8 + length);
    if (name === "IHDR") {
      const header = new DataView(bytes.buffer, bytes.byteOffset + pos + 8);
      width = header.getUint32(0);
      height = header.getUint32(4);
      depth = body[8];
      if (body[9] !== 3) throw new Error(`not an indexed PNG (color type ${body[9]})`);
      if (body[12] !== 0) throw new Error("interlaced PNGs are not supported");
      if (![1, 2, 4, 8].includes(depth)) throw new Error(`bad bit depth ${depth}`);
    } else if (name === "PLTE") {
      for (let i = 0; i + 2 < length; i += 3) {
        palette.push([body[i], body[i + 1], body[i + 2]]);
      }
    } else if (name === "IDAT") {
      idat.push(body);
    } else if (name === "IEND") {
      break;
    }
    pos += 12 + length;
  }
  if (!width || !height) throw new Error("missing IHDR");

  const compressed = new Uint8Array(idat.reduce((n, part) => n + part.length, 0));
  let offset = 0;
  for (const part of idat) {
    compressed.set(part, offset);
    offset += part.length;
  }
  const rows = unfilter(inflate(compressed), width, height, depth);

  const labels = new Uint8Array(width * height);
  const stride = Math.ceil((width * depth) / 8);
  const perByte = 8 / depth;
  const mask = (1 << depth) - 1;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const byte = rows[y * stride + Math.floor(x / perByte)];
      const shift = 8 - depth - (x % perByte) * depth;
      labels[y * width + x] = (byte >> shift) & mask;
    }
  }
  return { width, height, labels, palette };
}
