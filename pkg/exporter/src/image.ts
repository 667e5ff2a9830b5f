/**
 * Image ingestion: PNG (via pngjs, luminosity grayscale), PGM (P2/P5),
 * and raw float32 frames with a JSON sidecar. All decoders return
 * row-major intensities scaled to [0, 1].
 */

import { readFile } from "node:fs/promises";
import { PNG } from "pngjs";

import { GrayImage } from "./tensor.js";

export function decodePGM(buffer: Buffer): GrayImage {
  const header: string[] = [];
  let pos = 0;
  // magic, width, height, maxval; '#' comments allowed between tokens
  while (header.length < 4 && pos < buffer.length) {
    while (pos < buffer.length && /\s/.test(String.fromCharCode(buffer[pos]))) pos++;
    if (buffer[pos] === 0x23) { // '#'
      while (pos < buffer.length && buffer[pos] !== 0x0a) pos++;
      continue;
    }
    let token = "";
    while (pos < buffer.length && !/\s/.test(String.fromCharCode(buffer[pos]))) {
      token += String.fromCharCode(buffer[pos]);
      pos++;
    }
    if (token) header.push(token);
  }
  const [magic, w, h, maxStr] = header;
  const width = Number(w);
  const height = Number(h);
  const maxval = Number(maxStr);
  if ((magic !== "P5" && magic !== "P2") || !width || !height || !maxval) {
    throw new Error("not a valid PGM image");
  }
  const pixels = new Float64Array(width * height);
  if (magic === "P5") {
    pos++; // single whitespace after maxval
    const wide = maxval > 255;
    for (let i = 0; i < width * height; i++) {
      const v = wide ? buffer.readUInt16BE(pos + i * 2) : buffer[pos + i];
      pixels[i] = v / maxval;
    }
  } else {
    const text = buffer.subarray(pos).toString("ascii").replace(/#[^\n]*/g, " ");
    const values = text.split(/\s+/).filter((t) => t.length > 0).map(Number);
    if (values.length < width * height) throw new Error("truncated P2 payload");
    for (let i = 0; i < width * height; i++) pixels[i] = values[i] / maxval;
  }
  return { width, height, pixels };
}

export function decodePNGBuffer(buffer: Buffer): GrayImage {
  const png = PNG.sync.read(buffer);
  const pixels = new Float64Array(png.width * png.height);
  for (let i = 0; i < png.width * png.height; i++) {
    const r = png.data[i * 4];
    const g = png.data[i * 4 + 1];
    const b = png.data[i * 4 + 2];
    pixels[i] = (0.299 * r + 0.587 * g + 0.114 * b) / 255;
  }
  return { width: png.width, height: png.height, pixels };
}

export async function decodeRawF32(path: string): Promise<GrayImage> {
  const sidecar = JSON.parse(await readFile(path.replace(/\.f32$/, ".json"), "utf-8"));
  const width = Number(sidecar.width);
  const height = Number(sidecar.height);
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new Error("raw frame sidecar must declare positive width/height");
  }
  const payload = await readFile(path);
  if (payload.length !== width * height * 4) {
    throw new Error("raw frame byte count does not match sidecar dimensions");
  }
  const pixels = new Float64Array(width * height);
  let lo = Infinity;
  let hi = -Infinity;
  for (let i = 0; i < pixels.length; i++) {
    pixels[i] = payload.readFloatLE(i * 4);
    if (!Number.isFinite(pixels[i])) throw new Error("raw frame contains non-finite values");
    lo = Math.min(lo, pixels[i]);
    hi = Math.max(hi, pixels[i]);
  }
  if (hi > lo) {
    for (let i = 0; i < pixels.length; i++) pixels[i] = (pixels[i] - lo) / (hi - lo);
  } else {
    pixels.fill(0);
  }
  return { width, height, pixels };
}

export async function loadImage(path: string): Promise<GrayImage> {
  const lower = path.toLowerCase();
  if (lower.endsWith(".png")) return decodePNGBuffer(await readFile(path));
  if (lower.endsWith(".pgm")) return decodePGM(await readFile(path));
  if (lower.endsWith(".f32")) return decodeRawF32(path);
  throw new Error(`unsupported image format: ${path} (png, pgm, f32 supported)`);
}
