import { mkdtemp, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";

/** Binary PGM with a dark elliptical lesion on a brighter textured field. */
export function lesionPGM(size = 48, seed = 7): Buffer {
  const header = Buffer.from(`P5\n${size} ${size}\n255\n`, "ascii");
  const body = Buffer.allocUnsafe(size * size);
  let state = seed >>> 0;
  const next = () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 4294967296;
  };
  const cy = size * 0.45;
  const cx = size * 0.55;
  for (let r = 0; r < size; r++) {
    for (let c = 0; c < size; c++) {
      const inside = ((r - cy) / (size * 0.18)) ** 2 + ((c - cx) / (size * 0.14)) ** 2 <= 1;
      const base = inside ? 60 + 25 * next() : 170 + 30 * next();
      body[r * size + c] = Math.max(0, Math.min(255, Math.round(base)));
    }
  }
  return Buffer.concat([header, body]);
}

export function blankPGM(size = 32, value = 128): Buffer {
  const header = Buffer.from(`P5\n${size} ${size}\n255\n`, "ascii");
  const body = Buffer.alloc(size * size, value);
  return Buffer.concat([header, body]);
}

export async function tempDir(prefix: string): Promise<string> {
  return mkdtemp(join(tmpdir(), prefix));
}

export async function writeLesionImage(dir: string, name = "case-a.pgm",
                                       seed = 7): Promise<string> {
  const path = join(dir, name);
  await writeFile(path, lesionPGM(48, seed));
  return path;
}
