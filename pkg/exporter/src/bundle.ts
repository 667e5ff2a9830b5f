/**
 * Case-bundle writer/reader for the interchange format consumed by the
 * analysis package: one manifest.json plus a raw little-endian float32
 * .bin per tensor, row-major. Values are float64 in memory and truncated
 * to float32 on write, so re-exporting identical inputs is bit-identical.
 */

import { mkdir, readFile, writeFile } from "node:fs/promises";
import { join } from "node:path";
import { z } from "zod";

import { Tensor, tensor } from "./tensor.js";

const tensorEntrySchema = z.object({
  name: z.string().min(1),
  shape: z.array(z.number().int().positive()).min(1),
  dtype: z.literal("f32"),
  file: z.string().min(1),
  byte_order: z.literal("little"),
  layout: z.literal("row-major"),
});

export const manifestSchema = z.object({
  case_id: z.string().min(1),
  label: z.number().int().nullable(),
  tensors: z.array(tensorEntrySchema),
  metadata: z.record(z.string(), z.string()),
});

export type Manifest = z.infer<typeof manifestSchema>;

export interface CaseBundle {
  caseId: string;
  label: number | null;
  tensors: Map<string, Tensor>;
  metadata: Record<string, string>;
}

function encodeF32LE(values: Float64Array): Buffer {
  const buf = Buffer.allocUnsafe(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(Math.fround(values[i]), i * 4);
  }
  return buf;
}

export async function writeBundle(dir: string, bundle: CaseBundle): Promise<void> {
  await mkdir(dir, { recursive: true });
  const names = [...bundle.tensors.keys()].sort();
  const entries = [];
  for (const name of names) {
    if (!/^[A-Za-z0-9._-]+$/.test(name)) {
      throw new Error(`tensor name '${name}' is not filesystem safe`);
    }
    const t = bundle.tensors.get(name)!;
    const file = `${name}.bin`;
    await writeFile(join(dir, file), encodeF32LE(t.data));
    entries.push({
      name,
      shape: t.shape,
      dtype: "f32" as const,
      file,
      byte_order: "little" as const,
      layout: "row-major" as const,
    });
  }
  const metadata: Record<string, string> = {};
  for (const key of Object.keys(bundle.metadata).sort()) {
    metadata[key] = bundle.metadata[key];
  }
  const manifest: Manifest = {
    case_id: bundle.caseId,
    label: bundle.label,
    tensors: entries,
    metadata,
  };
  manifestSchema.parse(manifest);
  await writeFile(join(dir, "manifest.json"), JSON.stringify(manifest, null, 2) + "\n");
}

export async function readBundle(dir: string): Promise<CaseBundle> {
  const raw = await readFile(join(dir, "manifest.json"), "utf-8");
  const manifest = manifestSchema.parse(JSON.parse(raw));
  const tensors = new Map<string, Tensor>();
  for (const entry of manifest.tensors) {
    const payload = await readFile(join(dir, entry.file));
    const expected = entry.shape.reduce((a, b) => a * b, 1);
    if (payload.length !== expected * 4) {
      throw new Error(
        `tensor '${entry.name}': byte-count mismatch (${payload.length} bytes for shape ` +
        `[${entry.shape.join(", ")}])`);
    }
    const values = new Float64Array(expected);
    for (let i = 0; i < expected; i++) {
      values[i] = payload.readFloatLE(i * 4);
    }
    tensors.set(entry.name, tensor(entry.shape, values));
  }
  return {
    caseId: manifest.case_id,
    label: manifest.label,
    tensors,
    metadata: manifest.metadata,
  };
}
