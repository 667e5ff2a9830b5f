/**
 * Export jobs: decode each image, run the encoder with the fixed
 * inference prompt, and serialize the outputs as one case bundle per
 * image. Per-image failures become error records; the batch continues.
 */

import { createHash } from "node:crypto";
import { readFile, readdir, stat } from "node:fs/promises";
import { basename, dirname, join } from "node:path";

import { CaseBundle, writeBundle } from "./bundle.js";
import { DEFAULT_OPTIONS, Encoder, makeEncoder } from "./encoder.js";
import { loadImage } from "./image.js";
import { tensor } from "./tensor.js";

export const DEFAULT_PROMPT = "abnormal lesion region";

export interface ExportJob {
  images: string[];
  prompt: string;
  outDir: string;
  model: string;
  device: string;
  embeddingDim: number;
  topK: number;
  descriptionsFile?: string;
}

export interface ExportError {
  image: string;
  error: string;
}

export interface ExportSummary {
  exported: string[];
  errors: ExportError[];
}

export function caseIdFor(imagePath: string): string {
  return basename(imagePath).replace(/\.[^.]+$/, "");
}

export async function expandImages(patterns: string[]): Promise<string[]> {
  const out: string[] = [];
  for (const pattern of patterns) {
    const starIdx = basename(pattern).indexOf("*");
    if (starIdx < 0) {
      out.push(pattern);
      continue;
    }
    const dir = dirname(pattern);
    const name = basename(pattern);
    const regex = new RegExp(
      "^" + name.split("*").map((s) => s.replace(/[.*+?^${}()|[\]\\]/g, "\\$&")).join(".*") + "$");
    const entries = (await readdir(dir)).filter((e) => regex.test(e)).sort();
    out.push(...entries.map((e) => join(dir, e)));
  }
  return out;
}

export async function exportCase(job: ExportJob, encoder: Encoder,
                                 imagePath: string): Promise<string> {
  const image = await loadImage(imagePath);
  const outputs = encoder.encode(image, job.prompt);
  const h = image.height;
  const w = image.width;

  const tensors = new Map([
    ["image", tensor([h, w], image.pixels)],
    ["heatmap", tensor([h, w], outputs.heatmap.values)],
    ["text_embedding", tensor([outputs.textEmbedding.length], outputs.textEmbedding)],
  ]);
  outputs.candidates.forEach((cand, k) => {
    tensors.set(`mask_logits_${k}`, tensor([h, w], cand.maskLogits));
    tensors.set(`cls_logits_${k}`, tensor([cand.clsLogits.length], cand.clsLogits));
    tensors.set(`embedding_${k}`, tensor([cand.embedding.length], cand.embedding));
  });

  const metadata: Record<string, string> = {
    source: basename(imagePath),
    model: encoder.id,
    device: job.device,
    prompt: job.prompt,
  };
  if (job.descriptionsFile) {
    const descriptions = await readFile(job.descriptionsFile);
    metadata.descriptions_sha256 = createHash("sha256").update(descriptions).digest("hex");
  }

  const bundle: CaseBundle = {
    caseId: caseIdFor(imagePath),
    label: null,
    tensors,
    metadata,
  };
  const dir = join(job.outDir, bundle.caseId);
  await writeBundle(dir, bundle);
  return dir;
}

export async function runExport(job: ExportJob): Promise<ExportSummary> {
  if (!job.prompt.trim()) throw new Error("prompt text must be non-empty");
  const encoder = makeEncoder(job.model, {
    ...DEFAULT_OPTIONS,
    embeddingDim: job.embeddingDim,
    topK: job.topK,
  });
  const exported: string[] = [];
  const errors: ExportError[] = [];
  const paths = await expandImages(job.images);
  for (const imagePath of paths) {
    try {
      await stat(imagePath);
      exported.push(await exportCase(job, encoder, imagePath));
    } catch (err) {
      errors.push({ image: imagePath, error: err instanceof Error ? err.message : String(err) });
    }
  }
  return { exported, errors };
}
