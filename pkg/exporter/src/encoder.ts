/**
 * Encoder backends. The built-in "analytic" backend is a fully
 * deterministic stand-in for a frozen vision-language encoder plus a
 * box-promptable segmenter: the prompt embeds via content hashing, the
 * heatmap comes from intensity/texture saliency, and each candidate box
 * yields mask logits, class logits, and a region embedding whose
 * alignment with the prompt embedding tracks box saliency. Real model
 * backends implement the same interface.
 */

import { boxBlur, Box, candidateBoxes, fallbackBox, Field, saliencyMap } from "./saliency.js";
import { GrayImage } from "./tensor.js";
import { fnv1a, unitVector } from "./rng.js";

export interface CandidateOutput {
  box: Box;
  maskLogits: Float64Array;   // [H*W]
  clsLogits: Float64Array;    // [2]
  embedding: Float64Array;    // [dim]
}

export interface EncoderOutputs {
  heatmap: Field;
  textEmbedding: Float64Array;
  candidates: CandidateOutput[];
}

export interface EncoderOptions {
  embeddingDim: number;
  topK: number;
  maskLogitScale: number;
}

export const DEFAULT_OPTIONS: EncoderOptions = {
  embeddingDim: 16,
  topK: 3,
  maskLogitScale: 3.0,
};

export interface Encoder {
  readonly id: string;
  encode(image: GrayImage, prompt: string): EncoderOutputs;
}

function asField(image: GrayImage): Field {
  return { width: image.width, height: image.height, values: image.pixels };
}

function segmentBox(image: Field, heatmap: Field, box: Box, scale: number): Float64Array {
  const { width, height } = image;
  const margin = Math.max(2, Math.round(Math.min(width, height) / 16));
  const r0 = Math.max(0, box.r0 - margin);
  const c0 = Math.max(0, box.c0 - margin);
  const r1 = Math.min(height - 1, box.r1 + margin);
  const c1 = Math.min(width - 1, box.c1 + margin);

  // interior threshold: mean intensity over the prompt rectangle
  let mean = 0;
  let count = 0;
  for (let r = box.r0; r <= box.r1; r++) {
    for (let c = box.c0; c <= box.c1; c++) {
      mean += image.values[r * width + c];
      count++;
    }
  }
  mean /= count;

  const core = new Float64Array(width * height);
  for (let r = r0; r <= r1; r++) {
    for (let c = c0; c <= c1; c++) {
      const idx = r * width + c;
      core[idx] = image.values[idx] <= mean ? 1 : 0;
    }
  }
  const soft = boxBlur({ width, height, values: core }, 1);
  const logits = new Float64Array(width * height);
  for (let i = 0; i < logits.length; i++) {
    logits[i] = scale * (2 * soft.values[i] - 1);
  }
  return logits;
}

export class AnalyticEncoder implements Encoder {
  readonly id = "analytic";

  constructor(private readonly options: EncoderOptions = DEFAULT_OPTIONS) {}

  encode(image: GrayImage, prompt: string): EncoderOutputs {
    if (!prompt.trim()) throw new Error("prompt text must be non-empty");
    const field = asField(image);
    const heatmap = saliencyMap(field);
    let boxes = candidateBoxes(heatmap, undefined, this.options.topK);
    if (boxes.length === 0) boxes = [fallbackBox(heatmap)];

    const dim = this.options.embeddingDim;
    const textEmbedding = unitVector(dim, fnv1a(`prompt|${prompt}`));
    const candidates = boxes.map((box, k) => {
      const maskLogits = segmentBox(field, heatmap, box, this.options.maskLogitScale);
      // region embedding drifts from the prompt embedding as saliency drops
      const residual = unitVector(
        dim, fnv1a(`region|${prompt}|${k}|${box.r0},${box.c0},${box.r1},${box.c1}`));
      const q = Math.min(Math.max(box.score, 0), 1);
      const embedding = new Float64Array(dim);
      for (let i = 0; i < dim; i++) {
        embedding[i] = q * textEmbedding[i] + (1 - 0.8 * q) * residual[i];
      }
      // class logits from interior darkness contrast (deterministic stand-in)
      let inner = 0;
      let n = 0;
      for (let r = box.r0; r <= box.r1; r++) {
        for (let c = box.c0; c <= box.c1; c++) {
          inner += field.values[r * field.width + c];
          n++;
        }
      }
      let global = 0;
      for (const v of field.values) global += v;
      global /= field.values.length;
      const margin = 2 * (global - inner / n);
      return { box, maskLogits, clsLogits: Float64Array.from([0, margin]), embedding };
    });
    return { heatmap, textEmbedding, candidates };
  }
}

export function makeEncoder(model: string, options: EncoderOptions): Encoder {
  if (model === "analytic") return new AnalyticEncoder(options);
  throw new Error(`unknown model identifier '${model}' (available: analytic)`);
}
