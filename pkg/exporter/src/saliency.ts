/**
 * Heatmap construction and candidate box extraction.
 *
 * The analytic saliency map favors dark, locally heterogeneous regions
 * (hypoechoic lesions against brighter tissue) and is normalized to
 * [0, 1]; a constant image yields an all-zero (uniform) map. Boxes are
 * extracted per threshold from 8-connected components, scored by the
 * rectangle-mean activation, ranked and IoU-deduplicated.
 */

export interface Field {
  width: number;
  height: number;
  values: Float64Array;
}

export interface Box {
  r0: number;
  c0: number;
  r1: number;
  c1: number;
  score: number;
  threshold: number;
}

export const DEFAULT_THRESHOLDS = [0.3, 0.4, 0.5, 0.6, 0.7];

export function boxBlur(field: Field, radius: number): Field {
  const { width, height, values } = field;
  const k = 2 * radius + 1;
  // integral image over an edge-padded frame
  const pw = width + 2 * radius;
  const ph = height + 2 * radius;
  const padded = new Float64Array(pw * ph);
  for (let r = 0; r < ph; r++) {
    const sr = Math.min(Math.max(r - radius, 0), height - 1);
    for (let c = 0; c < pw; c++) {
      const sc = Math.min(Math.max(c - radius, 0), width - 1);
      padded[r * pw + c] = values[sr * width + sc];
    }
  }
  const integral = new Float64Array((pw + 1) * (ph + 1));
  for (let r = 0; r < ph; r++) {
    let rowSum = 0;
    for (let c = 0; c < pw; c++) {
      rowSum += padded[r * pw + c];
      integral[(r + 1) * (pw + 1) + (c + 1)] = integral[r * (pw + 1) + (c + 1)] + rowSum;
    }
  }
  const out = new Float64Array(width * height);
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      const top = r;
      const left = c;
      const bottom = r + k;
      const right = c + k;
      const sum = integral[bottom * (pw + 1) + right] - integral[top * (pw + 1) + right]
        - integral[bottom * (pw + 1) + left] + integral[top * (pw + 1) + left];
      out[r * width + c] = sum / (k * k);
    }
  }
  return { width, height, values: out };
}

export function normalize01(field: Field): Field {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of field.values) {
    lo = Math.min(lo, v);
    hi = Math.max(hi, v);
  }
  const out = new Float64Array(field.values.length);
  // a span at rounding scale is a constant field (integral-image blur of a
  // flat image leaves ~1e-16 wobble that must not be stretched to [0,1])
  const span = hi - lo;
  if (span > 1e-12 * Math.max(Math.abs(hi), Math.abs(lo), 1.0)) {
    for (let i = 0; i < out.length; i++) out[i] = (field.values[i] - lo) / span;
  }
  return { width: field.width, height: field.height, values: out };
}

export function saliencyMap(image: Field): Field {
  const mean = boxBlur(image, 3);
  const sq = boxBlur(
    { ...image, values: image.values.map((v) => v * v) }, 3);
  const variance = new Float64Array(image.values.length);
  for (let i = 0; i < variance.length; i++) {
    const v = sq.values[i] - mean.values[i] * mean.values[i];
    // the subtraction cancels to ~1e-16 wobble on flat regions; sqrt would
    // amplify that, so snap rounding-scale variance to an exact zero
    variance[i] = v > 1e-12 ? v : 0;
  }
  const darkness = normalize01({ ...image, values: mean.values.map((v) => -v) });
  const texture = normalize01({ ...image, values: variance.map(Math.sqrt) });
  const combined = new Float64Array(image.values.length);
  for (let i = 0; i < combined.length; i++) {
    combined[i] = 0.7 * darkness.values[i] + 0.3 * texture.values[i];
  }
  return normalize01(boxBlur({ ...image, values: combined }, 2));
}

function componentBoxes(field: Field, threshold: number, minArea: number): Box[] {
  const { width, height, values } = field;
  const seen = new Uint8Array(width * height);
  const boxes: Box[] = [];
  const stack: number[] = [];
  for (let start = 0; start < width * height; start++) {
    if (seen[start] || values[start] < threshold) continue;
    let r0 = height; let c0 = width; let r1 = -1; let c1 = -1;
    let area = 0;
    seen[start] = 1;
    stack.push(start);
    while (stack.length) {
      const idx = stack.pop()!;
      const r = Math.floor(idx / width);
      const c = idx % width;
      area++;
      r0 = Math.min(r0, r); r1 = Math.max(r1, r);
      c0 = Math.min(c0, c); c1 = Math.max(c1, c);
      for (let dr = -1; dr <= 1; dr++) {
        for (let dc = -1; dc <= 1; dc++) {
          if (!dr && !dc) continue;
          const nr = r + dr;
          const nc = c + dc;
          if (nr < 0 || nr >= height || nc < 0 || nc >= width) continue;
          const nidx = nr * width + nc;
          if (!seen[nidx] && values[nidx] >= threshold) {
            seen[nidx] = 1;
            stack.push(nidx);
          }
        }
      }
    }
    if (area >= minArea) {
      boxes.push({ r0, c0, r1, c1, score: rectMean(field, r0, c0, r1, c1), threshold });
    }
  }
  return boxes;
}

function rectMean(field: Field, r0: number, c0: number, r1: number, c1: number): number {
  let sum = 0;
  for (let r = r0; r <= r1; r++) {
    for (let c = c0; c <= c1; c++) sum += field.values[r * field.width + c];
  }
  return sum / ((r1 - r0 + 1) * (c1 - c0 + 1));
}

export function boxIoU(a: Box, b: Box): number {
  const ir0 = Math.max(a.r0, b.r0);
  const ic0 = Math.max(a.c0, b.c0);
  const ir1 = Math.min(a.r1, b.r1);
  const ic1 = Math.min(a.c1, b.c1);
  if (ir0 > ir1 || ic0 > ic1) return 0;
  const inter = (ir1 - ir0 + 1) * (ic1 - ic0 + 1);
  const areaA = (a.r1 - a.r0 + 1) * (a.c1 - a.c0 + 1);
  const areaB = (b.r1 - b.r0 + 1) * (b.c1 - b.c0 + 1);
  return inter / (areaA + areaB - inter);
}

export function candidateBoxes(
  heatmap: Field,
  thresholds: number[] = DEFAULT_THRESHOLDS,
  topK = 3,
  iouDedup = 0.5,
  minArea = 4,
): Box[] {
  const pooled: Box[] = [];
  for (const t of thresholds) pooled.push(...componentBoxes(heatmap, t, minArea));
  pooled.sort((a, b) =>
    b.score - a.score || b.threshold - a.threshold
    || a.r0 - b.r0 || a.c0 - b.c0 || a.r1 - b.r1 || a.c1 - b.c1);
  const kept: Box[] = [];
  for (const box of pooled) {
    if (kept.length >= topK) break;
    if (kept.every((k) => boxIoU(box, k) <= iouDedup)) kept.push(box);
  }
  return kept;
}

/** Tight box around the hottest percentile, for degenerate heatmaps. */
export function fallbackBox(heatmap: Field, topFraction = 0.01): Box {
  const sorted = Float64Array.from(heatmap.values).sort();
  const cutoff = sorted[Math.min(sorted.length - 1,
    Math.floor((sorted.length - 1) * (1 - topFraction)))];
  let r0 = heatmap.height; let c0 = heatmap.width; let r1 = -1; let c1 = -1;
  for (let r = 0; r < heatmap.height; r++) {
    for (let c = 0; c < heatmap.width; c++) {
      if (heatmap.values[r * heatmap.width + c] >= cutoff) {
        r0 = Math.min(r0, r); r1 = Math.max(r1, r);
        c0 = Math.min(c0, c); c1 = Math.max(c1, c);
      }
    }
  }
  return { r0, c0, r1, c1, score: rectMean(heatmap, r0, c0, r1, c1), threshold: 0 };
}
