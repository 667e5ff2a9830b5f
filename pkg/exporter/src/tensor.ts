export interface Tensor {
  shape: number[];
  data: Float64Array;
}

export function tensor(shape: number[], data: Float64Array | number[]): Tensor {
  const flat = data instanceof Float64Array ? data : Float64Array.from(data);
  const expected = shape.reduce((a, b) => a * b, 1);
  if (shape.length === 0 || shape.some((d) => !Number.isInteger(d) || d <= 0)) {
    throw new Error(`invalid tensor shape [${shape.join(", ")}]`);
  }
  if (flat.length !== expected) {
    throw new Error(`shape [${shape.join(", ")}] needs ${expected} values, got ${flat.length}`);
  }
  for (const v of flat) {
    if (!Number.isFinite(v)) throw new Error("tensor contains non-finite values");
  }
  return { shape: [...shape], data: flat };
}

export interface GrayImage {
  width: number;
  height: number;
  /** row-major intensities in [0, 1] */
  pixels: Float64Array;
}
