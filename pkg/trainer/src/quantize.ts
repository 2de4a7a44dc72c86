/**
 * Fixed-point quantization and the exact integer inference mirror.
 *
 * The inference engine evaluates the exported network over a 64-bit
 * prime field with no truncation: inputs and weights carry scale 2^f,
 * the stage-i bias carries scale 2^(i*f), and every intermediate must
 * stay inside the signed 63-bit range (below half the field modulus)
 * or field arithmetic stops agreeing with integer arithmetic.  This
 * module reproduces that arithmetic bit for bit with BigInt so the
 * trainer can certify a quantized model before exporting it: the same
 * rounding rule, the same per-stage bias shifts, the same range check,
 * and the same worst-case interval analysis the engine's compiler runs
 * when it decides whether to accept a model.
 */

import type { AffineStage } from "./mlp.js";

export const FIELD_MODULUS = (1n << 64n) - (1n << 32n) + 1n;
export const HALF_FIELD = (FIELD_MODULUS - 1n) / 2n;
export const INT63 = 1n << 63n;

export class OverflowError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "OverflowError";
  }
}

/** Round value * 2^f to the nearest integer, halves away from zero. */
export function quantize(value: number, f: number): number {
  const s = value * Math.pow(2, f);
  const q = s >= 0 ? Math.floor(s + 0.5) : -Math.floor(-s + 0.5);
  return q === 0 ? 0 : q; // never emit negative zero
}

export function dequantize(q: number, f: number): number {
  return q / Math.pow(2, f);
}

export interface QuantStage {
  /** Integer weights, rows x cols, at scale 2^f. */
  weights: number[][];
  /** Integer biases at scale 2^(i*f) for 1-based stage i. */
  bias: number[];
}

/** Quantize float stages: weights at f, stage-i bias at i*f. */
export function quantizeStages(stages: AffineStage[], f: number): QuantStage[] {
  return stages.map((stage, i) => ({
    weights: stage.weights.map((row) => row.map((w) => quantize(w, f))),
    bias: stage.bias.map((b) => quantize(b, (i + 1) * f)),
  }));
}

export function quantizeFeatures(row: number[], f: number): number[] {
  return row.map((v) => quantize(v, f));
}

export interface IntegerInference {
  logits: bigint[];
  predicted: number;
  scaleExponent: number;
}

function checkRange(values: bigint[], where: string): void {
  for (const v of values) {
    const mag = v < 0n ? -v : v;
    if (mag >= INT63) {
      throw new OverflowError(
        `${where}: magnitude ${mag} exceeds the 63-bit budget`);
    }
  }
}

/**
 * Exact integer evaluation of a quantized network on quantized
 * features, mirroring the engine's reference semantics.
 */
export function inferClear(
  stages: QuantStage[],
  f: number,
  features: number[],
): IntegerInference {
  if (features.length !== stages[0].weights[0].length) {
    throw new OverflowError(
      `expected ${stages[0].weights[0].length} features, got ${features.length}`);
  }
  let values = features.map((v) => BigInt(v));
  let scale = f;
  for (let i = 1; i <= stages.length; i++) {
    const { weights, bias } = stages[i - 1];
    // the stage-i bias sits at scale i*f; lift it to the z scale
    const shift = BigInt(scale + f - i * f);
    const z: bigint[] = [];
    for (let r = 0; r < weights.length; r++) {
      let acc = BigInt(bias[r]) << shift;
      const row = weights[r];
      for (let c = 0; c < row.length; c++) {
        acc += BigInt(row[c]) * values[c];
      }
      z.push(acc);
    }
    checkRange(z, `stage ${i} affine output`);
    scale += f;
    if (i < stages.length) {
      values = z.map((v) => v * v);
      checkRange(values, `stage ${i} activation`);
      scale *= 2;
    } else {
      let best = 0;
      for (let r = 1; r < z.length; r++) {
        if (z[r] > z[best]) best = r;
      }
      return { logits: z, predicted: best, scaleExponent: scale };
    }
  }
  throw new Error("unreachable");
}

/**
 * Worst-case integer magnitude over the whole evaluation, assuming
 * every feature can reach +-inputBound (already in quantized units).
 * Matches the interval analysis in the engine's circuit compiler:
 * per-neuron affine bounds, squared between stages, with neurons the
 * next stage never reads contributing nothing.
 */
export function worstCaseMagnitude(
  stages: QuantStage[],
  f: number,
  inputBound: number,
): bigint {
  let bounds: bigint[] = new Array(stages[0].weights[0].length).fill(
    BigInt(inputBound),
  );
  let worst = BigInt(inputBound);
  let scale = f;
  for (let i = 1; i <= stages.length; i++) {
    const { weights, bias } = stages[i - 1];
    const shift = BigInt(scale + f - i * f);
    const zb: bigint[] = [];
    for (let r = 0; r < weights.length; r++) {
      const b = BigInt(Math.abs(bias[r]));
      let acc = b << shift;
      const row = weights[r];
      for (let c = 0; c < row.length; c++) {
        const w = BigInt(Math.abs(row[c]));
        if (w > worst) worst = w; // weights become public constants
        acc += w * bounds[c];
      }
      zb.push(acc);
      if (acc > worst) worst = acc;
    }
    scale += f;
    if (i < stages.length) {
      const next = stages[i].weights;
      bounds = zb.map((v, r) => {
        const needed = next.some((row) => row[r] !== 0);
        if (!needed) return 0n;
        const sq = v * v;
        if (sq > worst) worst = sq;
        return sq;
      });
      scale *= 2;
    }
  }
  return worst;
}

/** Whether the engine's compiler would accept the model. */
export function fitsField(
  stages: QuantStage[],
  f: number,
  inputBound: number,
): boolean {
  return 2n * worstCaseMagnitude(stages, f, inputBound) < FIELD_MODULUS;
}

/**
 * Smallest weight-bits declaration covering every entry: weights must
 * fit 2^(b-1), stage-i biases 2^(b-1) * 2^((i-1)*f).
 */
export function weightBitsNeeded(stages: QuantStage[], f: number): number {
  let bits = 8;
  stages.forEach((stage, idx) => {
    const i = idx + 1;
    for (const row of stage.weights) {
      for (const w of row) {
        bits = Math.max(bits, bitLength(Math.abs(w)) + 1);
      }
    }
    for (const b of stage.bias) {
      const reduced = BigInt(Math.abs(b)) >> BigInt((i - 1) * f);
      bits = Math.max(bits, bitLength(Number(reduced)) + 1);
    }
  });
  return bits;
}

function bitLength(v: number): number {
  let bits = 0;
  let x = Math.abs(v);
  while (x >= 1) {
    bits += 1;
    x = Math.floor(x / 2);
  }
  return bits;
}
