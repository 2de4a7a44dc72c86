/**
 * Turning a trained float network into the engine's model files.
 *
 * Three steps separate a float classifier from something the inference
 * engine will accept:
 *
 * 1. Fold the input standardization into stage 1, since the engine
 *    feeds raw feature values (there is no normalization gate).
 * 2. Rescale each affine stage by a positive constant.  Positive
 *    per-stage scaling multiplies the logits by a positive constant,
 *    so the argmax never changes, but it controls the worst-case
 *    magnitudes that the engine's no-overflow analysis sees: the
 *    stage-1 bound enters that analysis to the fourth power, stage 2
 *    squared, stage 3 linearly.
 * 3. Quantize at a scale exponent f and verify, with exact integer
 *    arithmetic, that the result still classifies well and fits the
 *    field.  f starts high and decrements: each step down costs one
 *    bit of grid resolution per stage but frees eleven bits of the
 *    magnitude budget, so lower f trades weight precision for room.
 *
 * The search picks rescale targets by quantized accuracy on a seeded
 * subset of the training split, then accepts the first f whose
 * held-out quantized accuracy sits within the allowed drop of the
 * float model.
 */

import type { AffineStage } from "./mlp.js";
import { rngFrom, shuffleInPlace } from "./rand.js";
import {
  HALF_FIELD,
  OverflowError,
  QuantStage,
  fitsField,
  inferClear,
  quantize,
  quantizeFeatures,
  quantizeStages,
  weightBitsNeeded,
} from "./quantize.js";

/** Largest raw feature magnitude the schema is rated for. */
export const RAW_INPUT_BOUND = 7;

export class QuantizeError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "QuantizeError";
  }
}

export interface FeatureSchemaEntry {
  name: string;
  party: 0 | 1;
}

/**
 * Replace stage 1 so the network consumes raw features instead of
 * standardized ones: W'x + b' = W((x - mean) / std) + b exactly.
 */
export function foldStandardization(
  stages: AffineStage[],
  mean: number[],
  std: number[],
): AffineStage[] {
  const first = stages[0];
  const weights = first.weights.map((row) =>
    row.map((w, c) => w / std[c]),
  );
  const bias = first.bias.map((b, r) => {
    let shift = 0;
    for (let c = 0; c < mean.length; c++) {
      shift += first.weights[r][c] * (mean[c] / std[c]);
    }
    return b - shift;
  });
  return [
    { weights, bias },
    ...stages.slice(1).map((s) => ({
      weights: s.weights.map((row) => [...row]),
      bias: [...s.bias],
    })),
  ];
}

export interface RescaleTargets {
  t1: number;
  t2: number;
  t3: number;
}

/**
 * Scale each stage by a positive constant so its worst-case output
 * magnitude (inputs at +-inputBound) lands on the given target.
 * Biases ride along with the factor accumulated so far, keeping the
 * network equal to a positive multiple of the original.
 */
export function rescaleStages(
  stages: AffineStage[],
  inputBound: number,
  targets: RescaleTargets,
): AffineStage[] {
  const order = [targets.t1, targets.t2, targets.t3];
  if (stages.length !== order.length) {
    throw new QuantizeError(
      `rescaling expects ${order.length} stages, got ${stages.length}`);
  }
  const out: AffineStage[] = [];
  let inBound = inputBound;
  let inFactor = 1;
  for (let i = 0; i < stages.length; i++) {
    const { weights, bias } = stages[i];
    let raw = 0;
    for (let r = 0; r < weights.length; r++) {
      let rowBound = Math.abs(bias[r]) * inFactor;
      for (const w of weights[r]) rowBound += Math.abs(w) * inBound;
      if (rowBound > raw) raw = rowBound;
    }
    if (!(raw > 0)) {
      throw new QuantizeError(`stage ${i + 1} is identically zero`);
    }
    const s = order[i] / raw;
    out.push({
      weights: weights.map((row) => row.map((w) => s * w)),
      bias: bias.map((b) => s * inFactor * b),
    });
    inBound = order[i] * order[i];
    inFactor = (s * inFactor) * (s * inFactor);
  }
  return out;
}

export interface ScaleSearchOptions {
  /** First scale exponent to try; the search decrements from here. */
  startF?: number;
  minF?: number;
  /** Largest tolerated accuracy drop, quantized vs float. */
  accuracyBudget?: number;
  /** Training rows used to pick rescale targets. */
  selectionrows?: number;
  seed?: string;
}

export interface ScaleSearchResult {
  f: number;
  stages: QuantStage[];
  targets: RescaleTargets;
  quantAcc: number;
  weightBits: number;
  inputBound: number;
}

const T1_GRID = [2, 4, 8, 16, 32, 64];
const T2_GRID = [4, 16, 64, 256, 1024, 4096];

/**
 * Fraction of rows classified correctly, or null if the candidate
 * overflows on any row: a model that cannot evaluate legitimate data
 * is infeasible, not merely inaccurate.
 */
function quantAccuracy(
  stages: QuantStage[],
  f: number,
  X: number[][],
  y: number[],
): number | null {
  let hits = 0;
  for (let i = 0; i < X.length; i++) {
    try {
      const res = inferClear(stages, f, quantizeFeatures(X[i], f));
      hits += res.predicted === y[i] ? 1 : 0;
    } catch (e) {
      if (e instanceof OverflowError) return null;
      throw e;
    }
  }
  return hits / X.length;
}

/**
 * Decrementing search for a scale exponent whose quantized model fits
 * the field and stays within the accuracy budget on the test split.
 */
export function searchScale(
  folded: AffineStage[],
  trainX: number[][],
  trainY: number[],
  testX: number[][],
  testY: number[],
  floatAcc: number,
  options: ScaleSearchOptions = {},
): ScaleSearchResult {
  const startF = options.startF ?? 5;
  const minF = options.minF ?? 2;
  const budget = options.accuracyBudget ?? 0.02;
  const seed = options.seed ?? "targets";
  const nSelect = Math.min(options.selectionrows ?? 400, trainX.length);
  const pick = shuffleInPlace(
    rngFrom(seed),
    Array.from({ length: trainX.length }, (_, i) => i),
  ).slice(0, nSelect);
  const selX = pick.map((i) => trainX[i]);
  const selY = pick.map((i) => trainY[i]);

  const attempts: string[] = [];
  for (let f = startF; f >= minF; f--) {
    const magnitudeBudget = Number(HALF_FIELD >> BigInt(11 * f));
    const t3 = magnitudeBudget / 2;
    if (t3 < 1) {
      attempts.push(`f=${f}: no magnitude headroom`);
      continue;
    }
    const inputBound = quantize(RAW_INPUT_BOUND, f);
    let best: { hits: number; stages: QuantStage[]; targets: RescaleTargets } | null =
      null;
    for (const t1 of T1_GRID) {
      for (const t2 of T2_GRID) {
        const targets = { t1, t2, t3 };
        const stages = quantizeStages(
          rescaleStages(folded, RAW_INPUT_BOUND, targets),
          f,
        );
        if (!fitsField(stages, f, inputBound)) continue;
        const hits = quantAccuracy(stages, f, selX, selY);
        if (hits === null) continue;
        if (best === null || hits > best.hits) {
          best = { hits, stages, targets };
        }
      }
    }
    if (best === null) {
      attempts.push(`f=${f}: no rescale target fits the field`);
      continue;
    }
    const quantAcc = quantAccuracy(best.stages, f, testX, testY);
    if (quantAcc === null) {
      attempts.push(`f=${f}: the chosen targets overflow on held-out rows`);
      continue;
    }
    if (quantAcc >= floatAcc - budget) {
      return {
        f,
        stages: best.stages,
        targets: best.targets,
        quantAcc,
        weightBits: weightBitsNeeded(best.stages, f),
        inputBound,
      };
    }
    attempts.push(
      `f=${f}: quantized accuracy ${quantAcc.toFixed(4)} drops more than ` +
      `${budget} below float ${floatAcc.toFixed(4)}`);
  }
  throw new QuantizeError(
    "no scale exponent satisfies both the field bound and the accuracy " +
    `budget: ${attempts.join("; ")}`);
}

// ---------------------------------------------------------------------------
// file emission

export interface ModelMetadata {
  [key: string]: string | number | number[];
}

function sortedEntries(obj: Record<string, unknown>): Record<string, unknown> {
  const out: Record<string, unknown> = {};
  for (const key of Object.keys(obj).sort()) out[key] = obj[key];
  return out;
}

/** The engine's model JSON, deterministic down to the byte. */
export function modelJson(
  stages: QuantStage[],
  scaleF: number,
  schema: FeatureSchemaEntry[],
  metadata: ModelMetadata,
): string {
  const obj = sortedEntries({
    feature_schema: schema.map((c) => sortedEntries({ name: c.name, party: c.party })),
    layers: stages.map((s) =>
      sortedEntries({
        bias: s.bias,
        cols: s.weights[0].length,
        rows: s.weights.length,
        weights: s.weights.flat(),
      }),
    ),
    metadata: sortedEntries(metadata),
    scale_f: scaleF,
  });
  return JSON.stringify(obj, null, 2) + "\n";
}

/** Feature CSV in the engine's format: named header, raw float rows. */
export function featureCsv(names: string[], rows: number[][]): string {
  const lines = [names.join(",")];
  for (const row of rows) {
    if (row.length !== names.length) {
      throw new QuantizeError("feature row length differs from the header");
    }
    lines.push(row.map((v) => String(v)).join(","));
  }
  return lines.join("\n") + "\n";
}

export function labelsCsv(labels: number[]): string {
  return ["label", ...labels.map((v) => String(v))].join("\n") + "\n";
}

export function metricsJson(metrics: Record<string, unknown>): string {
  return JSON.stringify(sortedEntries(metrics), null, 2) + "\n";
}

/** Round for metadata so emitted bytes do not depend on float noise. */
export function round4(v: number): number {
  return Math.round(v * 10000) / 10000;
}
