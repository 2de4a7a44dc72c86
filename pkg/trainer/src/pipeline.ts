/**
 * End-to-end pipeline: raw table in, engine-ready model files out.
 *
 * Stages:
 *   1. ingest and label the table, split 80/20 with a seeded shuffle;
 *   2. standardize features on training statistics;
 *   3. train three classifiers: the square-activation network that
 *      will be exported, a ReLU twin as a float-only baseline, and a
 *      square network on the personality traits alone to show the
 *      drug-history columns carry signal;
 *   4. fold the standardization into stage 1 so the exported network
 *      consumes raw feature values;
 *   5. search for a scale exponent whose integer model fits the
 *      engine's field and stays within the accuracy budget;
 *   6. emit model.json, per-party feature tables and labels for the
 *      held-out rows, and a metrics summary.
 *
 * Every random choice draws from streams derived from one seed, and
 * all emitted files are deterministic byte-for-byte.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import {
  Dataset,
  FEATURE_NAMES,
  LABEL_RULE,
  PERSONALITY_TRAITS,
  featurePositions,
  ingest,
  partyOf,
  select,
  splitDataset,
} from "./dataset.js";
import { DEFAULTS, Mlp, TrainOptions, accuracy, trainMlp } from "./mlp.js";
import {
  FeatureSchemaEntry,
  QuantizeError,
  RAW_INPUT_BOUND,
  ScaleSearchResult,
  featureCsv,
  foldStandardization,
  labelsCsv,
  metricsJson,
  modelJson,
  round4,
  searchScale,
} from "./export.js";
import { quantize } from "./quantize.js";

export interface PipelineOptions {
  dataPath: string;
  outDir: string;
  seed?: string;
  /** When given, any other row count in the table is an error. */
  expectRows?: number;
  /** First scale exponent the quantization search tries. */
  startScale?: number;
  /** Training epochs (lower it for smoke tests). */
  epochs?: number;
}

export interface PipelineMetrics {
  float_acc: number;
  quant_acc: number;
  relu_baseline_acc: number;
  personality_only_acc: number;
  scale_f: number;
  weight_bits: number;
  input_bound: number;
  rescale_targets: { t1: number; t2: number; t3: number };
  train_rows: number;
  test_rows: number;
  positive_rate: number;
  seed: string;
  label_rule: string;
  [key: string]: unknown;
}

export interface Standardization {
  mean: number[];
  std: number[];
}

/** Column means and deviations; constant columns get deviation 1. */
export function fitStandardization(rows: number[][]): Standardization {
  const cols = rows[0].length;
  const mean = new Array<number>(cols).fill(0);
  const std = new Array<number>(cols).fill(0);
  for (const row of rows) {
    for (let c = 0; c < cols; c++) mean[c] += row[c];
  }
  for (let c = 0; c < cols; c++) mean[c] /= rows.length;
  for (const row of rows) {
    for (let c = 0; c < cols; c++) {
      const d = row[c] - mean[c];
      std[c] += d * d;
    }
  }
  for (let c = 0; c < cols; c++) {
    std[c] = Math.sqrt(std[c] / rows.length);
    if (std[c] < 1e-8) std[c] = 1;
  }
  return { mean, std };
}

export function applyStandardization(
  rows: number[][],
  s: Standardization,
): number[][] {
  return rows.map((row) => row.map((v, c) => (v - s.mean[c]) / s.std[c]));
}

function trainOn(
  X: number[][],
  y: number[],
  seed: string,
  std: number[],
  options: TrainOptions,
): Mlp {
  // The stage-1 decay acts on folded weights (w / std), so penalize
  // each column by 1 / std^2: what must stay small for the integer
  // headroom is the folded network, not the standardized one.
  const scale = std.map((s) => 1 / (s * s));
  return trainMlp(X, y, seed, { ...options, stage1DecayScale: scale }).mlp;
}

export function runPipeline(options: PipelineOptions): PipelineMetrics {
  const seed = options.seed ?? "1";
  const epochs = options.epochs ?? DEFAULTS.epochs;
  const data: Dataset = ingest(options.dataPath, {
    expectRows: options.expectRows,
  });

  const split = splitDataset(data.features.length, `${seed}/split`);
  const trainX = select(data.features, split.train);
  const trainY = select(data.labels, split.train);
  const testX = select(data.features, split.test);
  const testY = select(data.labels, split.test);

  const norm = fitStandardization(trainX);
  const trainStd = applyStandardization(trainX, norm);
  const testStd = applyStandardization(testX, norm);

  const quad = trainOn(trainStd, trainY, `${seed}/quad`, norm.std, {
    activation: "square",
    epochs,
  });
  const relu = trainOn(trainStd, trainY, `${seed}/relu`, norm.std, {
    activation: "relu",
    epochs,
  });

  const traitCols = featurePositions(PERSONALITY_TRAITS);
  const pickCols = (rows: number[][]) =>
    rows.map((row) => traitCols.map((c) => row[c]));
  const traitNorm = fitStandardization(pickCols(trainX));
  const traitsOnly = trainOn(
    applyStandardization(pickCols(trainX), traitNorm),
    trainY,
    `${seed}/traits`,
    traitNorm.std,
    { activation: "square", epochs },
  );

  // The folded network is what gets quantized and shipped, so measure
  // the float reference accuracy on it, with raw features.
  const folded = foldStandardization(quad.stages, norm.mean, norm.std);
  const foldedMlp: Mlp = { stages: folded, activation: "square" };
  const floatAcc = accuracy(foldedMlp, testX, testY);
  const reluAcc = accuracy(relu, testStd, testY);
  const traitsAcc = accuracy(
    traitsOnly,
    applyStandardization(pickCols(testX), traitNorm),
    testY,
  );

  const found: ScaleSearchResult = searchScale(
    folded,
    trainX,
    trainY,
    testX,
    testY,
    floatAcc,
    { startF: options.startScale, seed: `${seed}/targets` },
  );

  const schema: FeatureSchemaEntry[] = FEATURE_NAMES.map((name) => ({
    name,
    party: partyOf(name),
  }));
  const metadata = {
    bias_scales: found.stages.map((_, i) => (i + 1) * found.f),
    float_acc: round4(floatAcc),
    input_bound: found.inputBound,
    label_rule: LABEL_RULE,
    personality_only_acc: round4(traitsAcc),
    quant_acc: round4(found.quantAcc),
    relu_baseline_acc: round4(reluAcc),
    seed,
    split: `seeded shuffle, ${split.ratio} train`,
    weight_bits: found.weightBits,
  };

  const party0 = FEATURE_NAMES.filter((n) => partyOf(n) === 0);
  const party1 = FEATURE_NAMES.filter((n) => partyOf(n) === 1);
  const cols0 = featurePositions(party0);
  const cols1 = featurePositions(party1);

  const metrics: PipelineMetrics = {
    float_acc: round4(floatAcc),
    quant_acc: round4(found.quantAcc),
    relu_baseline_acc: round4(reluAcc),
    personality_only_acc: round4(traitsAcc),
    scale_f: found.f,
    weight_bits: found.weightBits,
    input_bound: found.inputBound,
    rescale_targets: found.targets,
    train_rows: split.train.length,
    test_rows: split.test.length,
    positive_rate: round4(
      data.labels.reduce((a, b) => a + b, 0) / data.labels.length,
    ),
    seed,
    label_rule: LABEL_RULE,
  };

  mkdirSync(options.outDir, { recursive: true });
  const emit = (name: string, text: string) =>
    writeFileSync(join(options.outDir, name), text);
  emit("model.json", modelJson(found.stages, found.f, schema, metadata));
  emit(
    "features_party0.csv",
    featureCsv(party0, testX.map((row) => cols0.map((c) => row[c]))),
  );
  emit(
    "features_party1.csv",
    featureCsv(party1, testX.map((row) => cols1.map((c) => row[c]))),
  );
  emit("labels.csv", labelsCsv(testY));
  emit("metrics.json", metricsJson(metrics));
  return metrics;
}

/** Guard used by tests: raw features must respect the rated bound. */
export function assertWithinInputBound(rows: number[][], f: number): void {
  const bound = quantize(RAW_INPUT_BOUND, f);
  for (const row of rows) {
    for (const v of row) {
      if (Math.abs(quantize(v, f)) > bound) {
        throw new QuantizeError(
          `feature value ${v} quantizes outside the rated input bound`);
      }
    }
  }
}
