/**
 * Ingestion of the quantified drug-consumption table.
 *
 * The source file is a headerless CSV with 32 columns per row: an
 * integer respondent id, twelve real-valued demographic/personality
 * attributes, and nineteen drug-usage classes written CL0..CL6 (never
 * used .. used in the last day).  The classification target is one
 * drug column, binarized: a respondent counts as a user when the
 * recorded class is CL3 or higher, i.e. usage within the last year.
 * The model features are everything except the target column, so the
 * target's own record never leaks into the inputs.
 */

import { readFileSync } from "node:fs";
import Papa from "papaparse";
import { rngFrom, shuffleInPlace } from "./rand.js";

export const ATTRIBUTES = [
  "Age", "Gender", "Education", "Country", "Ethnicity",
  "Nscore", "Escore", "Oscore", "Ascore", "Cscore", "Impulsive", "SS",
] as const;

export const DRUGS = [
  "Alcohol", "Amphet", "Amyl", "Benzos", "Caff", "Cannabis", "Choc",
  "Coke", "Crack", "Ecstasy", "Heroin", "Ketamine", "Legalh", "LSD",
  "Meth", "Mushrooms", "Nicotine", "Semer", "VSA",
] as const;

export const PERSONALITY_TRAITS = [
  "Nscore", "Escore", "Oscore", "Ascore", "Cscore", "Impulsive", "SS",
] as const;

export const TARGET_DRUG = "LSD";
export const USER_THRESHOLD = 3;
export const LABEL_RULE = "user = CL3 or higher on the LSD column";

/** Model inputs in schema order: attributes, then non-target drugs. */
export const FEATURE_NAMES: readonly string[] = [
  ...ATTRIBUTES,
  ...DRUGS.filter((d) => d !== TARGET_DRUG),
];

const COLUMN_COUNT = 1 + ATTRIBUTES.length + DRUGS.length;
const CLASS_PATTERN = /^CL([0-6])$/;

export class DatasetError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "DatasetError";
  }
}

/** Attribute columns belong to party 0, drug columns to party 1. */
export function partyOf(feature: string): 0 | 1 {
  if ((ATTRIBUTES as readonly string[]).includes(feature)) return 0;
  if ((DRUGS as readonly string[]).includes(feature)) return 1;
  throw new DatasetError(`unknown feature name ${JSON.stringify(feature)}`);
}

export interface Dataset {
  /** Raw feature rows in FEATURE_NAMES order (drug classes as 0..6). */
  features: number[][];
  /** Binarized target per row. */
  labels: number[];
  /** The raw target-drug class per row, kept for auditing the rule. */
  targetClasses: number[];
  labelRule: string;
}

export interface IngestOptions {
  /** When given, any other row count is an error. */
  expectRows?: number;
}

function looksLikeHeader(cells: string[]): boolean {
  // A header row starts with a non-numeric id cell and names most of
  // the attribute columns with words; a single stray cell elsewhere is
  // a data error, not a header, and gets a more specific message.
  if (/^\d+$/.test(cells[0])) return false;
  const wordy = cells
    .slice(1, 1 + ATTRIBUTES.length)
    .filter((c) => /[A-Za-z]/.test(c)).length;
  return wordy >= ATTRIBUTES.length / 2;
}

export function parseDataset(text: string, opts: IngestOptions = {}): Dataset {
  const parsed = Papa.parse<string[]>(text, { skipEmptyLines: true });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new DatasetError(
      `line ${(e.row ?? 0) + 1}: ${e.message}`);
  }
  const records = parsed.data;
  const features: number[][] = [];
  const labels: number[] = [];
  const targetClasses: number[] = [];
  const targetIndex = DRUGS.indexOf(TARGET_DRUG as (typeof DRUGS)[number]);

  records.forEach((cells, i) => {
    const line = i + 1;
    if (cells.length !== COLUMN_COUNT) {
      throw new DatasetError(
        `line ${line}: expected ${COLUMN_COUNT} columns, found ${cells.length}`);
    }
    if (i === 0 && looksLikeHeader(cells)) {
      throw new DatasetError(
        "line 1: looks like a header row " +
        `(${JSON.stringify(cells[0])}, ${JSON.stringify(cells[1])}, ...); ` +
        "the source table is headerless");
    }
    if (!/^\d+$/.test(cells[0])) {
      throw new DatasetError(
        `line ${line}: respondent id ${JSON.stringify(cells[0])} is not an integer`);
    }
    const attrs: number[] = [];
    for (let a = 0; a < ATTRIBUTES.length; a++) {
      const v = Number(cells[1 + a]);
      if (!Number.isFinite(v) || cells[1 + a].trim() === "") {
        throw new DatasetError(
          `line ${line}: column ${ATTRIBUTES[a]} has non-numeric value ` +
          JSON.stringify(cells[1 + a]));
      }
      attrs.push(v);
    }
    const usage: number[] = [];
    for (let d = 0; d < DRUGS.length; d++) {
      const cell = cells[1 + ATTRIBUTES.length + d];
      const m = CLASS_PATTERN.exec(cell);
      if (!m) {
        throw new DatasetError(
          `line ${line}: unknown usage class ${JSON.stringify(cell)} ` +
          `in column ${DRUGS[d]}`);
      }
      usage.push(Number(m[1]));
    }
    const row = [...attrs];
    for (let d = 0; d < DRUGS.length; d++) {
      if (d !== targetIndex) row.push(usage[d]);
    }
    features.push(row);
    targetClasses.push(usage[targetIndex]);
    labels.push(usage[targetIndex] >= USER_THRESHOLD ? 1 : 0);
  });

  if (opts.expectRows !== undefined && features.length !== opts.expectRows) {
    throw new DatasetError(
      `expected ${opts.expectRows} rows, found ${features.length}`);
  }
  if (features.length === 0) {
    throw new DatasetError("the table has no rows");
  }
  return { features, labels, targetClasses, labelRule: LABEL_RULE };
}

export function ingest(path: string, opts: IngestOptions = {}): Dataset {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch (err) {
    throw new DatasetError(`cannot read ${path}: ${(err as Error).message}`);
  }
  return parseDataset(text, opts);
}

export interface SplitIndices {
  train: number[];
  test: number[];
  seed: string;
  ratio: number;
}

/** Seeded shuffle split; both halves come back in dataset order. */
export function splitDataset(
  rowCount: number,
  seed: string,
  ratio = 0.8,
): SplitIndices {
  if (!(ratio > 0 && ratio < 1)) {
    throw new DatasetError(`split ratio ${ratio} must be inside (0, 1)`);
  }
  const order = shuffleInPlace(
    rngFrom(seed),
    Array.from({ length: rowCount }, (_, i) => i),
  );
  const cut = Math.floor(rowCount * ratio);
  const train = order.slice(0, cut).sort((a, b) => a - b);
  const test = order.slice(cut).sort((a, b) => a - b);
  return { train, test, seed, ratio };
}

export function select<T>(rows: T[], indices: number[]): T[] {
  return indices.map((i) => rows[i]);
}

/** Positions of the named columns inside FEATURE_NAMES. */
export function featurePositions(names: readonly string[]): number[] {
  return names.map((n) => {
    const j = FEATURE_NAMES.indexOf(n);
    if (j < 0) throw new DatasetError(`unknown feature name ${JSON.stringify(n)}`);
    return j;
  });
}
