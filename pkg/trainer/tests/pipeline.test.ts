import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { beforeAll, describe, expect, it } from "vitest";

import { ATTRIBUTES, DRUGS } from "../src/dataset.js";
import { PipelineMetrics, runPipeline } from "../src/pipeline.js";
import { QuantStage, inferClear, quantizeFeatures } from "../src/quantize.js";

const HERE = fileURLToPath(new URL(".", import.meta.url));
const DATA = join(HERE, "..", "..", "data", "synthetic_drug_consumption.csv");

const PARAMS = {
  field: "goldilocks",
  n: 32,
  k: 8,
  w: 4,
  t: 2,
  e: 1,
  sigma: 1,
  kappa_bits: 128,
  stat_bits: 40,
};

let outA = "";
let outB = "";
let metrics: PipelineMetrics;

interface EmittedModel {
  stages: QuantStage[];
  scaleF: number;
  inputBound: number;
  raw: {
    feature_schema: Array<{ name: string; party: number }>;
    layers: Array<{ rows: number; cols: number; weights: number[]; bias: number[] }>;
    metadata: Record<string, unknown>;
    scale_f: number;
  };
}

function readModel(dir: string): EmittedModel {
  const raw = JSON.parse(readFileSync(join(dir, "model.json"), "utf-8"));
  const stages: QuantStage[] = raw.layers.map(
    (l: { rows: number; cols: number; weights: number[]; bias: number[] }) => ({
      weights: Array.from({ length: l.rows }, (_, r) =>
        l.weights.slice(r * l.cols, (r + 1) * l.cols),
      ),
      bias: l.bias,
    }),
  );
  return {
    stages,
    scaleF: raw.scale_f,
    inputBound: Number(raw.metadata.input_bound),
    raw,
  };
}

function readCsv(dir: string, name: string): { header: string; rows: number[][] } {
  const lines = readFileSync(join(dir, name), "utf-8").trim().split("\n");
  return {
    header: lines[0],
    rows: lines.slice(1).map((l) => l.split(",").map(Number)),
  };
}

function python(script: string, args: string[]): string {
  return execFileSync("python3", ["-c", script, ...args], {
    encoding: "utf-8",
    cwd: join(HERE, "..", ".."),
    timeout: 300_000,
  });
}

beforeAll(() => {
  outA = mkdtempSync(join(tmpdir(), "trainer-a-"));
  outB = mkdtempSync(join(tmpdir(), "trainer-b-"));
  metrics = runPipeline({
    dataPath: DATA,
    outDir: outA,
    seed: "1",
    expectRows: 1885,
  });
  runPipeline({ dataPath: DATA, outDir: outB, seed: "1", expectRows: 1885 });
});

describe("pipeline metrics", () => {
  it("clears the accuracy floor with the square-activation network", () => {
    expect(metrics.float_acc).toBeGreaterThanOrEqual(0.8);
  });

  it("loses at most two points to quantization", () => {
    expect(metrics.quant_acc).toBeGreaterThanOrEqual(metrics.float_acc - 0.02);
  });

  it("stays comparable to the relu baseline", () => {
    expect(metrics.relu_baseline_acc - metrics.float_acc).toBeLessThanOrEqual(0.08);
  });

  it("beats the personality-traits-only classifier", () => {
    expect(metrics.personality_only_acc).toBeLessThan(metrics.float_acc);
  });

  it("reports the split and quantization bookkeeping", () => {
    expect(metrics.train_rows).toBe(1508);
    expect(metrics.test_rows).toBe(377);
    expect(metrics.scale_f).toBeGreaterThanOrEqual(2);
    expect(metrics.scale_f).toBeLessThanOrEqual(5);
    expect(metrics.weight_bits).toBeGreaterThanOrEqual(8);
    expect(metrics.input_bound).toBe(7 * Math.pow(2, metrics.scale_f));
    expect(metrics.positive_rate).toBeGreaterThan(0.3);
    expect(metrics.positive_rate).toBeLessThan(0.45);
  });
});

describe("emitted files", () => {
  it("emits a model with the expected shape and metadata", () => {
    const m = readModel(outA);
    expect(m.raw.layers.map((l) => [l.rows, l.cols])).toEqual([
      [20, 30],
      [20, 20],
      [2, 20],
    ]);
    expect(m.scaleF).toBe(metrics.scale_f);
    expect(m.inputBound).toBe(metrics.input_bound);
    const md = m.raw.metadata;
    expect(md.float_acc).toBe(metrics.float_acc);
    expect(md.quant_acc).toBe(metrics.quant_acc);
    expect(md.relu_baseline_acc).toBe(metrics.relu_baseline_acc);
    expect(md.personality_only_acc).toBe(metrics.personality_only_acc);
    expect(md.label_rule).toBe(metrics.label_rule);
    expect(md.weight_bits).toBe(metrics.weight_bits);
    expect(md.bias_scales).toEqual([1, 2, 3].map((i) => i * metrics.scale_f));
  });

  it("splits the schema into attribute and drug-history parties", () => {
    const m = readModel(outA);
    expect(m.raw.feature_schema.length).toBe(30);
    expect(m.raw.feature_schema.slice(0, 12).every((c) => c.party === 0)).toBe(true);
    expect(m.raw.feature_schema.slice(12).every((c) => c.party === 1)).toBe(true);
    expect(m.raw.feature_schema.map((c) => c.name)).not.toContain("LSD");
  });

  it("emits per-party feature tables for the held-out rows", () => {
    const p0 = readCsv(outA, "features_party0.csv");
    const p1 = readCsv(outA, "features_party1.csv");
    expect(p0.header).toBe(ATTRIBUTES.join(","));
    expect(p1.header).toBe(DRUGS.filter((d) => d !== "LSD").join(","));
    expect(p0.rows.length).toBe(377);
    expect(p1.rows.length).toBe(377);
    // drug history columns are usage classes
    for (const row of p1.rows.slice(0, 20)) {
      for (const v of row) {
        expect(Number.isInteger(v)).toBe(true);
        expect(v).toBeGreaterThanOrEqual(0);
        expect(v).toBeLessThanOrEqual(6);
      }
    }
  });

  it("emits labels for the same rows", () => {
    const text = readFileSync(join(outA, "labels.csv"), "utf-8");
    const lines = text.trim().split("\n");
    expect(lines[0]).toBe("label");
    expect(lines.length).toBe(378);
    for (const l of lines.slice(1)) expect(l === "0" || l === "1").toBe(true);
  });

  it("keeps every quantized feature inside the declared input bound", () => {
    const m = readModel(outA);
    const p0 = readCsv(outA, "features_party0.csv");
    const p1 = readCsv(outA, "features_party1.csv");
    for (const table of [p0, p1]) {
      for (const row of table.rows) {
        for (const q of quantizeFeatures(row, m.scaleF)) {
          expect(Math.abs(q)).toBeLessThanOrEqual(m.inputBound);
        }
      }
    }
  });

  it("reproduces the reported quantized accuracy from the files alone", () => {
    const m = readModel(outA);
    const p0 = readCsv(outA, "features_party0.csv");
    const p1 = readCsv(outA, "features_party1.csv");
    const labels = readFileSync(join(outA, "labels.csv"), "utf-8")
      .trim()
      .split("\n")
      .slice(1)
      .map(Number);
    let hits = 0;
    for (let i = 0; i < labels.length; i++) {
      const features = quantizeFeatures([...p0.rows[i], ...p1.rows[i]], m.scaleF);
      const r = inferClear(m.stages, m.scaleF, features);
      hits += r.predicted === labels[i] ? 1 : 0;
    }
    const acc = Math.round((hits / labels.length) * 10000) / 10000;
    expect(acc).toBe(metrics.quant_acc);
  });

  it("emits byte-identical files for the same seed", () => {
    for (const name of [
      "model.json",
      "features_party0.csv",
      "features_party1.csv",
      "labels.csv",
      "metrics.json",
    ]) {
      const a = readFileSync(join(outA, name), "utf-8");
      const b = readFileSync(join(outB, name), "utf-8");
      expect(a).toBe(b);
    }
  });
});

describe("engine interoperability", () => {
  const CLEAR_CHECK = `
import json, sys
from packedmpc.field import GOLDILOCKS
from packedmpc.nn import load_model, load_features, infer_clear, compile_to_circuit

model = load_model(sys.argv[1])
circuit = compile_to_circuit(model, GOLDILOCKS, width=4)
f0 = load_features(sys.argv[2], model, party=0)
f1 = load_features(sys.argv[3], model, party=1)
n = int(sys.argv[4])
preds = []
logits0 = None
for i in range(n):
    r = infer_clear(model, f0[i] + f1[i])
    preds.append(r.predicted)
    if i == 0:
        logits0 = [str(v) for v in r.logits]
print(json.dumps({"depth": circuit.depth, "predicted": preds, "logits0": logits0}))
`;

  const SECURE_CHECK = `
import json, sys
from packedmpc.nn import load_model, load_features
from packedmpc.params import load_params
from packedmpc.harness import secure_infer

model = load_model(sys.argv[1])
params = load_params(sys.argv[4])
x0 = load_features(sys.argv[2], model, party=0)[0]
x1 = load_features(sys.argv[3], model, party=1)[0]
r = secure_infer(model, x0, x1, params, seed=b"interop")
print(json.dumps({"logits": [str(v) for v in r.logits], "predicted": r.predicted}))
`;

  function tsRow(dir: string, i: number) {
    const m = readModel(dir);
    const p0 = readCsv(dir, "features_party0.csv");
    const p1 = readCsv(dir, "features_party1.csv");
    const features = quantizeFeatures([...p0.rows[i], ...p1.rows[i]], m.scaleF);
    return inferClear(m.stages, m.scaleF, features);
  }

  it("the engine accepts the model and agrees on every logit", () => {
    const n = 40;
    const out = JSON.parse(
      python(CLEAR_CHECK, [
        join(outA, "model.json"),
        join(outA, "features_party0.csv"),
        join(outA, "features_party1.csv"),
        String(n),
      ]),
    );
    expect(out.depth).toBeGreaterThan(0);
    const mine = Array.from({ length: n }, (_, i) => tsRow(outA, i));
    expect(out.predicted).toEqual(mine.map((r) => r.predicted));
    expect(out.logits0).toEqual(mine[0].logits.map((v) => v.toString()));
  });

  it("a secure two-party run reveals the same logits", () => {
    const paramsPath = join(outA, "params.json");
    writeFileSync(paramsPath, JSON.stringify(PARAMS) + "\n");
    const out = JSON.parse(
      python(SECURE_CHECK, [
        join(outA, "model.json"),
        join(outA, "features_party0.csv"),
        join(outA, "features_party1.csv"),
        paramsPath,
      ]),
    );
    const mine = tsRow(outA, 0);
    expect(out.logits).toEqual(mine.logits.map((v) => v.toString()));
    expect(out.predicted).toBe(mine.predicted);
  });

  it("the engine CLI completes a standalone simulated inference", () => {
    const paramsPath = join(outA, "params.json");
    writeFileSync(paramsPath, JSON.stringify(PARAMS) + "\n");
    const reportPath = join(outA, "report.json");
    execFileSync(
      "packedmpc",
      [
        "--role", "standalone-sim",
        "--model", join(outA, "model.json"),
        "--features",
        `${join(outA, "features_party0.csv")},${join(outA, "features_party1.csv")}`,
        "--params-file", paramsPath,
        "--seed", "interop-cli",
        "--report", reportPath,
      ],
      { encoding: "utf-8", timeout: 300_000 },
    );
    const report = JSON.parse(readFileSync(reportPath, "utf-8"));
    expect(report.aborts).toEqual([]);
    expect(report.communication_check.ok).toBe(true);
    expect(report.circuit.width).toBe(PARAMS.w);
    expect(report.ole.per_party_used[0]).toBe(report.ole.expected_per_party);
  });
});
