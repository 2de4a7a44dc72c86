import { describe, expect, it } from "vitest";

import { gaussian, rngFrom } from "../src/rand.js";
import {
  Mlp,
  TrainingError,
  accuracy,
  forward,
  meanLoss,
  predict,
  trainMlp,
} from "../src/mlp.js";

/** Two well-separated gaussian blobs; label = which blob. */
function blob(n: number, seed: string): { X: number[][]; y: number[] } {
  const rng = rngFrom(seed);
  const X: number[][] = [];
  const y: number[] = [];
  for (let i = 0; i < n; i++) {
    const cls = i % 2;
    const cx = cls === 0 ? -1.5 : 1.5;
    X.push([cx + 0.5 * gaussian(rng), -cx + 0.5 * gaussian(rng)]);
    y.push(cls);
  }
  return { X, y };
}

describe("forward", () => {
  const stages = [
    { weights: [[1, -1]], bias: [0.5] },
    { weights: [[2]], bias: [-1] },
  ];

  it("chains affine stages through the square activation", () => {
    const mlp: Mlp = { stages, activation: "square" };
    // z1 = 3 - 1 + 0.5 = 2.5; a1 = 6.25; z2 = 2 * 6.25 - 1 = 11.5
    expect(forward(mlp, [3, 1])).toEqual([11.5]);
  });

  it("chains affine stages through relu", () => {
    const mlp: Mlp = { stages, activation: "relu" };
    // z1 = 1 - 3 + 0.5 = -1.5; relu -> 0; z2 = -1
    expect(forward(mlp, [1, 3])).toEqual([-1]);
  });
});

describe("predict and accuracy", () => {
  const twoClass: Mlp = {
    // logits = [x0, x1]: class is whichever coordinate is larger
    stages: [
      { weights: [[1, 0], [0, 1]], bias: [0, 0] },
      { weights: [[1, 0], [0, 1]], bias: [0, 0] },
    ],
    activation: "relu",
  };

  it("takes the argmax and breaks ties toward the lower class", () => {
    expect(predict(twoClass, [2, 1])).toBe(0);
    expect(predict(twoClass, [1, 2])).toBe(1);
    expect(predict(twoClass, [1, 1])).toBe(0);
  });

  it("counts hits", () => {
    const X = [
      [2, 1],
      [1, 2],
      [3, 0],
    ];
    expect(accuracy(twoClass, X, [0, 1, 1])).toBeCloseTo(2 / 3, 12);
  });
});

describe("trainMlp", () => {
  it("learns a separable problem", () => {
    const { X, y } = blob(120, "blob-train");
    const r = trainMlp(X, y, "fit", { hidden: [6], epochs: 60 });
    expect(r.retries).toBe(0);
    expect(r.learningRate).toBeCloseTo(0.01, 12);
    expect(accuracy(r.mlp, X, y)).toBeGreaterThanOrEqual(0.95);
    expect(r.finalLoss).toBeLessThan(meanLoss(
      { stages: r.mlp.stages.map(s => ({
          weights: s.weights.map(row => row.map(() => 0)),
          bias: s.bias.map(() => 0),
        })), activation: r.mlp.activation },
      X, y) + 1e-9);
  });

  it("is deterministic for a seed and sensitive to it", () => {
    const { X, y } = blob(60, "blob-det");
    const a = trainMlp(X, y, "alpha", { hidden: [4], epochs: 10 });
    const b = trainMlp(X, y, "alpha", { hidden: [4], epochs: 10 });
    const c = trainMlp(X, y, "beta", { hidden: [4], epochs: 10 });
    expect(JSON.stringify(a.mlp)).toBe(JSON.stringify(b.mlp));
    expect(JSON.stringify(a.mlp)).not.toBe(JSON.stringify(c.mlp));
  });

  it("supports relu end to end", () => {
    const { X, y } = blob(120, "blob-relu");
    const r = trainMlp(X, y, "fit-relu", {
      activation: "relu",
      hidden: [6],
      epochs: 60,
    });
    expect(r.mlp.activation).toBe("relu");
    expect(accuracy(r.mlp, X, y)).toBeGreaterThanOrEqual(0.95);
  });

  it("raises TrainingError when every attempt diverges", () => {
    const { X, y } = blob(40, "blob-bad");
    const poisoned = X.map((row) => row.map(() => Number.NaN));
    expect(() =>
      trainMlp(poisoned, y, "diverge", { hidden: [4], epochs: 5, maxRetries: 2 }),
    ).toThrow(TrainingError);
    expect(() =>
      trainMlp(poisoned, y, "diverge", { hidden: [4], epochs: 5, maxRetries: 2 }),
    ).toThrow(/diverged on every attempt/);
  });

  it("rejects empty or misaligned inputs", () => {
    expect(() => trainMlp([], [], "s")).toThrow(TrainingError);
    expect(() => trainMlp([[1]], [0, 1], "s")).toThrow(TrainingError);
    expect(() =>
      trainMlp([[1, 2]], [0], "s", { stage1DecayScale: [1] }),
    ).toThrow(/stage1DecayScale/);
  });

  it("keeps the stage-1 decay scale effective", () => {
    // a heavy per-column penalty on one coordinate shrinks its weights
    const { X, y } = blob(120, "blob-decay");
    const free = trainMlp(X, y, "decay", { hidden: [4], epochs: 40 });
    const pinned = trainMlp(X, y, "decay", {
      hidden: [4],
      epochs: 40,
      stage1Decay: 0.5,
      stage1DecayScale: [1e3, 0],
    });
    const colNorm = (m: Mlp, c: number) =>
      Math.sqrt(m.stages[0].weights.reduce((a, row) => a + row[c] * row[c], 0));
    expect(colNorm(pinned.mlp, 0)).toBeLessThan(0.1 * colNorm(free.mlp, 0));
    expect(colNorm(pinned.mlp, 1)).toBeGreaterThan(0.05);
  });
});
