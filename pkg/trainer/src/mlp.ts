/**
 * Small fully connected classifier with square or ReLU activations,
 * trained by Adam on softmax cross-entropy.
 *
 * The square variant is what gets exported: the downstream inference
 * engine evaluates polynomials only, so the activation must be x^2.
 * Everything it multiplies later grows quadratically through two such
 * activations, which is why the per-stage weight decay here is much
 * stronger than usual: the export path needs small per-neuron L1 norms
 * to fit the engine's worst-case magnitude budget, and shrinking norms
 * after training would change the classifier.  Stage 1 can be decayed
 * in a rescaled basis (see stage1DecayScale) so the penalty matches the
 * weights that are actually exported after input standardization is
 * folded in.
 */

import { Rng, rngFrom, gaussian, shuffleInPlace } from "./rand.js";

export type Activation = "square" | "relu";

export interface AffineStage {
  /** rows x cols, row-major. */
  weights: number[][];
  bias: number[];
}

export interface Mlp {
  stages: AffineStage[];
  activation: Activation;
}

export class TrainingError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TrainingError";
  }
}

export interface TrainOptions {
  activation?: Activation;
  hidden?: number[];
  epochs?: number;
  batchSize?: number;
  learningRate?: number;
  /** L2 strength on stage 1 (optionally column-rescaled). */
  stage1Decay?: number;
  /** L2 strength on the later stages. */
  laterDecay?: number;
  /** Per-column multipliers for the stage-1 penalty (e.g. 1/std^2). */
  stage1DecayScale?: number[];
  /** Step-size halvings allowed when training diverges. */
  maxRetries?: number;
}

export interface TrainResult {
  mlp: Mlp;
  /** Step size that actually converged. */
  learningRate: number;
  retries: number;
  finalLoss: number;
}

export const DEFAULTS = {
  activation: "square" as Activation,
  hidden: [20, 20],
  epochs: 250,
  batchSize: 64,
  learningRate: 0.01,
  stage1Decay: 0.03,
  laterDecay: 0.01,
  maxRetries: 4,
};

function act(z: number, kind: Activation): number {
  return kind === "square" ? z * z : Math.max(z, 0);
}

function actGrad(z: number, kind: Activation): number {
  return kind === "square" ? 2 * z : z > 0 ? 1 : 0;
}

function affine(stage: AffineStage, input: number[], out: number[]): void {
  const { weights, bias } = stage;
  for (let r = 0; r < weights.length; r++) {
    const row = weights[r];
    let acc = bias[r];
    for (let c = 0; c < row.length; c++) acc += row[c] * input[c];
    out[r] = acc;
  }
}

/** Logits for one input row. */
export function forward(mlp: Mlp, x: number[]): number[] {
  let values = x;
  for (let i = 0; i < mlp.stages.length; i++) {
    const z = new Array<number>(mlp.stages[i].weights.length);
    affine(mlp.stages[i], values, z);
    if (i < mlp.stages.length - 1) {
      for (let r = 0; r < z.length; r++) z[r] = act(z[r], mlp.activation);
    }
    values = z;
  }
  return values;
}

/** Argmax class, ties to the lower index. */
export function predict(mlp: Mlp, x: number[]): number {
  const logits = forward(mlp, x);
  let best = 0;
  for (let i = 1; i < logits.length; i++) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

export function accuracy(mlp: Mlp, X: number[][], y: number[]): number {
  let hits = 0;
  for (let i = 0; i < X.length; i++) hits += predict(mlp, X[i]) === y[i] ? 1 : 0;
  return hits / X.length;
}

function softmax(logits: number[]): number[] {
  let max = logits[0];
  for (const v of logits) if (v > max) max = v;
  let sum = 0;
  const p = logits.map((v) => {
    const e = Math.exp(v - max);
    sum += e;
    return e;
  });
  return p.map((v) => v / sum);
}

export function meanLoss(mlp: Mlp, X: number[][], y: number[]): number {
  let total = 0;
  for (let i = 0; i < X.length; i++) {
    const p = softmax(forward(mlp, X[i]));
    total += -Math.log(p[y[i]] + 1e-12);
  }
  return total / X.length;
}

interface AdamState {
  m: number[][][];
  v: number[][][];
  mb: number[][];
  vb: number[][];
  step: number;
}

function initStages(
  rng: Rng,
  sizes: Array<[number, number]>,
  activation: Activation,
): AffineStage[] {
  return sizes.map(([rows, cols], i) => {
    const weights = Array.from({ length: rows }, () =>
      Array.from({ length: cols }, () => gaussian(rng) * (0.5 / Math.sqrt(cols))),
    );
    // square units need a nonzero operating point: around z = 0 both the
    // activation and its gradient vanish
    const biasValue =
      activation === "square" && i < sizes.length - 1 ? 0.5 : 0;
    return { weights, bias: new Array<number>(rows).fill(biasValue) };
  });
}

function trainOnce(
  X: number[][],
  y: number[],
  seed: string,
  opts: Required<Omit<TrainOptions, "stage1DecayScale">> &
    Pick<TrainOptions, "stage1DecayScale">,
  learningRate: number,
): { mlp: Mlp; finalLoss: number } | null {
  const classes = 2;
  const din = X[0].length;
  const sizes: Array<[number, number]> = [];
  let prev = din;
  for (const h of opts.hidden) {
    sizes.push([h, prev]);
    prev = h;
  }
  sizes.push([classes, prev]);

  const rng = rngFrom(seed);
  const stages = initStages(rng, sizes, opts.activation);
  const nStages = stages.length;
  const state: AdamState = {
    m: stages.map((s) => s.weights.map((r) => r.map(() => 0))),
    v: stages.map((s) => s.weights.map((r) => r.map(() => 0))),
    mb: stages.map((s) => s.bias.map(() => 0)),
    vb: stages.map((s) => s.bias.map(() => 0)),
    step: 0,
  };
  const beta1 = 0.9;
  const beta2 = 0.999;
  const eps = 1e-8;

  // reusable per-sample buffers: z values and activations per stage
  const zs = sizes.map(([rows]) => new Array<number>(rows).fill(0));
  const as = sizes.map(([rows]) => new Array<number>(rows).fill(0));
  const deltas = sizes.map(([rows]) => new Array<number>(rows).fill(0));
  const gW = stages.map((s) => s.weights.map((r) => r.map(() => 0)));
  const gB = stages.map((s) => s.bias.map(() => 0));

  const order = Array.from({ length: X.length }, (_, i) => i);
  let firstEpochLoss: number | null = null;
  let epochLoss = 0;

  for (let epoch = 0; epoch < opts.epochs; epoch++) {
    shuffleInPlace(rng, order);
    epochLoss = 0;
    for (let start = 0; start < order.length; start += opts.batchSize) {
      const batch = order.slice(start, start + opts.batchSize);
      const invB = 1 / batch.length;
      for (let s = 0; s < nStages; s++) {
        for (const row of gW[s]) row.fill(0);
        gB[s].fill(0);
      }
      for (const idx of batch) {
        const x = X[idx];
        let input = x;
        for (let s = 0; s < nStages; s++) {
          affine(stages[s], input, zs[s]);
          if (s < nStages - 1) {
            for (let r = 0; r < zs[s].length; r++) {
              as[s][r] = act(zs[s][r], opts.activation);
            }
            input = as[s];
          }
        }
        const p = softmax(zs[nStages - 1]);
        epochLoss += -Math.log(p[y[idx]] + 1e-12);
        for (let r = 0; r < classes; r++) {
          deltas[nStages - 1][r] = (p[r] - (r === y[idx] ? 1 : 0)) * invB;
        }
        for (let s = nStages - 1; s >= 0; s--) {
          const inp = s === 0 ? x : as[s - 1];
          const d = deltas[s];
          for (let r = 0; r < d.length; r++) {
            const dr = d[r];
            if (dr === 0) continue;
            const grow = gW[s][r];
            for (let c = 0; c < inp.length; c++) grow[c] += dr * inp[c];
            gB[s][r] += dr;
          }
          if (s > 0) {
            const up = deltas[s - 1];
            up.fill(0);
            const W = stages[s].weights;
            for (let r = 0; r < d.length; r++) {
              const dr = d[r];
              if (dr === 0) continue;
              const row = W[r];
              for (let c = 0; c < row.length; c++) up[c] += dr * row[c];
            }
            for (let c = 0; c < up.length; c++) {
              up[c] *= actGrad(zs[s - 1][c], opts.activation);
            }
          }
        }
      }
      // decay and Adam update
      state.step += 1;
      const corr1 = 1 - Math.pow(beta1, state.step);
      const corr2 = 1 - Math.pow(beta2, state.step);
      for (let s = 0; s < nStages; s++) {
        const decay = s === 0 ? opts.stage1Decay : opts.laterDecay;
        const cols = stages[s].weights[0].length;
        for (let r = 0; r < stages[s].weights.length; r++) {
          const wRow = stages[s].weights[r];
          const gRow = gW[s][r];
          const mRow = state.m[s][r];
          const vRow = state.v[s][r];
          for (let c = 0; c < cols; c++) {
            const scale =
              s === 0 && opts.stage1DecayScale ? opts.stage1DecayScale[c] : 1;
            const g = gRow[c] + decay * scale * wRow[c];
            mRow[c] = beta1 * mRow[c] + (1 - beta1) * g;
            vRow[c] = beta2 * vRow[c] + (1 - beta2) * g * g;
            wRow[c] -=
              (learningRate * (mRow[c] / corr1)) /
              (Math.sqrt(vRow[c] / corr2) + eps);
          }
          const g = gB[s][r];
          state.mb[s][r] = beta1 * state.mb[s][r] + (1 - beta1) * g;
          state.vb[s][r] = beta2 * state.vb[s][r] + (1 - beta2) * g * g;
          stages[s].bias[r] -=
            (learningRate * (state.mb[s][r] / corr1)) /
            (Math.sqrt(state.vb[s][r] / corr2) + eps);
        }
      }
    }
    epochLoss /= X.length;
    if (!Number.isFinite(epochLoss)) return null;
    if (firstEpochLoss === null) firstEpochLoss = epochLoss;
    else if (epochLoss > 10 * Math.max(firstEpochLoss, 1)) return null;
  }
  return { mlp: { stages, activation: opts.activation }, finalLoss: epochLoss };
}

/**
 * Train with divergence retries: each retry halves the step size, up
 * to maxRetries attempts beyond the first.
 */
export function trainMlp(
  X: number[][],
  y: number[],
  seed: string,
  options: TrainOptions = {},
): TrainResult {
  if (X.length === 0 || X.length !== y.length) {
    throw new TrainingError("training data and labels must align and be nonempty");
  }
  const opts = { ...DEFAULTS, ...options };
  if (opts.stage1DecayScale && opts.stage1DecayScale.length !== X[0].length) {
    throw new TrainingError("stage1DecayScale length must match the input width");
  }
  let lr = opts.learningRate;
  for (let attempt = 0; attempt <= opts.maxRetries; attempt++) {
    const result = trainOnce(X, y, seed, opts, lr);
    if (result !== null) {
      return { ...result, learningRate: lr, retries: attempt };
    }
    lr /= 2;
  }
  throw new TrainingError(
    `training diverged on every attempt (last step size ${lr * 2}); ` +
    `allowed ${opts.maxRetries} retries`);
}
