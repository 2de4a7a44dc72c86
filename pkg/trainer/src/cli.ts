/**
 * Command line front end for the training pipeline.
 *
 *   node dist/cli.js --data <table.csv> --out <dir> [--seed S]
 *                    [--expect-rows N] [--start-scale F] [--epochs E]
 *
 * Prints the metrics summary as JSON on stdout; exits 1 with a
 * message on stderr for any failure (bad table, diverged training,
 * no feasible quantization).
 */

import { parseArgs } from "node:util";
import { runPipeline } from "./pipeline.js";

function usage(): string {
  return [
    "usage: train --data <table.csv> --out <dir> [options]",
    "",
    "options:",
    "  --data <path>        input table (headerless 32-column CSV)",
    "  --out <dir>          output directory for model and feature files",
    "  --seed <string>      master seed for split/init/search (default: 1)",
    "  --expect-rows <n>    fail unless the table has exactly n rows",
    "  --start-scale <f>    first scale exponent to try (default: 5)",
    "  --epochs <n>         training epochs (default: 250)",
  ].join("\n");
}

function intArg(name: string, value: string): number {
  const n = Number(value);
  if (!Number.isInteger(n) || n <= 0) {
    throw new Error(`--${name} expects a positive integer, got ${value}`);
  }
  return n;
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        data: { type: "string" },
        out: { type: "string" },
        seed: { type: "string" },
        "expect-rows": { type: "string" },
        "start-scale": { type: "string" },
        epochs: { type: "string" },
        help: { type: "boolean", short: "h" },
      },
    });
  } catch (e) {
    process.stderr.write(`${(e as Error).message}\n${usage()}\n`);
    return 1;
  }
  const v = parsed.values;
  if (v.help) {
    process.stdout.write(usage() + "\n");
    return 0;
  }
  if (!v.data || !v.out) {
    process.stderr.write(`--data and --out are required\n${usage()}\n`);
    return 1;
  }
  try {
    const metrics = runPipeline({
      dataPath: v.data,
      outDir: v.out,
      seed: v.seed,
      expectRows: v["expect-rows"]
        ? intArg("expect-rows", v["expect-rows"])
        : undefined,
      startScale: v["start-scale"]
        ? intArg("start-scale", v["start-scale"])
        : undefined,
      epochs: v.epochs ? intArg("epochs", v.epochs) : undefined,
    });
    process.stdout.write(JSON.stringify(metrics, null, 2) + "\n");
    return 0;
  } catch (e) {
    const err = e as Error;
    process.stderr.write(`${err.name ?? "Error"}: ${err.message}\n`);
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
