#!/usr/bin/env python3
"""Build the committed inference fixture from the synthetic dataset.

Produces data/fixture/{model.json, features_party0.csv,
features_party1.csv, labels.csv}: a quantized 30-20-20-2 square-activation
network plus a handful of held-out test rows, so secure-inference tests
run without training anything first.

The network is constructed, not trained: the synthetic generator labels
rows by a fixed linear score whose coefficients sit on the 1/16 grid, and
a square-activation net recovers a linear score exactly through paired
neurons, (s+1/2)^2 - (s-1/2)^2 = s.  Hidden neurons beyond the pair are
genuinely part of the declared architecture but carry zero weights.
Accuracies in the metadata are measured on the held-out split.
"""

import argparse
import importlib.util
import pathlib
import sys

from packedmpc.field import GOLDILOCKS
from packedmpc.nn import (
    FeatureColumn, QuantLayer, QuantModel, compile_to_circuit, infer_clear,
    quantize, save_features, save_model,
)

_here = pathlib.Path(__file__).parent
_spec = importlib.util.spec_from_file_location(
    "synth", _here / "make_synthetic_dataset.py")
synth = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(synth)

SCALE_F = 4
INPUT_BOUND = 112  # covers attributes up to 3.5 and drug ordinals up to 6
HIDDEN = 20
FEATURES = synth.ATTRIBUTES + [d for d in synth.DRUGS if d != "LSD"]


def load_table(path):
    rows = []
    with open(path) as fh:
        for ln in fh:
            cells = ln.strip().split(",")
            if len(cells) != 1 + len(synth.ATTRIBUTES) + len(synth.DRUGS):
                raise SystemExit(f"malformed row: {ln[:60]!r}")
            row = {}
            for name, cell in zip(synth.ATTRIBUTES, cells[1:13]):
                row[name] = float(cell)
            for name, cell in zip(synth.DRUGS, cells[13:]):
                if not cell.startswith("CL"):
                    raise SystemExit(f"bad drug class {cell!r}")
                row[name] = int(cell[2:])
            rows.append(row)
    return rows


def build_model():
    coef = [quantize(synth.SCORE_WEIGHTS.get(name, 0.0), SCALE_F)
            for name in FEATURES]
    c0 = quantize(synth.SCORE_INTERCEPT, SCALE_F)
    half = 1 << (SCALE_F - 1)
    scale = 1 << SCALE_F

    w1 = [list(coef), list(coef)] + [[0] * len(FEATURES)] * (HIDDEN - 2)
    b1 = [c0 + half, c0 - half] + [0] * (HIDDEN - 2)

    quater = scale // 4
    w2 = [[0] * HIDDEN for _ in range(HIDDEN)]
    w2[0][0], w2[0][1] = quater, -quater
    w2[1][0], w2[1][1] = quater, -quater
    b2 = [0] * HIDDEN
    b2[0], b2[1] = half * scale, -half * scale  # stored at scale 2f

    w3 = [[0] * HIDDEN for _ in range(2)]
    w3[0][0], w3[0][1] = -2 * quater * 2, 2 * quater * 2
    w3[1][0], w3[1][1] = 2 * quater * 2, -2 * quater * 2
    b3 = [0, 0]

    schema = [FeatureColumn(n, 0) for n in synth.ATTRIBUTES]
    schema += [FeatureColumn(n, 1) for n in FEATURES[len(synth.ATTRIBUTES):]]
    metadata = {
        "float_acc": 0.0, "quant_acc": 0.0,  # measured below
        "input_bound": INPUT_BOUND, "weight_bits": 8,
        "label_rule": "user = CL3 or higher on the LSD column",
        "split": "first 80% train, last 20% test",
        "bias_scales": "stage i bias stored at scale i*f",
    }
    return QuantModel([QuantLayer(w1, b1), QuantLayer(w2, b2),
                       QuantLayer(w3, b3)], SCALE_F, schema, metadata)


def raw_features(row):
    return [float(row[name]) for name in FEATURES]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="data/synthetic_drug_consumption.csv")
    ap.add_argument("--out", default="data/fixture")
    ap.add_argument("--rows", type=int, default=12,
                    help="test rows to export for the fixture")
    args = ap.parse_args()

    table = load_table(args.data)
    split = int(len(table) * 0.8)
    test = table[split:]

    model = build_model()
    float_hits = quant_hits = 0
    for row in test:
        label = row["LSD"] >= 3
        _, s = synth.label_probability(row)
        float_hits += (s > 0) == label
        feats = [quantize(v, SCALE_F) for v in raw_features(row)]
        res = infer_clear(model, feats)
        quant_hits += (res.predicted == 1) == label
    model.metadata["float_acc"] = round(float_hits / len(test), 4)
    model.metadata["quant_acc"] = round(quant_hits / len(test), 4)

    # the compiler must accept the model at the 64-bit field
    circuit = compile_to_circuit(model, GOLDILOCKS, 4)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, str(out / "model.json"))
    n0 = len(synth.ATTRIBUTES)
    sample = test[: args.rows]
    save_features(str(out / "features_party0.csv"), FEATURES[:n0],
                  [raw_features(r)[:n0] for r in sample])
    save_features(str(out / "features_party1.csv"), FEATURES[n0:],
                  [raw_features(r)[n0:] for r in sample])
    with open(out / "labels.csv", "w") as fh:
        fh.write("label\n")
        for r in sample:
            fh.write(f"{int(r['LSD'] >= 3)}\n")

    mul_blocks = sum(l.block_count for l in circuit.layers if l.op == "mul")
    print(f"test split: {len(test)} rows, float acc "
          f"{model.metadata['float_acc']:.2%}, quant acc "
          f"{model.metadata['quant_acc']:.2%}")
    print(f"fixture: {len(sample)} rows, circuit depth {circuit.depth}, "
          f"{mul_blocks} multiplication blocks")


if __name__ == "__main__":
    main()
