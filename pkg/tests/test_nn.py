"""Quantized network: integer reference semantics and circuit lowering."""

import json
import random

import pytest

from packedmpc.circuit import eval_plain
from packedmpc.combined import run_protocol
from packedmpc.field import GOLDILOCKS
from packedmpc.nn import (
    FeatureColumn,
    InferenceResult,
    QuantLayer,
    QuantModel,
    compile_to_circuit,
    dequantize,
    infer_clear,
    load_features,
    load_labels,
    load_model,
    logit_scale,
    merge_features,
    model_from_dict,
    model_to_dict,
    quantize,
    result_from_field,
    save_features,
    save_model,
    split_features,
)
from packedmpc.outer import ProtocolParams, check_protocol_compatible

BIG_PARAMS = ProtocolParams(GOLDILOCKS, n=32, w=4, t=2, e=1, k=8)


def tiny_model(weights, biases, f=0, parties=(0,), **meta):
    schema = [FeatureColumn(f"f{j}", parties[j % len(parties)])
              for j in range(len(weights[0][0]))]
    metadata = {"float_acc": 0.0, "quant_acc": 0.0}
    metadata.update(meta)
    layers = [QuantLayer([list(r) for r in w], list(b))
              for w, b in zip(weights, biases)]
    return QuantModel(layers, f, schema, metadata)


def random_model(rng, in_len=6, h1=5, h2=4, out=2, f=3):
    def mat(rows, cols, lim):
        return [[rng.randint(-lim, lim) for _ in range(cols)]
                for _ in range(rows)]
    layers = [
        QuantLayer(mat(h1, in_len, 4), [rng.randint(-8, 8) for _ in range(h1)]),
        QuantLayer(mat(h2, h1, 4), [rng.randint(-32, 32) for _ in range(h2)]),
        QuantLayer(mat(out, h2, 4), [rng.randint(-64, 64) for _ in range(out)]),
    ]
    schema = [FeatureColumn(f"c{j}", j % 2) for j in range(in_len)]
    return QuantModel(layers, f, schema,
                      {"float_acc": 0.0, "quant_acc": 0.0, "input_bound": 64})


# ---------------------------------------------------------------------------
# quantization


def test_quantize_half_away_from_zero():
    assert quantize(0.5, 0) == 1
    assert quantize(-0.5, 0) == -1
    assert quantize(2.5, 0) == 3
    assert quantize(-2.5, 0) == -3
    assert quantize(0.7, 4) == 11
    assert quantize(-0.7, 4) == -11
    assert quantize(0.0, 7) == 0


def test_quantize_roundtrip_error_bound():
    rng = random.Random(5)
    for _ in range(200):
        f = rng.randint(0, 10)
        v = rng.uniform(-50, 50)
        assert abs(dequantize(quantize(v, f), f) - v) <= 2 ** (-f - 1) + 1e-12


# ---------------------------------------------------------------------------
# clear inference


def test_hand_checked_depth3_f0():
    model = tiny_model([[[2]], [[3]], [[1]]], [[1], [1], [0]], f=0)
    res = infer_clear(model, [5])
    # z1 = 2*5+1 = 11, a1 = 121, z2 = 3*121+1 = 364, a2 = 132496
    assert res.logits == [132496]
    assert res.predicted == 0
    assert res.scale_exponent == 0


def test_hand_checked_scale_chain_f1():
    model = tiny_model([[[1]], [[1]], [[1]]], [[1], [1], [1]], f=1,
                       input_bound=4)
    res = infer_clear(model, [2])
    # z1 = 2+2 = 4 (2f), a1 = 16 (4f), z2 = 16+1*2^3 = 24 (5f),
    # a2 = 576 (10f), y = 576+1*2^8 = 832 (11f)
    assert res.logits == [832]
    assert res.scale_exponent == 11
    assert logit_scale(model) == 11


def test_square_activation_direct():
    model = tiny_model([[[1]], [[1]]], [[0], [0]], f=0)
    assert infer_clear(model, [3]).logits == [9]


def test_all_zero_weights_give_zero_logits():
    model = tiny_model([[[0, 0]] * 3, [[0] * 3] * 3, [[0] * 3] * 2],
                       [[0] * 3, [0] * 3, [0] * 2], f=2, parties=(0, 1))
    assert infer_clear(model, [7, -5]).logits == [0, 0]
    circuit = compile_to_circuit(model, GOLDILOCKS, 4)
    assert eval_plain(circuit, [7], [-5 % GOLDILOCKS.modulus]) == [0, 0]
    assert sum(1 for l in circuit.layers if l.op == "mul") == 0


def test_argmax_tie_takes_lower_index():
    assert InferenceResult([5, 5], 0, 0).predicted == 0
    assert result_from_field(GOLDILOCKS, [5, 5], 0).predicted == 0
    assert result_from_field(GOLDILOCKS, [3, 7], 0).predicted == 1
    neg = [(-2) % GOLDILOCKS.modulus, (-9) % GOLDILOCKS.modulus]
    assert result_from_field(GOLDILOCKS, neg, 0).logits == [-2, -9]
    assert result_from_field(GOLDILOCKS, neg, 0).predicted == 0


def test_infer_rejects_bad_inputs():
    model = tiny_model([[[1]], [[1]], [[1]]], [[0], [0], [0]], f=0)
    with pytest.raises(ValueError, match="expected 1 features"):
        infer_clear(model, [1, 2])
    with pytest.raises(ValueError, match="input bound"):
        infer_clear(model, [model.input_bound() + 1])


def test_infer_overflow_is_loud():
    model = tiny_model([[[100]], [[100]], [[100]]], [[0], [0], [0]], f=0,
                       input_bound=10 ** 5)
    with pytest.raises(OverflowError, match="63-bit"):
        infer_clear(model, [10 ** 5])


# ---------------------------------------------------------------------------
# circuit lowering


def test_compile_matches_infer_clear_on_random_inputs():
    rng = random.Random(11)
    model = random_model(rng)
    circuit = compile_to_circuit(model, GOLDILOCKS, 4)
    check_protocol_compatible(circuit, BIG_PARAMS)
    p = GOLDILOCKS.modulus
    for _ in range(100):
        feats = [rng.randint(-64, 64) for _ in range(model.in_len)]
        ref = infer_clear(model, feats)
        x, y = split_features(model, feats)
        got = eval_plain(circuit, x, y)
        assert got == [v % p for v in ref.logits]
        assert result_from_field(GOLDILOCKS, got,
                                 ref.scale_exponent).logits == ref.logits


def test_compile_many_shapes():
    rng = random.Random(23)
    p = GOLDILOCKS.modulus
    for _ in range(8):
        model = random_model(rng, in_len=rng.randint(2, 7),
                             h1=rng.randint(1, 6), h2=rng.randint(1, 6),
                             out=rng.randint(1, 5), f=rng.randint(0, 3))
        width = rng.choice([2, 4])
        circuit = compile_to_circuit(model, GOLDILOCKS, width)
        feats = [rng.randint(-64, 64) for _ in range(model.in_len)]
        x, y = split_features(model, feats)
        assert eval_plain(circuit, x, y) == \
            [v % p for v in infer_clear(model, feats).logits]


def test_compile_overflow_refusal_reports_bound():
    model = tiny_model([[[100]], [[100]], [[100]]], [[0], [0], [0]], f=0,
                       input_bound=10 ** 6)
    with pytest.raises(ValueError, match="worst-case magnitude"):
        compile_to_circuit(model, GOLDILOCKS, 4)


def test_compile_rejects_oversized_public_constant():
    model = tiny_model([[[1]], [[1]], [[1]]], [[0], [0], [100]], f=8)
    with pytest.raises(ValueError, match="public constant magnitude"):
        compile_to_circuit(model, GOLDILOCKS, 4)


def test_secure_run_matches_infer_clear():
    model = tiny_model([[[2, -1], [1, 1]], [[1, -2], [2, 1]], [[1, 1], [1, -1]]],
                       [[1, -1], [2, 0], [0, 3]], f=1, parties=(0, 1),
                       input_bound=8)
    circuit = compile_to_circuit(model, GOLDILOCKS, BIG_PARAMS.w)
    feats = [3, -2]
    ref = infer_clear(model, feats)
    x, y = split_features(model, feats)
    p = GOLDILOCKS.modulus
    r0, r1 = run_protocol(circuit, BIG_PARAMS,
                          [v % p for v in x], [v % p for v in y],
                          client_seeds=(b"nn/c0", b"nn/c1"),
                          master_seeds=(b"nn/m0", b"nn/m1"))
    assert r0.abort_reason is None and r1.abort_reason is None
    assert r0.outputs == r1.outputs
    got = result_from_field(GOLDILOCKS, r0.outputs, ref.scale_exponent)
    assert got.logits == ref.logits
    assert got.predicted == ref.predicted


# ---------------------------------------------------------------------------
# schema and file formats


def test_model_json_roundtrip(tmp_path):
    rng = random.Random(3)
    model = random_model(rng)
    path = tmp_path / "model.json"
    save_model(model, str(path))
    loaded = load_model(str(path))
    assert model_to_dict(loaded) == model_to_dict(model)
    # saving the loaded model reproduces identical bytes
    path2 = tmp_path / "model2.json"
    save_model(loaded, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_model_validation_errors():
    with pytest.raises(ValueError, match="metadata missing 'float_acc'"):
        model_from_dict({"layers": [], "scale_f": 0, "feature_schema": [],
                         "metadata": {"quant_acc": 0.0}})
    good = model_to_dict(random_model(random.Random(1)))
    bad = json.loads(json.dumps(good))
    bad["layers"][0]["weights"] = bad["layers"][0]["weights"][:-1]
    with pytest.raises(ValueError, match="expected .* weights"):
        model_from_dict(bad)
    bad = json.loads(json.dumps(good))
    bad["feature_schema"][0]["party"] = 2
    with pytest.raises(ValueError, match="party must be 0 or 1"):
        model_from_dict(bad)
    bad = json.loads(json.dumps(good))
    bad["feature_schema"][1]["name"] = bad["feature_schema"][0]["name"]
    with pytest.raises(ValueError, match="duplicate feature names"):
        model_from_dict(bad)
    bad = json.loads(json.dumps(good))
    bad["layers"][0]["weights"][0] = 10 ** 6
    with pytest.raises(ValueError, match="8-bit range"):
        model_from_dict(bad)


def test_feature_csv_roundtrip_and_errors(tmp_path):
    model = random_model(random.Random(9))
    names0 = model.party_names(0)
    rows = [[0.5, -1.25, 2.0], [3.5, 0.0, -0.125]]
    assert len(names0) == 3
    path = tmp_path / "p0.csv"
    save_features(str(path), names0, rows)
    got = load_features(str(path), model, 0)
    assert got == [[quantize(v, model.scale_f) for v in row] for row in rows]

    save_features(str(tmp_path / "missing.csv"), names0[:-1],
                  [r[:-1] for r in rows])
    with pytest.raises(ValueError, match=f"missing feature column {names0[-1]!r}"):
        load_features(str(tmp_path / "missing.csv"), model, 0)

    save_features(str(tmp_path / "order.csv"), list(reversed(names0)), rows)
    with pytest.raises(ValueError, match="does not match party 0"):
        load_features(str(tmp_path / "order.csv"), model, 0)

    save_features(str(tmp_path / "big.csv"), names0, [[99.0, 0.0, 0.0]])
    with pytest.raises(ValueError, match="input bound"):
        load_features(str(tmp_path / "big.csv"), model, 0)


def test_labels_csv(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("label\n1\n0\n1\n")
    assert load_labels(str(path)) == [1, 0, 1]
    bad = tmp_path / "bad.csv"
    bad.write_text("lbl\n1\n")
    with pytest.raises(ValueError, match="single 'label' column"):
        load_labels(str(bad))


def test_split_merge_features_roundtrip():
    model = random_model(random.Random(2))
    feats = list(range(1, model.in_len + 1))
    x, y = split_features(model, feats)
    assert len(x) == len(model.party_positions(0))
    assert merge_features(model, x, y) == feats
