"""Quantized neural network inference: integer reference and circuit compiler.

The model is a fully connected network with square activations between
affine stages, evaluated exactly over integers.  Inputs and weights are
fixed-point values at scale 2^f; the bias of affine stage i is stored at
scale 2^{i*f} so that each stage adds scale-matched terms:

    stage 1:  z1 = W1*x  + b1 * 2^f        (scale 2f)   a1 = z1^2  (4f)
    stage 2:  z2 = W2*a1 + b2 * 2^{3f}     (scale 5f)   a2 = z2^2  (10f)
    stage 3:  y  = W3*a2 + b3 * 2^{8f}     (scale 11f)

No value is ever truncated or rescaled, so field evaluation agrees with
plain integer arithmetic as long as every intermediate stays below half
the modulus; `compile_to_circuit` refuses models whose worst-case bound
does not.  Keeping per-neuron weight L1 norms small is what makes the
two squarings affordable, so trainers should normalize layers (a
positive per-layer rescaling never changes the argmax).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

from .circuit import Layer, LayeredCircuit, Source, check_no_overflow
from .field import Field

INT63 = 1 << 63


def quantize(value: float, f: int) -> int:
    """Round value * 2^f to the nearest integer, halves away from zero.

    The half-away rule is locked down because model producers in other
    languages must emit bit-identical fixtures; bankers' rounding is the
    usual portability trap.
    """
    s = value * (1 << f)
    if s >= 0:
        return int(math.floor(s + 0.5))
    return -int(math.floor(-s + 0.5))


def dequantize(q: int, f: int) -> float:
    return q / (1 << f)


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    party: int

    def __post_init__(self):
        if self.party not in (0, 1):
            raise ValueError(f"feature {self.name!r}: party must be 0 or 1")
        if not self.name:
            raise ValueError("feature name must be nonempty")


@dataclass
class QuantLayer:
    weights: list[list[int]]
    bias: list[int]

    @property
    def rows(self) -> int:
        return len(self.weights)

    @property
    def cols(self) -> int:
        return len(self.weights[0])


@dataclass
class QuantModel:
    """Integer network plus the feature schema binding inputs to parties."""

    layers: list[QuantLayer]
    scale_f: int
    schema: list[FeatureColumn]
    metadata: dict

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("model needs at least one affine stage")
        if not self.schema:
            raise ValueError("model needs at least one feature")
        if self.scale_f < 0:
            raise ValueError("scale_f must be nonnegative")
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names in schema")
        if self.layers[0].cols != len(self.schema):
            raise ValueError(
                f"first stage expects {self.layers[0].cols} inputs, "
                f"schema has {len(self.schema)}")
        weight_limit = 1 << (self.weight_bits - 1)
        for i, layer in enumerate(self.layers, start=1):
            if not layer.weights or not layer.bias:
                raise ValueError(f"stage {i}: empty weights or bias")
            if any(len(row) != layer.cols for row in layer.weights):
                raise ValueError(f"stage {i}: ragged weight rows")
            if len(layer.bias) != layer.rows:
                raise ValueError(f"stage {i}: bias length != row count")
            if i > 1 and layer.cols != self.layers[i - 2].rows:
                raise ValueError(f"stage {i}: input width mismatch")
            for row in layer.weights:
                for v in row:
                    if not isinstance(v, int) or abs(v) > weight_limit:
                        raise ValueError(
                            f"stage {i}: weight {v} outside "
                            f"{self.weight_bits}-bit range")
            # biases sit at scale i*f, so their integer budget grows with i
            bias_limit = weight_limit << ((i - 1) * self.scale_f)
            for v in layer.bias:
                if not isinstance(v, int) or abs(v) > bias_limit:
                    raise ValueError(
                        f"stage {i}: bias {v} outside declared range")

    @property
    def weight_bits(self) -> int:
        return int(self.metadata.get("weight_bits", 8))

    @property
    def in_len(self) -> int:
        return len(self.schema)

    @property
    def out_len(self) -> int:
        return self.layers[-1].rows

    def input_bound(self) -> int:
        """Largest quantized feature magnitude the model is rated for."""
        if "input_bound" in self.metadata:
            return int(self.metadata["input_bound"])
        return 1 << (self.scale_f + 3)

    def party_positions(self, party: int) -> list[int]:
        return [j for j, c in enumerate(self.schema) if c.party == party]

    def party_names(self, party: int) -> list[str]:
        return [c.name for c in self.schema if c.party == party]


@dataclass
class InferenceResult:
    logits: list[int]
    predicted: int
    scale_exponent: int


def _argmax(logits: list[int]) -> int:
    best = 0
    for i in range(1, len(logits)):
        if logits[i] > logits[best]:
            best = i
    return best


def _check_range(values: list[int], where: str) -> None:
    for v in values:
        if not -INT63 <= v < INT63:
            raise OverflowError(
                f"{where}: magnitude {abs(v)} exceeds the 63-bit budget")


def _bias_shift(scale_f: int, stage: int, in_scale: int) -> int:
    # raises the stage-i bias (stored at i*f) to the z scale (in_scale + f)
    return in_scale + scale_f - stage * scale_f


def infer_clear(model: QuantModel, features: list[int]) -> InferenceResult:
    """Exact integer evaluation of the quantized network.

    `features` holds all quantized inputs in schema order.  Raises
    OverflowError the moment any intermediate leaves the 63-bit signed
    range, so results are trustworthy whenever a value comes back.
    """
    if len(features) != model.in_len:
        raise ValueError(
            f"expected {model.in_len} features, got {len(features)}")
    bound = model.input_bound()
    for j, v in enumerate(features):
        if abs(v) > bound:
            raise ValueError(
                f"feature {model.schema[j].name!r}: |{v}| exceeds the "
                f"declared input bound {bound}")
    f = model.scale_f
    values = [int(v) for v in features]
    scale = f
    for stage, layer in enumerate(model.layers, start=1):
        shift = _bias_shift(f, stage, scale)
        z = []
        for row, b in zip(layer.weights, layer.bias):
            acc = b << shift
            for wv, xv in zip(row, values):
                acc += wv * xv
            z.append(acc)
        _check_range(z, f"stage {stage} affine output")
        scale += f
        if stage < len(model.layers):
            values = [v * v for v in z]
            _check_range(values, f"stage {stage} activation")
            scale *= 2
        else:
            return InferenceResult(z, _argmax(z), scale)
    raise AssertionError("unreachable")


def result_from_field(field: Field, outputs: list[int],
                      scale_exponent: int) -> InferenceResult:
    logits = [field.centered(v) for v in outputs]
    return InferenceResult(logits, _argmax(logits), scale_exponent)


def logit_scale(model: QuantModel) -> int:
    scale = model.scale_f
    for stage in range(1, len(model.layers) + 1):
        scale += model.scale_f
        if stage < len(model.layers):
            scale *= 2
    return scale


# ---------------------------------------------------------------------------
# circuit compilation


class _CircuitBuilder:
    def __init__(self, width: int):
        self.width = width
        self.layers: list[Layer] = []

    def _chunk(self, slots: list[Source]) -> list[list[Source]]:
        w = self.width
        while len(slots) % w:
            slots.append(Source("zero"))
        return [slots[i:i + w] for i in range(0, len(slots), w)]

    def add_layer(self, op: str, left: list[Source],
                  right: list[Source]) -> list[Source]:
        """Append one layer; returns an out-reference per input slot."""
        if len(left) != len(right):
            raise AssertionError("operand slot streams must align")
        count = len(left)
        self.layers.append(Layer(op, self._chunk(list(left)),
                                 self._chunk(list(right))))
        idx = len(self.layers)
        return [Source("out", layer=idx, block=s // self.width,
                       slot=s % self.width) for s in range(count)]


def _pad_to_block(pairs: list, width: int) -> None:
    while len(pairs) % width:
        pairs.append((Source("zero"), Source("zero"), None))


def compile_to_circuit(model: QuantModel, field: Field, width: int,
                       input_bound: int | None = None) -> LayeredCircuit:
    """Lower the network to a layered block circuit over `field`.

    Party 0 supplies its schema columns as x inputs, party 1 its columns
    as y inputs, both in schema order.  Every affine stage becomes one
    multiplication layer (weight times value, zero weights pruned), an
    addition tree summing each neuron, and a bias addition; activations
    square the neuron values that the next stage actually uses.  Refuses
    to emit a circuit whose worst-case magnitude reaches half the
    modulus, since beyond that field values stop being integers.
    """
    if width < 1:
        raise ValueError("width must be positive")
    if input_bound is None:
        input_bound = model.input_bound()
    p = field.modulus
    f = model.scale_f
    builder = _CircuitBuilder(width)
    public: list[int] = []

    def pub_src(signed: int) -> Source:
        if 2 * abs(signed) >= p:
            raise ValueError(
                f"public constant magnitude {abs(signed)} reaches half "
                f"the modulus; lower scale_f")
        public.append(signed % p)
        return Source("pub", len(public) - 1)

    x_pos = model.party_positions(0)
    y_pos = model.party_positions(1)
    in_srcs: list[Source] = [None] * model.in_len  # type: ignore[list-item]
    for xi, j in enumerate(x_pos):
        in_srcs[j] = Source("x", xi)
    for yi, j in enumerate(y_pos):
        in_srcs[j] = Source("y", yi)

    wires: list[Source | None] = list(in_srcs)
    scale = f
    z_refs: list[Source | None] = []
    for stage, layer in enumerate(model.layers, start=1):
        # stage-1 operands come from two different owners, and owner
        # blocks cannot mix, so group feature columns by party
        if stage == 1:
            col_groups = [g for g in (x_pos, y_pos) if g]
        else:
            col_groups = [list(range(layer.cols))]
        triples: list[tuple[Source, Source, tuple[int, int] | None]] = []
        for group in col_groups:
            for i in range(layer.rows):
                for j in group:
                    wv = layer.weights[i][j]
                    if wv == 0 or wires[j] is None:
                        continue
                    triples.append((pub_src(wv), wires[j], (i, j)))
            _pad_to_block(triples, width)
        prod_ref: dict[tuple[int, int], Source] = {}
        if triples:
            refs = builder.add_layer("mul", [t[0] for t in triples],
                                     [t[1] for t in triples])
            for ref, (_, _, tag) in zip(refs, triples):
                if tag is not None:
                    prod_ref[tag] = ref
        sums: list[list[Source]] = [
            [prod_ref[(i, j)] for j in range(layer.cols)
             if (i, j) in prod_ref]
            for i in range(layer.rows)]

        while any(len(s) > 1 for s in sums):
            lefts, rights, owners = [], [], []
            for i, s in enumerate(sums):
                for a, b in zip(s[0::2], s[1::2]):
                    lefts.append(a)
                    rights.append(b)
                    owners.append(i)
            refs = builder.add_layer("add", lefts, rights)
            nxt: list[list[Source]] = [[] for _ in sums]
            for ref, i in zip(refs, owners):
                nxt[i].append(ref)
            for i, s in enumerate(sums):
                if len(s) % 2:
                    nxt[i].append(s[-1])
            sums = nxt

        shift = _bias_shift(f, stage, scale)
        lefts = [s[0] if s else Source("zero") for s in sums]
        rights = [pub_src(b << shift) if b else Source("zero")
                  for b in layer.bias]
        z_refs = list(builder.add_layer("add", lefts, rights))
        scale += f

        if stage < len(model.layers):
            nxt_w = model.layers[stage].weights
            needed = [j for j in range(layer.rows)
                      if any(row[j] for row in nxt_w)]
            wires = [None] * layer.rows
            if needed:
                srcs = [z_refs[j] for j in needed]
                refs = builder.add_layer("mul", list(srcs), list(srcs))
                for j, ref in zip(needed, refs):
                    wires[j] = ref
            scale *= 2

    out_blocks = list(range(builder.layers[-1].block_count))
    circuit = LayeredCircuit(field, width, builder.layers,
                             len(x_pos), len(y_pos), public,
                             out_blocks, output_count=model.out_len)
    worst = check_no_overflow(circuit, input_bound)
    if 2 * worst >= p:
        raise ValueError(
            f"worst-case magnitude {worst} reaches half the modulus "
            f"{p}; lower scale_f or tighten the input bound")
    return circuit


def split_features(model: QuantModel, features: list[int]) -> tuple[list[int], list[int]]:
    """Schema-ordered full vector -> (party 0 inputs, party 1 inputs)."""
    if len(features) != model.in_len:
        raise ValueError("feature vector length mismatch")
    return ([features[j] for j in model.party_positions(0)],
            [features[j] for j in model.party_positions(1)])


def merge_features(model: QuantModel, x: list[int], y: list[int]) -> list[int]:
    x_pos, y_pos = model.party_positions(0), model.party_positions(1)
    if len(x) != len(x_pos) or len(y) != len(y_pos):
        raise ValueError("per-party feature length mismatch")
    out = [0] * model.in_len
    for v, j in zip(x, x_pos):
        out[j] = v
    for v, j in zip(y, y_pos):
        out[j] = v
    return out


# ---------------------------------------------------------------------------
# model and feature files


def model_to_dict(model: QuantModel) -> dict:
    return {
        "layers": [
            {"rows": l.rows, "cols": l.cols,
             "weights": [v for row in l.weights for v in row],
             "bias": list(l.bias)}
            for l in model.layers],
        "scale_f": model.scale_f,
        "feature_schema": [{"name": c.name, "party": c.party}
                           for c in model.schema],
        "metadata": dict(model.metadata),
    }


def model_from_dict(obj: dict) -> QuantModel:
    try:
        raw_layers = obj["layers"]
        scale_f = int(obj["scale_f"])
        raw_schema = obj["feature_schema"]
        metadata = dict(obj["metadata"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"model file missing field: {exc}") from None
    for key in ("float_acc", "quant_acc"):
        if key not in metadata:
            raise ValueError(f"model metadata missing {key!r}")
    layers = []
    for i, entry in enumerate(raw_layers, start=1):
        rows, cols = int(entry["rows"]), int(entry["cols"])
        flat = [int(v) for v in entry["weights"]]
        if len(flat) != rows * cols:
            raise ValueError(
                f"stage {i}: expected {rows * cols} weights, got {len(flat)}")
        weights = [flat[r * cols:(r + 1) * cols] for r in range(rows)]
        layers.append(QuantLayer(weights, [int(v) for v in entry["bias"]]))
    schema = [FeatureColumn(str(c["name"]), int(c["party"]))
              for c in raw_schema]
    return QuantModel(layers, scale_f, schema, metadata)


def save_model(model: QuantModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> QuantModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_features(path: str, names: list[str], rows: list[list[float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            if len(row) != len(names):
                raise ValueError("feature row length != header length")
            writer.writerow([repr(float(v)) for v in row])


def load_features(path: str, model: QuantModel, party: int) -> list[list[int]]:
    """Read one party's feature CSV and quantize at the model scale.

    The header must name exactly this party's schema columns in schema
    order; anything else is a schema mismatch worth a loud error.
    """
    expected = model.party_names(party)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty feature file") from None
        missing = [n for n in expected if n not in header]
        if missing:
            raise ValueError(f"{path}: missing feature column {missing[0]!r}")
        if header != expected:
            raise ValueError(
                f"{path}: header {header} does not match party {party} "
                f"schema columns {expected}")
        bound = model.input_bound()
        rows = []
        for ln, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ValueError(f"{path}:{ln}: wrong column count")
            q = [quantize(float(v), model.scale_f) for v in row]
            for name, qv in zip(expected, q):
                if abs(qv) > bound:
                    raise ValueError(
                        f"{path}:{ln}: column {name!r} quantizes to {qv}, "
                        f"outside the model input bound {bound}")
            rows.append(q)
    return rows


def load_labels(path: str) -> list[int]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["label"]:
            raise ValueError(f"{path}: expected a single 'label' column")
        return [int(row[0]) for row in reader]
