"""Layered arithmetic circuits over fixed-width blocks.

A circuit is a sequence of layers; each layer applies one arithmetic
operation slotwise to aligned (left, right) block pairs.  Blocks have a
fixed width so the whole trace maps onto packed codewords one block per
row.  Wiring is a copy pattern: every input slot of a layer names a
single source, either a party input, a public constant, the constant
zero (padding), or an output slot of any earlier layer.  Replication is
allowed, fan-in is not.

The module also derives the linear wiring-consistency constraints used
by the permutation test, performs static magnitude analysis for integer
semantics inside the field, and defines a line-oriented text format.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field as dc_field

from .field import Field, field_by_name, field_name

OPS = ("add", "sub", "mul")

# trace rows per layer appear in this order
ROW_KINDS = ("left", "right", "out")


@dataclass(frozen=True)
class Source:
    """Where one block slot gets its value.

    kind "x"/"y": party-0 / party-1 input at position `index`.
    kind "pub":   public constant at position `index`.
    kind "zero":  constant zero (padding).
    kind "out":   output slot (layer, block, slot) of an earlier layer;
                  `layer` is 1-based.
    """

    kind: str
    index: int = 0
    layer: int = 0
    block: int = 0
    slot: int = 0

    def key(self):
        if self.kind in ("x", "y", "pub"):
            return (self.kind, self.index)
        if self.kind == "out":
            return ("out", self.layer, self.block, self.slot)
        return ("zero",)


@dataclass
class Layer:
    op: str
    left: list[list[Source]]
    right: list[list[Source]]

    @property
    def block_count(self) -> int:
        return len(self.left)


@dataclass
class LayeredCircuit:
    field: Field
    width: int
    layers: list[Layer]
    x_len: int
    y_len: int
    public: list[int]
    output_blocks: list[int]
    output_count: int | None = None

    def __post_init__(self):
        self.validate()

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def block_counts(self) -> list[int]:
        return [layer.block_count for layer in self.layers]

    def total_rows(self) -> int:
        return 3 * sum(self.block_counts)

    def row_index(self, layer: int, kind: str, block: int) -> int:
        """Position of a block in the canonical trace row order.

        Rows are grouped by layer (1-based), each layer contributing its
        left blocks, then right blocks, then output blocks.
        """
        base = 3 * sum(self.block_counts[: layer - 1])
        return base + ROW_KINDS.index(kind) * self.layers[layer - 1].block_count + block

    def col_index(self, layer: int, kind: str, block: int, slot: int) -> int:
        return self.row_index(layer, kind, block) * self.width + slot

    def validate(self) -> None:
        if self.width < 1:
            raise ValueError("block width must be positive")
        if not self.layers:
            raise ValueError("circuit needs at least one layer")
        if self.x_len < 0 or self.y_len < 0:
            raise ValueError("negative input count")
        p = self.field.modulus
        for v in self.public:
            if not 0 <= v < p:
                raise ValueError("public constant outside the field")
        for j, layer in enumerate(self.layers, start=1):
            if layer.op not in OPS:
                raise ValueError(f"layer {j}: unknown op {layer.op!r}")
            if layer.block_count < 1:
                raise ValueError(f"layer {j}: needs at least one block")
            if len(layer.right) != layer.block_count:
                raise ValueError(f"layer {j}: left/right block counts differ")
            for side in (layer.left, layer.right):
                for block in side:
                    if len(block) != self.width:
                        raise ValueError(f"layer {j}: block width mismatch")
                    for src in block:
                        self._check_source(src, j)
        last = self.layers[-1].block_count
        if not self.output_blocks:
            raise ValueError("no output blocks")
        for b in self.output_blocks:
            if not 0 <= b < last:
                raise ValueError("output block out of range")
        if self.output_count is not None:
            if not 0 < self.output_count <= len(self.output_blocks) * self.width:
                raise ValueError("output_count out of range")

    def _check_source(self, src: Source, layer: int) -> None:
        if src.kind == "x":
            if not 0 <= src.index < self.x_len:
                raise ValueError(f"x input {src.index} out of range")
        elif src.kind == "y":
            if not 0 <= src.index < self.y_len:
                raise ValueError(f"y input {src.index} out of range")
        elif src.kind == "pub":
            if not 0 <= src.index < len(self.public):
                raise ValueError(f"public constant {src.index} out of range")
        elif src.kind == "zero":
            pass
        elif src.kind == "out":
            if not 1 <= src.layer < layer:
                raise ValueError(f"layer {layer}: wiring must reference an earlier layer")
            ref = self.layers[src.layer - 1]
            if not 0 <= src.block < ref.block_count or not 0 <= src.slot < self.width:
                raise ValueError(f"layer {layer}: wiring reference out of range")
        else:
            raise ValueError(f"unknown source kind {src.kind!r}")


@dataclass
class PermConstraints:
    """Homogeneous linear constraints characterizing wiring consistency.

    Each row is a short list of (column, coefficient) pairs over the
    concatenated trace-slot vector; a trace is consistent with the
    circuit wiring iff every row sums to zero on it.  rhs is kept
    explicitly (always zero) to document the homogeneous convention.
    """

    ncols: int
    rows: list[list[tuple[int, int]]] = dc_field(default_factory=list)

    @property
    def rhs(self) -> list[int]:
        return [0] * len(self.rows)

    def apply(self, values: list[int], modulus: int) -> list[int]:
        return [sum(c * values[col] for col, c in row) % modulus for row in self.rows]

    def violated_rows(self, values: list[int], modulus: int) -> list[int]:
        return [i for i, v in enumerate(self.apply(values, modulus)) if v != 0]


def _resolve(circuit: LayeredCircuit, src: Source, x, y, trace) -> int:
    if src.kind == "x":
        return x[src.index]
    if src.kind == "y":
        return y[src.index]
    if src.kind == "pub":
        return circuit.public[src.index]
    if src.kind == "zero":
        return 0
    row = circuit.row_index(src.layer, "out", src.block)
    return trace[row][src.slot]


def eval_trace(circuit: LayeredCircuit, x: list[int], y: list[int]) -> list[list[int]]:
    """Evaluate every block row of the circuit in canonical row order."""
    if len(x) != circuit.x_len or len(y) != circuit.y_len:
        raise ValueError("input length mismatch")
    p = circuit.field.modulus
    x = [v % p for v in x]
    y = [v % p for v in y]
    trace: list[list[int]] = [None] * circuit.total_rows()  # type: ignore[list-item]
    for j, layer in enumerate(circuit.layers, start=1):
        for b in range(layer.block_count):
            lv = [_resolve(circuit, s, x, y, trace) for s in layer.left[b]]
            rv = [_resolve(circuit, s, x, y, trace) for s in layer.right[b]]
            if layer.op == "add":
                out = [(a + c) % p for a, c in zip(lv, rv)]
            elif layer.op == "sub":
                out = [(a - c) % p for a, c in zip(lv, rv)]
            else:
                out = [a * c % p for a, c in zip(lv, rv)]
            trace[circuit.row_index(j, "left", b)] = lv
            trace[circuit.row_index(j, "right", b)] = rv
            trace[circuit.row_index(j, "out", b)] = out
    return trace


def eval_plain(circuit: LayeredCircuit, x: list[int], y: list[int]) -> list[int]:
    """Reference evaluation: the revealed output slots of the last layer."""
    trace = eval_trace(circuit, x, y)
    out: list[int] = []
    for b in circuit.output_blocks:
        out.extend(trace[circuit.row_index(circuit.depth, "out", b)])
    if circuit.output_count is not None:
        out = out[: circuit.output_count]
    return out


def perm_constraints(circuit: LayeredCircuit) -> PermConstraints:
    """Wiring-consistency constraints over the concatenated trace slots.

    Copy edges to earlier outputs give rows dst - src = 0; padding slots
    give rows slot = 0; slots replicating the same party input or public
    constant are chained pairwise.  All rows are at most 2-sparse.
    """
    cons = PermConstraints(ncols=circuit.total_rows() * circuit.width)
    groups: dict[tuple, list[int]] = {}
    for j, layer in enumerate(circuit.layers, start=1):
        for kind, side in (("left", layer.left), ("right", layer.right)):
            for b, block in enumerate(side):
                for s, src in enumerate(block):
                    col = circuit.col_index(j, kind, b, s)
                    if src.kind == "zero":
                        cons.rows.append([(col, 1)])
                    elif src.kind == "out":
                        src_col = circuit.col_index(src.layer, "out", src.block, src.slot)
                        cons.rows.append([(col, 1), (src_col, -1)])
                    else:
                        groups.setdefault(src.key(), []).append(col)
    for cols in groups.values():
        for a, b in zip(cols, cols[1:]):
            cons.rows.append([(a, 1), (b, -1)])
    return cons


def trace_slots(circuit: LayeredCircuit, trace: list[list[int]]) -> list[int]:
    flat: list[int] = []
    for row in trace:
        flat.extend(row)
    return flat


def check_no_overflow(circuit: LayeredCircuit, input_bound: int) -> int:
    """Worst-case integer magnitude over every slot of the circuit.

    Runs interval analysis with party inputs treated as signed integers
    of magnitude <= input_bound and public constants at their centered
    values.  The caller compares the result against (p - 1) / 2; below
    that threshold field arithmetic coincides with integer arithmetic.
    """
    if input_bound < 0:
        raise ValueError("input bound must be nonnegative")
    f = circuit.field
    pub_bounds = [abs(f.centered(v)) for v in circuit.public]
    worst = max([input_bound] + pub_bounds) if (circuit.x_len or circuit.y_len or circuit.public) else 0
    bounds: list[list[int]] = [None] * circuit.total_rows()  # type: ignore[list-item]

    def src_bound(src: Source) -> int:
        if src.kind in ("x", "y"):
            return input_bound
        if src.kind == "pub":
            return pub_bounds[src.index]
        if src.kind == "zero":
            return 0
        return bounds[circuit.row_index(src.layer, "out", src.block)][src.slot]

    for j, layer in enumerate(circuit.layers, start=1):
        for b in range(layer.block_count):
            lb = [src_bound(s) for s in layer.left[b]]
            rb = [src_bound(s) for s in layer.right[b]]
            if layer.op == "mul":
                ob = [a * c for a, c in zip(lb, rb)]
            else:
                ob = [a + c for a, c in zip(lb, rb)]
            bounds[circuit.row_index(j, "left", b)] = lb
            bounds[circuit.row_index(j, "right", b)] = rb
            bounds[circuit.row_index(j, "out", b)] = ob
            worst = max(worst, max(ob))
    return worst


# ---------------------------------------------------------------------------
# random circuits for testing


def random_circuit(
    rng: random.Random,
    field: Field,
    width: int,
    depth: int,
    max_blocks: int,
    x_len: int | None = None,
    y_len: int | None = None,
    protocol_compatible: bool = False,
) -> LayeredCircuit:
    """Seeded well-formed circuit with replication, padding, skip wiring.

    With protocol_compatible set, every layer-1 block draws all its
    non-zero slots from a single owner (x, y, or the public constants)
    and deeper layers consume only earlier outputs and padding, which
    is the shape the share-based protocol can execute.
    """
    if x_len is None:
        x_len = rng.randint(1, 2 * width)
    if y_len is None:
        y_len = rng.randint(1, 2 * width)
    n_pub = rng.randint(0, 3)
    public = [rng.randrange(field.modulus) for _ in range(n_pub)]

    def input_source() -> Source:
        r = rng.random()
        if r < 0.45:
            return Source("x", rng.randrange(x_len))
        if r < 0.9:
            return Source("y", rng.randrange(y_len))
        if public and r < 0.97:
            return Source("pub", rng.randrange(n_pub))
        return Source("zero")

    def owned_block() -> list[Source]:
        owner = rng.choice(["x", "y", "pub"] if public else ["x", "y"])
        counts = {"x": x_len, "y": y_len, "pub": n_pub}[owner]
        return [Source("zero") if rng.random() < 0.1
                else Source(owner, rng.randrange(counts))
                for _ in range(width)]

    layers: list[Layer] = []
    for j in range(1, depth + 1):
        op = rng.choice(OPS)
        m = rng.randint(1, max_blocks)

        def source() -> Source:
            if j > 1 and rng.random() < (0.92 if protocol_compatible else 0.85):
                ref = rng.randint(1, j - 1)
                blk = rng.randrange(layers[ref - 1].block_count)
                return Source("out", layer=ref, block=blk, slot=rng.randrange(width))
            if j > 1 and protocol_compatible:
                return Source("zero")
            return input_source()

        if j == 1 and protocol_compatible:
            left = [owned_block() for _ in range(m)]
            right = [owned_block() for _ in range(m)]
        else:
            left = [[source() for _ in range(width)] for _ in range(m)]
            right = [[source() for _ in range(width)] for _ in range(m)]
        layers.append(Layer(op, left, right))

    out_blocks = sorted(rng.sample(range(layers[-1].block_count),
                                   rng.randint(1, layers[-1].block_count)))
    return LayeredCircuit(field, width, layers, x_len, y_len, public, out_blocks)


# ---------------------------------------------------------------------------
# text format

_FORMAT_HEADER = "packedmpc-circuit v1"


def _source_to_text(src: Source) -> str:
    if src.kind in ("x", "y", "pub"):
        return f"{src.kind}:{src.index}"
    if src.kind == "zero":
        return "zero"
    return f"out:{src.layer}:{src.block}:{src.slot}"


def _source_from_text(text: str) -> Source:
    parts = text.split(":")
    if parts[0] in ("x", "y", "pub") and len(parts) == 2:
        return Source(parts[0], int(parts[1]))
    if parts[0] == "zero" and len(parts) == 1:
        return Source("zero")
    if parts[0] == "out" and len(parts) == 4:
        return Source("out", layer=int(parts[1]), block=int(parts[2]), slot=int(parts[3]))
    raise ValueError(f"bad source {text!r}")


def to_text(circuit: LayeredCircuit) -> str:
    lines = [_FORMAT_HEADER]
    lines.append(f"field {field_name(circuit.field)}")
    lines.append(f"width {circuit.width}")
    lines.append(f"inputs x {circuit.x_len}")
    lines.append(f"inputs y {circuit.y_len}")
    for i, v in enumerate(circuit.public):
        lines.append(f"pub {i} {v}")
    for j, layer in enumerate(circuit.layers, start=1):
        lines.append(f"layer {j} {layer.op} {layer.block_count}")
        for kind, side in (("left", layer.left), ("right", layer.right)):
            for b, block in enumerate(side):
                srcs = " ".join(_source_to_text(s) for s in block)
                lines.append(f"wire {j} {kind} {b} {srcs}")
    lines.append("outputs " + " ".join(str(b) for b in circuit.output_blocks))
    if circuit.output_count is not None:
        lines.append(f"output_count {circuit.output_count}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> LayeredCircuit:
    lines = [ln for ln in (raw.strip() for raw in text.splitlines())
             if ln and not ln.startswith("#")]
    if not lines or lines[0] != _FORMAT_HEADER:
        raise ValueError("not a circuit file")
    field: Field | None = None
    width = 0
    x_len = y_len = 0
    public: dict[int, int] = {}
    layer_meta: dict[int, str] = {}
    wires: dict[tuple[int, str, int], list[Source]] = {}
    output_blocks: list[int] = []
    output_count: int | None = None
    for ln in lines[1:]:
        parts = ln.split()
        tag = parts[0]
        if tag == "field":
            field = field_by_name(parts[1])
        elif tag == "width":
            width = int(parts[1])
        elif tag == "inputs":
            if parts[1] == "x":
                x_len = int(parts[2])
            elif parts[1] == "y":
                y_len = int(parts[2])
            else:
                raise ValueError(f"bad inputs line {ln!r}")
        elif tag == "pub":
            public[int(parts[1])] = int(parts[2])
        elif tag == "layer":
            layer_meta[int(parts[1])] = parts[2]
        elif tag == "wire":
            j, kind, b = int(parts[1]), parts[2], int(parts[3])
            if kind not in ("left", "right"):
                raise ValueError(f"bad wire side {kind!r}")
            wires[(j, kind, b)] = [_source_from_text(t) for t in parts[4:]]
        elif tag == "outputs":
            output_blocks = [int(t) for t in parts[1:]]
        elif tag == "output_count":
            output_count = int(parts[1])
        else:
            raise ValueError(f"unknown line {ln!r}")
    if field is None:
        raise ValueError("missing field line")
    depth = max(layer_meta) if layer_meta else 0
    if sorted(layer_meta) != list(range(1, depth + 1)):
        raise ValueError("missing layer lines")
    layers = []
    for j in range(1, depth + 1):
        op = layer_meta[j]
        blocks = sorted(b for (jj, kind, b) in wires if jj == j and kind == "left")
        m = len(blocks)
        if blocks != list(range(m)):
            raise ValueError(f"layer {j}: missing wire lines")
        left = [wires[(j, "left", b)] for b in range(m)]
        right = [wires[(j, "right", b)] for b in range(m)]
        layers.append(Layer(op, left, right))
    pub_list = [public[i] for i in range(len(public))] if public else []
    if sorted(public) != list(range(len(public))):
        raise ValueError("public constant indices must be dense")
    return LayeredCircuit(field, width, layers, x_len, y_len, pub_list,
                          output_blocks, output_count)
