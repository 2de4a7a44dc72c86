"""Honest-majority outer protocol over packed codewords.

Two clients share their inputs toward n emulated servers, the servers
evaluate a layered circuit share-wise (linear layers locally,
multiplication via client-assisted degree reduction, wiring via the
same masked-linear-map mechanism), and three statistical correctness
tests — degree, permutation, equality — check the whole trace before
outputs are revealed.  The module runs standalone as a deterministic
in-process simulation of 2 clients + n servers; the two-party runner
reuses its label scheme and test functions so that share sums match
the standalone trace exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction

import numpy as np

from .circuit import LayeredCircuit, PermConstraints, Source, perm_constraints
from .crypto import Tape
from .field import Field, interpolate, poly_eval
from .rscode import CodeSpec

_CODE_CACHE: dict[tuple[int, int, int, int], CodeSpec] = {}


def code_spec(field: Field, n: int, k: int, w: int) -> CodeSpec:
    key = (field.modulus, n, k, w)
    if key not in _CODE_CACHE:
        _CODE_CACHE[key] = CodeSpec(field, n, k, w)
    return _CODE_CACHE[key]


@dataclass(frozen=True)
class ProtocolParams:
    """Sizes governing one protocol instance.

    n servers, blocks of w secrets, privacy threshold t, error budget e,
    code degree bound k, test repetitions sigma, computational and
    statistical security targets in bits.
    """

    field: Field
    n: int
    w: int
    t: int
    e: int
    k: int
    sigma: int = 1
    kappa_bits: int = 128
    stat_bits: int = 40

    def __post_init__(self):
        if self.k & (self.k - 1) or self.k <= 0:
            raise ValueError("k must be a power of two")
        if not self.k > self.t + self.e + self.w:
            raise ValueError("need k > t + e + w")
        if not self.e < (self.n - self.k) / 3:
            raise ValueError("need e < (n - k) / 3")
        if self.n < 2 * self.k + self.w - 1:
            # degree reduction needs n >= 2k; the equality test combines
            # degree-(2k-1) differences with degree-(w-1) coefficient
            # polynomials, and those combinations alias on fewer points
            raise ValueError("need n >= 2k + w - 1")
        if self.t < 1 or self.w < 1 or self.e < 0 or self.sigma < 1:
            raise ValueError("t >= 1, w >= 1, e >= 0, sigma >= 1 required")
        # CodeSpec re-validates n, the field and the evaluation grids
        code_spec(self.field, self.n, self.k, self.w)

    @property
    def code(self) -> CodeSpec:
        return code_spec(self.field, self.n, self.k, self.w)


def soundness_fraction(field_size: int, n: int, w: int, t: int, e: int,
                       sigma: int, combined: bool = False) -> Fraction:
    """Raw statistical failure bound, exact rational arithmetic.

    Standalone: (e+2) / |F|^sigma.  The combined two-party protocol
    adds the watchlist terms (1 - e/n)^t + ((3e + 2w + 2t) / n)^t.
    """
    base = Fraction(e + 2, field_size ** sigma)
    if not combined:
        return base
    miss = (1 - Fraction(e, n)) ** t
    cheat = Fraction(3 * e + 2 * w + 2 * t, n) ** t
    return base + miss + cheat


def soundness_bound(params: ProtocolParams, combined: bool = False) -> Fraction:
    return soundness_fraction(params.field.modulus, params.n, params.w,
                              params.t, params.e, params.sigma, combined)


# ---------------------------------------------------------------------------
# tape labels (shared verbatim by the two-party runner)


def label_input_aux(row: int) -> str:
    return f"in/{row}"


def label_gather_blind(row: int) -> str:
    return f"gz/{row}"


def label_reduce_blind(row: int) -> str:
    return f"rz/{row}"


def label_test_blind(test: str, rep: int) -> str:
    return f"tz/{test}/{rep}"


def label_coin(test: str, rep: int) -> str:
    return f"coin/{test}/{rep}"


# ---------------------------------------------------------------------------
# share-level layer operations


def share_inputs(blocks: list[list[int]], params: ProtocolParams, tape: Tape,
                 label_prefix: str = "inp") -> list[list[int]]:
    """Encode blocks and return per-server share vectors.

    Row i of the return value is the codeword for block i; server c
    holds coordinate c of every row.
    """
    spec = params.code
    rows = []
    for i, block in enumerate(blocks):
        aux = tape.elements(f"{label_prefix}/{i}", params.field, spec.k - spec.w)
        rows.append(spec.encode(block, aux))
    return rows


def eval_layer_linear(field: Field, left: list[int], right: list[int], op: str) -> list[int]:
    if op == "add":
        return field.vec_add(left, right)
    if op == "sub":
        return field.vec_sub(left, right)
    raise ValueError(f"not a linear op: {op!r}")


def eval_layer_mul(field: Field, left: list[int], right: list[int]) -> list[int]:
    return field.vec_mul(left, right)


def zero_block_codeword(spec: CodeSpec, tape: Tape, label: str) -> list[int]:
    """Random codeword encoding the all-zeros block."""
    aux = tape.elements(label, spec.field, spec.k - spec.w)
    return spec.encode([0] * spec.w, aux)


def reduce_map(spec: CodeSpec, vec: list[int]) -> list[int]:
    """The public linear map taking product codewords back to base ones."""
    return spec.degree_reduce(vec)


def degree_reduce(spec: CodeSpec, row: list[int], z0: list[int], z1: list[int]) -> list[int]:
    """Client-assisted reduction: apply the linear map, add both blinders.

    The additive server-side split cancels inside the linear map, so the
    standalone result depends only on the row and the blinders.
    """
    out = reduce_map(spec, row)
    return spec.field.vec_add(spec.field.vec_add(out, z0), z1)


def gather_values(spec: CodeSpec, slot_sources: list, row_lookup) -> list[int]:
    """Message-position values for a rearranged block.

    slot_sources holds one circuit Source per slot, restricted to
    earlier-output references and zeros; row_lookup maps a trace row
    index to its share vector.  Linear in the looked-up rows, so it can
    be applied to additive shares coordinate-wise.
    """
    cache: dict[int, list[int]] = {}
    values = []
    for src in slot_sources:
        if src.kind == "zero":
            values.append(0)
            continue
        row_idx = src.row_index
        if row_idx not in cache:
            coeffs = spec.truncated_coeffs(row_lookup(row_idx), spec.k)
            cache[row_idx] = [poly_eval(coeffs, z, spec.field) for z in spec.zeta]
        values.append(cache[row_idx][src.slot])
    return values


def rearrange(spec: CodeSpec, slot_sources: list, row_lookup,
              z0: list[int], z1: list[int]) -> list[int]:
    """Masked linear gather forming one next-layer input row."""
    base = spec.encode_canonical(gather_values(spec, slot_sources, row_lookup))
    return spec.field.vec_add(spec.field.vec_add(base, z0), z1)


# ---------------------------------------------------------------------------
# correctness tests (scalar reference implementations)


@dataclass
class TestBundle:
    """Matrices and coins for one repetition of the three tests.

    Row order within each matrix is the two blinding rows (one per
    client), then the tested blocks in canonical trace order.
    """

    degree_rows: list[list[int]]
    degree_coin: list[int]
    perm_rows: list[list[int]]
    perm_coin: list[int]
    eq_u_rows: list[list[int]]
    eq_v_rows: list[list[int]]
    eq_coin: list[int]


def degree_combine(spec: CodeSpec, rows: list[list[int]], coin: list[int]) -> list[int]:
    """Coin-weighted column sums; linear, so it applies to additive shares."""
    if len(coin) != len(rows):
        raise ValueError("coin width must match row count")
    p = spec.field.modulus
    return [sum(r * rows[i][c] for i, r in enumerate(coin)) % p for c in range(spec.n)]


def check_degree_broadcast(spec: CodeSpec, broadcast: list[int]):
    ok = spec.is_codeword(broadcast, spec.k)
    return ok, ("" if ok else "degree")


def degree_test(spec: CodeSpec, rows: list[list[int]], coin: list[int]):
    """Random linear combination of all rows must stay in the base code."""
    # each server combines its own column; broadcasts are simultaneous
    broadcast = degree_combine(spec, rows, coin)
    ok, reason = check_degree_broadcast(spec, broadcast)
    return ok, reason, broadcast


def _coefficient_polys(spec: CodeSpec, coeffs: list[int], m: int) -> list[list[int]]:
    w = spec.w
    polys = []
    for i in range(m):
        vals = coeffs[i * w:(i + 1) * w]
        polys.append(interpolate(list(spec.zeta), vals, spec.field))
    return polys


def perm_weights(spec: CodeSpec, constraint_rows: list[list[tuple[int, int]]],
                 coin: list[int], m: int) -> list[list[int]]:
    """Per-column, per-row combination weights r_i(eta_c) for m rows."""
    if len(coin) != m * spec.w:
        raise ValueError("coin width must be m * w")
    if len(constraint_rows) > m * spec.w:
        raise ValueError("more constraints than matrix rows")
    p = spec.field.modulus
    coeffs = [0] * (m * spec.w)
    for r_j, sparse in zip(coin, constraint_rows):
        for col, c in sparse:
            coeffs[col] = (coeffs[col] + r_j * c) % p
    polys = _coefficient_polys(spec, coeffs, m)
    return [[poly_eval(polys[i], x, spec.field) for i in range(m)] for x in spec.eta]


def weighted_combine(spec: CodeSpec, weights: list[list[int]],
                     rows: list[list[int]]) -> list[int]:
    p = spec.field.modulus
    return [sum(weights[c][i] * rows[i][c] for i in range(len(rows))) % p
            for c in range(spec.n)]


def check_perm_broadcast(spec: CodeSpec, broadcast: list[int]):
    if not spec.is_codeword(broadcast, spec.k + spec.w):
        return False, "degree"
    if sum(spec.decode(broadcast, spec.k + spec.w)) % spec.field.modulus != 0:
        return False, "sum"
    return True, ""


def permutation_test(spec: CodeSpec, rows: list[list[int]],
                     constraint_rows: list[list[tuple[int, int]]], coin: list[int]):
    """Wiring check: r^T A weights per slot, low-degree and zero-sum.

    constraint_rows are sparse rows over the concatenated decoded slots
    of `rows` (blinding blocks first).  The coin has one element per
    slot; entries beyond the constraint count pad the square matrix and
    are unused.
    """
    weights = perm_weights(spec, constraint_rows, coin, len(rows))
    broadcast = weighted_combine(spec, weights, rows)
    ok, reason = check_perm_broadcast(spec, broadcast)
    return ok, reason, broadcast


def equality_bound(spec: CodeSpec) -> int:
    """Degree bound for the equality-test broadcast.

    Honest broadcasts have degree <= 2k + w - 2; with only n evaluation
    points nothing above degree n - 1 is observable, so the bound clamps
    at n (at n = 2k the degree check is vacuous and the zero-value check
    alone carries the test).
    """
    return min(2 * spec.k + spec.w - 1, spec.n)


def eq_weights(spec: CodeSpec, coin: list[int], m: int) -> list[list[int]]:
    """Per-column evaluation weights of the coin's degree-<w polynomials."""
    if len(coin) != m * spec.w:
        raise ValueError("coin width must be m * w")
    polys = _coefficient_polys(spec, coin, m)
    return [[poly_eval(polys[i], x, spec.field) for i in range(m)] for x in spec.eta]


def check_eq_broadcast(spec: CodeSpec, broadcast: list[int]):
    bound = equality_bound(spec)
    if not spec.is_codeword(broadcast, bound):
        return False, "degree"
    if any(v != 0 for v in spec.decode(broadcast, bound)):
        return False, "nonzero"
    return True, ""


def equality_test(spec: CodeSpec, u_rows: list[list[int]], v_rows: list[list[int]],
                  coin: list[int]):
    """Pre- vs post-reduction rows must encode identical blocks."""
    m = len(u_rows)
    if len(v_rows) != m:
        raise ValueError("U and V row counts differ")
    p = spec.field.modulus
    weights = eq_weights(spec, coin, m)
    diff = [[(u_rows[i][c] - v_rows[i][c]) % p for c in range(spec.n)]
            for i in range(m)]
    broadcast = weighted_combine(spec, weights, diff)
    ok, reason = check_eq_broadcast(spec, broadcast)
    return ok, reason, broadcast


# ---------------------------------------------------------------------------
# vectorized test variants (Monte Carlo harness; toy-scale fields only)


def _check_int64_safe(spec: CodeSpec, rows: int):
    if spec.field.modulus ** 2 * max(rows, spec.n) >= (1 << 62):
        raise ValueError("field too large for int64 batch arithmetic")


def _ifft_matrix(spec: CodeSpec) -> np.ndarray:
    cols = []
    for c in range(spec.n):
        unit = [0] * spec.n
        unit[c] = 1
        cols.append(spec.coeffs_of(unit))
    return np.array(cols, dtype=np.int64).T  # coeffs = M @ shares


def _zeta_eval_matrix(spec: CodeSpec, bound: int) -> np.ndarray:
    p = spec.field.modulus
    van = np.zeros((spec.w, bound), dtype=np.int64)
    for i, z in enumerate(spec.zeta):
        acc = 1
        for j in range(bound):
            van[i, j] = acc
            acc = acc * z % p
    return van @ _ifft_matrix(spec)[:bound] % p  # zeta values = M @ shares


def degree_test_batch(spec: CodeSpec, rows: np.ndarray, coins: np.ndarray) -> np.ndarray:
    """Accept mask over many coin draws; rows is m x n, coins is T x m."""
    _check_int64_safe(spec, rows.shape[0])
    p = spec.field.modulus
    combos = coins % p @ (rows % p) % p
    coeffs = combos @ _ifft_matrix(spec).T % p
    return ~(coeffs[:, spec.k:] != 0).any(axis=1)


def _poly_weight_tensor(spec: CodeSpec, coeff_slots: np.ndarray, m: int) -> np.ndarray:
    """Per-row evaluation weights r_i(eta_c): T x m x n."""
    p = spec.field.modulus
    w = spec.w
    # interpolation at the zeta points is linear: poly = P @ values
    interp = np.zeros((w, w), dtype=np.int64)
    for j in range(w):
        unit = [0] * w
        unit[j] = 1
        col = interpolate(list(spec.zeta), unit, spec.field)
        col = col + [0] * (w - len(col))
        interp[:, j] = col
    eta_pow = np.zeros((spec.n, w), dtype=np.int64)
    for c, x in enumerate(spec.eta):
        acc = 1
        for j in range(w):
            eta_pow[c, j] = acc
            acc = acc * x % p
    eval_map = eta_pow @ interp % p  # n x w: weights = values @ eval_map.T
    vals = coeff_slots.reshape(coeff_slots.shape[0], m, w)
    return vals @ eval_map.T % p


def permutation_test_batch(spec: CodeSpec, rows: np.ndarray,
                           constraint_rows: list[list[tuple[int, int]]],
                           coins: np.ndarray) -> np.ndarray:
    m = rows.shape[0]
    _check_int64_safe(spec, m)
    p = spec.field.modulus
    t_count = coins.shape[0]
    coeffs = np.zeros((t_count, m * spec.w), dtype=np.int64)
    for j, sparse in enumerate(constraint_rows):
        for col, c in sparse:
            coeffs[:, col] = (coeffs[:, col] + coins[:, j] * c) % p
    weights = _poly_weight_tensor(spec, coeffs, m)  # T x m x n
    combos = np.einsum("tmn,mn->tn", weights, rows % p) % p
    cw = combos @ _ifft_matrix(spec).T % p
    ok_deg = ~(cw[:, spec.k + spec.w:] != 0).any(axis=1)
    zeta_vals = combos @ _zeta_eval_matrix(spec, spec.k + spec.w).T % p
    ok_sum = zeta_vals.sum(axis=1) % p == 0
    return ok_deg & ok_sum


def equality_test_batch(spec: CodeSpec, u_rows: np.ndarray, v_rows: np.ndarray,
                        coins: np.ndarray) -> np.ndarray:
    m = u_rows.shape[0]
    _check_int64_safe(spec, m)
    p = spec.field.modulus
    weights = _poly_weight_tensor(spec, coins % p, m)
    diff = (u_rows - v_rows) % p
    combos = np.einsum("tmn,mn->tn", weights, diff) % p
    bound = equality_bound(spec)
    cw = combos @ _ifft_matrix(spec).T % p
    ok_deg = ~(cw[:, bound:] != 0).any(axis=1)
    zeta_vals = combos @ _zeta_eval_matrix(spec, bound).T % p
    ok_zero = ~(zeta_vals != 0).any(axis=1)
    return ok_deg & ok_zero


# ---------------------------------------------------------------------------
# standalone simulation


@dataclass(frozen=True)
class AbortInfo:
    test: str
    repetition: int
    reason: str


@dataclass
class ServerView:
    index: int
    shares: dict[int, int] = dc_field(default_factory=dict)
    client_messages: list[tuple[str, int]] = dc_field(default_factory=list)
    broadcasts: list[tuple[str, int, int]] = dc_field(default_factory=list)


@dataclass
class RunResult:
    outputs: list[int] | None
    abort: AbortInfo | None
    rows: list[list[int]]
    pre_reduction: dict[int, list[int]]

    @property
    def aborted(self) -> bool:
        return self.abort is not None


class Adversary:
    """Hook points for active deviations in the standalone simulation."""

    def on_row(self, sim: "OuterSimulation", row_index: int, vec: list[int]) -> list[int]:
        return vec

    def on_pre_reduction(self, sim: "OuterSimulation", row_index: int,
                         vec: list[int]) -> list[int]:
        return vec

    def on_broadcast(self, sim: "OuterSimulation", test: str, rep: int,
                     broadcast: list[int]) -> list[int]:
        return broadcast


def is_gather_block(block: list[Source], layer_index: int) -> bool:
    """True when a block's row is built by the masked gather, not encoded.

    Raw single-owner blocks are encoded fresh by their owner at any
    depth; blocks of earlier-output references get gathered.  Zero-only
    blocks follow the layer: encoded at layer 1, gathered deeper (the
    gathered form carries blinders, which deeper rows need).
    """
    kinds = {s.kind for s in block if s.kind != "zero"}
    if not kinds:
        return layer_index > 1
    return kinds == {"out"}


def check_protocol_compatible(circuit: LayeredCircuit, params: ProtocolParams) -> None:
    """Reject circuits the client/server protocol cannot share.

    Every operand block must be single-owner raw (all non-zero sources
    from one of x, y or the public constants, so one client can encode
    it) or consist purely of earlier-output references.
    """
    if circuit.width != params.w:
        raise ValueError("circuit width != params.w")
    if circuit.field != params.field:
        raise ValueError("circuit field != params field")
    for j, layer in enumerate(circuit.layers, start=1):
        for side in (layer.left, layer.right):
            for b, block in enumerate(side):
                kinds = {s.kind for s in block if s.kind != "zero"}
                if len(kinds) > 1:
                    raise ValueError(
                        f"layer {j} block {b} mixes source kinds {sorted(kinds)}")


def block_owner(block: list[Source]) -> str:
    kinds = {s.kind for s in block if s.kind != "zero"}
    if not kinds:
        return "pub"
    (kind,) = kinds
    return kind


def build_test_constraints(circuit: LayeredCircuit) -> PermConstraints:
    """Wiring constraints shifted to the test layout.

    Test slot order: z0 block, z1 block, then all trace slots.  The two
    blinding blocks each get a sum-to-zero row.
    """
    base = perm_constraints(circuit)
    w = circuit.width
    shift = 2 * w
    cons = PermConstraints(ncols=base.ncols + shift)
    cons.rows.append([(s, 1) for s in range(w)])
    cons.rows.append([(w + s, 1) for s in range(w)])
    for row in base.rows:
        cons.rows.append([(col + shift, c) for col, c in row])
    return cons


class OuterSimulation:
    """Deterministic 2-client + n-server simulation of one run."""

    def __init__(self, circuit: LayeredCircuit, params: ProtocolParams,
                 client_seeds: tuple[bytes, bytes], coin_seed: bytes = b"coin",
                 server_seed: bytes = b"server", adversary: Adversary | None = None,
                 coin_source=None):
        check_protocol_compatible(circuit, params)
        self.circuit = circuit
        self.params = params
        self.spec = params.code
        self.tapes = (Tape(client_seeds[0]), Tape(client_seeds[1]))
        self.coin_tape = Tape(coin_seed)
        self.server_tape = Tape(server_seed)
        self.adversary = adversary or Adversary()
        # coin_source overrides the local tape; the two-party runner
        # passes the commit-open toss result here so traces align
        self.coin_source = coin_source
        self.rows: list[list[int]] = [None] * circuit.total_rows()  # type: ignore
        self.pre_reduction: dict[int, list[int]] = {}
        self.server_views = [ServerView(c) for c in range(params.n)]
        self.constraints = build_test_constraints(circuit)

    def _coins(self, test: str, rep: int, count: int) -> list[int]:
        if self.coin_source is not None:
            return self.coin_source(test, rep, count)
        return self.coin_tape.elements(label_coin(test, rep), self.params.field, count)

    # -- helpers

    def _client_zero_blinders(self, label: str) -> tuple[list[int], list[int]]:
        return (zero_block_codeword(self.spec, self.tapes[0], label),
                zero_block_codeword(self.spec, self.tapes[1], label))

    def _store(self, row_index: int, vec: list[int], kind: str) -> None:
        vec = self.adversary.on_row(self, row_index, vec)
        self.rows[row_index] = vec
        for c, view in enumerate(self.server_views):
            view.shares[row_index] = vec[c]
            view.client_messages.append((kind, row_index))

    def _encode_input_row(self, block: list[Source], row_index: int,
                          x: list[int], y: list[int]) -> list[int]:
        owner = block_owner(block)
        values = []
        for s in block:
            if s.kind == "x":
                values.append(x[s.index] % self.params.field.modulus)
            elif s.kind == "y":
                values.append(y[s.index] % self.params.field.modulus)
            elif s.kind == "pub":
                values.append(self.circuit.public[s.index])
            else:
                values.append(0)
        if owner == "pub":
            return self.spec.encode_canonical(values)
        tape = self.tapes[0] if owner == "x" else self.tapes[1]
        aux = tape.elements(label_input_aux(row_index), self.params.field,
                            self.spec.k - self.spec.w)
        return self.spec.encode(values, aux)

    def _wire_sources(self, block: list[Source]) -> list:
        resolved = []
        for s in block:
            if s.kind == "out":
                r = self.circuit.row_index(s.layer, "out", s.block)
                resolved.append(_WireRef(r, s.slot))
            else:
                resolved.append(_WireRef(-1, 0, zero=True))
        return resolved

    # -- protocol phases

    def _run_layers(self, x: list[int], y: list[int]) -> None:
        circuit, spec, field = self.circuit, self.spec, self.params.field
        for j, layer in enumerate(circuit.layers, start=1):
            for kind, side in (("left", layer.left), ("right", layer.right)):
                for b, block in enumerate(side):
                    r = circuit.row_index(j, kind, b)
                    if is_gather_block(block, j):
                        z0, z1 = self._client_zero_blinders(label_gather_blind(r))
                        vec = rearrange(spec, self._wire_sources(block),
                                        lambda idx: self.rows[idx], z0, z1)
                    else:
                        vec = self._encode_input_row(block, r, x, y)
                    self._store(r, vec, f"input:{kind}")
            for b in range(layer.block_count):
                r = circuit.row_index(j, "out", b)
                left = self.rows[circuit.row_index(j, "left", b)]
                right = self.rows[circuit.row_index(j, "right", b)]
                if layer.op in ("add", "sub"):
                    vec = eval_layer_linear(field, left, right, layer.op)
                    self._store(r, vec, "out:linear")
                else:
                    pre = eval_layer_mul(field, left, right)
                    pre = self.adversary.on_pre_reduction(self, r, pre)
                    self.pre_reduction[r] = pre
                    self._log_reduction_split(r)
                    z0, z1 = self._client_zero_blinders(label_reduce_blind(r))
                    vec = degree_reduce(spec, pre, z0, z1)
                    self._store(r, vec, "out:reduced")

    def _log_reduction_split(self, row_index: int) -> None:
        # servers split their product coordinate additively between the
        # clients; the split cancels inside the linear reduction map so
        # the simulation only logs that the messages happened
        for view in self.server_views:
            view.client_messages.append(("reduce-split", row_index))

    def build_test_bundle(self, rep: int) -> TestBundle:
        """Blinding rows and coins for one test repetition.

        The construction is label-addressed so the two-party runner
        reproduces the exact same bundle from the same seeds.
        """
        spec, field = self.spec, self.params.field
        trace = list(self.rows)

        deg_z = []
        for tape in self.tapes:
            draws = tape.elements(label_test_blind("deg", rep), field, spec.k)
            deg_z.append(spec.encode(draws[: spec.w], draws[spec.w:]))
        deg_rows = deg_z + trace
        deg_coin = self._coins("deg", rep, len(deg_rows))

        perm_z = []
        for tape in self.tapes:
            draws = tape.elements(label_test_blind("perm", rep), field, spec.k)
            block = draws[: spec.w]
            block[0] = (block[0] - sum(block)) % field.modulus
            perm_z.append(spec.encode(block, draws[spec.w:]))
        perm_rows = perm_z + trace
        perm_coin = self._coins("perm", rep, len(perm_rows) * spec.w)

        u_rows, v_rows = [], []
        for tape in self.tapes:
            draws = tape.elements(label_test_blind("eq", rep), field,
                                  3 * spec.k - spec.w)
            block = draws[: spec.w]
            off = spec.w
            lp_aux = draws[off: off + spec.k - spec.w]
            off += spec.k - spec.w
            extra = draws[off: off + spec.k]
            off += spec.k
            l_aux = draws[off:]
            u_rows.append(spec.encode_product_layer(block, lp_aux, extra))
            v_rows.append(spec.encode(block, l_aux))
        for r, pre in sorted(self.pre_reduction.items()):
            u_rows.append(pre)
            v_rows.append(self.rows[r])
        eq_coin = self._coins("eq", rep, len(u_rows) * spec.w)
        return TestBundle(deg_rows, deg_coin, perm_rows, perm_coin,
                          u_rows, v_rows, eq_coin)

    def _run_tests(self) -> AbortInfo | None:
        spec = self.spec
        for rep in range(self.params.sigma):
            bundle = self.build_test_bundle(rep)

            ok, reason, broadcast = degree_test(spec, bundle.degree_rows,
                                                bundle.degree_coin)
            broadcast = self.adversary.on_broadcast(self, "degree", rep, broadcast)
            ok = ok and spec.is_codeword(broadcast, spec.k)
            self._log_broadcast("degree", rep, broadcast)
            if not ok:
                return AbortInfo("degree", rep, reason or "degree")

            ok, reason, broadcast = permutation_test(spec, bundle.perm_rows,
                                                     self.constraints.rows,
                                                     bundle.perm_coin)
            broadcast = self.adversary.on_broadcast(self, "perm", rep, broadcast)
            if ok:
                ok, reason, _ = _recheck_perm(spec, broadcast)
            self._log_broadcast("perm", rep, broadcast)
            if not ok:
                return AbortInfo("perm", rep, reason)

            ok, reason, broadcast = equality_test(spec, bundle.eq_u_rows,
                                                  bundle.eq_v_rows, bundle.eq_coin)
            broadcast = self.adversary.on_broadcast(self, "eq", rep, broadcast)
            if ok:
                ok, reason, _ = _recheck_eq(spec, broadcast)
            self._log_broadcast("eq", rep, broadcast)
            if not ok:
                return AbortInfo("equality", rep, reason)
        return None

    def _log_broadcast(self, test: str, rep: int, broadcast: list[int]) -> None:
        for c, view in enumerate(self.server_views):
            view.broadcasts.append((test, rep, broadcast[c]))

    def _reveal_outputs(self) -> tuple[list[int] | None, AbortInfo | None]:
        out: list[int] = []
        for b in self.circuit.output_blocks:
            r = self.circuit.row_index(self.circuit.depth, "out", b)
            vec = self.rows[r]
            if not self.spec.is_codeword(vec, self.spec.k):
                return None, AbortInfo("output", 0, "output row not a codeword")
            out.extend(self.spec.decode(vec))
        if self.circuit.output_count is not None:
            out = out[: self.circuit.output_count]
        return out, None

    def run(self, x: list[int], y: list[int]) -> RunResult:
        if len(x) != self.circuit.x_len or len(y) != self.circuit.y_len:
            raise ValueError("input length mismatch")
        self._run_layers(x, y)
        abort = self._run_tests()
        if abort is not None:
            return RunResult(None, abort, self.rows, self.pre_reduction)
        outputs, abort = self._reveal_outputs()
        return RunResult(outputs, abort, self.rows, self.pre_reduction)


@dataclass(frozen=True)
class _WireRef:
    row_index: int
    slot: int
    zero: bool = False

    @property
    def kind(self) -> str:
        return "zero" if self.zero else "out"


def _recheck_perm(spec: CodeSpec, broadcast: list[int]):
    ok, reason = check_perm_broadcast(spec, broadcast)
    return ok, reason, broadcast


def _recheck_eq(spec: CodeSpec, broadcast: list[int]):
    ok, reason = check_eq_broadcast(spec, broadcast)
    return ok, reason, broadcast


def reveal_outputs(spec: CodeSpec, output_rows: list[list[int]]) -> list[int]:
    """Decode output rows, refusing inconsistent share vectors."""
    out: list[int] = []
    for vec in output_rows:
        if not spec.is_codeword(vec, spec.k):
            raise ValueError("output shares are not a codeword")
        out.extend(spec.decode(vec))
    return out


def run_standalone(circuit: LayeredCircuit, params: ProtocolParams,
                   x: list[int], y: list[int], seed: bytes = b"run",
                   adversary: Adversary | None = None) -> RunResult:
    sim = OuterSimulation(circuit, params,
                          (seed + b"/c0", seed + b"/c1"), seed + b"/coin",
                          seed + b"/srv", adversary)
    return sim.run(x, y)
