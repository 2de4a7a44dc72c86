"""Two-party execution of the client/server protocol.

Each party holds an additive share of every trace row; with matching
client seeds the share sums replay the standalone simulation in
``outer`` bit for bit, which is the correctness anchor for this module.
Per-server randomness (splits, multiplication masks, emulation blinds)
comes from per-server tapes derived from each party's master seed.  A
t-of-n watchlist exchange gives every party the peer's per-server seeds
for t servers; sealed per-server reports then let it re-derive and check
each message the peer's emulation of a watched server should produce.
Multiplications consume preprocessed random OLE correlations, one per
direction per server per block.  An optional affine-MAC augmentation
carries key/tag wires through the circuit so that revealed tag
differences fold into a coin-weighted acceptance flag.
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass, field as dc_field

from .circuit import Layer, LayeredCircuit, Source
from .crypto import (COMMIT_RAND_BYTES, CoinTossSession, IdealOT, IntegrityError,
                     OpenFailure, SealingChannel, Tape, WatchlistSelection,
                     open_sealed)
from .field import (Field, element_from_bytes, element_to_bytes, interpolate,
                    poly_eval_many, vector_from_bytes, vector_to_bytes)
from .inner import (IdealDealer, OlePool, receiver_delta, receiver_output,
                    sender_reply)
from .outer import (ProtocolParams, _WireRef, block_owner,
                    build_test_constraints, check_degree_broadcast,
                    check_eq_broadcast, check_perm_broadcast,
                    check_protocol_compatible, degree_combine, eq_weights,
                    gather_values, is_gather_block, label_coin,
                    label_gather_blind, label_input_aux, label_reduce_blind,
                    label_test_blind, perm_weights, reduce_map,
                    reveal_outputs, weighted_combine, zero_block_codeword)
from .transport import AbortReceived, Channel, Frame, memory_channel_pair

# emulation sub-steps within one row
STEP_GATHER = 1
STEP_DELTA = 2
STEP_REPLY = 3
STEP_REDUCE = 4

# watch report kinds
WATCH_SEED = 0
WATCH_SHARE = 1
WATCH_CORR = 2
SEED_ROW = 0xFFFFFFFF

TEST_CODES = {"deg": 1, "perm": 2, "eq": 3, "mac": 4}
# the standalone simulation logs broadcasts and aborts under these names
BROADCAST_NAMES = {"deg": "degree", "perm": "perm", "eq": "eq"}
ABORT_NAMES = {"deg": "degree", "perm": "perm", "eq": "equality"}

_ROW = struct.Struct("<I")
_EMU = struct.Struct("<IBI")
_WATCH = struct.Struct("<IB")
_COIN = struct.Struct("<BI")
_BLOB = struct.Struct("<I")

ROWS_PER_REPETITION = 8  # blinding rows shared per test repetition


class LocalAbort(Exception):
    """Raised when this party decides to abort; the reason goes on the wire."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ConsistencyFailure(Exception):
    """A watched server's recomputed emulation disagrees with the peer."""


# ---------------------------------------------------------------------------
# structural helpers


def mul_out_rows(circuit: LayeredCircuit) -> list[int]:
    """Output-row indices of multiplication layers, ascending."""
    rows = []
    for j, layer in enumerate(circuit.layers, start=1):
        if layer.op == "mul":
            rows.extend(circuit.row_index(j, "out", b)
                        for b in range(layer.block_count))
    return rows


def mul_block_count(circuit: LayeredCircuit) -> int:
    return sum(layer.block_count for layer in circuit.layers if layer.op == "mul")


def oles_needed(circuit: LayeredCircuit, params: ProtocolParams) -> int:
    """Per direction: one correlation per server per multiplication block."""
    return params.n * mul_block_count(circuit)


@dataclass(frozen=True)
class BlindingRowIds:
    """Virtual row ids for one repetition's blinding rows.

    Each pair is (client-0 row, client-1 row); eq_u/eq_v are the paired
    product-layer and base-layer encodings of the same blocks.
    """

    deg: tuple[int, int]
    perm: tuple[int, int]
    eq_u: tuple[int, int]
    eq_v: tuple[int, int]


def blinding_row_ids(circuit: LayeredCircuit, rep: int) -> BlindingRowIds:
    base = circuit.total_rows() + ROWS_PER_REPETITION * rep
    return BlindingRowIds(deg=(base, base + 1), perm=(base + 2, base + 3),
                      eq_u=(base + 4, base + 6), eq_v=(base + 5, base + 7))


def coin_share_label(test: str, rep: int) -> str:
    return "cs/" + label_coin(test, rep)


def coin_source_from_seeds(field: Field, seed0: bytes, seed1: bytes):
    """Replays the commit-open toss outcomes of two honest parties.

    Feeding this to OuterSimulation(coin_source=...) makes the standalone
    run consume exactly the coins the two-party run will toss.
    """
    tapes = (Tape(seed0), Tape(seed1))

    def source(test: str, rep: int, count: int) -> list[int]:
        label = coin_share_label(test, rep)
        a = tapes[0].elements(label, field, count)
        b = tapes[1].elements(label, field, count)
        return field.vec_add(a, b)

    return source


def codeword_vanishing_at(spec, columns, block: list[int]) -> list[int]:
    """Low-degree codeword packing `block` with zeros at the given columns.

    Exists whenever len(columns) + w <= k, which the parameter constraint
    k > t + e + w guarantees for any watchlist-sized column set; detection
    experiments use it to model share shifts invisible at watched servers.
    """
    if len(set(columns)) != len(columns):
        raise ValueError("columns must be distinct")
    if len(columns) + spec.w > spec.k:
        raise ValueError("too many vanishing columns for the code degree")
    p = spec.field.modulus
    pts = [spec.eta[j] for j in columns] + list(spec.zeta)
    vals = [0] * len(columns) + [v % p for v in block]
    taken = set(columns)
    for j in range(spec.n):
        if len(pts) == spec.k:
            break
        if j not in taken:
            pts.append(spec.eta[j])
            vals.append(0)
    coeffs = interpolate(pts, vals, spec.field)
    return poly_eval_many(coeffs, spec.eta, spec.field)


# ---------------------------------------------------------------------------
# MAC augmentation


def mac_tag(field: Field, value: int, k1: int, k2: int) -> int:
    return (k1 * value + k2) % field.modulus


def mac_extend(field: Field, values: list[int], tape: Tape, label: str) -> list[int]:
    """values || k1 || k2 || tags with fresh keys, every k1 nonzero."""
    p = field.modulus
    vals = [v % p for v in values]
    k1 = []
    for i in range(len(vals)):
        v = tape.element(f"{label}/k1/{i}", field)
        while v == 0:
            v = tape.element(f"{label}/k1/{i}", field)
        k1.append(v)
    k2 = tape.elements(f"{label}/k2", field, len(vals))
    tags = [mac_tag(field, x, a, b) for x, a, b in zip(vals, k1, k2)]
    return vals + k1 + k2 + tags


def validate_mac_extension(field: Field, extended: list[int], base_len: int) -> None:
    """Structural setup check; zero keys would void the tag guarantee."""
    if len(extended) != 4 * base_len:
        raise ValueError("extended input must hold value, k1, k2 and tag sections")
    if any(v == 0 for v in extended[base_len: 2 * base_len]):
        raise ValueError("MAC key k1 must be nonzero for every input")


def mac_flag(field: Field, d_values: list[int], coins: list[int]) -> int:
    if len(coins) < len(d_values):
        raise ValueError("not enough coins for the tag differences")
    return sum(r * d for r, d in zip(coins, d_values)) % field.modulus


@dataclass(frozen=True)
class MacLayout:
    """Where the augmented circuit keeps original outputs and tag checks."""

    x_len: int
    y_len: int
    width: int
    pass_blocks: int
    x_blocks: int
    y_blocks: int
    output_count: int

    @property
    def element_count(self) -> int:
        return self.x_len + self.y_len

    @property
    def d_blocks(self) -> int:
        return self.x_blocks + self.y_blocks

    def d_values(self, revealed: list[int]) -> list[int]:
        """Tag differences, one per authenticated input element."""
        base = self.pass_blocks * self.width
        out = [revealed[base + i] for i in range(self.x_len)]
        ybase = base + self.x_blocks * self.width
        out += [revealed[ybase + i] for i in range(self.y_len)]
        return out

    def original_outputs(self, revealed: list[int]) -> list[int]:
        return revealed[: self.pass_blocks * self.width][: self.output_count]


def augment_with_macs(circuit: LayeredCircuit) -> tuple[LayeredCircuit, MacLayout]:
    """Append tag-checking layers and widen the inputs to carry MAC wires.

    The extended input of each party is value || k1 || k2 || tag.  Three
    layers compute d = tag - k1*value - k2 per element and expose the d
    blocks next to pass-through copies of the original output blocks.
    Replication constraints tie the value wires used for computation to
    the ones entering the tag product, so a consistent shift of all
    copies is forced and then caught by the tag difference.
    """
    w = circuit.width
    xl, yl = circuit.x_len, circuit.y_len
    if xl + yl == 0:
        raise ValueError("no inputs to authenticate")
    depth = circuit.depth
    mx = (xl + w - 1) // w
    my = (yl + w - 1) // w

    def element(b: int, s: int) -> tuple[str, int] | None:
        i = b * w + s
        if b < mx:
            return ("x", i) if i < xl else None
        i = (b - mx) * w + s
        return ("y", i) if i < yl else None

    def section(kind: str, offset_x: int, offset_y: int, i: int) -> Source:
        if kind == "x":
            return Source("x", offset_x + i)
        return Source("y", offset_y + i)

    zero = Source("zero")
    prod_left, prod_right = [], []
    for b in range(mx + my):
        lblk, rblk = [], []
        for s in range(w):
            el = element(b, s)
            if el is None:
                lblk.append(zero)
                rblk.append(zero)
            else:
                kind, i = el
                lblk.append(section(kind, xl, yl, i))  # k1
                rblk.append(Source(kind, i))           # value
        prod_left.append(lblk)
        prod_right.append(rblk)

    sub1_left, sub1_right = [], []
    for b in range(mx + my):
        lblk, rblk = [], []
        for s in range(w):
            el = element(b, s)
            if el is None:
                lblk.append(zero)
                rblk.append(zero)
            else:
                kind, i = el
                lblk.append(section(kind, 3 * xl, 3 * yl, i))  # tag
                rblk.append(Source("out", layer=depth + 1, block=b, slot=s))
        sub1_left.append(lblk)
        sub1_right.append(rblk)

    final_left, final_right = [], []
    for ob in circuit.output_blocks:
        final_left.append([Source("out", layer=depth, block=ob, slot=s)
                           for s in range(w)])
        final_right.append([zero] * w)
    for b in range(mx + my):
        lblk, rblk = [], []
        for s in range(w):
            el = element(b, s)
            if el is None:
                lblk.append(zero)
                rblk.append(zero)
            else:
                kind, i = el
                lblk.append(Source("out", layer=depth + 2, block=b, slot=s))
                rblk.append(section(kind, 2 * xl, 2 * yl, i))  # k2
        final_left.append(lblk)
        final_right.append(rblk)

    pass_blocks = len(circuit.output_blocks)
    effective = circuit.output_count
    if effective is None:
        effective = pass_blocks * w
    layers = list(circuit.layers) + [
        Layer("mul", prod_left, prod_right),
        Layer("sub", sub1_left, sub1_right),
        Layer("sub", final_left, final_right),
    ]
    aug = LayeredCircuit(circuit.field, w, layers, 4 * xl, 4 * yl,
                         list(circuit.public),
                         list(range(pass_blocks + mx + my)), effective)
    layout = MacLayout(xl, yl, w, pass_blocks, mx, my, effective)
    return aug, layout


# ---------------------------------------------------------------------------
# setup and preprocessing plumbing


class LocalTrustedSetup:
    """In-process rendezvous for the two t-of-n OT invocations.

    Party p posts its n watch keys; the peer fetches the keys of its
    selected servers through an IdealOT instance, which logs only sizes.
    """

    def __init__(self, n: int, t: int):
        self.n = n
        self.t = t
        self.ots = (IdealOT(), IdealOT())  # index = sending party
        self._keys: list[list[bytes] | None] = [None, None]
        self._events = (threading.Event(), threading.Event())

    def post_keys(self, role: int, keys: list[bytes]) -> None:
        if len(keys) != self.n:
            raise ValueError("need one watch key per server")
        self._keys[role] = list(keys)
        self._events[role].set()

    def fetch_keys(self, role: int, selection, timeout: float = 60.0) -> dict[int, bytes]:
        peer = 1 - role
        if not self._events[peer].wait(timeout):
            raise TimeoutError("peer never posted watch keys")
        sel = WatchlistSelection(tuple(selection))
        got = self.ots[peer].run(self._keys[peer], sel, self.t)
        return dict(zip(sel.indices, got))


@dataclass
class PartyPools:
    """One party's preprocessed halves: `send` where it plays OLE sender."""

    send: OlePool
    recv: OlePool

    @property
    def consumed(self) -> int:
        return self.send.consumed + self.recv.consumed


def make_memory_pools(field: Field, count: int,
                      seed: bytes = b"dealer") -> tuple[PartyPools, PartyPools]:
    """Two dealers, one per direction; party 0 sends in direction A."""
    dir_a = IdealDealer(field, seed + b"/dirA").generate(count)
    dir_b = IdealDealer(field, seed + b"/dirB").generate(count)
    pools0 = PartyPools(send=OlePool(c.sender for c in dir_a),
                        recv=OlePool(c.receiver for c in dir_b))
    pools1 = PartyPools(send=OlePool(c.sender for c in dir_b),
                        recv=OlePool(c.receiver for c in dir_a))
    return pools0, pools1


def default_selection(tape: Tape, n: int, t: int) -> tuple[int, ...]:
    """t distinct indices; n is a power of two so the modulo is unbiased."""
    picked: list[int] = []
    while len(picked) < t:
        idx = int.from_bytes(tape.bytes("wsel", 8), "little") % n
        if idx not in picked:
            picked.append(idx)
    return tuple(sorted(picked))


# ---------------------------------------------------------------------------
# adversary hooks


class CombinedAdversary:
    """Deviation points for one party of the two-party run.

    Every hook receives the acting party and returns the (possibly
    modified) value actually used; the defaults are honest.
    """

    def on_split_sent(self, party: "CombinedParty", row: int,
                      sigma: list[int]) -> list[int]:
        return sigma

    def on_split_received(self, party: "CombinedParty", row: int,
                          sigma: list[int]) -> list[int]:
        return sigma

    def on_watch_share(self, party: "CombinedParty", row: int,
                       values: list[int]) -> list[int]:
        return values

    def on_watch_corr(self, party: "CombinedParty", row: int,
                      quads: list[tuple[int, int, int, int]]) -> list[tuple[int, int, int, int]]:
        return quads

    def on_gather_message(self, party: "CombinedParty", row: int, src: int,
                          vec: list[int]) -> list[int]:
        return vec

    def on_reduce_message(self, party: "CombinedParty", row: int,
                          vec: list[int]) -> list[int]:
        return vec

    def on_gmw_delta(self, party: "CombinedParty", row: int,
                     vec: list[int]) -> list[int]:
        return vec

    def on_gmw_reply(self, party: "CombinedParty", row: int, alpha: list[int],
                     gamma: list[int]) -> tuple[list[int], list[int]]:
        return alpha, gamma

    def on_broadcast_share(self, party: "CombinedParty", test: str, rep: int,
                           vec: list[int]) -> list[int]:
        return vec

    def on_output_share(self, party: "CombinedParty", row: int,
                        vec: list[int]) -> list[int]:
        return vec


# ---------------------------------------------------------------------------
# watch tracking


class WatchTracker:
    """Recomputes a peer's per-server emulation on the watched servers.

    Keeps, per watched server j, the peer's share of every row (claimed
    via sealed reports or derived from public structure) plus the peer's
    per-server tape rebuilt from its reported seed.  Every peer message
    that touches server j is checked against these; a mismatch raises
    ConsistencyFailure.
    """

    def __init__(self, field: Field, keys: dict[int, bytes]):
        self.field = field
        self.watched = sorted(keys)
        self.keys = dict(keys)
        self.counters = {j: 0 for j in self.watched}
        self.tapes: dict[int, Tape] = {}
        self.rows: dict[int, dict[int, int]] = {j: {} for j in self.watched}
        self.pre: dict[int, dict[int, int]] = {j: {} for j in self.watched}

    # -- report intake

    def open_blob(self, j: int, blob: bytes) -> bytes:
        try:
            plain = open_sealed(self.keys[j], self.counters[j], blob)
        except IntegrityError as exc:
            raise ConsistencyFailure(f"server {j}: watch report unreadable ({exc})")
        self.counters[j] += 1
        return plain

    def absorb_seeds(self, blobs: dict[int, bytes]) -> None:
        for j in self.watched:
            seed = self.open_blob(j, blobs[j])
            if len(seed) != 32:
                raise ConsistencyFailure(f"server {j}: bad seed report length")
            self.tapes[j] = Tape(seed)

    def share_report(self, row: int, blobs: dict[int, bytes]) -> None:
        for j in self.watched:
            value = element_from_bytes(self.open_blob(j, blobs[j]), self.field)
            self.rows[j][row] = value

    def corr_report(self, row: int, blobs: dict[int, bytes]) -> dict[int, tuple[int, int, int, int]]:
        out = {}
        for j in self.watched:
            plain = self.open_blob(j, blobs[j])
            if len(plain) != 32:
                raise ConsistencyFailure(f"server {j}: bad correlation report")
            out[j] = tuple(element_from_bytes(plain[i:i + 8], self.field)
                           for i in range(0, 32, 8))
        return out

    # -- derived rows, no messages involved

    def peer_element(self, j: int, label: str) -> int:
        return self.tapes[j].element(label, self.field)

    def set_public_row(self, row: int, vec: list[int], peer_role: int) -> None:
        for j in self.watched:
            self.rows[j][row] = vec[j] if peer_role == 0 else 0

    def set_sent_split(self, row: int, sigma: list[int]) -> None:
        for j in self.watched:
            self.rows[j][row] = sigma[j]

    def linear_row(self, row: int, left: int, right: int, op: str) -> None:
        p = self.field.modulus
        for j in self.watched:
            a, b = self.rows[j][left], self.rows[j][right]
            self.rows[j][row] = (a + b) % p if op == "add" else (a - b) % p

    # -- message checks

    def check_split(self, row: int, sigma: list[int]) -> None:
        for j in self.watched:
            expect = self.peer_element(j, f"split/{row}")
            if sigma[j] != expect:
                raise ConsistencyFailure(f"server {j}: input split for row {row}")

    def check_gather(self, row: int, src: int, vec: list[int], peer_role: int) -> None:
        p = self.field.modulus
        for j in self.watched:
            rho = self.peer_element(j, f"gat/{row}/{src}")
            expect = (self.rows[j][src] - rho) % p if peer_role == 0 else rho
            if vec[j] != expect:
                raise ConsistencyFailure(f"server {j}: gather message for row {row}")

    def check_reduce(self, row: int, vec: list[int], peer_role: int) -> None:
        p = self.field.modulus
        for j in self.watched:
            rho = self.peer_element(j, f"red/{row}")
            expect = (self.pre[j][row] - rho) % p if peer_role == 0 else rho
            if vec[j] != expect:
                raise ConsistencyFailure(f"server {j}: reduction message for row {row}")

    def check_gmw(self, row: int, left_row: int, right_row: int,
                  reports: dict[int, tuple[int, int, int, int]],
                  my_send, my_recv, delta_peer: list[int], alpha_peer: list[int],
                  gamma_peer: list[int], delta_mine: list[int],
                  alpha_mine: list[int], gamma_mine: list[int]) -> None:
        """Validate the peer's multiplication messages against its reported
        correlation halves, then derive its product share column."""
        p = self.field.modulus
        for j in self.watched:
            pa, pv, pu, pw = reports[j]
            # reported halves must pair with the halves this party drew
            if my_recv[j].w != (pa * my_recv[j].u + pv) % p:
                raise ConsistencyFailure(f"server {j}: sender half for row {row}")
            if pw != (my_send[j].a * pu + my_send[j].v) % p:
                raise ConsistencyFailure(f"server {j}: receiver half for row {row}")
            peer_l = self.rows[j][left_row]
            peer_r = self.rows[j][right_row]
            mask = self.peer_element(j, f"mask/{row}")
            if delta_peer[j] != (peer_r - pu) % p:
                raise ConsistencyFailure(f"server {j}: delta for row {row}")
            if alpha_peer[j] != (peer_l - pa) % p:
                raise ConsistencyFailure(f"server {j}: alpha for row {row}")
            if gamma_peer[j] != (pa * delta_mine[j] + mask - pv) % p:
                raise ConsistencyFailure(f"server {j}: gamma for row {row}")
            cross = (pw + gamma_mine[j] + alpha_mine[j] * peer_r) % p
            self.pre[j][row] = (peer_l * peer_r - mask + cross) % p

    def check_broadcast(self, test: str, rep: int, terms: list[tuple[str, int, int]],
                        weights: list[list[int]], got: list[int]) -> None:
        """terms are (kind, u_row, v_row): kind "row" reads the share table,
        kind "pre" reads the product-share table for the u side."""
        p = self.field.modulus
        for j in self.watched:
            total = 0
            for i, (kind, u_row, v_row) in enumerate(terms):
                u = self.pre[j][u_row] if kind == "pre" else self.rows[j][u_row]
                v = 0 if v_row < 0 else self.rows[j][v_row]
                total += weights[j][i] * (u - v)
            if total % p != got[j]:
                raise ConsistencyFailure(
                    f"server {j}: {test} broadcast share (rep {rep})")

    def check_output(self, row: int, vec: list[int]) -> None:
        for j in self.watched:
            if vec[j] != self.rows[j][row]:
                raise ConsistencyFailure(f"server {j}: output share for row {row}")


# ---------------------------------------------------------------------------
# the party


@dataclass
class PartyResult:
    role: int
    outputs: list[int] | None
    abort_reason: str | None
    mac_flag: int | None
    selection: tuple[int, ...]
    ole_sender_used: int
    ole_receiver_used: int
    bytes_report: dict
    share_rows: dict[int, list[int]] = dc_field(default_factory=dict)
    pre_shares: dict[int, list[int]] = dc_field(default_factory=dict)
    broadcasts: dict[tuple[str, int], list[int]] = dc_field(default_factory=dict)
    coins: dict[tuple[str, int], list[int]] = dc_field(default_factory=dict)
    phase_times: dict[str, float] = dc_field(default_factory=dict)

    @property
    def aborted(self) -> bool:
        return self.abort_reason is not None

    @property
    def ole_used(self) -> int:
        return self.ole_sender_used + self.ole_receiver_used


class CombinedParty:
    """One endpoint of the compiled two-party protocol.

    Party 0 owns the x inputs and emulates client 0; party 1 owns y and
    client 1.  Public rows are held in full by party 0 by convention.
    """

    def __init__(self, role: int, circuit: LayeredCircuit, params: ProtocolParams,
                 channel: Channel, setup: LocalTrustedSetup, pools: PartyPools,
                 *, client_seed: bytes, master_seed: bytes,
                 selection=None, adversary: CombinedAdversary | None = None,
                 mac: MacLayout | None = None, timeout: float = 60.0):
        check_protocol_compatible(circuit, params)
        if role not in (0, 1):
            raise ValueError("role must be 0 or 1")
        self.role = role
        self.circuit = circuit
        self.params = params
        self.spec = params.code
        self.field = params.field
        self.channel = channel
        self.setup = setup
        self.pools = pools
        self.timeout = timeout
        self.adversary = adversary or CombinedAdversary()
        self.mac = mac

        self.client_tape = Tape(client_seed)
        self.master_tape = Tape(master_seed)
        n = params.n
        self.srv_seeds = [self.master_tape.key(f"srv/{j}") for j in range(n)]
        self.srv_tapes = [Tape(s) for s in self.srv_seeds]
        self.watch_keys = [self.master_tape.key(f"wk/{j}") for j in range(n)]
        self.sealers = [SealingChannel(k) for k in self.watch_keys]
        if selection is None:
            selection = default_selection(self.master_tape, n, params.t)
        self.selection = tuple(sorted(selection))

        self.constraints = build_test_constraints(circuit)
        self.mul_rows = mul_out_rows(circuit)
        self.share: dict[int, list[int]] = {}
        self.pre_share: dict[int, list[int]] = {}
        self.broadcasts: dict[tuple[str, int], list[int]] = {}
        self.coins: dict[tuple[str, int], list[int]] = {}
        self.tracker: WatchTracker | None = None
        self.outputs: list[int] | None = None
        self.mac_flag: int | None = None
        self._mac_coin: list[int] | None = None

    # -- frame plumbing

    def _send(self, msg_type: str, payload: bytes) -> None:
        self.channel.send(Frame(0, msg_type, payload))

    def _recv(self, msg_type: str) -> bytes:
        return self.channel.recv(msg_type, timeout=self.timeout).payload

    def _send_vec(self, msg_type: str, header: bytes, vec: list[int]) -> None:
        self._send(msg_type, header + vector_to_bytes(vec))

    def _recv_vec(self, msg_type: str, header: bytes, count: int) -> list[int]:
        payload = self._recv(msg_type)
        if payload[: len(header)] != header:
            raise LocalAbort(f"protocol desync on {msg_type} frame")
        vec = vector_from_bytes(payload[len(header):], self.field)
        if len(vec) != count:
            raise LocalAbort(f"bad vector length in {msg_type} frame")
        return vec

    def _send_watch(self, row: int, kind: int, plaintexts: list[bytes]) -> None:
        parts = [_WATCH.pack(row, kind)]
        for j, plain in enumerate(plaintexts):
            _, blob = self.sealers[j].seal(plain)
            parts.append(_BLOB.pack(len(blob)))
            parts.append(blob)
        self._send("watchlist-ciphertext", b"".join(parts))

    def _recv_watch(self, row: int, kind: int) -> dict[int, bytes]:
        payload = self._recv("watchlist-ciphertext")
        got_row, got_kind = _WATCH.unpack_from(payload)
        if (got_row, got_kind) != (row, kind):
            raise LocalAbort("protocol desync on watch frame")
        off = _WATCH.size
        blobs: dict[int, bytes] = {}
        for j in range(self.params.n):
            (length,) = _BLOB.unpack_from(payload, off)
            off += _BLOB.size
            blobs[j] = payload[off: off + length]
            if len(blobs[j]) != length:
                raise LocalAbort("truncated watch frame")
            off += length
        if off != len(payload):
            raise LocalAbort("oversized watch frame")
        return blobs

    def _send_watch_share(self, row: int, mine: list[int]) -> None:
        values = self.adversary.on_watch_share(self, row, list(mine))
        self._send_watch(row, WATCH_SHARE, [element_to_bytes(v) for v in values])

    def _watch_share_exchange(self, row: int, mine: list[int]) -> None:
        # both parties derived fresh shares, so reports flow both ways
        self._send_watch_share(row, mine)
        blobs = self._recv_watch(row, WATCH_SHARE)
        self.tracker.share_report(row, blobs)

    # -- phases

    def run(self, my_input: list[int]) -> PartyResult:
        expected = self.circuit.x_len if self.role == 0 else self.circuit.y_len
        if len(my_input) != expected:
            raise ValueError("input length mismatch")
        abort_reason = None
        timings: dict[str, float] = {}
        try:
            start = time.perf_counter()
            self._setup()
            timings["setup"] = time.perf_counter() - start
            start = time.perf_counter()
            self._offline()
            timings["offline"] = time.perf_counter() - start
            start = time.perf_counter()
            self._online(my_input)
            timings["online"] = time.perf_counter() - start
        except LocalAbort as exc:
            abort_reason = exc.reason
            self._try_abort(exc.reason)
        except ConsistencyFailure as exc:
            abort_reason = f"consistency: {exc}"
            self._try_abort("consistency")
        except AbortReceived as exc:
            abort_reason = f"peer abort: {exc}"
        return PartyResult(
            role=self.role, outputs=self.outputs, abort_reason=abort_reason,
            mac_flag=self.mac_flag, selection=self.selection,
            ole_sender_used=self.pools.send.consumed,
            ole_receiver_used=self.pools.recv.consumed,
            bytes_report=self.channel.ledger.report(),
            share_rows=self.share, pre_shares=self.pre_share,
            broadcasts=self.broadcasts, coins=self.coins,
            phase_times=timings)

    def _try_abort(self, reason: str) -> None:
        try:
            self.channel.send_abort(reason)
        except Exception:
            pass

    def _setup(self) -> None:
        self.channel.set_phase("setup")
        self.setup.post_keys(self.role, self.watch_keys)
        watched = self.setup.fetch_keys(self.role, self.selection, self.timeout)
        self.tracker = WatchTracker(self.field, watched)
        self._send_watch(SEED_ROW, WATCH_SEED, list(self.srv_seeds))
        blobs = self._recv_watch(SEED_ROW, WATCH_SEED)
        self.tracker.absorb_seeds(blobs)

    def _offline(self) -> None:
        self.channel.set_phase("offline")
        need = oles_needed(self.circuit, self.params)
        if len(self.pools.send) < need or len(self.pools.recv) < need:
            raise LocalAbort("preprocessing: not enough OLE correlations")

    def _online(self, my_input: list[int]) -> None:
        self.channel.set_phase("online")
        self._run_layers(my_input)
        if self.mac is not None:
            self._mac_coin = self._toss("mac", 0, self.mac.element_count)
        for rep in range(self.params.sigma):
            self._share_test_rows(rep)
            self._run_tests(rep)
        self._reveal()

    # -- rows

    def _run_layers(self, my_input: list[int]) -> None:
        circuit = self.circuit
        for j, layer in enumerate(circuit.layers, start=1):
            for kind, side in (("left", layer.left), ("right", layer.right)):
                for b, block in enumerate(side):
                    r = circuit.row_index(j, kind, b)
                    if is_gather_block(block, j):
                        self._gather_row(r, block)
                    else:
                        self._input_row(r, block, my_input)
            for b in range(layer.block_count):
                r = circuit.row_index(j, "out", b)
                lr = circuit.row_index(j, "left", b)
                rr = circuit.row_index(j, "right", b)
                if layer.op in ("add", "sub"):
                    if layer.op == "add":
                        self.share[r] = self.field.vec_add(self.share[lr],
                                                           self.share[rr])
                    else:
                        self.share[r] = self.field.vec_sub(self.share[lr],
                                                           self.share[rr])
                    self.tracker.linear_row(r, lr, rr, layer.op)
                else:
                    self._mul_row(r, lr, rr)

    def _input_row(self, r: int, block: list[Source], my_input: list[int]) -> None:
        owner = block_owner(block)
        if owner == "pub":
            values = [self.circuit.public[s.index] if s.kind == "pub" else 0
                      for s in block]
            vec = self.spec.encode_canonical(values)
            self.share[r] = vec if self.role == 0 else [0] * self.params.n
            self.tracker.set_public_row(r, vec, 1 - self.role)
            return
        mine = (owner == "x") == (self.role == 0)
        if not mine:
            self._receive_owned_row(r)
            return
        p = self.field.modulus
        values = [my_input[s.index] % p if s.kind == owner else 0 for s in block]
        aux = self.client_tape.elements(label_input_aux(r), self.field,
                                        self.spec.k - self.spec.w)
        self._share_owned_row(r, self.spec.encode(values, aux))

    def _share_owned_row(self, r: int, row: list[int]) -> None:
        sigma = [self.srv_tapes[j].element(f"split/{r}", self.field)
                 for j in range(self.params.n)]
        sigma = self.adversary.on_split_sent(self, r, sigma)
        kept = self.field.vec_sub(row, sigma)
        self._send_vec("input-share", _ROW.pack(r), sigma)
        self.tracker.set_sent_split(r, sigma)
        self.share[r] = kept
        # the receiver's share is the split it was sent, so only the
        # owner's kept share needs a watch report
        self._send_watch_share(r, kept)

    def _receive_owned_row(self, r: int) -> None:
        sigma = self._recv_vec("input-share", _ROW.pack(r), self.params.n)
        self.tracker.check_split(r, sigma)
        sigma = self.adversary.on_split_received(self, r, sigma)
        self.share[r] = sigma
        blobs = self._recv_watch(r, WATCH_SHARE)
        self.tracker.share_report(r, blobs)

    def _gather_row(self, r: int, block: list[Source]) -> None:
        refs = []
        for s in block:
            if s.kind == "out":
                refs.append(_WireRef(self.circuit.row_index(s.layer, "out", s.block),
                                     s.slot))
            else:
                refs.append(_WireRef(-1, 0, zero=True))
        srcs: list[int] = []
        for ref in refs:
            if not ref.zero and ref.row_index not in srcs:
                srcs.append(ref.row_index)
        parts: dict[int, list[int]] = {}
        for s in srcs:
            rho = [self.srv_tapes[j].element(f"gat/{r}/{s}", self.field)
                   for j in range(self.params.n)]
            if self.role == 0:
                msg = self.field.vec_sub(self.share[s], rho)
            else:
                msg = rho
            msg = self.adversary.on_gather_message(self, r, s, msg)
            header = _EMU.pack(r, STEP_GATHER, s)
            self._send_vec("emulation", header, msg)
            got = self._recv_vec("emulation", header, self.params.n)
            self.tracker.check_gather(r, s, got, 1 - self.role)
            if self.role == 0:
                parts[s] = self.field.vec_add(rho, got)
            else:
                parts[s] = self.field.vec_add(self.field.vec_sub(self.share[s], rho),
                                              got)
        gathered = gather_values(self.spec, refs, lambda idx: parts[idx])
        blind = zero_block_codeword(self.spec, self.client_tape,
                                    label_gather_blind(r))
        mine = self.field.vec_add(self.spec.encode_canonical(gathered), blind)
        self.share[r] = mine
        self._watch_share_exchange(r, mine)

    def _mul_row(self, r: int, lr: int, rr: int) -> None:
        n, p = self.params.n, self.field.modulus
        left, right = self.share[lr], self.share[rr]
        send_halves = [self.pools.send.pop() for _ in range(n)]
        recv_halves = [self.pools.recv.pop() for _ in range(n)]
        mask = [self.srv_tapes[j].element(f"mask/{r}", self.field)
                for j in range(n)]

        delta = [receiver_delta(self.field, recv_halves[j], right[j])
                 for j in range(n)]
        delta = self.adversary.on_gmw_delta(self, r, delta)
        header = _EMU.pack(r, STEP_DELTA, 0)
        self._send_vec("emulation", header, delta)
        delta_peer = self._recv_vec("emulation", header, n)

        alpha, gamma = [], []
        for j in range(n):
            a, g = sender_reply(self.field, send_halves[j], left[j], mask[j],
                                delta_peer[j])
            alpha.append(a)
            gamma.append(g)
        alpha, gamma = self.adversary.on_gmw_reply(self, r, alpha, gamma)
        header = _EMU.pack(r, STEP_REPLY, 0)
        self._send_vec("emulation", header, alpha + gamma)
        reply_peer = self._recv_vec("emulation", header, 2 * n)
        alpha_peer, gamma_peer = reply_peer[:n], reply_peer[n:]

        cross = [receiver_output(self.field, recv_halves[j], right[j],
                                 alpha_peer[j], gamma_peer[j]) for j in range(n)]
        pre = [(left[j] * right[j] - mask[j] + cross[j]) % p for j in range(n)]

        quads = [(send_halves[j].a, send_halves[j].v,
                  recv_halves[j].u, recv_halves[j].w) for j in range(n)]
        quads = self.adversary.on_watch_corr(self, r, quads)
        self._send_watch(r, WATCH_CORR,
                         [b"".join(element_to_bytes(v) for v in q) for q in quads])
        reports = self.tracker.corr_report(r, self._recv_watch(r, WATCH_CORR))
        self.tracker.check_gmw(r, lr, rr, reports, send_halves, recv_halves,
                               delta_peer, alpha_peer, gamma_peer,
                               delta, alpha, gamma)
        self.pre_share[r] = pre

        rho = [self.srv_tapes[j].element(f"red/{r}", self.field)
               for j in range(n)]
        if self.role == 0:
            msg = self.field.vec_sub(pre, rho)
        else:
            msg = rho
        msg = self.adversary.on_reduce_message(self, r, msg)
        header = _EMU.pack(r, STEP_REDUCE, 0)
        self._send_vec("emulation", header, msg)
        got = self._recv_vec("emulation", header, n)
        self.tracker.check_reduce(r, got, 1 - self.role)
        if self.role == 0:
            lpart = self.field.vec_add(rho, got)
        else:
            lpart = self.field.vec_add(self.field.vec_sub(pre, rho), got)
        blind = zero_block_codeword(self.spec, self.client_tape,
                                    label_reduce_blind(r))
        mine = self.field.vec_add(reduce_map(self.spec, lpart), blind)
        self.share[r] = mine
        self._watch_share_exchange(r, mine)

    # -- tests

    def _test_blind_rows(self, rep: int) -> dict[int, list[int]]:
        """This client's blinding rows, drawn exactly like the standalone run."""
        spec, field = self.spec, self.field
        ids = blinding_row_ids(self.circuit, rep)
        mine: dict[int, list[int]] = {}

        draws = self.client_tape.elements(label_test_blind("deg", rep), field,
                                          spec.k)
        mine[ids.deg[self.role]] = spec.encode(draws[: spec.w], draws[spec.w:])

        draws = self.client_tape.elements(label_test_blind("perm", rep), field,
                                          spec.k)
        block = draws[: spec.w]
        block[0] = (block[0] - sum(block)) % field.modulus
        mine[ids.perm[self.role]] = spec.encode(block, draws[spec.w:])

        draws = self.client_tape.elements(label_test_blind("eq", rep), field,
                                          3 * spec.k - spec.w)
        block = draws[: spec.w]
        off = spec.w
        lp_aux = draws[off: off + spec.k - spec.w]
        off += spec.k - spec.w
        extra = draws[off: off + spec.k]
        off += spec.k
        l_aux = draws[off:]
        mine[ids.eq_u[self.role]] = spec.encode_product_layer(block, lp_aux, extra)
        mine[ids.eq_v[self.role]] = spec.encode(block, l_aux)
        return mine

    def _share_test_rows(self, rep: int) -> None:
        ids = blinding_row_ids(self.circuit, rep)
        mine = self._test_blind_rows(rep)
        order = [(ids.deg[0], 0), (ids.deg[1], 1),
                 (ids.perm[0], 0), (ids.perm[1], 1),
                 (ids.eq_u[0], 0), (ids.eq_v[0], 0),
                 (ids.eq_u[1], 1), (ids.eq_v[1], 1)]
        for vid, owner in order:
            if owner == self.role:
                self._share_owned_row(vid, mine[vid])
            else:
                self._receive_owned_row(vid)

    def _toss(self, test: str, rep: int, count: int) -> list[int]:
        share = self.client_tape.elements(coin_share_label(test, rep),
                                          self.field, count)
        randomness = self.client_tape.bytes("cr/" + label_coin(test, rep),
                                            COMMIT_RAND_BYTES)
        session = CoinTossSession(self.field, count, share, randomness)
        header = _COIN.pack(TEST_CODES[test], rep)
        self._send("coin-commit", header + session.commit_message())
        payload = self._recv("coin-commit")
        if payload[: _COIN.size] != header:
            raise LocalAbort("protocol desync on coin commitment")
        session.receive_commit(payload[_COIN.size:])
        self._send("coin-open", header + session.open_message())
        payload = self._recv("coin-open")
        if payload[: _COIN.size] != header:
            raise LocalAbort("protocol desync on coin opening")
        try:
            coins = session.result(payload[_COIN.size:])
        except OpenFailure as exc:
            raise LocalAbort(f"coin toss: {exc}")
        self.coins[(test, rep)] = coins
        return coins

    def _broadcast(self, test: str, rep: int, terms: list[tuple[str, int, int]],
                   weights: list[list[int]], mine: list[int], checker) -> None:
        mine = self.adversary.on_broadcast_share(self, test, rep, mine)
        header = _COIN.pack(TEST_CODES[test], rep)
        self._send_vec("test-broadcast", header, mine)
        peer = self._recv_vec("test-broadcast", header, self.params.n)
        self.tracker.check_broadcast(test, rep, terms, weights, peer)
        total = self.field.vec_add(mine, peer)
        self.broadcasts[(BROADCAST_NAMES[test], rep)] = total
        ok, reason = checker(self.spec, total)
        if not ok:
            raise LocalAbort(f"{ABORT_NAMES[test]}/{reason} (rep {rep})")

    def _run_tests(self, rep: int) -> None:
        spec = self.spec
        ids = blinding_row_ids(self.circuit, rep)
        trace = list(range(self.circuit.total_rows()))

        deg_ids = [ids.deg[0], ids.deg[1], *trace]
        coin = self._toss("deg", rep, len(deg_ids))
        mine = degree_combine(spec, [self.share[i] for i in deg_ids], coin)
        weights = [coin] * self.params.n
        terms = [("row", i, -1) for i in deg_ids]
        self._broadcast("deg", rep, terms, weights, mine, check_degree_broadcast)

        perm_ids = [ids.perm[0], ids.perm[1], *trace]
        coin = self._toss("perm", rep, len(perm_ids) * spec.w)
        weights = perm_weights(spec, self.constraints.rows, coin, len(perm_ids))
        mine = weighted_combine(spec, weights,
                                [self.share[i] for i in perm_ids])
        terms = [("row", i, -1) for i in perm_ids]
        self._broadcast("perm", rep, terms, weights, mine, check_perm_broadcast)

        u_rows = [self.share[ids.eq_u[0]], self.share[ids.eq_u[1]]]
        u_rows += [self.pre_share[r] for r in self.mul_rows]
        v_rows = [self.share[ids.eq_v[0]], self.share[ids.eq_v[1]]]
        v_rows += [self.share[r] for r in self.mul_rows]
        coin = self._toss("eq", rep, len(u_rows) * spec.w)
        weights = eq_weights(spec, coin, len(u_rows))
        diffs = [self.field.vec_sub(u, v) for u, v in zip(u_rows, v_rows)]
        mine = weighted_combine(spec, weights, diffs)
        terms = [("row", ids.eq_u[0], ids.eq_v[0]),
                 ("row", ids.eq_u[1], ids.eq_v[1])]
        terms += [("pre", r, r) for r in self.mul_rows]
        self._broadcast("eq", rep, terms, weights, mine, check_eq_broadcast)

    # -- outputs

    def _reveal(self) -> None:
        circuit = self.circuit
        revealed_rows = []
        for b in circuit.output_blocks:
            r = circuit.row_index(circuit.depth, "out", b)
            mine = self.adversary.on_output_share(self, r, self.share[r])
            self._send_vec("output", _ROW.pack(r), mine)
            peer = self._recv_vec("output", _ROW.pack(r), self.params.n)
            self.tracker.check_output(r, peer)
            revealed_rows.append(self.field.vec_add(mine, peer))
        try:
            values = reveal_outputs(self.spec, revealed_rows)
        except ValueError:
            raise LocalAbort("output/not-a-codeword")
        if self.mac is None:
            if circuit.output_count is not None:
                values = values[: circuit.output_count]
            self.outputs = values
            return
        d_vals = self.mac.d_values(values)
        self.mac_flag = mac_flag(self.field, d_vals, self._mac_coin)
        if self.mac_flag != 0:
            raise LocalAbort("mac/nonzero-flag")
        self.outputs = self.mac.original_outputs(values)


# ---------------------------------------------------------------------------
# in-process runner


def run_protocol(circuit: LayeredCircuit, params: ProtocolParams,
                 x: list[int], y: list[int], *,
                 client_seeds: tuple[bytes, bytes] = (b"run/c0", b"run/c1"),
                 master_seeds: tuple[bytes, bytes] = (b"run/m0", b"run/m1"),
                 dealer_seed: bytes = b"dealer",
                 selections=None,
                 adversaries: tuple = (None, None),
                 mac: MacLayout | None = None,
                 channels=None, pools=None,
                 timeout: float = 60.0) -> tuple[PartyResult, PartyResult]:
    """Run both parties over an in-process transport; returns both results.

    Exceptions other than protocol aborts propagate: a raised error in
    either party thread is re-raised here.
    """
    # reject bad inputs before any thread can leave its peer hanging
    if len(x) != circuit.x_len or len(y) != circuit.y_len:
        raise ValueError("input length mismatch")
    if mac is not None:
        validate_mac_extension(params.field, x, mac.x_len)
        validate_mac_extension(params.field, y, mac.y_len)
    if pools is None:
        pools = make_memory_pools(params.field, oles_needed(circuit, params),
                                  dealer_seed)
    if channels is None:
        channels = memory_channel_pair()
    if selections is None:
        selections = (None, None)
    setup = LocalTrustedSetup(params.n, params.t)
    parties = []
    for role, inputs in ((0, x), (1, y)):
        parties.append(CombinedParty(
            role, circuit, params, channels[role], setup, pools[role],
            client_seed=client_seeds[role], master_seed=master_seeds[role],
            selection=selections[role], adversary=adversaries[role],
            mac=mac, timeout=timeout))
    results: list[PartyResult | None] = [None, None]
    errors: list[BaseException | None] = [None, None]

    def runner(slot: int, inputs: list[int]) -> None:
        try:
            results[slot] = parties[slot].run(inputs)
        except BaseException as exc:  # re-raised in the caller
            errors[slot] = exc

    threads = [threading.Thread(target=runner, args=(0, x), daemon=True),
               threading.Thread(target=runner, args=(1, y), daemon=True)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for err in errors:
        if err is not None:
            raise err
    return results[0], results[1]


def run_f_prime(circuit: LayeredCircuit, params: ProtocolParams,
                x: list[int], y: list[int], *, mac_seed: bytes = b"mac",
                **kwargs) -> tuple[PartyResult, PartyResult, MacLayout]:
    """MAC-augmented run: authenticate all inputs, gate outputs on the flag."""
    aug, layout = augment_with_macs(circuit)
    x_ext = mac_extend(params.field, x, Tape(mac_seed + b"/x"), "mac")
    y_ext = mac_extend(params.field, y, Tape(mac_seed + b"/y"), "mac")
    r0, r1 = run_protocol(aug, params, x_ext, y_ext, mac=layout, **kwargs)
    return r0, r1, layout
