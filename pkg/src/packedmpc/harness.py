"""Run orchestration around the two-party protocol.

Four jobs live here.  ``estimate_communication`` predicts, frame by
frame, the bytes each party sends, split into named traffic terms plus
an itemized framing overhead; honest measured runs must reconcile
against it with zero residual.  ``run_adversary_experiment`` injects
canned faults and counts aborts versus silently accepted corruptions.
``bench`` times a full run and emits a JSON report with per-phase
seconds and bytes, amortized per instance when a batch is replicated.
The remaining classes are the socket services (correlation dealer and
watch-key exchange) that let two separate processes run the protocol
that ``run_protocol`` otherwise drives in one process.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass, replace

from .circuit import (Layer, LayeredCircuit, Source, eval_plain,
                      from_text as circuit_from_text, random_circuit)
from .combined import (CombinedAdversary, CombinedParty, MacLayout,
                       PartyPools, PartyResult, default_selection, mac_flag,
                       make_memory_pools, mul_block_count, mul_out_rows,
                       oles_needed, run_protocol)
from .crypto import COMMIT_RAND_BYTES, KEY_BYTES, TAG_BYTES, Tape
from .field import ELEMENT_BYTES, TOY, Field
from .inner import (DealerClient, DealerServer, OlePool, ROLE_RECEIVER,
                    ROLE_SENDER, recv_exact)
from .nn import (InferenceResult, QuantModel, compile_to_circuit, load_features,
                 load_model, logit_scale, result_from_field)
from .outer import (Adversary, ProtocolParams, block_owner, is_gather_block,
                    label_test_blind, run_standalone, soundness_bound)
from .params import (load_params, params_to_dict, select_params)
from .transport import FRAME_OVERHEAD, TcpChannel

import random as _random
import socket
import struct

# per-server online cost of one multiplication block: an 8-byte delta,
# 8-byte alpha and 8-byte gamma cross the channel for each party
CC_RHO = 3 * ELEMENT_BYTES

# struct headers inside frame payloads (see combined.py)
_ROW_HDR = 4          # "<I" row id
_EMU_HDR = 9          # "<IBI" row id, step, auxiliary
_WATCH_HDR = 5        # "<IB" row id, report kind
_COIN_HDR = 5         # "<BI" test code, repetition
_BLOB_LEN = 4         # per-server length prefix inside watch frames
_COIN_MAGIC_LEN = 12  # opening tag inside coin-open payloads

_SEALED_VALUE = ELEMENT_BYTES + TAG_BYTES      # one sealed share report
_SEALED_SEED = KEY_BYTES + TAG_BYTES           # one sealed per-server seed
_SEALED_CORR = 4 * ELEMENT_BYTES + TAG_BYTES   # one sealed OLE quadruple


class ConfigError(ValueError):
    """A run configuration problem, reported before any network activity."""


# ---------------------------------------------------------------------------
# adversary specifications


STRATEGIES = ("none", "additive-share", "bad-degree-reduction",
              "skip-blinding", "tamper-input-mac", "watch-evade")


@dataclass(frozen=True)
class AdversarySpec:
    """Parsed fault-injection request.

    Text form: ``strategy`` or ``strategy:key=value,key=value`` with
    server sets joined by ``+``, e.g.
    ``additive-share:layer=2,servers=1+3,delta=5``.
    """

    strategy: str
    layer: int = 1
    servers: tuple[int, ...] = (0,)
    delta: int = 1
    row: int | None = None
    n: int | None = None
    t: int | None = None

    @staticmethod
    def parse(text: str | None) -> "AdversarySpec | None":
        if text is None:
            return None
        text = text.strip()
        if not text or text == "none":
            return None
        head, _, rest = text.partition(":")
        if head not in STRATEGIES:
            raise ConfigError(f"unknown adversary strategy {head!r}; "
                              f"choose from {', '.join(STRATEGIES)}")
        kwargs: dict = {}
        if rest:
            for item in rest.split(","):
                key, sep, value = item.partition("=")
                key = key.strip()
                if not sep or not value:
                    raise ConfigError(
                        f"adversary option {item!r} is not key=value")
                if key in ("layer", "delta", "row", "n", "t"):
                    kwargs[key] = int(value)
                elif key == "server":
                    kwargs["servers"] = (int(value),)
                elif key == "servers":
                    kwargs["servers"] = tuple(
                        sorted(int(v) for v in value.split("+")))
                else:
                    raise ConfigError(f"unknown adversary option {key!r}")
        return AdversarySpec(strategy=head, **kwargs)

    def validate(self, params: ProtocolParams | None = None) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown adversary strategy {self.strategy!r}")
        if len(set(self.servers)) != len(self.servers):
            raise ConfigError("adversary server set has duplicates")
        if self.strategy in ("additive-share", "tamper-input-mac"):
            if self.delta == 0:
                raise ConfigError("adversary delta must be nonzero")
        if params is not None:
            if any(not 0 <= j < params.n for j in self.servers):
                raise ConfigError("adversary server index out of range")
            if self.strategy == "additive-share" and len(self.servers) > params.e:
                raise ConfigError(
                    f"additive-share corrupts {len(self.servers)} servers "
                    f"but the parameters tolerate only e={params.e}")


# ---------------------------------------------------------------------------
# run configuration (shared by the CLI and by bench)


ROLES = ("party0", "party1", "standalone-sim", "dealer")
_BACKENDS = ("ideal", "dealer")


def _parse_endpoint(text: str, what: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ConfigError(f"{what} must look like host:port, got {text!r}")
    return host, int(port)


def _parse_backend(text: str, what: str) -> tuple[str, tuple[str, int] | None]:
    if text == "ideal":
        return "ideal", None
    head, sep, rest = text.partition(":")
    if head == "dealer" and sep:
        return "dealer", _parse_endpoint(rest, f"{what} dealer address")
    raise ConfigError(
        f"{what} must be 'ideal' or 'dealer:host:port', got {text!r}")


@dataclass
class RunConfig:
    role: str
    peer: str | None = None
    listen: str | None = None
    params_file: str | None = None
    circuit: str | None = None
    model: str | None = None
    features: str | None = None
    seed: str = "run"
    adversary: str | None = None
    ole_backend: str = "ideal"
    ot_backend: str = "ideal"
    batch: int = 1
    report: str | None = None

    def validate(self) -> AdversarySpec | None:
        """Full static check; everything here fails before any socket opens."""
        if self.role not in ROLES:
            raise ConfigError(f"role must be one of {', '.join(ROLES)}, "
                              f"got {self.role!r}")
        if self.batch < 1:
            raise ConfigError("batch must be at least 1")
        if not self.seed:
            raise ConfigError("seed must be nonempty")
        if self.circuit and self.model:
            raise ConfigError("give either a circuit file or a model, not both")
        spec = AdversarySpec.parse(self.adversary)
        _parse_backend(self.ole_backend, "--ole-backend")
        ot_kind, _ = _parse_backend(self.ot_backend, "--ot-backend")
        if self.role == "party0" and not self.listen:
            raise ConfigError("party0 needs --listen host:port")
        if self.role == "party1" and not self.peer:
            raise ConfigError("party1 needs --peer host:port")
        if self.role == "dealer":
            if not self.listen:
                raise ConfigError("dealer needs --listen host:port")
            if not self.params_file:
                raise ConfigError("dealer needs --params-file for the field")
        if self.role in ("party0", "party1"):
            if not (self.circuit or self.model):
                raise ConfigError(f"{self.role} needs --circuit or --model")
            if self.batch != 1:
                raise ConfigError("network parties run one instance; "
                                  "batching is a standalone-sim feature")
            if ot_kind == "ideal":
                raise ConfigError(
                    "two-process runs need --ot-backend dealer:host:port; "
                    "the ideal backend only exists inside one process")
            if spec is not None and spec.strategy not in ("additive-share",):
                raise ConfigError(
                    f"party roles support only the additive-share strategy, "
                    f"not {spec.strategy!r}; use standalone-sim")
        if self.listen:
            _parse_endpoint(self.listen, "--listen")
        if self.peer:
            _parse_endpoint(self.peer, "--peer")
        return spec


# ---------------------------------------------------------------------------
# communication estimate


def _circuit_traffic_counts(circuit: LayeredCircuit) -> dict:
    """Static frame drivers: who owns which rows, and the gather fan-in."""
    own = {"x": 0, "y": 0}
    gather_rows = 0
    gather_edges = 0
    for j, layer in enumerate(circuit.layers, start=1):
        for side in (layer.left, layer.right):
            for block in side:
                if is_gather_block(block, j):
                    gather_rows += 1
                    srcs = {circuit.row_index(s.layer, "out", s.block)
                            for s in block if s.kind == "out"}
                    gather_edges += len(srcs)
                else:
                    owner = block_owner(block)
                    if owner in own:
                        own[owner] += 1
    return {
        "own_rows": (own["x"], own["y"]),
        "gather_rows": gather_rows,
        "gather_edges": gather_edges,
        "mul_blocks": len(mul_out_rows(circuit)),
        "output_blocks": len(circuit.output_blocks),
        "total_rows": circuit.total_rows(),
    }


@dataclass
class CommEstimate:
    """Predicted sent bytes per party, split into terms plus framing.

    ``by_type``/``by_phase`` match the party byte ledgers exactly.
    ``terms`` holds the named content totals over both parties;
    ``framing`` itemizes every remaining on-wire byte by message type,
    so sum(terms) - offline terms + sum(framing) equals the ledger sum.
    ``offline`` covers preprocessing traffic on separate connections
    (correlation dealer, watch-key exchange), which never touches the
    party channel.
    """

    by_type: tuple[dict, dict]
    by_phase: tuple[dict, dict]
    terms: dict
    framing: dict
    offline: dict
    counts: dict

    @property
    def total(self) -> int:
        return sum(self.by_phase[0].values()) + sum(self.by_phase[1].values())

    @property
    def ole_online_per_party(self) -> int:
        return self.terms["ole_online"] // 2


def coin_widths(circuit: LayeredCircuit, params: ProtocolParams,
                mac: MacLayout | None = None) -> list[int]:
    """Coin vector lengths per toss, in protocol order."""
    rows = circuit.total_rows()
    muls = len(mul_out_rows(circuit))
    widths = []
    if mac is not None:
        widths.append(mac.element_count)
    for _ in range(params.sigma):
        widths.extend([rows + 2, (rows + 2) * params.w,
                       (muls + 2) * params.w])
    return widths


def estimate_communication(circuit: LayeredCircuit, params: ProtocolParams,
                           *, mac: MacLayout | None = None,
                           cc_ot: int = 0,
                           ole_bytes_per_corr: int = 0) -> CommEstimate:
    """Exact per-frame byte prediction for one honest run.

    cc_ot: off-channel bytes one party spends on the watch-key
    exchange (0 under the in-process ideal setup).  ole_bytes_per_corr:
    off-channel dealer bytes per preprocessed correlation per party.
    """
    n, w, sigma = params.n, params.w, params.sigma
    c = _circuit_traffic_counts(circuit)
    vec = n * ELEMENT_BYTES
    muls = c["mul_blocks"]
    widths = coin_widths(circuit, params, mac)

    by_type = []
    by_phase = []
    for role in (0, 1):
        own = c["own_rows"][role] + 4 * sigma
        watch_share = own + c["gather_rows"] + muls
        types = {
            "watchlist-ciphertext":
                (FRAME_OVERHEAD + _WATCH_HDR + n * (_BLOB_LEN + _SEALED_SEED))
                + watch_share * (FRAME_OVERHEAD + _WATCH_HDR
                                 + n * (_BLOB_LEN + _SEALED_VALUE))
                + muls * (FRAME_OVERHEAD + _WATCH_HDR
                          + n * (_BLOB_LEN + _SEALED_CORR)),
            "input-share": own * (FRAME_OVERHEAD + _ROW_HDR + vec),
            "emulation":
                (c["gather_edges"] + 2 * muls) * (FRAME_OVERHEAD + _EMU_HDR + vec)
                + muls * (FRAME_OVERHEAD + _EMU_HDR + 2 * vec),
            "coin-commit": len(widths) * (FRAME_OVERHEAD + _COIN_HDR
                                          + COMMIT_RAND_BYTES),
            "coin-open": sum(FRAME_OVERHEAD + _COIN_HDR + COMMIT_RAND_BYTES
                             + _COIN_MAGIC_LEN + wd * ELEMENT_BYTES
                             for wd in widths),
            "test-broadcast": 3 * sigma * (FRAME_OVERHEAD + _COIN_HDR + vec),
            "output": c["output_blocks"] * (FRAME_OVERHEAD + _ROW_HDR + vec),
        }
        setup = FRAME_OVERHEAD + _WATCH_HDR + n * (_BLOB_LEN + _SEALED_SEED)
        phases = {"setup": setup,
                  "online": sum(types.values()) - setup}
        by_type.append(types)
        by_phase.append(phases)

    own_total = c["own_rows"][0] + c["own_rows"][1] + 8 * sigma
    share_frames = own_total + 2 * (c["gather_rows"] + muls)
    terms = {
        "watchlist_setup": 2 * cc_ot + 2 * n * _SEALED_SEED,
        "input_shares": own_total * vec,
        "gather": 2 * c["gather_edges"] * vec,
        "ole_online": 2 * muls * n * CC_RHO,
        "degree_reduction": 2 * muls * vec,
        "watch_reports": share_frames * n * _SEALED_VALUE
                         + 2 * muls * n * _SEALED_CORR,
        "coin_toss": 2 * sum(2 * COMMIT_RAND_BYTES + wd * ELEMENT_BYTES
                             for wd in widths),
        "test_broadcasts": 2 * 3 * sigma * vec,
        "outputs": 2 * c["output_blocks"] * vec,
    }
    watch_frames = 2 + share_frames + 2 * muls
    framing = {
        "watchlist-ciphertext": watch_frames * (FRAME_OVERHEAD + _WATCH_HDR
                                                + n * _BLOB_LEN),
        "input-share": own_total * (FRAME_OVERHEAD + _ROW_HDR),
        "emulation": 2 * (c["gather_edges"] + 3 * muls)
                     * (FRAME_OVERHEAD + _EMU_HDR),
        "coin-commit": 2 * len(widths) * (FRAME_OVERHEAD + _COIN_HDR),
        "coin-open": 2 * len(widths) * (FRAME_OVERHEAD + _COIN_HDR
                                        + _COIN_MAGIC_LEN),
        "test-broadcast": 2 * 3 * sigma * (FRAME_OVERHEAD + _COIN_HDR),
        "output": 2 * c["output_blocks"] * (FRAME_OVERHEAD + _ROW_HDR),
    }
    offline = {
        "watchlist_ot": 2 * cc_ot,
        "ole_dealer": 2 * oles_needed(circuit, params) * ole_bytes_per_corr,
    }
    est = CommEstimate(by_type=(by_type[0], by_type[1]),
                       by_phase=(by_phase[0], by_phase[1]),
                       terms=terms, framing=framing, offline=offline,
                       counts=c)
    on_ledger_terms = sum(terms.values()) - offline["watchlist_ot"]
    assert on_ledger_terms + sum(framing.values()) == est.total
    return est


def reconcile_communication(estimate: CommEstimate, report0: dict,
                            report1: dict) -> dict:
    """Measured ledgers against the estimate, residuals itemized.

    ``unexplained`` is the measured total minus content terms minus
    framing; an honest run over ideal backends must bring it to zero,
    with every per-type residual zero as well.
    """
    residual_by_type: list[dict] = []
    for role, report in ((0, report0), (1, report1)):
        expected = estimate.by_type[role]
        measured = report["by_type"]
        keys = set(expected) | set(measured)
        residual_by_type.append(
            {k: measured.get(k, 0) - expected.get(k, 0) for k in sorted(keys)})
    measured_total = report0["total"] + report1["total"]
    on_ledger_terms = (sum(estimate.terms.values())
                       - estimate.offline["watchlist_ot"])
    framing_total = sum(estimate.framing.values())
    unexplained = measured_total - on_ledger_terms - framing_total
    ok = (unexplained == 0
          and all(v == 0 for res in residual_by_type for v in res.values()))
    return {
        "ok": ok,
        "measured_total": measured_total,
        "content_terms": on_ledger_terms,
        "framing_total": framing_total,
        "unexplained": unexplained,
        "residual_by_type": {"party0": residual_by_type[0],
                             "party1": residual_by_type[1]},
    }


# ---------------------------------------------------------------------------
# batching


def _shift_source(s: Source, copy: int, base: LayeredCircuit) -> Source:
    if s.kind == "x":
        return replace(s, index=s.index + copy * base.x_len)
    if s.kind == "y":
        return replace(s, index=s.index + copy * base.y_len)
    if s.kind == "out":
        blocks = base.layers[s.layer - 1].block_count
        return replace(s, block=s.block + copy * blocks)
    return s  # pub and zero are shared across copies


def replicate_circuit(circuit: LayeredCircuit, copies: int) -> LayeredCircuit:
    """Same circuit on `copies` independent input sets, layers merged.

    Output blocks concatenate per copy; output_count is dropped because
    any per-copy tail padding would land mid-list, so callers slice the
    revealed slots per copy themselves (see split_batch_outputs).
    """
    if copies < 1:
        raise ValueError("need at least one copy")
    if copies == 1:
        return circuit
    layers = []
    for layer in circuit.layers:
        left = [[_shift_source(s, c, circuit) for s in block]
                for c in range(copies) for block in layer.left]
        right = [[_shift_source(s, c, circuit) for s in block]
                 for c in range(copies) for block in layer.right]
        layers.append(Layer(layer.op, left, right))
    last_blocks = circuit.layers[-1].block_count
    out_blocks = [b + c * last_blocks
                  for c in range(copies) for b in circuit.output_blocks]
    return LayeredCircuit(
        field=circuit.field, width=circuit.width, layers=layers,
        x_len=circuit.x_len * copies, y_len=circuit.y_len * copies,
        public=list(circuit.public), output_blocks=out_blocks,
        output_count=None)


def split_batch_outputs(base: LayeredCircuit, copies: int,
                        outputs: list[int]) -> list[list[int]]:
    """Per-copy output values from a replicated run's flat output slots."""
    per_copy = len(base.output_blocks) * base.width
    if len(outputs) != per_copy * copies:
        raise ValueError("output length does not match the batch")
    keep = (base.output_count if base.output_count is not None
            else per_copy)
    return [outputs[c * per_copy: c * per_copy + keep] for c in range(copies)]


# ---------------------------------------------------------------------------
# canned adversaries


class ServerShareFault(Adversary):
    """Adds delta to chosen server columns of one layer's output rows."""

    def __init__(self, circuit: LayeredCircuit, layer: int,
                 servers: tuple[int, ...], delta: int):
        if not 1 <= layer <= circuit.depth:
            raise ValueError("layer out of range")
        self.rows = {circuit.row_index(layer, "out", b)
                     for b in range(circuit.layers[layer - 1].block_count)}
        self.servers = tuple(servers)
        self.delta = delta

    def on_row(self, sim, row_index, vec):
        if row_index not in self.rows:
            return vec
        p = sim.params.field.modulus
        vec = list(vec)
        for j in self.servers:
            vec[j] = (vec[j] + self.delta) % p
        return vec


class UnreducedProductFault(Adversary):
    """Keeps a product row at its raw degree instead of re-encoding it."""

    def __init__(self, row: int | None = None):
        self.row = row

    def on_row(self, sim, row_index, vec):
        target = self.row
        if target is None and sim.pre_reduction:
            target = min(sim.pre_reduction)
        if row_index == target and row_index in sim.pre_reduction:
            return list(sim.pre_reduction[row_index])
        return vec


class BlinderSkip(Adversary):
    """Client 0 withholds its degree-test blinder.

    The broadcast then reveals the coin combination of the trace with
    one blinder missing; every check still passes because the removed
    row was itself a codeword, so the run must finish with correct
    outputs.  The harness uses it to confirm that blinding is purely a
    privacy measure with no correctness footprint.
    """

    def on_broadcast(self, sim, test, rep, broadcast):
        if test != "degree":
            return broadcast
        spec, field = sim.spec, sim.params.field
        draws = sim.tapes[0].elements(label_test_blind("deg", rep), field,
                                      spec.k)
        z0 = spec.encode(draws[: spec.w], draws[spec.w:])
        coin = sim._coins("deg", rep, 2 + sim.circuit.total_rows())
        p = field.modulus
        return [(b - coin[0] * z) % p for b, z in zip(broadcast, z0)]


class ReduceMessageFault(CombinedAdversary):
    """Two-party variant of ServerShareFault: corrupts reduction messages."""

    def __init__(self, rows, servers: tuple[int, ...], delta: int):
        self.rows = set(rows)
        self.servers = tuple(servers)
        self.delta = delta

    def on_reduce_message(self, party, row, vec):
        if row not in self.rows:
            return vec
        p = party.field.modulus
        vec = list(vec)
        for j in self.servers:
            vec[j] = (vec[j] + self.delta) % p
        return vec


# ---------------------------------------------------------------------------
# fault-injection experiments


def _default_experiment_params(field: Field = TOY) -> ProtocolParams:
    # e=2 leaves room for multi-server fault sets in the experiments
    return ProtocolParams(field, n=32, w=3, t=2, e=2, k=8)


def _default_experiment_circuit(params: ProtocolParams) -> LayeredCircuit:
    rng = _random.Random(7)
    return random_circuit(rng, params.field, params.w, depth=3, max_blocks=2,
                          protocol_compatible=True)


def _build_sim_adversary(spec: AdversarySpec,
                         circuit: LayeredCircuit) -> Adversary:
    if spec.strategy == "additive-share":
        return ServerShareFault(circuit, spec.layer, spec.servers, spec.delta)
    if spec.strategy == "bad-degree-reduction":
        return UnreducedProductFault(spec.row)
    if spec.strategy == "skip-blinding":
        return BlinderSkip()
    raise ConfigError(f"{spec.strategy!r} is not a simulated-run strategy")


def run_adversary_experiment(spec: AdversarySpec | str, trials: int, *,
                             circuit: LayeredCircuit | None = None,
                             params: ProtocolParams | None = None,
                             seed: bytes = b"experiment") -> dict:
    """Repeat one fault strategy and classify every outcome.

    Returns counts of aborts, correct outputs, and silent corruptions
    (a wrong output accepted without any abort).
    """
    if isinstance(spec, str):
        parsed = AdversarySpec.parse(spec)
        if parsed is None:
            parsed = AdversarySpec(strategy="none")
        spec = parsed
    if trials < 1:
        raise ValueError("need at least one trial")
    counts = {"strategy": spec.strategy, "trials": trials,
              "aborts": 0, "silent_corruptions": 0, "correct_outputs": 0}

    if spec.strategy == "watch-evade":
        n = spec.n or (params.n if params else None)
        t = spec.t or (params.t if params else None)
        if n is None or t is None:
            raise ConfigError("watch-evade needs n and t, from params or "
                              "options like watch-evade:server=0,n=8,t=2")
        spec.validate(params)
        for i in range(trials):
            tape = Tape(seed + b"/sel/" + str(i).encode())
            selection = default_selection(tape, n, t)
            if any(j in selection for j in spec.servers):
                counts["aborts"] += 1
            else:
                counts["silent_corruptions"] += 1
        return counts

    if spec.strategy == "tamper-input-mac":
        field = params.field if params else TOY
        p = field.modulus
        tape = Tape(seed + b"/mac")
        coins = tape.elements("coins", field, trials)
        keys = tape.elements("keys", field, trials)
        delta = spec.delta % p
        for i in range(trials):
            k1 = keys[i] or 1  # a zero MAC key never occurs in real runs
            flag = mac_flag(field, [(-k1 * delta) % p], [coins[i]])
            if flag != 0:
                counts["aborts"] += 1
            else:
                counts["silent_corruptions"] += 1
        return counts

    if params is None:
        params = _default_experiment_params()
    if circuit is None:
        circuit = _default_experiment_circuit(params)
    spec.validate(params)
    for i in range(trials):
        tag = str(i).encode()
        in_tape = Tape(seed + b"/in/" + tag)
        x = in_tape.elements("x", params.field, circuit.x_len)
        y = in_tape.elements("y", params.field, circuit.y_len)
        adversary = (None if spec.strategy == "none"
                     else _build_sim_adversary(spec, circuit))
        result = run_standalone(circuit, params, x, y,
                                seed=seed + b"/run/" + tag,
                                adversary=adversary)
        if result.aborted:
            counts["aborts"] += 1
        elif result.outputs == eval_plain(circuit, x, y):
            counts["correct_outputs"] += 1
        else:
            counts["silent_corruptions"] += 1
    return counts


# ---------------------------------------------------------------------------
# socket services for cross-process runs


_SETUP_MAGIC = b"wkeys/01"
_SETUP_HDR = struct.Struct("<8sBII")  # magic, role, n, t


class TrustedSetupServer:
    """Watch-key exchange service for one protocol session.

    Each party connects once, posts its n per-server keys plus its t
    selected indices, and receives the peer's keys for exactly those
    servers.  The server never reveals a selection to the other party.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 timeout: float = 60.0):
        self.timeout = timeout
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(2)
        self.host, self.port = self._sock.getsockname()[:2]
        self._keys: list[list[bytes] | None] = [None, None]
        self._shape: tuple[int, int] | None = None
        self._events = (threading.Event(), threading.Event())
        self._lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._accepting = False

    def start(self) -> None:
        self._accepting = True
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self) -> None:
        while self._accepting:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve(self, conn: socket.socket) -> None:
        with conn:
            try:
                head = recv_exact(conn, _SETUP_HDR.size)
                magic, role, n, t = _SETUP_HDR.unpack(head)
                if magic != _SETUP_MAGIC or role not in (0, 1):
                    return
                with self._lock:
                    if self._shape is None:
                        self._shape = (n, t)
                    elif self._shape != (n, t):
                        return
                raw = recv_exact(conn, n * KEY_BYTES)
                keys = [raw[i * KEY_BYTES:(i + 1) * KEY_BYTES]
                        for i in range(n)]
                self._keys[role] = keys
                self._events[role].set()
                sel_raw = recv_exact(conn, t * 4)
                selection = struct.unpack(f"<{t}I", sel_raw)
                if not self._events[1 - role].wait(self.timeout):
                    return
                peer_keys = self._keys[1 - role]
                if any(not 0 <= j < n for j in selection):
                    return
                conn.sendall(b"".join(peer_keys[j] for j in selection))
            except (ConnectionError, OSError):
                return

    def close(self) -> None:
        self._accepting = False
        try:
            self._sock.close()
        except OSError:
            pass


class RemoteTrustedSetup:
    """Client side of TrustedSetupServer, same interface as the local one."""

    def __init__(self, host: str, port: int, n: int, t: int):
        self.host, self.port = host, port
        self.n, self.t = n, t
        self._sock: socket.socket | None = None

    def post_keys(self, role: int, keys: list[bytes]) -> None:
        if len(keys) != self.n:
            raise ValueError("need one watch key per server")
        self._sock = socket.create_connection((self.host, self.port))
        self._sock.sendall(_SETUP_HDR.pack(_SETUP_MAGIC, role, self.n, self.t)
                           + b"".join(keys))

    def fetch_keys(self, role: int, selection,
                   timeout: float = 60.0) -> dict[int, bytes]:
        if self._sock is None:
            raise RuntimeError("post_keys must run first")
        sel = tuple(selection)
        self._sock.settimeout(timeout)
        self._sock.sendall(struct.pack(f"<{self.t}I", *sel))
        raw = recv_exact(self._sock, self.t * KEY_BYTES)
        self._sock.close()
        return {j: raw[i * KEY_BYTES:(i + 1) * KEY_BYTES]
                for i, j in enumerate(sel)}


class DealerService:
    """Offline helpers for two-process runs, on three consecutive ports.

    base port:     correlation stream, party 0 as OLE sender
    base port + 1: correlation stream, party 1 as OLE sender
    base port + 2: watch-key exchange
    """

    def __init__(self, field: Field, host: str = "127.0.0.1", port: int = 0,
                 seed: bytes = b"dealer"):
        self.field = field
        self.dir_a = DealerServer(field, seed + b"/dirA", host, port)
        base = self.dir_a.port
        self.dir_b = DealerServer(field, seed + b"/dirB", host, base + 1)
        self.setup = TrustedSetupServer(host, base + 2)
        self.host, self.port = self.dir_a.host, base

    def start(self) -> None:
        self.dir_a.start()
        self.dir_b.start()
        self.setup.start()

    def close(self) -> None:
        self.dir_a.close()
        self.dir_b.close()
        self.setup.close()


def fetch_dealer_pools(host: str, port: int, role: int, field: Field,
                       count: int) -> tuple[PartyPools, int]:
    """One party's preprocessed pools from a DealerService; returns the
    pools plus the bytes received over the dealer connections."""
    send_port = port if role == 0 else port + 1
    recv_port = port + 1 if role == 0 else port
    send_client = DealerClient(host, send_port, ROLE_SENDER, field)
    recv_client = DealerClient(host, recv_port, ROLE_RECEIVER, field)
    try:
        pools = PartyPools(send=OlePool(send_client.fetch(count)),
                           recv=OlePool(recv_client.fetch(count)))
    finally:
        send_client.close()
        recv_client.close()
    received = count * (3 + 2) * ELEMENT_BYTES
    return pools, received


# ---------------------------------------------------------------------------
# high-level runs


def secure_infer(model: QuantModel, features0: list[int], features1: list[int],
                 params: ProtocolParams, *,
                 seed: bytes = b"infer") -> InferenceResult:
    """Two-party inference on quantized per-party feature vectors."""
    circuit = compile_to_circuit(model, params.field, params.w)
    r0, r1 = run_protocol(circuit, params, features0, features1,
                          client_seeds=(seed + b"/c0", seed + b"/c1"),
                          master_seeds=(seed + b"/m0", seed + b"/m1"),
                          dealer_seed=seed + b"/dealer")
    for r in (r0, r1):
        if r.aborted:
            raise RuntimeError(f"secure inference aborted: {r.abort_reason}")
    if r0.outputs != r1.outputs:
        raise RuntimeError("parties disagree on the revealed outputs")
    return result_from_field(params.field, r0.outputs, logit_scale(model))


def _seed_bytes(config: RunConfig) -> bytes:
    return config.seed.encode()


def _load_run_params(config: RunConfig) -> ProtocolParams:
    if config.params_file:
        return load_params(config.params_file)
    # no file given: derive a stock parameter set and report it; the
    # statistical target defaults to zero so any topology benches
    return select_params(32, 0)


def _load_run_circuit(config: RunConfig, params: ProtocolParams
                      ) -> tuple[LayeredCircuit, QuantModel | None]:
    if config.model:
        model = load_model(config.model)
        return compile_to_circuit(model, params.field, params.w), model
    if config.circuit:
        with open(config.circuit, encoding="utf-8") as fh:
            circuit = circuit_from_text(fh.read())
        if circuit.width != params.w or circuit.field != params.field:
            raise ConfigError("circuit file does not match the parameters "
                              f"(width {circuit.width} vs w={params.w})")
        return circuit, None
    rng = _random.Random(int.from_bytes(_seed_bytes(config), "little"))
    return random_circuit(rng, params.field, params.w, depth=4, max_blocks=2,
                          protocol_compatible=True), None


def _batch_inputs(config: RunConfig, circuit: LayeredCircuit,
                  model: QuantModel | None,
                  params: ProtocolParams) -> tuple[list[int], list[int]]:
    if model is not None and config.features:
        paths = config.features.split(",")
        if len(paths) != 2:
            raise ConfigError("standalone runs need --features "
                              "party0.csv,party1.csv")
        x = load_features(paths[0].strip(), model, party=0)[0]
        y = load_features(paths[1].strip(), model, party=1)[0]
        return x, y
    tape = Tape(_seed_bytes(config) + b"/inputs")
    return (tape.elements("x", params.field, circuit.x_len),
            tape.elements("y", params.field, circuit.y_len))


def bench(config: RunConfig) -> dict:
    """One measured in-process run; returns (and optionally writes) the
    JSON-ready report."""
    config.validate()
    params = _load_run_params(config)
    base, model = _load_run_circuit(config, params)
    copies = config.batch
    circuit = replicate_circuit(base, copies)
    x, y = _batch_inputs(config, base, model, params)
    if copies > 1:
        x = x * copies
        y = y * copies

    seed = _seed_bytes(config)
    start = time.perf_counter()
    r0, r1 = run_protocol(circuit, params, x, y,
                          client_seeds=(seed + b"/c0", seed + b"/c1"),
                          master_seeds=(seed + b"/m0", seed + b"/m1"),
                          dealer_seed=seed + b"/dealer")
    wall = time.perf_counter() - start

    estimate = estimate_communication(circuit, params)
    rec = reconcile_communication(estimate, r0.bytes_report, r1.bytes_report)
    test_bytes = sum(r.bytes_report["by_type"].get(t, 0)
                     for r in (r0, r1)
                     for t in ("coin-commit", "coin-open", "test-broadcast"))
    total_bytes = r0.bytes_report["total"] + r1.bytes_report["total"]
    per_instance = {
        "bytes_total": total_bytes / copies,
        "test_bytes": test_bytes / copies,
        "wall_seconds": wall / copies,
    }
    bound = min(soundness_bound(params, combined=True), 1)
    report = {
        "params": params_to_dict(params),
        "soundness_bound_log2": float(math.log2(bound)),
        "batch": copies,
        "circuit": {
            "depth": base.depth,
            "rows": circuit.total_rows(),
            "mul_blocks": mul_block_count(circuit),
            "width": circuit.width,
        },
        "wall_seconds": wall,
        "phase_seconds": {
            ph: [r0.phase_times.get(ph), r1.phase_times.get(ph)]
            for ph in ("setup", "offline", "online")},
        "phase_bytes": {
            ph: [r.bytes_report["by_phase"].get(ph, 0) for r in (r0, r1)]
            for ph in ("setup", "offline", "online")},
        "bytes_total": total_bytes,
        "test_bytes": test_bytes,
        "per_instance": per_instance,
        "ole": {
            "per_party_used": [r0.ole_used, r1.ole_used],
            "expected_per_party": 2 * params.n * mul_block_count(circuit),
        },
        "communication_check": {
            "ok": rec["ok"],
            "unexplained_bytes": rec["unexplained"],
        },
        "aborts": [r.abort_reason for r in (r0, r1) if r.aborted],
        "seed": config.seed,
    }
    if config.report:
        with open(config.report, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def _party_inputs(config: RunConfig, circuit: LayeredCircuit,
                  model: QuantModel | None, params: ProtocolParams,
                  role: int) -> list[int]:
    if model is not None and config.features:
        rows = load_features(config.features, model, party=role)
        if not rows:
            raise ConfigError("feature file has no rows")
        return rows[0]
    tape = Tape(_seed_bytes(config) + b"/inputs")
    label = "x" if role == 0 else "y"
    length = circuit.x_len if role == 0 else circuit.y_len
    return tape.elements(label, params.field, length)


def _party_adversary(spec: AdversarySpec | None, circuit: LayeredCircuit,
                     params: ProtocolParams) -> CombinedAdversary | None:
    if spec is None:
        return None
    spec.validate(params)
    if spec.strategy == "additive-share":
        rows = {circuit.row_index(spec.layer, "out", b)
                for b in range(circuit.layers[spec.layer - 1].block_count)}
        rows &= set(mul_out_rows(circuit))
        if not rows:
            raise ConfigError(
                f"additive-share tampers degree-reduction messages, but "
                f"layer {spec.layer} has no multiplication rows")
        return ReduceMessageFault(rows, spec.servers, spec.delta)
    raise ConfigError(f"party roles cannot run {spec.strategy!r}")


def run_party_config(config: RunConfig) -> dict:
    """One network party, blocking until the protocol finishes.

    party0 listens and party1 connects; both need the watch-key
    exchange of a running dealer (--ot-backend dealer:host:port, which
    is the dealer's base port plus two).
    """
    spec = config.validate()
    role = 0 if config.role == "party0" else 1
    params = _load_run_params(config)
    circuit, model = _load_run_circuit(config, params)
    inputs = _party_inputs(config, circuit, model, params, role)
    adversary = _party_adversary(spec, circuit, params)
    need = oles_needed(circuit, params)
    seed = _seed_bytes(config)

    ole_kind, ole_addr = _parse_backend(config.ole_backend, "--ole-backend")
    dealer_bytes = 0
    if ole_kind == "ideal":
        # both endpoints derive the same dealer stream from the shared
        # run seed, standing in for a preprocessing phase
        pools = make_memory_pools(params.field, need, seed + b"/dealer")[role]
    else:
        pools, dealer_bytes = fetch_dealer_pools(
            ole_addr[0], ole_addr[1], role, params.field, need)

    _, ot_addr = _parse_backend(config.ot_backend, "--ot-backend")
    setup = RemoteTrustedSetup(ot_addr[0], ot_addr[1], params.n, params.t)

    listener = None
    if role == 0:
        host, port = _parse_endpoint(config.listen, "--listen")
        listener = TcpChannel.listen(host, port)
        channel = listener.accept()
    else:
        host, port = _parse_endpoint(config.peer, "--peer")
        channel = TcpChannel.connect(host, port)
    try:
        party = CombinedParty(
            role, circuit, params, channel, setup, pools,
            client_seed=seed + b"/c%d" % role,
            master_seed=seed + b"/m%d" % role,
            adversary=adversary)
        result = party.run(inputs)
    finally:
        channel.close()
        if listener is not None:
            listener.close()

    estimate = estimate_communication(circuit, params)
    expected = estimate.by_type[role]
    measured = result.bytes_report["by_type"]
    residual = {k: measured.get(k, 0) - expected.get(k, 0)
                for k in sorted(set(expected) | set(measured))}
    report = {
        "role": config.role,
        "outputs": result.outputs,
        "abort_reason": result.abort_reason,
        "ole_used": result.ole_used,
        "ole_expected": 2 * params.n * mul_block_count(circuit),
        "bytes": result.bytes_report,
        "bytes_residual_vs_estimate": residual,
        "dealer_bytes": dealer_bytes,
        "phase_seconds": result.phase_times,
        "params": params_to_dict(params),
        "seed": config.seed,
    }
    if model is not None and result.outputs is not None:
        inference = result_from_field(params.field, result.outputs,
                                      logit_scale(model))
        report["logits"] = inference.logits
        report["predicted"] = inference.predicted
    if config.report:
        with open(config.report, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def start_dealer_config(config: RunConfig) -> DealerService:
    """Dealer role: three offline services on consecutive ports."""
    config.validate()
    params = load_params(config.params_file)
    host, port = _parse_endpoint(config.listen, "--listen")
    service = DealerService(params.field, host, port,
                            seed=_seed_bytes(config) + b"/dealer")
    service.start()
    return service


def run_experiment_config(config: RunConfig) -> dict:
    """standalone-sim with an adversary: batch counts the trials."""
    spec = config.validate()
    if spec is None:
        raise ConfigError("experiment mode needs --adversary")
    params = (load_params(config.params_file) if config.params_file else None)
    circuit = None
    if spec.strategy in ("additive-share", "bad-degree-reduction",
                         "skip-blinding", "none"):
        if params is None:
            params = _default_experiment_params()
        circuit, _ = (_load_run_circuit(config, params)
                      if (config.circuit or config.model)
                      else (_default_experiment_circuit(params), None))
    result = run_adversary_experiment(spec, config.batch, circuit=circuit,
                                      params=params,
                                      seed=_seed_bytes(config))
    if config.report:
        with open(config.report, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return result


def run_from_config(config: RunConfig) -> dict:
    """CLI dispatch: every role except the blocking dealer returns a report."""
    config.validate()
    if config.role in ("party0", "party1"):
        return run_party_config(config)
    if config.role == "standalone-sim":
        if config.adversary and AdversarySpec.parse(config.adversary):
            return run_experiment_config(config)
        return bench(config)
    raise ConfigError("the dealer role never returns a report; "
                      "use start_dealer_config")
