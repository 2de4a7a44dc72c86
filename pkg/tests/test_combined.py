"""Two-party protocol: fidelity to the standalone simulation, OLE
accounting, transcript determinism, and detection behavior of the
watchlist, the outer tests and the MAC layer under deviations."""

import random
import threading

import pytest

from packedmpc.circuit import Layer, LayeredCircuit, Source, eval_plain, eval_trace, random_circuit
from packedmpc.combined import (CombinedAdversary, ROWS_PER_REPETITION,
                                WatchTracker, augment_with_macs,
                                codeword_vanishing_at, coin_share_label,
                                coin_source_from_seeds, mac_extend, mac_flag,
                                make_memory_pools, mul_block_count,
                                oles_needed, run_f_prime, run_protocol,
                                blinding_row_ids, validate_mac_extension)
from packedmpc.crypto import CoinTossSession, Tape, seal
from packedmpc.field import TOY
from packedmpc.outer import OuterSimulation, ProtocolParams, is_gather_block
from packedmpc.transport import TcpChannel, memory_channel_pair

TOY_PARAMS = ProtocolParams(TOY, n=8, w=1, t=1, e=1, k=4)
WIDE_PARAMS = ProtocolParams(TOY, n=32, w=4, t=2, e=1, k=8)

X = Source("x")
ZERO = Source("zero")


def src(kind, index=0, layer=0, block=0, slot=0):
    return Source(kind, index, layer, block, slot)


def mul_circuit(width=1, x_len=1, y_len=1):
    """Pointwise products of x and y, blocked to the given width."""
    blocks = max((x_len + width - 1) // width, (y_len + width - 1) // width)
    left = [[src("x", b * width + s) if b * width + s < x_len else ZERO
             for s in range(width)] for b in range(blocks)]
    right = [[src("y", b * width + s) if b * width + s < y_len else ZERO
              for s in range(width)] for b in range(blocks)]
    return LayeredCircuit(TOY, width, [Layer("mul", left, right)],
                          x_len, y_len, [], list(range(blocks)),
                          min(x_len, y_len))


def add_circuit(width=1):
    left = [[src("x", i) for i in range(width)]]
    right = [[src("y", i) for i in range(width)]]
    return LayeredCircuit(TOY, width, [Layer("add", left, right)],
                          width, width, [], [0])


def run_pair(circuit, params, x, y, seed=b"t", **kw):
    kw.setdefault("client_seeds", (seed + b"/c0", seed + b"/c1"))
    kw.setdefault("master_seeds", (seed + b"/m0", seed + b"/m1"))
    kw.setdefault("dealer_seed", seed + b"/deal")
    return run_protocol(circuit, params, x, y, **kw)


def random_inputs(rng, circuit):
    p = circuit.field.modulus
    return ([rng.randrange(p) for _ in range(circuit.x_len)],
            [rng.randrange(p) for _ in range(circuit.y_len)])


# ---------------------------------------------------------------------------
# deterministic building blocks


def test_coin_source_matches_commit_open_toss():
    width = 5
    t0, t1 = Tape(b"s0"), Tape(b"s1")
    share0 = t0.elements(coin_share_label("deg", 0), TOY, width)
    share1 = t1.elements(coin_share_label("deg", 0), TOY, width)
    s0 = CoinTossSession(TOY, width, share0, b"\x00" * 32)
    s1 = CoinTossSession(TOY, width, share1, b"\x11" * 32)
    s0.receive_commit(s1.commit_message())
    s1.receive_commit(s0.commit_message())
    out0 = s0.result(s1.open_message())
    out1 = s1.result(s0.open_message())
    source = coin_source_from_seeds(TOY, b"s0", b"s1")
    assert out0 == out1 == source("deg", 0, width)


def test_test_row_layout_frozen():
    circuit = mul_circuit()
    total = circuit.total_rows()
    ids = blinding_row_ids(circuit, 0)
    assert ids.deg == (total, total + 1)
    assert ids.perm == (total + 2, total + 3)
    assert ids.eq_u == (total + 4, total + 6)
    assert ids.eq_v == (total + 5, total + 7)
    later = blinding_row_ids(circuit, 3)
    assert later.deg[0] == total + 3 * ROWS_PER_REPETITION


def test_codeword_vanishing_at_properties():
    spec = WIDE_PARAMS.code
    block = [1, 2, 3, 4]
    cw = codeword_vanishing_at(spec, (3, 7), block)
    assert spec.is_codeword(cw, spec.k)
    assert cw[3] == 0 and cw[7] == 0
    assert spec.decode(cw) == block
    too_many = tuple(range(spec.k - spec.w + 1))
    with pytest.raises(ValueError):
        codeword_vanishing_at(spec, too_many, [0] * spec.w)
    with pytest.raises(ValueError):
        codeword_vanishing_at(spec, (1, 1), [0] * spec.w)


def test_ole_budget_formula():
    circuit = mul_circuit()
    assert mul_block_count(circuit) == 1
    assert oles_needed(circuit, TOY_PARAMS) == TOY_PARAMS.n
    assert oles_needed(add_circuit(), TOY_PARAMS) == 0


# ---------------------------------------------------------------------------
# fidelity against the standalone simulation


def assert_matches_standalone(circuit, params, x, y, seed=b"fid"):
    r0, r1 = run_pair(circuit, params, x, y, seed=seed)
    assert r0.abort_reason is None, r0.abort_reason
    assert r1.abort_reason is None, r1.abort_reason
    source = coin_source_from_seeds(params.field, seed + b"/c0", seed + b"/c1")
    sim = OuterSimulation(circuit, params, (seed + b"/c0", seed + b"/c1"),
                          coin_source=source)
    ref = sim.run(x, y)
    assert ref.abort is None
    f = params.field
    for r in range(circuit.total_rows()):
        assert f.vec_add(r0.share_rows[r], r1.share_rows[r]) == sim.rows[r], r
    for r, pre in sim.pre_reduction.items():
        assert f.vec_add(r0.pre_shares[r], r1.pre_shares[r]) == pre, r
    assert r0.outputs == r1.outputs == ref.outputs
    for (test, rep), vec in r0.broadcasts.items():
        for c, view in enumerate(sim.server_views):
            assert (test, rep, vec[c]) in view.broadcasts
    return r0, r1, ref


def test_share_sums_replay_standalone():
    rng = random.Random(7)
    circuit = random_circuit(rng, TOY, width=1, depth=3, max_blocks=2,
                             protocol_compatible=True)
    x, y = random_inputs(rng, circuit)
    assert_matches_standalone(circuit, TOY_PARAMS, x, y)


def test_wide_params_fidelity():
    rng = random.Random(11)
    circuit = random_circuit(rng, TOY, width=4, depth=3, max_blocks=2,
                             protocol_compatible=True)
    x, y = random_inputs(rng, circuit)
    r0, _, ref = assert_matches_standalone(circuit, WIDE_PARAMS, x, y)
    assert r0.outputs == eval_plain(circuit, x, y)


def test_outputs_match_plain_many_circuits():
    rng = random.Random(23)
    for trial in range(10):
        circuit = random_circuit(rng, TOY, width=1, depth=rng.randint(1, 4),
                                 max_blocks=2, protocol_compatible=True)
        x, y = random_inputs(rng, circuit)
        r0, r1 = run_pair(circuit, TOY_PARAMS, x, y,
                          seed=b"many/%d" % trial)
        assert r0.abort_reason is None, (trial, r0.abort_reason)
        assert r0.outputs == r1.outputs == eval_plain(circuit, x, y), trial


def test_multi_repetition_run():
    params = ProtocolParams(TOY, n=8, w=1, t=1, e=1, k=4, sigma=3)
    circuit = mul_circuit()
    r0, r1 = run_pair(circuit, params, [5], [9], seed=b"reps")
    assert r0.abort_reason is None
    assert r0.outputs == [45]
    assert set(r0.coins) == {("deg", r) for r in range(3)} | \
        {("perm", r) for r in range(3)} | {("eq", r) for r in range(3)}


# ---------------------------------------------------------------------------
# preprocessing accounting


def test_add_only_circuit_needs_no_oles():
    circuit = add_circuit(width=1)
    r0, r1 = run_pair(circuit, TOY_PARAMS, [3], [4], seed=b"add")
    assert r0.outputs == r1.outputs == [7]
    assert r0.ole_used == r1.ole_used == 0


def test_ole_consumption_is_exact():
    circuit = mul_circuit()
    need = oles_needed(circuit, TOY_PARAMS)
    pools = make_memory_pools(TOY, need, b"exact")
    r0, r1 = run_pair(circuit, TOY_PARAMS, [5], [6], seed=b"exact",
                      pools=pools)
    assert r0.outputs == [30]
    for r in (r0, r1):
        assert r.ole_sender_used == need
        assert r.ole_receiver_used == need
    assert len(pools[0].send) == len(pools[1].send) == 0


def test_short_preprocessing_aborts_cleanly():
    circuit = mul_circuit()
    pools = make_memory_pools(TOY, oles_needed(circuit, TOY_PARAMS) - 1,
                              b"short")
    r0, r1 = run_pair(circuit, TOY_PARAMS, [5], [6], seed=b"short",
                      pools=pools)
    assert r0.abort_reason.startswith("preprocessing")
    assert r1.abort_reason.startswith("preprocessing")
    assert r0.outputs is None and r1.outputs is None


# ---------------------------------------------------------------------------
# transcripts


def test_transcripts_deterministic():
    circuit = mul_circuit(width=1, x_len=1, y_len=1)
    transcripts = []
    for _ in range(2):
        chans = memory_channel_pair()
        r0, r1 = run_pair(circuit, TOY_PARAMS, [12], [34], seed=b"det",
                          channels=chans)
        assert r0.outputs == [(12 * 34) % 257]
        transcripts.append((b"".join(chans[0].transcript),
                            b"".join(chans[1].transcript),
                            chans[0].ledger.report()))
    assert transcripts[0] == transcripts[1]


def test_tcp_run_matches_memory_transcript():
    circuit = mul_circuit()
    chans = memory_channel_pair()
    run_pair(circuit, TOY_PARAMS, [7], [8], seed=b"tcp", channels=chans)

    listener = TcpChannel.listen()
    got = {}

    def serve():
        got["chan"] = listener.accept(timeout=30)

    t = threading.Thread(target=serve)
    t.start()
    c1 = TcpChannel.connect(listener.host, listener.port)
    t.join()
    c0 = got["chan"]
    try:
        r0, r1 = run_pair(circuit, TOY_PARAMS, [7], [8], seed=b"tcp",
                          channels=(c0, c1))
        assert r0.outputs == r1.outputs == [56]
        assert c0.transcript == chans[0].transcript
        assert c1.transcript == chans[1].transcript
        assert c0.ledger.report() == chans[0].ledger.report()
    finally:
        c0.close()
        c1.close()


# ---------------------------------------------------------------------------
# deviations: broadcast tampering


class BroadcastTamper(CombinedAdversary):
    def __init__(self, col):
        self.col = col

    def on_broadcast_share(self, party, test, rep, vec):
        vec = list(vec)
        vec[self.col] = (vec[self.col] + 1) % party.field.modulus
        return vec


def test_tampered_broadcast_unwatched_fails_public_test():
    # tampered column is not on the honest watchlist, so the public
    # degree check is what catches the inconsistency, for both parties
    circuit = mul_circuit()
    r0, r1 = run_pair(circuit, TOY_PARAMS, [5], [6], seed=b"tamper",
                      selections=((3,), (5,)),
                      adversaries=(None, BroadcastTamper(0)))
    assert r0.abort_reason.startswith("degree"), r0.abort_reason
    assert r1.abort_reason.startswith("degree"), r1.abort_reason
    assert r0.outputs is None and r1.outputs is None


def test_tampered_broadcast_watched_fails_consistency():
    circuit = mul_circuit()
    r0, r1 = run_pair(circuit, TOY_PARAMS, [5], [6], seed=b"tamper",
                      selections=((0,), (5,)),
                      adversaries=(None, BroadcastTamper(0)))
    assert r0.abort_reason.startswith("consistency"), r0.abort_reason
    assert "broadcast" in r0.abort_reason
    assert r1.aborted


# ---------------------------------------------------------------------------
# deviations: multiplication messages


class DeltaFault(CombinedAdversary):
    """Shift the first multiplication message at one server column."""

    def __init__(self, col):
        self.col = col

    def on_gmw_delta(self, party, row, vec):
        vec = list(vec)
        vec[self.col] = (vec[self.col] + 1) % party.field.modulus
        return vec


def test_gmw_fault_on_watched_server_fails_consistency():
    circuit = mul_circuit(width=4, x_len=4, y_len=4)
    r0, r1 = run_pair(circuit, WIDE_PARAMS, [1, 2, 3, 4], [5, 6, 7, 8],
                      seed=b"gmw", selections=((3, 9), (1, 2)),
                      adversaries=(None, DeltaFault(3)))
    assert r0.abort_reason.startswith("consistency"), r0.abort_reason
    assert "delta" in r0.abort_reason
    assert r1.aborted


def test_gmw_fault_on_unwatched_server_fails_equality_test():
    # no watched column sees the fault; the shifted product column makes
    # the pre- vs post-reduction difference high-degree and the public
    # equality test aborts the run for both parties
    circuit = mul_circuit(width=4, x_len=4, y_len=4)
    r0, r1 = run_pair(circuit, WIDE_PARAMS, [1, 2, 3, 4], [5, 6, 7, 8],
                      seed=b"gmw", selections=((9, 12), (1, 2)),
                      adversaries=(None, DeltaFault(3)))
    assert r0.abort_reason.startswith("equality"), r0.abort_reason
    assert r1.abort_reason.startswith("equality"), r1.abort_reason


# ---------------------------------------------------------------------------
# deviations: watch reports


class WatchReportLie(CombinedAdversary):
    """Report a wrong share value for one server on every fresh row."""

    def __init__(self, col):
        self.col = col

    def on_watch_share(self, party, row, values):
        values = list(values)
        values[self.col] = (values[self.col] + 1) % party.field.modulus
        return values


def test_watch_report_lie_caught_only_if_watched():
    circuit = mul_circuit()
    lie_col = 2
    r0, r1 = run_pair(circuit, TOY_PARAMS, [5], [6], seed=b"lie",
                      selections=((lie_col,), (4,)),
                      adversaries=(None, WatchReportLie(lie_col)))
    assert r0.abort_reason.startswith("consistency"), r0.abort_reason
    assert r1.aborted

    r0, r1 = run_pair(circuit, TOY_PARAMS, [5], [6], seed=b"lie",
                      selections=((5,), (4,)),
                      adversaries=(None, WatchReportLie(lie_col)))
    assert r0.abort_reason is None
    assert r0.outputs == [30]


def test_corrupted_watch_blob_detected():
    key = b"\x07" * 32
    tracker = WatchTracker(TOY, {4: key})
    blob = seal(key, 0, b"\x00" * 32)
    from packedmpc.combined import ConsistencyFailure
    with pytest.raises(ConsistencyFailure):
        tracker.open_blob(4, blob[:-1] + bytes([blob[-1] ^ 1]))
    with pytest.raises(ConsistencyFailure):
        WatchTracker(TOY, {4: b"\x08" * 32}).open_blob(4, blob)
    assert tracker.open_blob(4, blob) == b"\x00" * 32


# ---------------------------------------------------------------------------
# MAC layer


def test_mac_augmentation_preserves_plain_outputs():
    rng = random.Random(41)
    for trial in range(5):
        circuit = random_circuit(rng, TOY, width=2, depth=rng.randint(1, 3),
                                 max_blocks=2, protocol_compatible=True)
        aug, layout = augment_with_macs(circuit)
        x, y = random_inputs(rng, circuit)
        x_ext = mac_extend(TOY, x, Tape(b"k/%d" % trial), "mac")
        y_ext = mac_extend(TOY, y, Tape(b"k2/%d" % trial), "mac")
        assert eval_plain(aug, x_ext, y_ext) == eval_plain(circuit, x, y)
        # honest tag differences are identically zero
        trace = eval_trace(aug, x_ext, y_ext)
        revealed = []
        for b in aug.output_blocks:
            revealed.extend(trace[aug.row_index(aug.depth, "out", b)])
        assert layout.d_values(revealed) == [0] * layout.element_count
        assert layout.original_outputs(revealed) == eval_plain(circuit, x, y)


def test_mac_d_values_expose_inconsistent_input():
    circuit = mul_circuit(width=2, x_len=2, y_len=2)
    aug, layout = augment_with_macs(circuit)
    x_ext = mac_extend(TOY, [5, 6], Tape(b"dk"), "mac")
    y_ext = mac_extend(TOY, [7, 8], Tape(b"dk2"), "mac")
    bad = list(x_ext)
    bad[1] = (bad[1] + 3) % 257  # shift a value, keep its old tag
    trace = eval_trace(aug, bad, y_ext)
    revealed = []
    for b in aug.output_blocks:
        revealed.extend(trace[aug.row_index(aug.depth, "out", b)])
    d = layout.d_values(revealed)
    k1 = x_ext[2 + 1]  # key section starts at x_len
    assert d[1] == (-k1 * 3) % 257
    assert d[0] == 0 and d[2] == d[3] == 0


def test_mac_extension_validation():
    ext = mac_extend(TOY, [5], Tape(b"zk"), "mac")
    validate_mac_extension(TOY, ext, 1)
    bad = list(ext)
    bad[1] = 0  # zero k1 would make the tag independent of the value
    with pytest.raises(ValueError):
        validate_mac_extension(TOY, bad, 1)
    circuit = mul_circuit()
    aug, layout = augment_with_macs(circuit)
    y_ext = mac_extend(TOY, [6], Tape(b"zk2"), "mac")
    with pytest.raises(ValueError):
        run_protocol(aug, TOY_PARAMS, bad, y_ext, mac=layout)


def test_mac_honest_run_has_zero_flag():
    circuit = mul_circuit(width=1, x_len=2, y_len=2)
    r0, r1, layout = run_f_prime(circuit, TOY_PARAMS, [5, 6], [7, 8],
                                 client_seeds=(b"m/c0", b"m/c1"),
                                 master_seeds=(b"m/m0", b"m/m1"))
    assert r0.abort_reason is None, r0.abort_reason
    assert r0.mac_flag == r1.mac_flag == 0
    assert r0.outputs == r1.outputs == [35, 48]


# ---------------------------------------------------------------------------
# the watch-evading shift and why the MAC is needed


def raw_copy_plan(circuit, kind, index, delta):
    """Every encoded row holding input (kind, index), with the slot shifts
    a consistent substitution of that input requires."""
    plan = {}
    for j, layer in enumerate(circuit.layers, start=1):
        for side_kind, side in (("left", layer.left), ("right", layer.right)):
            for b, block in enumerate(side):
                if is_gather_block(block, j):
                    continue
                if any(s.kind == kind and s.index == index for s in block):
                    r = circuit.row_index(j, side_kind, b)
                    plan[r] = [delta if (s.kind == kind and s.index == index)
                               else 0 for s in block]
    return plan


class EvasiveShift(CombinedAdversary):
    """Shift all copies of a peer input by a codeword that vanishes on
    the peer's watched servers; every consistency check then passes."""

    def __init__(self, spec, plan, peer_watchlist):
        self.spec = spec
        self.plan = plan
        self.watched = tuple(peer_watchlist)

    def on_split_received(self, party, row, sigma):
        if row in self.plan:
            shift = codeword_vanishing_at(self.spec, self.watched,
                                          self.plan[row])
            return party.field.vec_add(sigma, shift)
        return sigma


def test_watch_evading_shift_defeats_everything_but_the_mac():
    circuit = mul_circuit()
    spec = TOY_PARAMS.code
    honest_watchlist = (2,)
    delta = 3

    # without the MAC the run completes silently with a shifted output
    plan = raw_copy_plan(circuit, "x", 0, delta)
    assert plan
    adv = EvasiveShift(spec, plan, honest_watchlist)
    r0, r1 = run_pair(circuit, TOY_PARAMS, [5], [6], seed=b"evade",
                      selections=(honest_watchlist, (6,)),
                      adversaries=(None, adv))
    assert r0.abort_reason is None, r0.abort_reason
    assert r0.outputs == [((5 + delta) * 6) % 257]
    assert r0.outputs != eval_plain(circuit, [5], [6])

    # with the MAC, the same shift must hit the tag path too and the
    # revealed tag difference flags it through the coin combination
    aug, layout = augment_with_macs(circuit)
    aug_plan = raw_copy_plan(aug, "x", 0, delta)
    assert len(aug_plan) > len(plan)
    adv = EvasiveShift(spec, aug_plan, honest_watchlist)
    r0, r1, _ = run_f_prime(circuit, TOY_PARAMS, [5], [6],
                            mac_seed=b"evade/mac",
                            client_seeds=(b"evade/c0", b"evade/c1"),
                            master_seeds=(b"evade/m0", b"evade/m1"),
                            dealer_seed=b"evade/deal",
                            selections=(honest_watchlist, (6,)),
                            adversaries=(None, adv))
    assert r0.abort_reason == "mac/nonzero-flag", r0.abort_reason
    assert r1.abort_reason == "mac/nonzero-flag", r1.abort_reason
    assert r0.outputs is None and r1.outputs is None
    # the flag value is exactly the coin-weighted key times the shift
    x_ext = mac_extend(TOY, [5], Tape(b"evade/mac/x"), "mac")
    k1 = x_ext[1]
    coin = r0.coins[("mac", 0)]
    assert r0.mac_flag == (-coin[0] * k1 * delta) % 257
    assert r0.mac_flag == r1.mac_flag != 0


# ---------------------------------------------------------------------------
# misc guards


def test_input_length_validated():
    circuit = mul_circuit()
    with pytest.raises(ValueError):
        run_pair(circuit, TOY_PARAMS, [1, 2], [3], seed=b"len")
