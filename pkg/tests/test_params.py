"""Parameter search: frozen outputs, exhaustive cross-checks, file I/O."""

import json
import math
from fractions import Fraction

import pytest

from packedmpc.field import GOLDILOCKS, TOY
from packedmpc.outer import ProtocolParams
from packedmpc.params import (
    ParamSearchError,
    load_params,
    params_from_dict,
    params_to_dict,
    save_params,
    select_params,
    sigma_for,
    structure_ok,
)


def exact_bound(modulus, n, w, t, e, sigma):
    """Combined failure bound, written out independently of the library."""
    base = Fraction(e + 2, modulus ** sigma)
    miss = Fraction(n - e, n) ** t
    cheat = Fraction(3 * e + 2 * w + 2 * t, n) ** t
    return base + miss + cheat


def brute_force(n, target_s, field=GOLDILOCKS, max_sigma=64):
    """Exhaustive scan over every admissible parameter set.

    Returns the (w, k, t, e, sigma) with the largest w (ties to larger
    k) whose exact bound meets the target, or None.
    """
    target = Fraction(1, 2 ** target_s)
    best = None
    k = 1
    while 2 * k + 1 <= n:
        for w in range(1, k - 1):
            if n < 2 * k + w:
                continue
            for t in range(1, k - w):
                for e in range(0, k - w - t):
                    if not (k > t + e + w and 3 * e < n - k):
                        continue
                    for sigma in range(1, max_sigma + 1):
                        bound = exact_bound(field.modulus, n, w, t, e, sigma)
                        if min(bound, Fraction(1)) <= target:
                            cand = (w, k, t, e, sigma)
                            if best is None or cand[:2] > best[:2]:
                                best = cand
                            break
                        if Fraction(e + 2, field.modulus ** sigma) <= target:
                            break  # sigma no longer helps
        k *= 2
    return best


# ---------------------------------------------------------------------------
# frozen search outputs


def test_select_512_servers_no_budget():
    p = select_params(512, 0)
    assert (p.k, p.w, p.t, p.e, p.sigma) == (128, 126, 1, 0, 1)
    assert p.n == 512 and p.field is GOLDILOCKS
    assert structure_ok(p.n, p.k, p.w, p.t, p.e)


def test_select_2048_servers_40_bits():
    p = select_params(2048, 40)
    assert (p.k, p.w, p.t, p.e, p.sigma) == (512, 48, 213, 250, 1)
    bound = exact_bound(GOLDILOCKS.modulus, p.n, p.w, p.t, p.e, p.sigma)
    assert bound <= Fraction(1, 2 ** 40)
    # the budget is met with almost nothing to spare
    assert math.log2(float(bound)) == pytest.approx(-40.0, abs=0.5)


def test_select_matches_brute_force_small_n():
    for n in (16, 32, 64, 128):
        expect = brute_force(n, 0)
        got = select_params(n, 0)
        assert expect is not None
        assert (got.w, got.k) == expect[:2], f"n={n}"


def test_select_requires_power_of_two_n():
    with pytest.raises(ParamSearchError) as exc:
        select_params(24, 0)
    assert exc.value.constraint == "n power of two"


def test_select_32_no_budget_frozen():
    p = select_params(32, 0)
    assert (p.k, p.w, p.t, p.e, p.sigma) == (8, 6, 1, 0, 1)


def test_select_respects_positive_budget_exactly():
    # small n with a tiny budget the brute force says is feasible
    expect = brute_force(256, 5)
    got = select_params(256, 5)
    assert expect is not None
    assert (got.w, got.k, got.t, got.e, got.sigma) == expect
    bound = exact_bound(GOLDILOCKS.modulus, 256, got.w, got.t, got.e,
                        got.sigma)
    assert bound <= Fraction(1, 2 ** 5)


def test_select_512_servers_40_bits_infeasible():
    with pytest.raises(ParamSearchError) as exc:
        select_params(512, 40)
    assert exc.value.constraint == "soundness target"


def test_select_8_servers_infeasible():
    with pytest.raises(ParamSearchError) as exc:
        select_params(8, 0)
    assert exc.value.constraint == "n >= 2k + w"
    assert brute_force(8, 0) is None


def test_select_64_servers_10_bits_infeasible():
    # exhaustive confirmation that no admissible set reaches 2^-10
    assert brute_force(64, 10) is None
    with pytest.raises(ParamSearchError) as exc:
        select_params(64, 10)
    assert exc.value.constraint == "soundness target"
    assert "2^-10" in str(exc.value)


def test_select_rejects_silly_inputs():
    with pytest.raises(ParamSearchError):
        select_params(1, 0)
    with pytest.raises(ParamSearchError):
        select_params(32, -1)


def test_select_is_deterministic():
    a = select_params(2048, 40)
    b = select_params(2048, 40)
    assert params_to_dict(a) == params_to_dict(b)


def test_worked_example_structure():
    # a published reference point: n=512 with k=128, w=64, t=32, e=31
    assert structure_ok(512, 128, 64, 32, 31)
    p = ProtocolParams(GOLDILOCKS, n=512, w=64, t=32, e=31, k=128)
    assert p.k > p.t + p.e + p.w


def test_sigma_for():
    assert sigma_for(TOY, 0, 8) == 2
    assert sigma_for(GOLDILOCKS, 250, 40) == 1
    assert sigma_for(TOY, 0, 0) == 1
    # unreachable target returns None instead of looping forever
    assert sigma_for(TOY, 0, 64 * 9) is None


def test_structure_ok_edges():
    assert structure_ok(32, 8, 3, 2, 2)
    assert not structure_ok(32, 8, 5, 2, 2)    # k > t+e+w violated
    assert structure_ok(50, 16, 1, 1, 11)
    assert not structure_ok(50, 16, 1, 1, 12)  # 3e = n-k not strict
    assert not structure_ok(16, 8, 3, 2, 1)    # n < 2k+w


# ---------------------------------------------------------------------------
# parameter files


def test_params_roundtrip(tmp_path):
    p = ProtocolParams(TOY, n=32, w=3, t=2, e=2, k=8)
    path = tmp_path / "p.json"
    save_params(str(path), p)
    q = load_params(str(path))
    assert params_to_dict(p) == params_to_dict(q)
    assert q.field is TOY

    data = json.loads(path.read_text())
    assert data["field"] == "toy"
    assert set(data) == {"field", "n", "k", "w", "t", "e", "sigma",
                         "kappa_bits", "stat_bits"}


def test_params_file_missing_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"field": "toy", "n": 32, "k": 8,
                                "w": 3, "t": 2}))
    with pytest.raises(ValueError, match="missing key 'e'"):
        load_params(str(path))


def test_params_file_not_an_object(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("[1, 2, 3]")
    with pytest.raises(ValueError, match="JSON object"):
        load_params(str(path))


def test_params_file_unknown_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"field": "nope", "n": 32, "k": 8,
                                "w": 3, "t": 2, "e": 2}))
    with pytest.raises(ValueError):
        load_params(str(path))


def test_params_file_routes_through_validator(tmp_path):
    # violates 3e < n - k, so the ProtocolParams validator must fire
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"field": "toy", "n": 32, "k": 8,
                                "w": 3, "t": 2, "e": 9}))
    with pytest.raises(ValueError):
        load_params(str(path))


def test_params_from_dict_defaults():
    p = params_from_dict({"field": "toy", "n": 32, "k": 8,
                          "w": 3, "t": 2, "e": 2})
    assert (p.sigma, p.kappa_bits, p.stat_bits) == (1, 128, 40)
