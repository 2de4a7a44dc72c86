"""Parameter selection against a statistical failure target.

``select_params`` picks a server count's companion parameters (packing
width w, watchlist size t, tolerated faults e, message length k) so the
combined two-party failure bound stays below ``2**-target_s``.  The
search is deterministic and documented in the function docstring; the
winning set is re-verified in exact rational arithmetic before it is
returned, so float shortcuts in the scan can never leak through.

Parameter files are flat JSON so runs on both endpoints can pin the
same numbers; ``load_params`` routes everything through the
``ProtocolParams`` validator.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction

from .field import GOLDILOCKS, Field, field_by_name, field_name
from .outer import ProtocolParams, soundness_fraction

MAX_SIGMA = 64


class ParamSearchError(ValueError):
    """No admissible parameter set; ``constraint`` names the binding limit."""

    def __init__(self, message: str, constraint: str):
        super().__init__(message)
        self.constraint = constraint


def sigma_for(field: Field, e: int, target_s: int) -> int | None:
    """Smallest repetition count sigma with (e+2)/|F|^sigma <= 2^-target_s."""
    target = Fraction(1, 2 ** target_s)
    for sigma in range(1, MAX_SIGMA + 1):
        if Fraction(e + 2, field.modulus ** sigma) <= target:
            return sigma
    return None


def structure_ok(n: int, k: int, w: int, t: int, e: int) -> bool:
    """Shape constraints for the two-party protocol.

    Beyond the encoding constraints (k > t+e+w, 3e < n-k) the combined
    run needs n >= 2k + w: with one column less the degree test's
    acceptance bound collapses to the row length and stops binding.
    """
    return k > t + e + w and 3 * e < n - k and n >= 2 * k + w


def _float_bound(field_size: int, n: int, w: int, t: int, e: int,
                 sigma: int) -> float:
    base = (e + 2) / float(field_size) ** sigma
    miss = (1.0 - e / n) ** t
    cheat = ((3 * e + 2 * w + 2 * t) / n) ** t
    return base + miss + cheat


def _exact_ok(field: Field, n: int, k: int, w: int, t: int, e: int,
              sigma: int, target_s: int) -> bool:
    bound = soundness_fraction(field.modulus, n, w, t, e, sigma, combined=True)
    return min(bound, Fraction(1)) <= Fraction(1, 2 ** target_s)


def select_params(n: int, target_s: int,
                  field: Field = GOLDILOCKS) -> ProtocolParams:
    """Choose protocol parameters for n servers and a 2^-target_s budget.

    Search order, fixed so both endpoints derive identical parameters:

    1. k runs over powers of two, largest first, with 2k + 1 <= n.
    2. For each k, w runs downward from min(n - 2k, k - 2).
    3. For each (k, w), t runs upward from 1; e starts at the smallest
       value whose watchlist miss term (1 - e/n)^t meets the target and
       grows only while the structure allows.
    4. The first (t, e) that passes the full bound closes the (k, w)
       pair; across k the largest w wins, ties going to the larger k.

    The winner is re-verified with exact rationals.  Infeasible inputs
    raise ParamSearchError naming the binding constraint.
    """
    if n < 2:
        raise ParamSearchError("need at least two servers", "n >= 2")
    if n & (n - 1):
        raise ParamSearchError(
            f"n={n} is not a power of two; the code's evaluation "
            "domain requires one", "n power of two")
    if target_s < 0:
        raise ParamSearchError("statistical budget must be nonnegative",
                               "target_s >= 0")
    target = Fraction(1, 2 ** target_s)
    target_float = float(target)

    k_values = []
    k = 1
    while 2 * k + 1 <= n:
        k_values.append(k)
        k *= 2
    k_values.reverse()
    if not k_values:
        raise ParamSearchError(
            f"n={n} leaves no room for any power-of-two k: need n >= 2k + w",
            "n >= 2k + w")

    best: tuple[int, int, int, int, int] | None = None  # (w, k, t, e, sigma)
    closest = (math.inf, None)  # best float bound seen, for error reporting
    saw_width = False

    for k in k_values:
        w_cap = min(n - 2 * k, k - 2)
        found_w = None
        for w in range(w_cap, 0, -1):
            if best is not None and w <= best[0]:
                break
            saw_width = True
            room = k - w - 1  # t + e budget from k > t + e + w
            for t in range(1, room + 1):
                if target_s == 0:
                    e_lo = 0
                else:
                    e_lo = math.ceil(n * (1.0 - 2.0 ** (-target_s / t)))
                e_hi = min(room - t, (n - k - 1) // 3)
                if e_lo > e_hi:
                    continue
                for e in range(e_lo, e_hi + 1):
                    sigma = sigma_for(field, e, target_s)
                    if sigma is None:
                        continue
                    bound = _float_bound(field.modulus, n, w, t, e, sigma)
                    if bound < closest[0]:
                        closest = (bound, (k, w, t, e, sigma))
                    if target_s == 0 or bound <= target_float * (1 + 1e-9):
                        if _exact_ok(field, n, k, w, t, e, sigma, target_s):
                            found_w = (w, k, t, e, sigma)
                            break
                    else:
                        # cheat term grows with e; once past target, stop
                        cheat = ((3 * e + 2 * w + 2 * t) / n) ** t
                        if cheat > target_float:
                            break
                if found_w:
                    break
            if found_w:
                break
        if found_w and (best is None or found_w[0] > best[0]):
            best = found_w

    if best is None:
        if not saw_width:
            raise ParamSearchError(
                f"n={n}: every power-of-two k leaves no width, "
                "binding constraint n >= 2k + w with k > t + e + w",
                "n >= 2k + w")
        bound, at = closest
        detail = ("; the watchlist miss term needs more t and e room "
                  "than t + e + w < k allows")
        if at is not None:
            k, w, t, e, sigma = at
            terms = {
                "field-size term (e+2)/|F|^sigma":
                    (e + 2) / float(field.modulus) ** sigma,
                "watchlist miss term (1-e/n)^t": (1.0 - e / n) ** t,
                "emulation cheat term ((3e+2w+2t)/n)^t":
                    ((3 * e + 2 * w + 2 * t) / n) ** t,
            }
            worst = max(terms, key=terms.get)
            detail = (f"; best candidate k={k} w={w} t={t} e={e} reaches "
                      f"2^{math.log2(bound):.1f}, dominated by the {worst}")
        raise ParamSearchError(
            f"no parameters for n={n} meet the 2^-{target_s} budget{detail}",
            "soundness target")

    w, k, t, e, sigma = best
    params = ProtocolParams(field, n=n, w=w, t=t, e=e, k=k, sigma=sigma,
                            stat_bits=target_s)
    if not _exact_ok(field, n, k, w, t, e, sigma, target_s):
        raise ParamSearchError(
            "exact verification rejected the selected parameters",
            "soundness target")
    return params


# ---------------------------------------------------------------------------
# parameter files


_REQUIRED_KEYS = ("field", "n", "k", "w", "t", "e")


def params_to_dict(params: ProtocolParams) -> dict:
    return {
        "field": field_name(params.field),
        "n": params.n,
        "k": params.k,
        "w": params.w,
        "t": params.t,
        "e": params.e,
        "sigma": params.sigma,
        "kappa_bits": params.kappa_bits,
        "stat_bits": params.stat_bits,
    }


def params_from_dict(data: dict) -> ProtocolParams:
    for key in _REQUIRED_KEYS:
        if key not in data:
            raise ValueError(f"parameter file missing key {key!r}")
    field = field_by_name(data["field"])
    return ProtocolParams(
        field,
        n=int(data["n"]), w=int(data["w"]), t=int(data["t"]),
        e=int(data["e"]), k=int(data["k"]),
        sigma=int(data.get("sigma", 1)),
        kappa_bits=int(data.get("kappa_bits", 128)),
        stat_bits=int(data.get("stat_bits", 40)),
    )


def save_params(path: str, params: ProtocolParams) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path: str) -> ProtocolParams:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("parameter file must hold a JSON object")
    return params_from_dict(data)
