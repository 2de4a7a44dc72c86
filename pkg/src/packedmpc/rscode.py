"""Packed Reed-Solomon secret sharing.

A share vector is the evaluation of a polynomial on a fixed grid of n
points (eta), and the w packed secrets are the polynomial's values at w
further points (zeta) disjoint from the grid.  Degree bounds give the
two code layers used by the protocol:

* L  = degree < k   (fresh sharings; k - w free coefficients hide the block)
* L' = degree < 2k  (pointwise products of two L codewords)

Grids are FFT-friendly: eta is the order-n subgroup of the field's
two-adic group, and zeta plus the k - w auxiliary encoding positions are
the first k points of a multiplicative coset (shifted by the field
generator, which lies outside every proper two-adic subgroup, so the
sets never meet; the constructor re-checks disjointness explicitly).
k may be any size up to n/2; when k is itself a power of two the coset
has exactly order k and encoding is a pair of FFTs.
"""

from __future__ import annotations

import math
from itertools import combinations

from .field import Field, fft, ifft, interpolate, poly_eval, poly_mul


class CodeSpec:
    """Evaluation grids and codec for one (n, k, w) parameter choice."""

    def __init__(self, field: Field, n: int, k: int, w: int):
        if n & (n - 1):
            raise ValueError("n must be a power of two")
        if not 1 <= w <= k:
            raise ValueError("need 1 <= w <= k")
        if n < 2 * k:
            raise ValueError("need n >= 2k so products stay decodable")
        if n > (1 << field.two_adicity):
            raise ValueError("n exceeds the field's two-adic subgroup")
        self.field = field
        self.n = n
        self.k = k
        self.w = w
        p = field.modulus
        omega_n = field.root_of_unity(n)
        self.eta = [pow(omega_n, c, p) for c in range(n)]
        # coset of the smallest power-of-two subgroup that holds k points
        cap = 1
        while cap < k:
            cap <<= 1
        omega_c = field.root_of_unity(cap)
        shift = field.generator
        self._coset_order = cap
        self.coset = [shift * pow(omega_c, j, p) % p for j in range(k)]
        self.zeta = self.coset[:w]
        self.aux = self.coset[w:]
        self._shift_pows = [pow(shift, i, p) for i in range(cap)]
        self._shift_inv_pows = [field.inv(s) for s in self._shift_pows]
        self._vanish_coset: list[int] | None = None
        if len(set(self.eta) | set(self.coset)) != n + k:
            raise ValueError("evaluation grids collide")

    # -- polynomial <-> coset values --------------------------------------

    def _coeffs_from_coset(self, vals: list[int]) -> list[int]:
        if self.k == self._coset_order:
            # values at shift * omega^j are values of q(Y) = p(shift * Y) on
            # the plain subgroup; undo the shift per coefficient.
            q = ifft(vals, self.field)
            p = self.field.modulus
            return [c * s % p for c, s in zip(q, self._shift_inv_pows)]
        return interpolate(self.coset, vals, self.field)

    def coeffs_of(self, shares: list[int]) -> list[int]:
        """Full-grid interpolation: exact coefficients for any share vector."""
        if len(shares) != self.n:
            raise ValueError("expected n shares")
        return ifft(shares, self.field)

    def _shares_from_coeffs(self, coeffs: list[int]) -> list[int]:
        padded = list(coeffs) + [0] * (self.n - len(coeffs))
        return fft(padded, self.field)

    # -- encode / decode ---------------------------------------------------

    def encode(self, block: list[int], aux_values: list[int]) -> list[int]:
        """Shares of the unique degree-<k polynomial through the block at
        zeta and the supplied values at the auxiliary coset points.  Uniform
        aux_values give a uniform sharing conditioned on the block."""
        if len(block) != self.w:
            raise ValueError("block must have width w")
        if len(aux_values) != self.k - self.w:
            raise ValueError("need k - w auxiliary values")
        coeffs = self._coeffs_from_coset(list(block) + list(aux_values))
        return self._shares_from_coeffs(coeffs)

    def encode_canonical(self, block: list[int]) -> list[int]:
        """Deterministic encoding (auxiliary values zero); public blocks and
        the padding step of degree reduction use this."""
        return self.encode(block, [0] * (self.k - self.w))

    def encode_product_layer(self, block: list[int], aux_values: list[int],
                             extra_coeffs: list[int]) -> list[int]:
        """Random degree-<2k encoding of a block: base degree-<k encoding
        plus (vanishing polynomial of the k coset points) * (free degree-<k
        polynomial).  Used for equality-test blinding rows."""
        if len(extra_coeffs) != self.k:
            raise ValueError("need k free coefficients")
        base = self._coeffs_from_coset(list(block) + list(aux_values))
        prod = poly_mul(self._vanishing_coset(), extra_coeffs, self.field)
        p = self.field.modulus
        base = base + [0] * (len(prod) - len(base))
        coeffs = [(a + b) % p for a, b in zip(base, prod)]
        return self._shares_from_coeffs(coeffs)

    def _vanishing_coset(self) -> list[int]:
        if self._vanish_coset is None:
            poly = [1]
            for pt in self.coset:
                poly = poly_mul(poly, [(-pt) % self.field.modulus, 1], self.field)
            self._vanish_coset = poly
        return self._vanish_coset

    def truncated_coeffs(self, shares: list[int], degree_bound: int) -> list[int]:
        """Canonical projection: full-grid interpolation truncated to the
        degree bound.  Agrees with exact interpolation on codewords and is
        total on arbitrary vectors."""
        return self.coeffs_of(shares)[:degree_bound]

    def decode(self, shares: list[int], degree_bound: int | None = None) -> list[int]:
        bound = self._bound(degree_bound)
        coeffs = self.truncated_coeffs(shares, bound)
        return [poly_eval(coeffs, z, self.field) for z in self.zeta]

    def decode_strict(self, shares: list[int], degree_bound: int | None = None) -> list[int]:
        bound = self._bound(degree_bound)
        if not self.is_codeword(shares, bound):
            raise ValueError("shares are not a codeword at the given bound")
        return self.decode(shares, bound)

    def decode_from_subset(self, indices: list[int], values: list[int],
                           degree_bound: int) -> list[int]:
        """General-position interpolation through a share subset; test and
        cross-check path only."""
        if len(indices) < degree_bound:
            raise ValueError("need at least degree_bound shares")
        xs = [self.eta[i] for i in indices]
        coeffs = interpolate(xs, values, self.field)
        if any(c != 0 for c in coeffs[degree_bound:]):
            raise ValueError("subset does not lie on a low-degree polynomial")
        return [poly_eval(coeffs, z, self.field) for z in self.zeta]

    def is_codeword(self, shares: list[int], degree_bound: int | None = None) -> bool:
        bound = self._bound(degree_bound)
        if len(shares) != self.n:
            return False
        coeffs = self.coeffs_of(shares)
        return all(c == 0 for c in coeffs[bound:])

    def _bound(self, degree_bound: int | None) -> int:
        if degree_bound is None:
            return self.k
        if not 1 <= degree_bound <= self.n:
            raise ValueError("degree bound out of range")
        return degree_bound

    # -- degree reduction ---------------------------------------------------

    def degree_reduce(self, shares: list[int]) -> list[int]:
        """The public linear map A: interpolate at bound 2k, read the block,
        re-encode canonically.  Sends L' onto L preserving decoded blocks;
        idempotent on L'."""
        coeffs = self.truncated_coeffs(shares, 2 * self.k)
        block = [poly_eval(coeffs, z, self.field) for z in self.zeta]
        return self.encode_canonical(block)

    def degree_reduce_matrix(self) -> list[list[int]]:
        """Materialized n x n matrix of degree_reduce."""
        cols = []
        for c in range(self.n):
            unit = [0] * self.n
            unit[c] = 1
            cols.append(self.degree_reduce(unit))
        return [[cols[c][r] for c in range(self.n)] for r in range(self.n)]

    # -- distance -----------------------------------------------------------

    def distance_to_code(self, shares: list[int], degree_bound: int | None = None,
                         max_subsets: int = 500_000) -> tuple[int, list[int]]:
        """Exact distance to the bound-degree code and the positions where
        the vector differs from the nearest codeword (lexicographically
        first among ties).  Every codeword within distance n - bound agrees
        with the vector on >= bound positions, so scanning all bound-sized
        position subsets finds the true nearest.  Refuses when the subset
        count is too large for exhaustive search."""
        bound = self._bound(degree_bound)
        if len(shares) != self.n:
            raise ValueError("expected n shares")
        if math.comb(self.n, bound) > max_subsets:
            raise ValueError(
                f"C({self.n},{bound}) subsets exceed the exhaustive search limit")
        best_d = self.n + 1
        best: list[int] | None = None
        seen: set[tuple[int, ...]] = set()
        for subset in combinations(range(self.n), bound):
            xs = [self.eta[i] for i in subset]
            ys = [shares[i] for i in subset]
            coeffs = interpolate(xs, ys, self.field)
            cand = self._shares_from_coeffs(coeffs)
            key = tuple(cand)
            if key in seen:
                continue
            seen.add(key)
            d = sum(1 for a, b in zip(cand, shares) if a != b)
            if d < best_d or (d == best_d and best is not None and list(key) < best):
                best_d, best = d, list(key)
        assert best is not None
        positions = [i for i in range(self.n) if best[i] != shares[i]]
        return best_d, positions
