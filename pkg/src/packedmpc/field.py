"""Prime-field arithmetic.

Field elements are plain Python ints in [0, p).  Two fields are used
throughout the package:

* the production field p = 2^64 - 2^32 + 1, a 64-bit prime whose
  multiplicative group contains a subgroup of order 2^32, so radix-2
  FFTs work for every power-of-two size up to 2^32.  7 generates the
  full multiplicative group.
* a toy field p = 257 (two-adicity 8, generator 3) small enough for
  exhaustive and Monte Carlo arguments in the test suite.

Serialization is fixed-width: 8 bytes little-endian per element for
every field, values >= p are rejected on input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

GOLDILOCKS_PRIME = (1 << 64) - (1 << 32) + 1
GOLDILOCKS_GENERATOR = 7
GOLDILOCKS_TWO_ADICITY = 32

TOY_PRIME = 257
TOY_GENERATOR = 3
TOY_TWO_ADICITY = 8

ELEMENT_BYTES = 8


@dataclass(frozen=True)
class Field:
    """A prime field with a designated multiplicative generator.

    two_adicity is the exponent L such that 2^L || p - 1; roots of unity
    of any power-of-two order up to 2^L are available.
    """

    modulus: int
    generator: int
    two_adicity: int

    def __post_init__(self) -> None:
        if self.modulus < 3:
            raise ValueError("modulus too small")
        if (self.modulus - 1) % (1 << self.two_adicity) != 0:
            raise ValueError("claimed two-adicity does not divide p - 1")
        if ((self.modulus - 1) >> self.two_adicity) % 2 == 0:
            raise ValueError("two_adicity is not maximal")

    # -- scalar ops ------------------------------------------------------

    def normalize(self, a: int) -> int:
        return a % self.modulus

    def neg(self, a: int) -> int:
        return -a % self.modulus

    def inv(self, a: int) -> int:
        if a % self.modulus == 0:
            raise ZeroDivisionError("inverse of zero")
        return pow(a, self.modulus - 2, self.modulus)

    def centered(self, a: int) -> int:
        """Signed representative in (-p/2, p/2]; used for integer readout."""
        a %= self.modulus
        return a - self.modulus if a > self.modulus // 2 else a

    def from_signed(self, a: int) -> int:
        return a % self.modulus

    def root_of_unity(self, order: int) -> int:
        """Primitive root of unity of the given power-of-two order."""
        if order < 1 or order & (order - 1):
            raise ValueError("order must be a power of two")
        if order > (1 << self.two_adicity):
            raise ValueError(f"field supports orders up to 2^{self.two_adicity}")
        return pow(self.generator, (self.modulus - 1) // order, self.modulus)

    # -- vector ops ------------------------------------------------------

    def vec_add(self, u: list[int], v: list[int]) -> list[int]:
        p = self.modulus
        return [(a + b) % p for a, b in zip(u, v, strict=True)]

    def vec_sub(self, u: list[int], v: list[int]) -> list[int]:
        p = self.modulus
        return [(a - b) % p for a, b in zip(u, v, strict=True)]

    def vec_mul(self, u: list[int], v: list[int]) -> list[int]:
        p = self.modulus
        return [(a * b) % p for a, b in zip(u, v, strict=True)]

    def vec_scale(self, c: int, u: list[int]) -> list[int]:
        p = self.modulus
        return [c * a % p for a in u]

    def vec_neg(self, u: list[int]) -> list[int]:
        p = self.modulus
        return [-a % p for a in u]


GOLDILOCKS = Field(GOLDILOCKS_PRIME, GOLDILOCKS_GENERATOR, GOLDILOCKS_TWO_ADICITY)
TOY = Field(TOY_PRIME, TOY_GENERATOR, TOY_TWO_ADICITY)

_NAMED_FIELDS = {"goldilocks": GOLDILOCKS, "toy": TOY}


def field_by_name(name: str) -> Field:
    try:
        return _NAMED_FIELDS[name]
    except KeyError:
        raise ValueError(f"unknown field {name!r}") from None


def field_name(field: Field) -> str:
    for name, f in _NAMED_FIELDS.items():
        if f == field:
            return name
    return str(field.modulus)


_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, valid for all n < 3.3 * 10^24."""
    if n < 2:
        return False
    for small in _MR_WITNESSES:
        if n % small == 0:
            return n == small
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


# -- serialization --------------------------------------------------------


def element_to_bytes(a: int) -> bytes:
    if not 0 <= a < (1 << 64):
        raise ValueError("element out of 8-byte range")
    return struct.pack("<Q", a)


def element_from_bytes(raw: bytes, field: Field) -> int:
    if len(raw) != ELEMENT_BYTES:
        raise ValueError("expected exactly 8 bytes")
    (v,) = struct.unpack("<Q", raw)
    if v >= field.modulus:
        raise ValueError(f"value {v} not reduced modulo {field.modulus}")
    return v


def vector_to_bytes(vec: list[int]) -> bytes:
    return b"".join(struct.pack("<Q", a) for a in vec)


def vector_from_bytes(raw: bytes, field: Field) -> list[int]:
    if len(raw) % ELEMENT_BYTES != 0:
        raise ValueError("byte length not a multiple of 8")
    out = []
    for (v,) in struct.iter_unpack("<Q", raw):
        if v >= field.modulus:
            raise ValueError(f"value {v} not reduced modulo {field.modulus}")
        out.append(v)
    return out


# -- polynomials -----------------------------------------------------------
# A polynomial is its coefficient list, low degree first.


def poly_eval(coeffs: list[int], x: int, field: Field) -> int:
    p = field.modulus
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % p
    return acc


def poly_eval_many(coeffs: list[int], xs: list[int], field: Field) -> list[int]:
    return [poly_eval(coeffs, x, field) for x in xs]


def poly_mul(a: list[int], b: list[int], field: Field) -> list[int]:
    p = field.modulus
    out = [0] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j, bj in enumerate(b):
            out[i + j] = (out[i + j] + ai * bj) % p
    return out


def interpolate(xs: list[int], ys: list[int], field: Field) -> list[int]:
    """Coefficients of the unique degree-<m polynomial through m points.

    O(m^2): build the master product once, peel off each (x - x_i) by
    synthetic division, scale by the barycentric weight.
    """
    if len(xs) != len(ys):
        raise ValueError("mismatched point count")
    if len(set(xs)) != len(xs):
        raise ValueError("interpolation points must be distinct")
    p = field.modulus
    m = len(xs)
    # master = prod (X - x_i)
    master = [1]
    for x in xs:
        master = poly_mul(master, [(-x) % p, 1], field)
    coeffs = [0] * m
    for x, y in zip(xs, ys):
        # q = master / (X - x), computed by synthetic division
        q = [0] * m
        rem = master[m]
        for i in range(m - 1, -1, -1):
            q[i] = rem
            rem = (master[i] + rem * x) % p
        denom = poly_eval(q, x, field)  # = prod_{j != i} (x_i - x_j)
        scale = y * field.inv(denom) % p
        for i in range(m):
            coeffs[i] = (coeffs[i] + scale * q[i]) % p
    return coeffs


# -- FFT --------------------------------------------------------------------


def _bit_reverse_permute(a: list[int]) -> None:
    n = len(a)
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            a[i], a[j] = a[j], a[i]


def fft(values: list[int], field: Field, omega: int | None = None) -> list[int]:
    """Evaluate the polynomial with the given coefficients at successive
    powers of omega (a primitive len(values)-th root of unity)."""
    n = len(values)
    if n & (n - 1):
        raise ValueError("size must be a power of two")
    p = field.modulus
    if omega is None:
        omega = field.root_of_unity(n)
    a = [v % p for v in values]
    if n == 1:
        return a
    _bit_reverse_permute(a)
    length = 2
    while length <= n:
        wlen = pow(omega, n // length, p)
        half = length >> 1
        for start in range(0, n, length):
            w = 1
            for off in range(half):
                lo = a[start + off]
                hi = a[start + off + half] * w % p
                a[start + off] = (lo + hi) % p
                a[start + off + half] = (lo - hi) % p
                w = w * wlen % p
        length <<= 1
    return a


def ifft(values: list[int], field: Field, omega: int | None = None) -> list[int]:
    """Inverse of fft: recover coefficients from evaluations."""
    n = len(values)
    if n & (n - 1):
        raise ValueError("size must be a power of two")
    if omega is None:
        omega = field.root_of_unity(n)
    coeffs = fft(values, field, field.inv(omega))
    n_inv = field.inv(n)
    p = field.modulus
    return [c * n_inv % p for c in coeffs]
