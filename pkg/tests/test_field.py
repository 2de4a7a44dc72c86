import random

import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from packedmpc.field import (
    GOLDILOCKS,
    GOLDILOCKS_PRIME,
    TOY,
    TOY_PRIME,
    Field,
    element_from_bytes,
    element_to_bytes,
    fft,
    field_by_name,
    ifft,
    interpolate,
    is_prime,
    poly_eval,
    poly_mul,
    vector_from_bytes,
    vector_to_bytes,
)

FIELDS = [TOY, GOLDILOCKS]


# ---------------------------------------------------------------------------
# Independent oracles


def naive_eval_at_roots(coeffs, field, omega):
    """O(n^2) oracle: evaluate at omega^0, omega^1, ..., omega^{n-1}."""
    n = len(coeffs)
    return [poly_eval(coeffs, pow(omega, i, field.modulus), field) for i in range(n)]


# ---------------------------------------------------------------------------
# Field constants


def test_goldilocks_prime_and_two_adicity():
    p = GOLDILOCKS_PRIME
    assert p == 18446744069414584321
    assert sympy.isprime(p)
    assert (p - 1) % (1 << 32) == 0
    assert ((p - 1) >> 32) % 2 == 1
    # p - 1 = 2^32 * (2^32 - 1) and 2^32 - 1 factors into these primes:
    odd_factors = [3, 5, 17, 257, 65537]
    prod = 1
    for q in odd_factors:
        assert sympy.isprime(q)
        prod *= q
    assert prod == (1 << 32) - 1
    # 7 generates the full multiplicative group
    for q in [2] + odd_factors:
        assert pow(7, (p - 1) // q, p) != 1


def test_toy_prime_and_generator():
    assert sympy.isprime(TOY_PRIME)
    assert TOY_PRIME - 1 == 1 << 8
    assert pow(3, 128, 257) == 256  # 3 is a primitive root mod 257


def test_is_prime_agrees_with_sympy():
    rng = random.Random(7)
    for _ in range(200):
        n = rng.randrange(2, 1 << 40)
        assert is_prime(n) == sympy.isprime(n)
    assert is_prime(GOLDILOCKS_PRIME)
    assert is_prime(TOY_PRIME)
    assert not is_prime(1)


def test_field_validation():
    with pytest.raises(ValueError):
        Field(257, 3, 7)  # two-adicity not maximal
    with pytest.raises(ValueError):
        Field(255, 3, 8)  # 2^8 does not divide 254
    assert field_by_name("toy") is TOY
    assert field_by_name("goldilocks") is GOLDILOCKS
    with pytest.raises(ValueError):
        field_by_name("nope")


# ---------------------------------------------------------------------------
# Scalar arithmetic


@settings(max_examples=200)
@given(st.integers(0, GOLDILOCKS_PRIME - 1), st.integers(0, GOLDILOCKS_PRIME - 1))
def test_inverse_and_neg(a, b):
    for field in FIELDS:
        p = field.modulus
        x, y = a % p, b % p
        if x:
            assert x * field.inv(x) % p == 1
        assert (x + field.neg(x)) % p == 0
        assert field.normalize(x * y) == x * y % p


def test_inv_zero_raises():
    with pytest.raises(ZeroDivisionError):
        TOY.inv(0)


def test_centered_lift():
    assert TOY.centered(0) == 0
    assert TOY.centered(1) == 1
    assert TOY.centered(256) == -1
    assert TOY.centered(128) == 128
    assert TOY.centered(129) == -128
    assert TOY.from_signed(-1) == 256
    assert GOLDILOCKS.centered(GOLDILOCKS_PRIME - 5) == -5


def test_root_of_unity_orders():
    for field in FIELDS:
        for logn in range(0, 6):
            n = 1 << logn
            w = field.root_of_unity(n)
            assert pow(w, n, field.modulus) == 1
            if n > 1:
                assert pow(w, n // 2, field.modulus) != 1
    with pytest.raises(ValueError):
        TOY.root_of_unity(3)
    with pytest.raises(ValueError):
        TOY.root_of_unity(1 << 9)  # beyond the toy field's two-adicity


# ---------------------------------------------------------------------------
# Serialization


def test_element_serialization_roundtrip():
    assert element_to_bytes(1) == b"\x01" + b"\x00" * 7  # little-endian
    for field in FIELDS:
        rng = random.Random(3)
        for _ in range(50):
            v = rng.randrange(field.modulus)
            assert element_from_bytes(element_to_bytes(v), field) == v


def test_element_serialization_rejects_unreduced():
    raw = element_to_bytes(TOY_PRIME)  # == p, not a canonical element
    with pytest.raises(ValueError):
        element_from_bytes(raw, TOY)
    with pytest.raises(ValueError):
        element_from_bytes(b"\x00" * 7, TOY)
    with pytest.raises(ValueError):
        element_to_bytes(1 << 64)


def test_vector_serialization():
    vec = [0, 1, 255, 256]
    raw = vector_to_bytes(vec)
    assert len(raw) == 32
    assert vector_from_bytes(raw, TOY) == vec
    with pytest.raises(ValueError):
        vector_from_bytes(raw[:-1], TOY)
    with pytest.raises(ValueError):
        vector_from_bytes(vector_to_bytes([257]), TOY)


# ---------------------------------------------------------------------------
# Polynomials


@settings(max_examples=100)
@given(st.lists(st.integers(0, TOY_PRIME - 1), min_size=1, max_size=8), st.integers(0, TOY_PRIME - 1))
def test_poly_eval_matches_naive_sum(coeffs, x):
    expected = sum(c * pow(x, i, TOY_PRIME) for i, c in enumerate(coeffs)) % TOY_PRIME
    assert poly_eval(coeffs, x, TOY) == expected


def test_poly_mul_small():
    # (1 + 2X)(3 + X) = 3 + 7X + 2X^2
    assert poly_mul([1, 2], [3, 1], TOY) == [3, 7, 2]


def test_interpolate_roundtrip():
    for field in FIELDS:
        rng = random.Random(11)
        for m in (1, 2, 3, 5, 8):
            xs = rng.sample(range(1, 2000), m)
            xs = [x % field.modulus for x in xs]
            if len(set(xs)) != m:
                continue
            coeffs = [rng.randrange(field.modulus) for _ in range(m)]
            ys = [poly_eval(coeffs, x, field) for x in xs]
            assert interpolate(xs, ys, field) == coeffs


def test_interpolate_rejects_duplicate_points():
    with pytest.raises(ValueError):
        interpolate([1, 1], [2, 3], TOY)


# ---------------------------------------------------------------------------
# FFT


def test_fft_matches_naive_all_small_sizes():
    # every power-of-two size up to 32, both fields
    rng = random.Random(5)
    for field in FIELDS:
        for n in (1, 2, 4, 8, 16, 32):
            omega = field.root_of_unity(n)
            coeffs = [rng.randrange(field.modulus) for _ in range(n)]
            assert fft(coeffs, field) == naive_eval_at_roots(coeffs, field, omega)


def test_fft_of_linear_polynomial():
    # p(X) = X over the toy field, size 4: evaluations are the roots themselves
    w = TOY.root_of_unity(4)
    assert fft([0, 1, 0, 0], TOY) == [1, w, pow(w, 2, 257), pow(w, 3, 257)]


def test_ifft_size2_hand_computed():
    # evals [5, 1] at (1, -1):  c0 = (5+1)/2 = 3, c1 = (5-1)/2 = 2
    assert ifft([5, 1], TOY) == [3, 2]


def test_fft_ifft_roundtrip():
    rng = random.Random(9)
    for field in FIELDS:
        for n in (1, 2, 8, 32, 64):
            coeffs = [rng.randrange(field.modulus) for _ in range(n)]
            assert ifft(fft(coeffs, field), field) == coeffs


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        fft([1, 2, 3], TOY)
    with pytest.raises(ValueError):
        ifft([1, 2, 3], TOY)
