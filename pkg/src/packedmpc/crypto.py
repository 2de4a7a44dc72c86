"""Supporting primitives: hash commitments, keystream encryption for
watchlist channels, a t-out-of-n OT interface, and the two-party coin
toss.

All hashing is SHA-256; keystreams and deterministic randomness come
from SHAKE-256.  Digests are never interpreted as field elements.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from .field import Field, vector_from_bytes, vector_to_bytes

KEY_BYTES = 32
COMMIT_RAND_BYTES = 32
TAG_BYTES = 16
_CHUNK = 1024


class IntegrityError(ValueError):
    pass


class OpenFailure(ValueError):
    pass


# ---------------------------------------------------------------------------
# deterministic randomness


def _expand(seed: bytes, label: bytes, counter: int) -> bytes:
    h = hashlib.shake_256()
    h.update(len(seed).to_bytes(4, "little") + seed)
    h.update(len(label).to_bytes(4, "little") + label)
    h.update(counter.to_bytes(8, "little"))
    return h.digest(_CHUNK)


class Tape:
    """Label-addressed deterministic randomness.

    Every label names an independent SHAKE-256 stream derived from
    (seed, label); draws under one label are sequential while distinct
    labels never interact, so two protocol implementations that agree
    on labels and per-label draw order produce identical values even
    if they interleave labels differently.
    """

    def __init__(self, seed: bytes):
        self.seed = bytes(seed)
        self._streams: dict[str, tuple[int, bytes]] = {}

    def bytes(self, label: str, n: int) -> bytes:
        counter, buf = self._streams.get(label, (0, b""))
        while len(buf) < n:
            buf += _expand(self.seed, label.encode(), counter)
            counter += 1
        out, buf = buf[:n], buf[n:]
        self._streams[label] = (counter, buf)
        return out

    def element(self, label: str, field: Field) -> int:
        # rejection sampling keeps the draw exactly uniform
        p = field.modulus
        limit = ((1 << 64) // p) * p
        while True:
            v = int.from_bytes(self.bytes(label, 8), "little")
            if v < limit:
                return v % p

    def elements(self, label: str, field: Field, count: int) -> list[int]:
        return [self.element(label, field) for _ in range(count)]

    def key(self, label: str) -> bytes:
        return self.bytes(label, KEY_BYTES)


# ---------------------------------------------------------------------------
# commitments


@dataclass(frozen=True)
class Commitment:
    digest: bytes


@dataclass(frozen=True)
class Opening:
    payload: bytes
    randomness: bytes


def _commit_digest(payload: bytes, randomness: bytes) -> bytes:
    h = hashlib.sha256()
    h.update(len(payload).to_bytes(8, "little"))
    h.update(payload)
    h.update(randomness)
    return h.digest()


def commit(payload: bytes, randomness: bytes | None = None) -> tuple[Commitment, Opening]:
    if randomness is None:
        randomness = os.urandom(COMMIT_RAND_BYTES)
    if len(randomness) != COMMIT_RAND_BYTES:
        raise ValueError("commitment randomness must be 32 bytes")
    return Commitment(_commit_digest(payload, randomness)), Opening(payload, randomness)


def open_commitment(commitment: Commitment, opening: Opening) -> bytes:
    if _commit_digest(opening.payload, opening.randomness) != commitment.digest:
        raise OpenFailure("commitment opening does not match digest")
    return opening.payload


# ---------------------------------------------------------------------------
# keystream encryption


def keystream(key: bytes, counter: int, n: int) -> bytes:
    out = bytearray()
    chunk = 0
    while len(out) < n:
        h = hashlib.shake_256()
        h.update(len(key).to_bytes(4, "little") + key)
        h.update(counter.to_bytes(8, "little"))
        h.update(chunk.to_bytes(8, "little"))
        out += h.digest(_CHUNK)
        chunk += 1
    return bytes(out[:n])


def stream_encrypt(key: bytes, counter: int, data: bytes) -> bytes:
    """XOR with the (key, counter) keystream; its own inverse."""
    ks = keystream(key, counter, len(data))
    return bytes(a ^ b for a, b in zip(data, ks))


def _tag(key: bytes, counter: int, plaintext: bytes) -> bytes:
    h = hashlib.sha256()
    h.update(len(key).to_bytes(4, "little") + key)
    h.update(counter.to_bytes(8, "little"))
    h.update(plaintext)
    return h.digest()[:TAG_BYTES]


def seal(key: bytes, counter: int, plaintext: bytes) -> bytes:
    """Ciphertext followed by a 16-byte integrity tag.

    The tag exists so wrong-key decryption is detectable in tests; it
    plays no role in protocol soundness.
    """
    return stream_encrypt(key, counter, plaintext) + _tag(key, counter, plaintext)


def open_sealed(key: bytes, counter: int, blob: bytes) -> bytes:
    if len(blob) < TAG_BYTES:
        raise IntegrityError("sealed blob too short")
    body, tag = blob[:-TAG_BYTES], blob[-TAG_BYTES:]
    plaintext = stream_encrypt(key, counter, body)
    if _tag(key, counter, plaintext) != tag:
        raise IntegrityError("integrity tag mismatch")
    return plaintext


class SealingChannel:
    """Sender-side counter accounting for one watchlist key.

    Encrypting twice under the same counter would reuse keystream, so
    any forced reuse is a hard error.
    """

    def __init__(self, key: bytes):
        self.key = key
        self._next = 0
        self._used: set[int] = set()

    def seal(self, plaintext: bytes, counter: int | None = None) -> tuple[int, bytes]:
        if counter is None:
            counter = self._next
        if counter in self._used:
            raise ValueError(f"keystream counter {counter} reused")
        self._used.add(counter)
        self._next = max(self._next, counter + 1)
        return counter, seal(self.key, counter, plaintext)


# ---------------------------------------------------------------------------
# t-out-of-n OT


@dataclass(frozen=True)
class WatchlistSelection:
    indices: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("selection indices must be distinct")
        if list(self.indices) != sorted(self.indices):
            object.__setattr__(self, "indices", tuple(sorted(self.indices)))

    def __len__(self):
        return len(self.indices)


class IdealOT:
    """Trusted local instantiation of t-out-of-n OT.

    The sender-side log records only sizes, never anything derived
    from the receiver's selection.
    """

    def __init__(self):
        self.sender_log: list[tuple[int, int]] = []

    def run(self, sender_keys: list[bytes], selection: WatchlistSelection, t: int) -> list[bytes]:
        n = len(sender_keys)
        if len(selection) != t:
            raise ValueError(f"selection size {len(selection)} != t = {t}")
        if any(not 0 <= i < n for i in selection.indices):
            raise ValueError("selection index out of range")
        self.sender_log.append((n, t))
        return [sender_keys[i] for i in selection.indices]


# ---------------------------------------------------------------------------
# coin toss

_COIN_MAGIC = b"coin-open-v1"


class CoinTossSession:
    """One party's half of a commit-then-open coin toss.

    Message flow per session: both sides exchange commit_message(),
    then exchange open_message(), then call result() with the peer's
    opening.  Shares combine by field addition per coordinate; the
    output is uniform if either party's share is.
    """

    def __init__(self, field: Field, width: int, share: list[int],
                 randomness: bytes | None = None):
        if len(share) != width:
            raise ValueError("share width mismatch")
        self.field = field
        self.width = width
        self.share = [field.normalize(v) for v in share]
        payload = _COIN_MAGIC + vector_to_bytes(self.share)
        self.commitment, self._opening = commit(payload, randomness)
        self._peer_commitment: Commitment | None = None

    def commit_message(self) -> bytes:
        return self.commitment.digest

    def receive_commit(self, digest: bytes) -> None:
        if len(digest) != 32:
            raise ValueError("bad commitment digest length")
        self._peer_commitment = Commitment(digest)

    def open_message(self) -> bytes:
        if self._peer_commitment is None:
            raise ValueError("open before receiving peer commitment")
        return self._opening.randomness + self._opening.payload

    def result(self, peer_open: bytes) -> list[int]:
        if self._peer_commitment is None:
            raise ValueError("missing peer commitment")
        randomness, payload = peer_open[:COMMIT_RAND_BYTES], peer_open[COMMIT_RAND_BYTES:]
        open_commitment(self._peer_commitment, Opening(payload, randomness))
        if payload[: len(_COIN_MAGIC)] != _COIN_MAGIC:
            raise OpenFailure("bad coin payload")
        peer_share = vector_from_bytes(payload[len(_COIN_MAGIC):], self.field)
        if len(peer_share) != self.width:
            raise OpenFailure("peer coin share has wrong width")
        return self.field.vec_add(self.share, peer_share)


def coin_toss_pair(field: Field, width: int, share0: list[int], share1: list[int]) -> list[int]:
    """Run both sides in-process; returns the common result."""
    s0 = CoinTossSession(field, width, share0)
    s1 = CoinTossSession(field, width, share1)
    s0.receive_commit(s1.commit_message())
    s1.receive_commit(s0.commit_message())
    r0 = s0.result(s1.open_message())
    r1 = s1.result(s0.open_message())
    if r0 != r1:
        raise AssertionError("coin toss sides disagree")
    return r0
