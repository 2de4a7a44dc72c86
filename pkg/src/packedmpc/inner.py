"""Passively secure two-party multiplication from oblivious linear evaluation.

A trusted dealer (in-process, or a socket service so the parties stay
genuinely message-passing) hands out random OLE correlations ahead of
time.  A live evaluation of a*x + b then costs three field elements on
the wire: the receiver derandomizes its input with delta, the sender
answers with (alpha, gamma), and each multiplication on additive shares
consumes exactly two such correlations.
"""

from __future__ import annotations

import socket
import struct
import threading
from collections import deque
from dataclasses import dataclass

from .crypto import Tape
from .field import ELEMENT_BYTES, Field, element_from_bytes, element_to_bytes


class CorrelationReuse(Exception):
    """A random-OLE correlation half was consumed twice."""


class PoolExhausted(Exception):
    """The preprocessed correlation pool ran dry."""


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class OleSenderInput:
    """Sender's live coefficients of the evaluated line a*x + b."""

    a: int
    b: int


@dataclass(frozen=True)
class OleReceiverInput:
    """Receiver's live evaluation point."""

    x: int


@dataclass(frozen=True)
class AdditiveShare:
    """One party's summand of a two-party additive sharing."""

    value: int


def split_additive(value: int, field: Field, mask: int) -> tuple[int, int]:
    """Split value into two summands; mask becomes party 0's share."""
    share0 = field.normalize(mask)
    return share0, (value - share0) % field.modulus


def combine_additive(share0: int, share1: int, field: Field) -> int:
    return (share0 + share1) % field.modulus


@dataclass
class SenderHalf:
    """Sender side of a random correlation: random line coefficients (a, v)."""

    a: int
    v: int
    consumed: bool = False

    def consume(self) -> None:
        if self.consumed:
            raise CorrelationReuse("sender half already consumed")
        self.consumed = True


@dataclass
class ReceiverHalf:
    """Receiver side: random point u and the evaluation w = a*u + v."""

    u: int
    w: int
    consumed: bool = False

    def consume(self) -> None:
        if self.consumed:
            raise CorrelationReuse("receiver half already consumed")
        self.consumed = True


@dataclass(frozen=True)
class RandomOleCorrelation:
    """Both halves of one preprocessed random OLE."""

    sender: SenderHalf
    receiver: ReceiverHalf

    def holds(self, field: Field) -> bool:
        p = field.modulus
        return self.receiver.w == (self.sender.a * self.receiver.u + self.sender.v) % p


@dataclass(frozen=True)
class OleTranscript:
    """The three field elements one derandomized evaluation puts on the wire."""

    delta: int
    alpha: int
    gamma: int


# ---------------------------------------------------------------------------
# evaluation


def ole_ideal(field: Field, sender: OleSenderInput, receiver: OleReceiverInput) -> int:
    """Ideal functionality: the receiver learns a*x + b, the sender nothing."""
    return (sender.a * receiver.x + sender.b) % field.modulus


def receiver_delta(field: Field, half: ReceiverHalf, x_live: int) -> int:
    """First message: blind the live point with the correlation's u."""
    half.consume()
    return (x_live - half.u) % field.modulus


def sender_reply(field: Field, half: SenderHalf, a_live: int, b_live: int,
                 delta: int) -> tuple[int, int]:
    """Second message: alpha shifts the slope, gamma re-anchors the offset."""
    half.consume()
    p = field.modulus
    alpha = (a_live - half.a) % p
    gamma = (half.a * delta + b_live - half.v) % p
    return alpha, gamma


def receiver_output(field: Field, half: ReceiverHalf, x_live: int,
                    alpha: int, gamma: int) -> int:
    """Receiver's result a_live*x_live + b_live, from w and the reply."""
    return (half.w + gamma + alpha * x_live) % field.modulus


def derandomize_ole(field: Field, corr: RandomOleCorrelation, a_live: int,
                    b_live: int, x_live: int) -> tuple[int, OleTranscript]:
    """Run one in-process derandomized evaluation, consuming corr."""
    delta = receiver_delta(field, corr.receiver, x_live)
    alpha, gamma = sender_reply(field, corr.sender, a_live, b_live, delta)
    out = receiver_output(field, corr.receiver, x_live, alpha, gamma)
    return out, OleTranscript(delta, alpha, gamma)


def gmw_mul(field: Field, x_shares: tuple[int, int], y_shares: tuple[int, int],
            corr_xy: RandomOleCorrelation, corr_yx: RandomOleCorrelation,
            masks: tuple[int, int]) -> tuple[tuple[int, int], tuple[OleTranscript, OleTranscript]]:
    """Multiply additively shared values, consuming exactly two correlations.

    corr_xy carries the x0*y1 cross term (party 0 sending line (x0, r01),
    party 1 evaluating at y1); corr_yx carries x1*y0 the other way round.
    masks = (r01, r10) are the senders' fresh blinds; each sender keeps
    the negated mask so the cross terms stay additively split.
    """
    p = field.modulus
    x0, x1 = x_shares
    y0, y1 = y_shares
    r01, r10 = masks
    cross1, t1 = derandomize_ole(field, corr_xy, a_live=x0, b_live=r01, x_live=y1)
    cross0, t2 = derandomize_ole(field, corr_yx, a_live=x1, b_live=r10, x_live=y0)
    z0 = (x0 * y0 - r01 + cross0) % p
    z1 = (x1 * y1 - r10 + cross1) % p
    return (z0, z1), (t1, t2)


# ---------------------------------------------------------------------------
# preprocessing


def _draw_correlation(tape: Tape, index: int, field: Field) -> tuple[int, int, int, int]:
    """Raw dealer draw for one index: line (a, b), blind s, point u."""
    a, b, s, u = tape.elements(f"ole/{index}", field, 4)
    return a, b, s, u


def _assemble(field: Field, a: int, b: int, s: int, u: int) -> RandomOleCorrelation:
    p = field.modulus
    v = (b - s) % p
    return RandomOleCorrelation(SenderHalf(a, v), ReceiverHalf(u, (a * u + v) % p))


class IdealDealer:
    """In-process trusted dealer with a deterministic correlation stream."""

    def __init__(self, field: Field, seed: bytes = b"dealer"):
        self.field = field
        self._tape = Tape(seed)
        self._next = 0
        self.calls: list[int] = []

    def generate(self, count: int) -> list[RandomOleCorrelation]:
        self.calls.append(count)
        out = []
        for _ in range(count):
            draw = _draw_correlation(self._tape, self._next, self.field)
            self._next += 1
            out.append(_assemble(self.field, *draw))
        return out


def gen_random_oles(field: Field, count: int, batch: int, backend) -> list[RandomOleCorrelation]:
    """Preprocess count correlations, pulling from the backend in batches."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if batch < 1:
        raise ValueError("batch must be positive")
    out: list[RandomOleCorrelation] = []
    while len(out) < count:
        out.extend(backend.generate(min(batch, count - len(out))))
    return out


class OlePool:
    """FIFO of preprocessed correlation halves, safe to share across threads."""

    def __init__(self, items=()):
        self._lock = threading.Lock()
        self._items = deque(items)
        self.consumed = 0

    def add(self, items) -> None:
        with self._lock:
            self._items.extend(items)

    def pop(self):
        with self._lock:
            if not self._items:
                raise PoolExhausted("no preprocessed correlations left")
            self.consumed += 1
            return self._items.popleft()

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


# ---------------------------------------------------------------------------
# socket dealer service

ROLE_SENDER = b"S"
ROLE_RECEIVER = b"R"
_REQUEST = struct.Struct("<I")


def recv_exact(conn: socket.socket, n: int) -> bytes:
    """Read exactly n bytes; raise ConnectionError on early EOF."""
    buf = bytearray()
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed mid-message")
        buf.extend(chunk)
    return bytes(buf)


class DealerServer:
    """Socket dealer: each party connects, declares a role byte, then
    requests correlation halves with 4-byte little-endian counts.

    The sender stream answers with count*3 elements (a, b, s) and the
    receiver stream with count*2 elements (u, y); matching indices form a
    correlation with v = b - s and y = a*u + v, so neither stream ever
    sees the other's half.
    """

    def __init__(self, field: Field, seed: bytes = b"dealer", host: str = "127.0.0.1",
                 port: int = 0):
        self.field = field
        self._seed = bytes(seed)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(8)
        self.host, self.port = self._sock.getsockname()[:2]
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
        # independent Tape per connection: same seed, so both streams see
        # identical per-index draws regardless of interleaving
        tape = Tape(self._seed)
        with conn:
            try:
                role = recv_exact(conn, 1)
            except ConnectionError:
                return
            if role not in (ROLE_SENDER, ROLE_RECEIVER):
                return
            cursor = 0
            while True:
                try:
                    count = _REQUEST.unpack(recv_exact(conn, _REQUEST.size))[0]
                except ConnectionError:
                    return
                payload = bytearray()
                p = self.field.modulus
                for index in range(cursor, cursor + count):
                    a, b, s, u = _draw_correlation(tape, index, self.field)
                    if role == ROLE_SENDER:
                        for el in (a, b, s):
                            payload += element_to_bytes(el)
                    else:
                        y = (a * u + b - s) % p
                        payload += element_to_bytes(u)
                        payload += element_to_bytes(y)
                cursor += count
                conn.sendall(bytes(payload))

    def close(self) -> None:
        self._accepting = False
        try:
            self._sock.close()
        except OSError:
            pass


class DealerClient:
    """One party's connection to the dealer service."""

    def __init__(self, host: str, port: int, role: bytes, field: Field):
        if role not in (ROLE_SENDER, ROLE_RECEIVER):
            raise ValueError("role must be ROLE_SENDER or ROLE_RECEIVER")
        self.role = role
        self.field = field
        self._sock = socket.create_connection((host, port))
        self._sock.sendall(role)
        self.fetched = 0

    def fetch(self, count: int):
        """Request count halves; returns SenderHalf or ReceiverHalf objects."""
        if count < 0:
            raise ValueError("count must be non-negative")
        self._sock.sendall(_REQUEST.pack(count))
        per = 3 if self.role == ROLE_SENDER else 2
        raw = recv_exact(self._sock, per * count * ELEMENT_BYTES)
        self.fetched += count
        out = []
        p = self.field.modulus
        for i in range(count):
            chunk = raw[i * per * ELEMENT_BYTES:(i + 1) * per * ELEMENT_BYTES]
            vals = [element_from_bytes(chunk[j * ELEMENT_BYTES:(j + 1) * ELEMENT_BYTES],
                                       self.field)
                    for j in range(per)]
            if self.role == ROLE_SENDER:
                a, b, s = vals
                out.append(SenderHalf(a, (b - s) % p))
            else:
                u, y = vals
                out.append(ReceiverHalf(u, y))
        return out

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
