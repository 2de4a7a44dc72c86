"""Point-to-point party channels: framing, ordering, byte accounting.

One logical channel is one ordered stream of frames; concurrent sessions
share a connection through distinct session ids and are demultiplexed on
receive.  A frame costs 9 bytes over its payload: 4-byte session id,
1-byte type, 4-byte length, all little-endian.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from collections import Counter

_HEADER = struct.Struct("<IBI")
FRAME_OVERHEAD = _HEADER.size

MSG_TYPES = {
    "input-share": 1,
    "emulation": 2,
    "watchlist-ciphertext": 3,
    "coin-commit": 4,
    "coin-open": 5,
    "test-broadcast": 6,
    "output": 7,
    "abort": 8,
}
_MSG_NAMES = {v: k for k, v in MSG_TYPES.items()}

PHASES = ("setup", "offline", "online")


class ProtocolError(Exception):
    """Framing or ordering violation on a party channel."""


class AbortReceived(Exception):
    """The peer sent an abort frame; the reason string is the payload."""

    def __init__(self, reason: str):
        super().__init__(f"peer aborted: {reason}")
        self.reason = reason


class Frame:
    """One wire message: (session_id, msg_type, payload)."""

    __slots__ = ("session_id", "msg_type", "payload")

    def __init__(self, session_id: int, msg_type: str, payload: bytes):
        if msg_type not in MSG_TYPES:
            raise ProtocolError(f"unknown message type {msg_type!r}")
        if not 0 <= session_id < 2**32:
            raise ProtocolError("session id out of range")
        self.session_id = session_id
        self.msg_type = msg_type
        self.payload = bytes(payload)

    def encode(self) -> bytes:
        return _HEADER.pack(self.session_id, MSG_TYPES[self.msg_type],
                            len(self.payload)) + self.payload

    def __eq__(self, other):
        return (isinstance(other, Frame)
                and self.session_id == other.session_id
                and self.msg_type == other.msg_type
                and self.payload == other.payload)

    def __repr__(self):
        return f"Frame({self.session_id}, {self.msg_type!r}, {len(self.payload)}B)"


def decode_header(raw: bytes) -> tuple[int, str, int]:
    session_id, type_id, length = _HEADER.unpack(raw)
    name = _MSG_NAMES.get(type_id)
    if name is None:
        raise ProtocolError(f"unknown message type id {type_id}")
    return session_id, name, length


def decode_frame(raw: bytes) -> Frame:
    if len(raw) < FRAME_OVERHEAD:
        raise ProtocolError("short frame")
    session_id, name, length = decode_header(raw[:FRAME_OVERHEAD])
    payload = raw[FRAME_OVERHEAD:]
    if len(payload) != length:
        raise ProtocolError("frame length mismatch")
    return Frame(session_id, name, payload)


class ByteLedger:
    """Cumulative sent-byte accounting by message type and phase."""

    def __init__(self):
        self.by_type: Counter = Counter()
        self.by_phase: Counter = Counter()
        self.by_pair: Counter = Counter()
        self.total = 0

    def record(self, phase: str, msg_type: str, nbytes: int) -> None:
        self.by_type[msg_type] += nbytes
        self.by_phase[phase] += nbytes
        self.by_pair[(phase, msg_type)] += nbytes
        self.total += nbytes

    def report(self) -> dict:
        """Snapshot; category sums always equal the total."""
        return {
            "total": self.total,
            "by_type": dict(self.by_type),
            "by_phase": dict(self.by_phase),
            "by_pair": {f"{p}/{t}": n for (p, t), n in sorted(self.by_pair.items())},
        }

    def merged_with(self, other: "ByteLedger") -> "ByteLedger":
        out = ByteLedger()
        for src in (self, other):
            for (p, t), n in src.by_pair.items():
                out.record(p, t, n)
        return out


class Channel:
    """Shared send/recv logic over an abstract byte transport.

    Sends are recorded in the ledger and appended to the transcript;
    receives demultiplex per session id so interleaved sessions each see
    their own frames in order.  recv of an abort frame raises, so aborts
    propagate to whatever step was waiting.
    """

    def __init__(self, ledger: ByteLedger | None = None):
        self.ledger = ledger if ledger is not None else ByteLedger()
        self.phase = "setup"
        self.transcript: list[bytes] = []
        self.send_hook = None
        self._pending: dict[int, list[Frame]] = {}

    def set_phase(self, phase: str) -> None:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        self.phase = phase

    # transport primitives supplied by subclasses
    def _write(self, raw: bytes) -> None:
        raise NotImplementedError

    def _read_frame(self, timeout: float | None) -> Frame:
        raise NotImplementedError

    def send(self, frame: Frame) -> None:
        if self.send_hook is not None:
            self.send_hook(frame)
        raw = frame.encode()
        self.ledger.record(self.phase, frame.msg_type, len(raw))
        self.transcript.append(raw)
        self._write(raw)

    def send_abort(self, reason: str, session_id: int = 0) -> None:
        self.send(Frame(session_id, "abort", reason.encode()))

    def recv(self, expected: str, session_id: int | None = None,
             timeout: float | None = 60.0) -> Frame:
        if expected not in MSG_TYPES:
            raise ProtocolError(f"unknown message type {expected!r}")
        if session_id is not None:
            backlog = self._pending.get(session_id)
            if backlog:
                frame = backlog.pop(0)
                return self._check(frame, expected)
        while True:
            frame = self._read_frame(timeout)
            if session_id is None or frame.session_id == session_id:
                return self._check(frame, expected)
            self._pending.setdefault(frame.session_id, []).append(frame)

    @staticmethod
    def _check(frame: Frame, expected: str) -> Frame:
        if frame.msg_type == "abort":
            raise AbortReceived(frame.payload.decode(errors="replace"))
        if frame.msg_type != expected:
            raise ProtocolError(
                f"expected {expected!r} frame, got {frame.msg_type!r}")
        return frame


class MemoryChannel(Channel):
    """In-process channel end; create pairs with memory_channel_pair()."""

    def __init__(self, ledger: ByteLedger | None = None):
        super().__init__(ledger)
        self._inbox: queue.Queue = queue.Queue()
        self._peer: MemoryChannel | None = None

    def _write(self, raw: bytes) -> None:
        if self._peer is None:
            raise ProtocolError("channel not connected")
        self._peer._inbox.put(raw)

    def _read_frame(self, timeout: float | None) -> Frame:
        try:
            raw = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError("recv timed out") from None
        return decode_frame(raw)

    def close(self) -> None:
        pass


def memory_channel_pair(ledger0: ByteLedger | None = None,
                        ledger1: ByteLedger | None = None) -> tuple[MemoryChannel, MemoryChannel]:
    a, b = MemoryChannel(ledger0), MemoryChannel(ledger1)
    a._peer, b._peer = b, a
    return a, b


class TcpChannel(Channel):
    """Channel end over one TCP connection, same frame layout as memory."""

    def __init__(self, sock: socket.socket, ledger: ByteLedger | None = None):
        super().__init__(ledger)
        self._sock = sock
        self._lock = threading.Lock()

    @classmethod
    def listen(cls, host: str = "127.0.0.1", port: int = 0,
               ledger: ByteLedger | None = None) -> "TcpListener":
        return TcpListener(host, port, ledger)

    @classmethod
    def connect(cls, host: str, port: int,
                ledger: ByteLedger | None = None) -> "TcpChannel":
        sock = socket.create_connection((host, port))
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock, ledger)

    def _write(self, raw: bytes) -> None:
        with self._lock:
            self._sock.sendall(raw)

    def _read_frame(self, timeout: float | None) -> Frame:
        self._sock.settimeout(timeout)
        try:
            head = self._recv_exact(FRAME_OVERHEAD)
            _, _, length = _HEADER.unpack(head)
            payload = self._recv_exact(length)
        except socket.timeout:
            raise ProtocolError("recv timed out") from None
        except OSError as exc:
            raise ProtocolError(f"connection lost: {exc}") from None
        return decode_frame(head + payload)

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                raise ProtocolError("connection closed mid-frame")
            buf.extend(chunk)
        return bytes(buf)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class TcpListener:
    """Bound socket waiting for the peer; accept() yields the channel."""

    def __init__(self, host: str, port: int, ledger: ByteLedger | None = None):
        self._ledger = ledger
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1)
        self.host, self.port = self._sock.getsockname()[:2]

    def accept(self, timeout: float | None = 60.0) -> TcpChannel:
        self._sock.settimeout(timeout)
        conn, _ = self._sock.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.close()
        return TcpChannel(conn, self._ledger)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
