"""Three-party replicated secret sharing over Z_2^64 (semi-honest).

A secret ``x = x0 + x1 + x2`` is held as party ``i`` -> ``(x_i, x_{i+1})``
with indices taken mod 3.  Boolean sharings use XOR instead of addition and
the same replication pattern.

:class:`Party` is the per-party protocol engine.  All three engines must call
the same sequence of interactive methods; PRF counters and round tags stay
aligned because every party advances them identically on every call.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .ring import DEFAULT_CODEC, RING_DTYPE, FixedPointCodec, as_ring, sar
from .transport import MSG_DATA, MSG_OPEN, CommunicationError, Frame, Transport

log = logging.getLogger(__name__)

N_PARTIES = 3
KEY_BYTES = 16


class ConsistencyError(RuntimeError):
    """Replicated components received while opening disagree."""


def _ring(value) -> np.ndarray:
    return np.asarray(as_ring(value))


# ---------------------------------------------------------------- share types


class Share:
    """One party's view ``(x_i, x_{i+1})`` of an arithmetic sharing."""

    __slots__ = ("a", "b", "pid")

    def __init__(self, a, b, pid: int):
        self.a = _ring(a)
        self.b = _ring(b)
        self.pid = pid

    # public constants are absorbed into summand x0 (party 0's a, party 2's b)
    def _add_public(self, c, sign: int = 1) -> "Share":
        c = _ring(c)
        if sign < 0:
            c = np.asarray(-c)
        a, b = self.a, self.b
        if self.pid == 0:
            a = a + c
        elif self.pid == 2:
            b = b + c
        else:
            shape = np.broadcast_shapes(a.shape, c.shape)
            a, b = np.broadcast_to(a, shape), np.broadcast_to(b, shape)
        return Share(a, b, self.pid)

    def __add__(self, other):
        if isinstance(other, Share):
            return Share(self.a + other.a, self.b + other.b, self.pid)
        return self._add_public(other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Share):
            return Share(self.a - other.a, self.b - other.b, self.pid)
        return self._add_public(other, -1)

    def __rsub__(self, other):
        return (-self)._add_public(other)

    def __neg__(self):
        return Share(-self.a, -self.b, self.pid)

    def __mul__(self, c):
        if isinstance(c, Share):
            raise TypeError("share * share needs interaction; use Party.mul")
        c = _ring(c)
        return Share(self.a * c, self.b * c, self.pid)

    __rmul__ = __mul__

    def __lshift__(self, bits: int):
        return Share(self.a << np.uint64(bits), self.b << np.uint64(bits), self.pid)

    def __getitem__(self, idx):
        return Share(self.a[idx], self.b[idx], self.pid)

    def __len__(self):
        return len(self.a)

    @property
    def shape(self):
        return self.a.shape

    @property
    def size(self):
        return self.a.size

    def reshape(self, *shape):
        return Share(self.a.reshape(*shape), self.b.reshape(*shape), self.pid)

    def sum(self, axis=None):
        return Share(self.a.sum(axis=axis, dtype=RING_DTYPE), self.b.sum(axis=axis, dtype=RING_DTYPE), self.pid)

    def cumsum(self, axis=-1):
        return Share(np.cumsum(self.a, axis=axis, dtype=RING_DTYPE),
                     np.cumsum(self.b, axis=axis, dtype=RING_DTYPE), self.pid)

    def broadcast_to(self, shape):
        return Share(np.broadcast_to(self.a, shape), np.broadcast_to(self.b, shape), self.pid)

    def expand_dims(self, axis):
        return Share(np.expand_dims(self.a, axis), np.expand_dims(self.b, axis), self.pid)

    def copy(self):
        return Share(self.a.copy(), self.b.copy(), self.pid)

    def __repr__(self):
        return f"Share(pid={self.pid}, shape={self.shape})"


class BoolShare:
    """One party's view of an XOR sharing of 64-bit words."""

    __slots__ = ("a", "b", "pid")

    def __init__(self, a, b, pid: int):
        self.a = _ring(a)
        self.b = _ring(b)
        self.pid = pid

    def _xor_public(self, c):
        c = _ring(c)
        a, b = self.a, self.b
        if self.pid == 0:
            a = a ^ c
        elif self.pid == 2:
            b = b ^ c
        else:
            shape = np.broadcast_shapes(a.shape, c.shape)
            a, b = np.broadcast_to(a, shape), np.broadcast_to(b, shape)
        return BoolShare(a, b, self.pid)

    def __xor__(self, other):
        if isinstance(other, BoolShare):
            return BoolShare(self.a ^ other.a, self.b ^ other.b, self.pid)
        return self._xor_public(other)

    __rxor__ = __xor__

    def __and__(self, mask):
        if isinstance(mask, BoolShare):
            raise TypeError("shared AND needs interaction; use Party.and_")
        mask = _ring(mask)
        return BoolShare(self.a & mask, self.b & mask, self.pid)

    __rand__ = __and__

    def __invert__(self):
        return self._xor_public(np.uint64(0xFFFFFFFFFFFFFFFF))

    def __rshift__(self, bits: int):
        return BoolShare(self.a >> np.uint64(bits), self.b >> np.uint64(bits), self.pid)

    def __lshift__(self, bits: int):
        return BoolShare(self.a << np.uint64(bits), self.b << np.uint64(bits), self.pid)

    def __getitem__(self, idx):
        return BoolShare(self.a[idx], self.b[idx], self.pid)

    @property
    def shape(self):
        return self.a.shape

    def reshape(self, *shape):
        return BoolShare(self.a.reshape(*shape), self.b.reshape(*shape), self.pid)


def concat(shares: Sequence, axis: int = 0):
    """Concatenate shares (all Share or all BoolShare) along ``axis``."""
    kind = type(shares[0])
    a = np.concatenate([np.atleast_1d(s.a) for s in shares], axis=axis)
    b = np.concatenate([np.atleast_1d(s.b) for s in shares], axis=axis)
    return kind(a, b, shares[0].pid)


def stack(shares: Sequence, axis: int = 0):
    kind = type(shares[0])
    a = np.stack([np.broadcast_to(s.a, shares[0].shape) for s in shares], axis=axis)
    b = np.stack([np.broadcast_to(s.b, shares[0].shape) for s in shares], axis=axis)
    return kind(a, b, shares[0].pid)


# ------------------------------------------------------ offline share / open


def share_secret(x, rng: np.random.Generator) -> list[Share]:
    """Split ``x`` into the three parties' replicated views."""
    x = _ring(x)
    x0 = rng.integers(0, 2**64, size=x.shape, dtype=np.uint64, endpoint=False)
    x1 = rng.integers(0, 2**64, size=x.shape, dtype=np.uint64, endpoint=False)
    x2 = x - x0 - x1
    parts = [np.asarray(x0), np.asarray(x1), np.asarray(x2)]
    return [Share(parts[i], parts[(i + 1) % 3], i) for i in range(N_PARTIES)]


def open_value(shares: Sequence[Share]) -> np.ndarray:
    """Reconstruct from all three views, checking replication consistency."""
    if len(shares) != N_PARTIES:
        raise ValueError("need exactly three views to open")
    by_pid = {s.pid: s for s in shares}
    if sorted(by_pid) != [0, 1, 2]:
        raise ValueError("views must come from parties 0, 1 and 2")
    for i in range(N_PARTIES):
        if not np.array_equal(by_pid[i].b, by_pid[(i + 1) % 3].a):
            raise ConsistencyError(f"component x{(i + 1) % 3} differs between parties {i} and {(i + 1) % 3}")
    return by_pid[0].a + by_pid[1].a + by_pid[2].a


# ---------------------------------------------------------------------- PRF


def prf(key: bytes, counter: int, size: int) -> np.ndarray:
    """AES-128-CTR keystream for ``counter`` as ``size`` ring elements."""
    nonce = counter.to_bytes(8, "big") + bytes(8)
    enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    stream = enc.update(bytes(8 * size)) + enc.finalize()
    return np.frombuffer(stream, dtype="<u8").astype(RING_DTYPE)


def zero_share(key_prev: bytes, key_next: bytes, counter: int, shape=()) -> np.ndarray:
    """``u_i = PRF(k_{i,i+1}) - PRF(k_{i-1,i})``; the three outputs sum to zero."""
    size = int(np.prod(shape, dtype=np.int64))
    u = prf(key_next, counter, size) - prf(key_prev, counter, size)
    return u.reshape(shape)


@dataclass
class OpenRecord:
    label: str
    size: int
    round: int


@dataclass
class PartyKeys:
    prev: bytes  # shared with party i-1
    next: bytes  # shared with party i+1

    def __post_init__(self):
        if len(self.prev) != KEY_BYTES or len(self.next) != KEY_BYTES:
            raise ValueError("PRF keys must be 16 bytes")


# ------------------------------------------------------------------- engine


class Party:
    """Protocol engine for one computing party."""

    def __init__(self, pid: int, transport: Transport, keys: PartyKeys,
                 codec: FixedPointCodec = DEFAULT_CODEC, rng: np.random.Generator | None = None):
        if pid not in (0, 1, 2):
            raise ValueError(f"party id must be 0, 1 or 2, got {pid}")
        self.pid = pid
        self.transport = transport
        self.keys = keys
        self.codec = codec
        self.rng = rng if rng is not None else np.random.default_rng()
        self.counter = 0
        self.round = 0
        self.open_log: list[OpenRecord] = []
        self._pending: dict[tuple[int, int], Frame] = {}

    @property
    def next(self) -> int:
        return (self.pid + 1) % 3

    @property
    def prev(self) -> int:
        return (self.pid - 1) % 3

    @property
    def f(self) -> int:
        return self.codec.f

    # -- randomness

    def _nonce(self) -> int:
        self.counter += 1
        return self.counter

    def _zero(self, shape) -> np.ndarray:
        return zero_share(self.keys.prev, self.keys.next, self._nonce(), shape)

    def _zero_bool(self, shape) -> np.ndarray:
        size = int(np.prod(shape, dtype=np.int64))
        c = self._nonce()
        return (prf(self.keys.next, c, size) ^ prf(self.keys.prev, c, size)).reshape(shape)

    # -- messaging

    def _send(self, peer: int, payload: np.ndarray, kind: int = MSG_DATA) -> None:
        flat = np.ascontiguousarray(payload, dtype=RING_DTYPE).reshape(-1)
        self.transport.send(peer, Frame(kind, self.round, self.pid, flat))

    def _recv(self, peer: int, shape, kind: int = MSG_DATA) -> np.ndarray:
        key = (peer, self.round)
        frame = self._pending.pop(key, None)
        while frame is None:
            got = self.transport.recv(peer)
            if got.round < self.round:
                raise CommunicationError(f"party {self.pid}: stale frame for round {got.round} from party {peer}")
            if got.round == self.round:
                frame = got
            else:
                self._pending[(peer, got.round)] = got
        if frame.kind != kind or frame.sender != peer:
            raise CommunicationError(f"party {self.pid}: unexpected frame type {frame.kind} from {frame.sender}")
        size = int(np.prod(shape, dtype=np.int64))
        if frame.payload.size != size:
            raise CommunicationError(f"party {self.pid}: expected {size} elements from party {peer}, got {frame.payload.size}")
        return frame.payload.reshape(shape)

    def _reshare(self, z: np.ndarray) -> np.ndarray:
        """Send own component to the previous party, receive the next one's."""
        self.round += 1
        self._send(self.prev, z)
        return self._recv(self.next, z.shape)

    # -- multiplication

    def mul(self, x: Share, y: Share) -> Share:
        """Raw product (no rescaling); one element sent per party per output."""
        shape = np.broadcast_shapes(x.shape, y.shape)
        with np.errstate(over="ignore"):
            z = np.asarray(x.a * y.a) + np.asarray(x.a * y.b) + np.asarray(x.b * y.a)
        z = np.asarray(np.broadcast_to(z, shape) + self._zero(shape))
        return Share(z, self._reshare(z), self.pid)

    def mul_many(self, pairs: Sequence[tuple[Share, Share]]) -> list[Share]:
        """Several independent products in a single round."""
        xs, ys, shapes = [], [], []
        for x, y in pairs:
            shape = np.broadcast_shapes(x.shape, y.shape)
            shapes.append(shape)
            xs.append(x.broadcast_to(shape).reshape(-1))
            ys.append(y.broadcast_to(shape).reshape(-1))
        z = self.mul(concat(xs), concat(ys))
        return _split(z, shapes)

    def and_(self, x: BoolShare, y: BoolShare) -> BoolShare:
        shape = np.broadcast_shapes(x.shape, y.shape)
        z = (x.a & y.a) ^ (x.a & y.b) ^ (x.b & y.a)
        z = np.asarray(np.broadcast_to(z, shape) ^ self._zero_bool(shape))
        return BoolShare(z, self._reshare(z), self.pid)

    def and_many(self, pairs: Sequence[tuple[BoolShare, BoolShare]]) -> list[BoolShare]:
        xs, ys, shapes = [], [], []
        for x, y in pairs:
            shape = np.broadcast_shapes(x.shape, y.shape)
            shapes.append(shape)
            xs.append(BoolShare(np.broadcast_to(x.a, shape).reshape(-1), np.broadcast_to(x.b, shape).reshape(-1), self.pid))
            ys.append(BoolShare(np.broadcast_to(y.a, shape).reshape(-1), np.broadcast_to(y.b, shape).reshape(-1), self.pid))
        z = self.and_(concat(xs), concat(ys))
        return _split(z, shapes)

    # -- truncation

    def trunc(self, x: Share, bits: int | None = None) -> Share:
        """Divide by 2^bits, error below one unit in the last place.

        The sharing is regrouped into two summands, ``x0 + x1`` (known to
        party 0) and ``x2`` (known to parties 1 and 2); each is shifted
        locally and party 0 re-randomises its part with a PRF mask shared
        with party 2.  Fails with probability about |x| / 2^63.
        """
        bits = self.f if bits is None else bits
        shape = x.shape
        c = self._nonce()
        size = int(np.prod(shape, dtype=np.int64))
        self.round += 1
        if self.pid == 0:
            r = prf(self.keys.prev, c, size).reshape(shape)
            y1 = np.asarray(sar(x.a + x.b, bits) - r)
            self._send(1, y1)
            return Share(r, y1, 0)
        if self.pid == 1:
            y1 = self._recv(0, shape)
            y2 = np.asarray(sar(x.b, bits) + np.uint64(1))
            return Share(y1, y2, 1)
        r = prf(self.keys.next, c, size).reshape(shape)
        y2 = np.asarray(sar(x.a, bits) + np.uint64(1))
        return Share(y2, r, 2)

    def mul_fixed(self, x: Share, y: Share, bits: int | None = None) -> Share:
        return self.trunc(self.mul(x, y), bits)

    def mul_fixed_many(self, pairs, bits: int | None = None) -> list[Share]:
        prods = self.mul_many(pairs)
        shapes = [p.shape for p in prods]
        flat = self.trunc(concat([p.reshape(-1) for p in prods]), bits)
        return _split(flat, shapes)

    # -- inputs

    def input_all(self, value) -> list[Share]:
        """Every party secret-shares its own array; all arrays must share a shape.

        Returns one sharing per owner, indexed by owner id.  One round.
        """
        value = _ring(value)
        shape = value.shape
        c = self._nonce()
        size = int(np.prod(shape, dtype=np.int64))
        own_r = prf(self.keys.next, c, size).reshape(shape)
        masked = np.asarray(value - own_r)
        self.round += 1
        self._send(self.prev, masked)
        from_next = self._recv(self.next, shape)
        zeros = np.zeros(shape, dtype=RING_DTYPE)
        out: list[Share | None] = [None] * 3
        out[self.pid] = Share(masked, own_r, self.pid)
        # owner = prev: its mask uses the key we share with it
        out[self.prev] = Share(prf(self.keys.prev, c, size).reshape(shape), zeros, self.pid)
        out[self.next] = Share(zeros, from_next, self.pid)
        return out

    def constant(self, value) -> Share:
        """Public value as a (trivial) sharing."""
        value = _ring(value)
        zeros = np.zeros(value.shape, dtype=RING_DTYPE)
        return Share(zeros, zeros, self.pid)._add_public(value)

    def bool_constant(self, value) -> BoolShare:
        value = _ring(value)
        zeros = np.zeros(value.shape, dtype=RING_DTYPE)
        return BoolShare(zeros, zeros, self.pid)._xor_public(value)

    # -- opening

    def open(self, x: Share, label: str = "") -> np.ndarray:
        """Reveal ``x`` to this party; aborts on inconsistent replication."""
        self.round += 1
        self.open_log.append(OpenRecord(label, int(x.size), self.round))
        a, b = np.ascontiguousarray(x.a), np.ascontiguousarray(x.b)
        self._send(self.next, a, MSG_OPEN)
        self._send(self.prev, b, MSG_OPEN)
        from_prev = self._recv(self.prev, x.shape, MSG_OPEN)
        from_next = self._recv(self.next, x.shape, MSG_OPEN)
        if not np.array_equal(from_prev, from_next):
            raise ConsistencyError(f"party {self.pid}: replicated component mismatch while opening {label!r}")
        with np.errstate(over="ignore"):
            return np.asarray(np.asarray(a + b) + from_prev)

    def open_bool(self, x: BoolShare, label: str = "") -> np.ndarray:
        self.round += 1
        self.open_log.append(OpenRecord(label, int(np.size(x.a)), self.round))
        self._send(self.next, x.a, MSG_OPEN)
        self._send(self.prev, x.b, MSG_OPEN)
        from_prev = self._recv(self.prev, x.shape, MSG_OPEN)
        from_next = self._recv(self.next, x.shape, MSG_OPEN)
        if not np.array_equal(from_prev, from_next):
            raise ConsistencyError(f"party {self.pid}: replicated component mismatch while opening {label!r}")
        return np.asarray(x.a ^ x.b ^ from_prev)

    def traffic(self) -> int:
        return self.transport.counter.elements_sent


def _split(flat, shapes):
    out, pos = [], 0
    for shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        out.append(flat[pos:pos + n].reshape(shape))
        pos += n
    return out
