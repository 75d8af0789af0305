"""Party-to-party message transport.

Wire frame (big-endian header, little-endian payload)::

    u32 payload length | u8 message type | u64 round | u8 sender | payload

The payload is a sequence of 8-byte little-endian ring elements.  Channels
present one ordered queue per peer; a reader thread per TCP socket feeds it.
"""
from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MSG_DATA = 0x01
MSG_SETUP = 0x02
MSG_OPEN = 0x03

HEADER = struct.Struct(">IBQB")
ELEMENT_BYTES = 8
COORDINATOR_ID = 3

DEFAULT_TIMEOUT = 300.0


class CommunicationError(RuntimeError):
    """A peer disconnected, a channel was aborted, or a frame was malformed."""


@dataclass
class Frame:
    kind: int
    round: int
    sender: int
    payload: np.ndarray

    @property
    def wire_size(self) -> int:
        return HEADER.size + ELEMENT_BYTES * self.payload.size


def encode_frame(frame: Frame) -> bytes:
    body = np.ascontiguousarray(frame.payload, dtype="<u8").tobytes()
    return HEADER.pack(len(body), frame.kind, frame.round, frame.sender) + body


def decode_frame(data: bytes) -> Frame:
    if len(data) < HEADER.size:
        raise CommunicationError("truncated frame header")
    length, kind, rnd, sender = HEADER.unpack_from(data)
    body = data[HEADER.size:]
    if len(body) != length or length % ELEMENT_BYTES:
        raise CommunicationError(f"bad payload length {len(body)} (header says {length})")
    payload = np.frombuffer(body, dtype="<u8").astype(np.uint64)
    return Frame(kind, rnd, sender, payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise CommunicationError("connection closed by peer")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Frame:
    head = _recv_exact(sock, HEADER.size)
    length = HEADER.unpack(head)[0]
    return decode_frame(head + _recv_exact(sock, length))


@dataclass
class TrafficCounter:
    bytes_sent: int = 0
    frames_sent: int = 0
    elements_sent: int = 0
    per_peer: dict = field(default_factory=dict)

    def record(self, peer: int, frame: Frame):
        self.bytes_sent += frame.wire_size
        self.frames_sent += 1
        self.elements_sent += int(frame.payload.size)
        self.per_peer[peer] = self.per_peer.get(peer, 0) + int(frame.payload.size)


_ABORT = object()


class Transport:
    """Ordered per-peer message channels for one party."""

    def __init__(self, pid: int, timeout: float = DEFAULT_TIMEOUT):
        self.pid = pid
        self.timeout = timeout
        self.counter = TrafficCounter()
        self._inbox: dict[int, queue.Queue] = {}

    def _queue(self, peer: int) -> queue.Queue:
        return self._inbox.setdefault(peer, queue.Queue())

    def send(self, peer: int, frame: Frame) -> None:
        self.counter.record(peer, frame)
        self._deliver(peer, frame)

    def _deliver(self, peer: int, frame: Frame) -> None:
        raise NotImplementedError

    def recv(self, peer: int) -> Frame:
        try:
            item = self._queue(peer).get(timeout=self.timeout)
        except queue.Empty:
            raise CommunicationError(f"party {self.pid}: timed out waiting for party {peer}") from None
        if item is _ABORT:
            raise CommunicationError(f"party {self.pid}: channel from party {peer} aborted")
        if isinstance(item, BaseException):
            raise CommunicationError(f"party {self.pid}: channel from party {peer} failed: {item}")
        return item

    def abort(self) -> None:
        for q in list(self._inbox.values()):
            q.put(_ABORT)

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    """Queues shared between three transports living in one process."""

    def __init__(self, pid: int, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(pid, timeout)
        self.peers: dict[int, InProcessTransport] = {}

    @classmethod
    def mesh(cls, n: int = 3, timeout: float = DEFAULT_TIMEOUT) -> list["InProcessTransport"]:
        nodes = [cls(i, timeout) for i in range(n)]
        for node in nodes:
            node.peers = {other.pid: other for other in nodes if other is not node}
            for other in nodes:
                if other is not node:
                    node._queue(other.pid)
        return nodes

    def _deliver(self, peer: int, frame: Frame) -> None:
        # copy: the receiver must never alias the sender's buffers
        frame = Frame(frame.kind, frame.round, frame.sender, np.array(frame.payload, dtype=np.uint64))
        self.peers[peer]._queue(self.pid).put(frame)


class TcpTransport(Transport):
    """One socket per peer; a daemon reader thread per socket fills the peer queue."""

    def __init__(self, pid: int, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(pid, timeout)
        self.sockets: dict[int, socket.socket] = {}
        self._locks: dict[int, threading.Lock] = {}

    def attach(self, peer: int, sock: socket.socket) -> None:
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass  # not a TCP socket (e.g. a socketpair in tests)
        self.sockets[peer] = sock
        self._locks[peer] = threading.Lock()
        inbox = self._queue(peer)
        threading.Thread(target=self._reader, args=(peer, sock, inbox), daemon=True,
                         name=f"party{self.pid}-from{peer}").start()

    @staticmethod
    def _reader(peer: int, sock: socket.socket, inbox: queue.Queue) -> None:
        try:
            while True:
                inbox.put(read_frame(sock))
        except (CommunicationError, OSError) as exc:
            inbox.put(CommunicationError(str(exc)))

    def _deliver(self, peer: int, frame: Frame) -> None:
        try:
            with self._locks[peer]:
                self.sockets[peer].sendall(encode_frame(frame))
        except KeyError:
            raise CommunicationError(f"no connection to party {peer}") from None
        except OSError as exc:
            raise CommunicationError(f"send to party {peer} failed: {exc}") from exc

    def close(self) -> None:
        for sock in self.sockets.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        self.sockets.clear()
