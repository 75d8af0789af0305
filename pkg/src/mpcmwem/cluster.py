"""Running three party engines together: in-process threads or a TCP mesh."""
from __future__ import annotations

import logging
import socket
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np

from .ring import DEFAULT_CODEC, RING_BITS, FixedPointCodec
from .sharing import KEY_BYTES, Party, PartyKeys
from .transport import (COORDINATOR_ID, DEFAULT_TIMEOUT, MSG_SETUP, CommunicationError, Frame,
                        InProcessTransport, TcpTransport, read_frame, encode_frame)

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1


class HandshakeError(CommunicationError):
    """Peers disagree on protocol version or codec parameters."""


def _keys_from_rng(rng: np.random.Generator) -> list[PartyKeys]:
    # key j is shared by parties j and j+1
    pair = [rng.bytes(KEY_BYTES) for _ in range(3)]
    return [PartyKeys(prev=pair[(i - 1) % 3], next=pair[i]) for i in range(3)]


class LocalCluster:
    """Three engines wired through in-process queues, one thread per party.

    ``run(fn)`` calls ``fn(party)`` on every party concurrently and returns the
    three results in party order.  If any party raises, the channels are
    aborted so the others fail fast, and the first error is re-raised.
    """

    def __init__(self, seed: int | None = None, codec: FixedPointCodec = DEFAULT_CODEC,
                 timeout: float = DEFAULT_TIMEOUT):
        root = np.random.default_rng(seed)
        keys = _keys_from_rng(root)
        transports = InProcessTransport.mesh(3, timeout)
        local_seeds = root.integers(0, 2**63, size=3)
        self.codec = codec
        self.parties = [Party(i, transports[i], keys[i], codec, np.random.default_rng(int(local_seeds[i])))
                        for i in range(3)]
        self._pool = ThreadPoolExecutor(max_workers=3, thread_name_prefix="party")

    def run(self, fn: Callable[..., Any], *per_party: Sequence) -> list:
        """Run ``fn(party, *args_i)`` where ``args_i`` are the i-th items of ``per_party``."""
        def call(i):
            args = [seq[i] for seq in per_party]
            try:
                return fn(self.parties[i], *args)
            except BaseException:
                for p in self.parties:
                    p.transport.abort()
                raise

        futures = [self._pool.submit(call, i) for i in range(3)]
        results, first_error = [], None
        for fut in futures:
            try:
                results.append(fut.result())
            except BaseException as exc:  # noqa: BLE001 - re-raised below
                results.append(None)
                if first_error is None or isinstance(first_error, CommunicationError):
                    first_error = exc
        if first_error is not None:
            raise first_error
        return results

    def traffic(self) -> list[int]:
        return [p.traffic() for p in self.parties]

    def close(self):
        self._pool.shutdown(wait=False)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ------------------------------------------------------------------ TCP mesh


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {text!r}")
    return host, int(port)


def _setup_payload(codec: FixedPointCodec, key: bytes = bytes(KEY_BYTES)) -> np.ndarray:
    lo = int.from_bytes(key[:8], "little")
    hi = int.from_bytes(key[8:], "little")
    return np.array([PROTOCOL_VERSION, RING_BITS, codec.f, lo, hi], dtype=np.uint64)


def check_setup(frame: Frame, codec: FixedPointCodec) -> bytes:
    """Validate a setup frame and return the key material it carries."""
    if frame.kind != MSG_SETUP or frame.payload.size != 5:
        raise HandshakeError("malformed session-setup frame")
    version, k, f, lo, hi = (int(v) for v in frame.payload)
    if version != PROTOCOL_VERSION:
        raise HandshakeError(f"protocol version mismatch: ours {PROTOCOL_VERSION}, peer {version}")
    if k != RING_BITS or f != codec.f:
        raise HandshakeError(f"codec mismatch: ours (k={RING_BITS}, f={codec.f}), peer (k={k}, f={f})")
    return lo.to_bytes(8, "little") + hi.to_bytes(8, "little")


def _connect(addr: tuple[str, int], deadline: float) -> socket.socket:
    while True:
        try:
            return socket.create_connection(addr, timeout=5.0)
        except OSError:
            if time.monotonic() > deadline:
                raise CommunicationError(f"could not reach {addr[0]}:{addr[1]}") from None
            time.sleep(0.1)


def accept_peers(listener: socket.socket, want: set[int], codec: FixedPointCodec,
                 deadline: float, own_setup: Callable[[int], bytes]) -> dict[int, tuple[socket.socket, bytes]]:
    """Accept connections until every id in ``want`` has introduced itself.

    Each connecting side sends a setup frame first; we answer with ours.
    ``own_setup(peer)`` yields the key we contribute (zeros when the peer owns it).
    """
    got: dict[int, tuple[socket.socket, bytes]] = {}
    while want - set(got):
        listener.settimeout(max(0.1, deadline - time.monotonic()))
        try:
            sock, _ = listener.accept()
        except socket.timeout:
            raise CommunicationError(f"peers {sorted(want - set(got))} never connected") from None
        sock.settimeout(None)
        frame = read_frame(sock)
        if frame.sender not in want:
            sock.close()
            continue
        try:
            key = check_setup(frame, codec)
        except HandshakeError:
            sock.sendall(encode_frame(Frame(MSG_SETUP, 0, 255, _setup_payload(codec))))
            sock.close()
            raise
        sock.sendall(encode_frame(Frame(MSG_SETUP, 0, frame.sender, _setup_payload(codec, own_setup(frame.sender)))))
        got[frame.sender] = (sock, key)
    return got


def connect_mesh(pid: int, listener: socket.socket, peers: dict[int, tuple[str, int]],
                 codec: FixedPointCodec = DEFAULT_CODEC, timeout: float = 60.0,
                 rng: np.random.Generator | None = None) -> tuple[Party, socket.socket]:
    """Establish party ``pid``'s links and PRF keys, then wait for the coordinator.

    The lower id of each pair listens.  Party i generates the key it shares
    with party i+1 and sends it during setup.  Returns the engine and the
    coordinator's socket.
    """
    rng = rng or np.random.default_rng()
    deadline = time.monotonic() + timeout
    transport = TcpTransport(pid)
    own_next_key = rng.bytes(KEY_BYTES)
    keys: dict[str, bytes] = {"next": own_next_key}

    def contributed(peer: int) -> bytes:
        return own_next_key if peer == (pid + 1) % 3 else bytes(KEY_BYTES)

    for peer in sorted(p for p in peers if p < pid):
        sock = _connect(peers[peer], deadline)
        sock.sendall(encode_frame(Frame(MSG_SETUP, 0, pid, _setup_payload(codec, contributed(peer)))))
        reply = read_frame(sock)
        key = check_setup(reply, codec)
        if peer == (pid - 1) % 3:
            keys["prev"] = key
        transport.attach(peer, sock)

    higher = {p for p in range(3) if p > pid}
    accepted = accept_peers(listener, higher | {COORDINATOR_ID}, codec, deadline, contributed)
    for peer, (sock, key) in accepted.items():
        if peer == COORDINATOR_ID:
            continue
        if peer == (pid - 1) % 3:
            keys["prev"] = key
        transport.attach(peer, sock)
    coordinator = accepted[COORDINATOR_ID][0]
    party = Party(pid, transport, PartyKeys(prev=keys["prev"], next=keys["next"]), codec, rng)
    return party, coordinator


def listen(address: tuple[str, int]) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind(address)
    sock.listen(8)
    return sock

