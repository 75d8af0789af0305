"""Distributed MWEM: party-side service, in-process backend and TCP coordinator.

The coordinator holds no shares.  It drives the parties with control frames
and receives only the opened query index and noisy measurement per round.

Control payload layouts (ring elements; reals travel as float64 bit patterns):

* WORKLOAD: ``[1, N, D, bound] + N*D coefficients``
* SELECT:   ``[2, eps', pinned?, pinned_u] + N approximate answers``
* MEASURE:  ``[3, index, b, pinned?, pinned_u, pinned_bit]``
* SHUTDOWN: ``[4]``

Every party answers each request with a MSG_OPEN frame ``[result]``.
"""
from __future__ import annotations

import logging
import socket
import time

import numpy as np

from .cluster import (COORDINATOR_ID, LocalCluster, _connect, _setup_payload, check_setup)
from .mechanisms import pi_lap, pi_qem
from .ring import DEFAULT_CODEC, RING_DTYPE, FixedPointCodec
from .sharing import Party, Share
from .transport import MSG_OPEN, MSG_SETUP, CommunicationError, Frame, encode_frame, read_frame

log = logging.getLogger(__name__)

OP_WORKLOAD = 1
OP_SELECT = 2
OP_MEASURE = 3
OP_SHUTDOWN = 4


def f64_to_ring(values) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(values, dtype=np.float64)).reshape(-1).view(np.uint64)


def ring_to_f64(values) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(values, dtype=np.uint64)).view(np.float64)


class PartyService:
    """One party's side of a distributed MWEM run over a shared histogram.

    The histogram holds integer counts (no fractional bits); query answers
    become fixed-point shares by multiplying with encoded public coefficients.
    """

    def __init__(self, party: Party, histogram: Share):
        self.party = party
        self.histogram = histogram
        self.answers: Share | None = None
        self.answer_bound = 1.0

    def load_workload(self, workload: np.ndarray, answer_bound: float) -> None:
        workload = np.asarray(workload, dtype=np.float64)
        if workload.shape[-1] != self.histogram.shape[-1]:
            raise ValueError(f"workload has {workload.shape[-1]} cells, shares have {self.histogram.shape[-1]}")
        coeffs = self.party.codec.encode(workload)
        self.answers = eval_query_shared(coeffs, self.histogram)
        self.answer_bound = float(answer_bound)

    def select(self, approx, eps_prime: float, pinned_uniform=None) -> int:
        return int(pi_qem(self.party, self.answers, approx, eps_prime, self.answer_bound, pinned_uniform))

    def measure(self, index: int, b: float, pinned_uniform=None, pinned_bit=None) -> float:
        return float(pi_lap(self.party, self.answers[int(index)], b, pinned_uniform, pinned_bit))


def eval_query_shared(coeffs: np.ndarray, histogram: Share) -> Share:
    """Shares of ``coeffs @ D`` computed locally (public coefficients)."""
    coeffs = np.asarray(coeffs, dtype=RING_DTYPE)
    if coeffs.shape[-1] != histogram.shape[-1]:
        raise ValueError("coefficient/histogram dimension mismatch")
    return Share(coeffs @ histogram.a, coeffs @ histogram.b, histogram.pid)


class SimulatedBackend:
    """All three parties as threads of this process."""

    def __init__(self, histograms: list[Share], seed: int | None = None,
                 codec: FixedPointCodec = DEFAULT_CODEC, cluster: LocalCluster | None = None):
        self.cluster = cluster or LocalCluster(seed, codec)
        self.services = [PartyService(p, histograms[p.pid]) for p in self.cluster.parties]
        self._owns_cluster = cluster is None

    def _agree(self, results):
        if any(r != results[0] for r in results[1:]):
            raise CommunicationError(f"parties disagree on opened value: {results}")
        return results[0]

    def prepare(self, workload, answer_bound):
        self.cluster.run(lambda p: self.services[p.pid].load_workload(workload, answer_bound))

    def select(self, approx, eps_prime, pinned_uniform=None):
        return self._agree(self.cluster.run(lambda p: self.services[p.pid].select(approx, eps_prime, pinned_uniform)))

    def measure(self, index, b, pinned_uniform=None, pinned_bit=None):
        return self._agree(self.cluster.run(
            lambda p: self.services[p.pid].measure(index, b, pinned_uniform, pinned_bit)))

    def open_log(self, pid: int = 0):
        return list(self.cluster.parties[pid].open_log)

    def close(self):
        if self._owns_cluster:
            self.cluster.close()


# --------------------------------------------------------------------- TCP


def serve_party(service: PartyService, coordinator: socket.socket) -> None:
    """Answer coordinator requests until SHUTDOWN."""
    seq = 0
    while True:
        frame = read_frame(coordinator)
        if frame.kind != MSG_SETUP or frame.payload.size == 0:
            raise CommunicationError("unexpected frame from coordinator")
        op = int(frame.payload[0])
        body = frame.payload[1:]
        seq += 1
        if op == OP_SHUTDOWN:
            log.info("party %d: shutdown", service.party.pid)
            return
        if op == OP_WORKLOAD:
            n_q, n_cells = int(body[0]), int(body[1])
            bound = float(ring_to_f64(body[2:3])[0])
            workload = ring_to_f64(body[3:]).reshape(n_q, n_cells)
            service.load_workload(workload, bound)
            result = np.zeros(1, dtype=np.uint64)
        elif op == OP_SELECT:
            eps_prime = float(ring_to_f64(body[0:1])[0])
            pinned = int(body[2]) if int(body[1]) else None
            approx = ring_to_f64(body[3:])
            result = np.array([service.select(approx, eps_prime, pinned)], dtype=np.uint64)
        elif op == OP_MEASURE:
            index = int(body[0])
            b = float(ring_to_f64(body[1:2])[0])
            pin_u, pin_bit = (int(body[3]), int(body[4])) if int(body[2]) else (None, None)
            result = f64_to_ring([service.measure(index, b, pin_u, pin_bit)])
        else:
            raise CommunicationError(f"unknown control opcode {op}")
        coordinator.sendall(encode_frame(Frame(MSG_OPEN, seq, service.party.pid, result)))


class TcpBackend:
    """Coordinator side: talks to three party processes over TCP."""

    def __init__(self, addresses: dict[int, tuple[str, int]], codec: FixedPointCodec = DEFAULT_CODEC,
                 timeout: float = 60.0):
        self.codec = codec
        self.socks: dict[int, socket.socket] = {}
        self.seq = 0
        deadline = time.monotonic() + timeout
        for pid in (0, 1, 2):
            sock = _connect(addresses[pid], deadline)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.sendall(encode_frame(Frame(MSG_SETUP, 0, COORDINATOR_ID, _setup_payload(codec))))
            check_setup(read_frame(sock), codec)
            self.socks[pid] = sock

    def _request(self, payload: np.ndarray) -> np.ndarray:
        self.seq += 1
        data = encode_frame(Frame(MSG_SETUP, self.seq, COORDINATOR_ID, np.asarray(payload, dtype=np.uint64)))
        for sock in self.socks.values():
            sock.sendall(data)
        replies = []
        for pid, sock in self.socks.items():
            try:
                reply = read_frame(sock)
            except OSError as exc:
                raise CommunicationError(f"lost party {pid}: {exc}") from exc
            if reply.kind != MSG_OPEN or reply.sender != pid:
                raise CommunicationError(f"bad reply from party {pid}")
            replies.append(reply.payload)
        if any(not np.array_equal(r, replies[0]) for r in replies[1:]):
            raise CommunicationError("parties disagree on opened value")
        return replies[0]

    def prepare(self, workload, answer_bound):
        workload = np.asarray(workload, dtype=np.float64)
        head = np.array([OP_WORKLOAD, workload.shape[0], workload.shape[1]], dtype=np.uint64)
        self._request(np.concatenate([head, f64_to_ring([answer_bound]), f64_to_ring(workload)]))

    def select(self, approx, eps_prime, pinned_uniform=None):
        head = np.array([OP_SELECT], dtype=np.uint64)
        flags = np.array([0 if pinned_uniform is None else 1, pinned_uniform or 0], dtype=np.uint64)
        return int(self._request(np.concatenate([head, f64_to_ring([eps_prime]), flags, f64_to_ring(approx)]))[0])

    def measure(self, index, b, pinned_uniform=None, pinned_bit=None):
        pinned = pinned_uniform is not None
        payload = np.concatenate([
            np.array([OP_MEASURE, index], dtype=np.uint64), f64_to_ring([b]),
            np.array([int(pinned), pinned_uniform or 0, pinned_bit or 0], dtype=np.uint64)])
        return float(ring_to_f64(self._request(payload))[0])

    def close(self):
        data = encode_frame(Frame(MSG_SETUP, self.seq + 1, COORDINATOR_ID, np.array([OP_SHUTDOWN], dtype=np.uint64)))
        for sock in self.socks.values():
            try:
                sock.sendall(data)
                sock.close()
            except OSError:
                pass
        self.socks.clear()
