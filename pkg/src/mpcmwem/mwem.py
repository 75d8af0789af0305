"""MWEM over a categorical histogram domain, with pluggable mechanism backends.

The synthetic distribution ``A`` is public and kept in double precision; only
the true data (and anything derived from it) lives behind a backend, which is
either plaintext (:class:`CentralBackend`) or a three-party computation.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .mechanisms import PinnedTape, PrivacyBudget, plain_exp_mechanism_select, plain_laplace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HistogramDomain:
    """Product of categorical attributes, cells numbered row-major."""

    names: tuple[str, ...]
    cards: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.cards):
            raise ValueError("one cardinality per attribute")
        if any(c < 1 for c in self.cards):
            raise ValueError("every attribute needs at least one category")

    @property
    def size(self) -> int:
        return int(np.prod(self.cards, dtype=np.int64)) if self.cards else 1

    def cell_index(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64).reshape(-1, len(self.cards))
        return np.ravel_multi_index(tuple(rows.T), self.cards)

    def cell_tuple(self, cells) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(cells, dtype=np.int64), self.cards), axis=-1)


def gen_workload(domain: HistogramDomain, n_queries: int, seed: int, max_attrs: int = 3) -> np.ndarray:
    """Random counting queries: each restricts 1 to ``max_attrs`` attributes to a
    random non-empty subset of their categories.  Returns an (N, |domain|) 0/1 matrix."""
    if n_queries < 1:
        raise ValueError("need at least one query")
    rng = np.random.default_rng(seed)
    k = len(domain.cards)
    out = np.empty((n_queries, domain.size), dtype=np.float64)
    for qi in range(n_queries):
        n_attr = int(rng.integers(1, min(max_attrs, k) + 1))
        chosen = set(rng.choice(k, size=n_attr, replace=False).tolist())
        mask = np.ones(1)
        for j, card in enumerate(domain.cards):
            if j in chosen and card > 1:
                size = int(rng.integers(1, card))
                picked = np.zeros(card)
                picked[rng.choice(card, size=size, replace=False)] = 1.0
            else:
                picked = np.ones(card)
            mask = np.multiply.outer(mask, picked).reshape(-1)
        out[qi] = mask
    return out


def eval_query_public(q, h) -> float | np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if q.shape[-1] != h.shape[-1]:
        raise ValueError(f"query has {q.shape[-1]} coefficients, histogram has {h.shape[-1]} cells")
    out = q @ h
    return float(out) if np.ndim(out) == 0 else out


def uniform_distribution(size: int, n: float) -> np.ndarray:
    return np.full(size, n / size, dtype=np.float64)


def mw_update(A, q, m: float, n: float) -> np.ndarray:
    """Multiplicative-weights step towards measurement ``m`` of query ``q``."""
    A = np.asarray(A, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    qa = float(q @ A)
    out = A * np.exp(q * (m - qa) / (2.0 * n))
    total = out.sum()
    if not np.isfinite(total) or total <= 0:
        log.warning("multiplicative update degenerated; resetting to uniform")
        return uniform_distribution(A.size, n)
    return out * (n / total)


def average_distributions(history: Sequence[np.ndarray], literal: bool = False) -> np.ndarray:
    """Mean of A_1..A_T (default) or of A_0..A_{T-1} (``literal``).

    ``history`` is [A_0, A_1, ..., A_T].
    """
    if len(history) == 0:
        raise ValueError("empty history")
    if len(history) == 1:
        return np.array(history[0], dtype=np.float64)
    chosen = history[:-1] if literal else history[1:]
    return np.mean(np.stack(chosen), axis=0)


# ------------------------------------------------------------------ backends


class MechanismBackend(Protocol):
    def prepare(self, workload: np.ndarray, answer_bound: float) -> None: ...

    def select(self, approx: np.ndarray, eps_prime: float, pinned_uniform=None) -> int: ...

    def measure(self, index: int, b: float, pinned_uniform=None, pinned_bit=None) -> float: ...

    def close(self) -> None: ...


class CentralBackend:
    """Trusted curator holding the plaintext histogram."""

    def __init__(self, histogram, seed: int | None = None, frac_bits: int = 16):
        self.histogram = np.asarray(histogram, dtype=np.float64)
        self.rng = np.random.default_rng(seed)
        self.f = frac_bits
        self.answers = None

    def prepare(self, workload, answer_bound):
        self.answers = eval_query_public(workload, self.histogram)

    def select(self, approx, eps_prime, pinned_uniform=None):
        u = None if pinned_uniform is None else int(pinned_uniform) / float(1 << self.f)
        return int(plain_exp_mechanism_select(self.answers, approx, eps_prime, self.rng, uniform=u))

    def measure(self, index, b, pinned_uniform=None, pinned_bit=None):
        u = None if pinned_uniform is None else int(pinned_uniform) / float(1 << self.f)
        return float(plain_laplace(self.answers[index], b, self.rng, uniform=u, bit=pinned_bit))

    def close(self):
        pass


@dataclass
class MwemConfig:
    epsilon: float
    iterations: int
    n_queries: int = 400
    seed: int = 0
    literal_average: bool = False

    def __post_init__(self):
        PrivacyBudget(self.epsilon, self.iterations)
        if self.n_queries < 1:
            raise ValueError("need at least one query")

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon, self.iterations)


@dataclass
class MwemResult:
    distribution: np.ndarray
    indices: list[int] = field(default_factory=list)
    measurements: list[float] = field(default_factory=list)
    history: list[np.ndarray] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


def run_mwem(config: MwemConfig, workload: np.ndarray, n: float, backend: MechanismBackend,
             tape: PinnedTape | None = None) -> MwemResult:
    """T rounds of select / measure / update; returns the averaged distribution."""
    budget = config.budget
    workload = np.asarray(workload, dtype=np.float64)
    if n <= 0:
        raise ValueError("dataset size must be positive")
    timings = {"prepare": 0.0, "select": 0.0, "measure": 0.0, "update": 0.0}
    t0 = time.perf_counter()
    backend.prepare(workload, float(n))
    timings["prepare"] = time.perf_counter() - t0

    A = uniform_distribution(workload.shape[1], n)
    result = MwemResult(A, history=[A])
    for _ in range(budget.iterations):
        approx = workload @ A
        t0 = time.perf_counter()
        u_sel = None if tape is None else int(tape.uniform_raw())
        k = backend.select(approx, budget.eps_prime, u_sel)
        t1 = time.perf_counter()
        u_lap, bit = (None, None) if tape is None else (int(tape.uniform_raw()), int(tape.bit()))
        m = backend.measure(k, budget.laplace_scale, u_lap, bit)
        t2 = time.perf_counter()
        A = mw_update(A, workload[k], m, n)
        t3 = time.perf_counter()
        timings["select"] += t1 - t0
        timings["measure"] += t2 - t1
        timings["update"] += t3 - t2
        result.indices.append(int(k))
        result.measurements.append(float(m))
        result.history.append(A)
    result.distribution = average_distributions(result.history, config.literal_average)
    result.timings = timings
    return result
