"""Exponential and Laplace mechanisms, in the clear and over shares.

Indices returned by the selection routines are 0-based.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import primitives as prim
from .ring import RING_DTYPE, as_ring, to_signed
from .sharing import Party, Share

TAPE_ENV = "MPCMWEM_ALLOW_PINNED_TAPE"

# target magnitude of the integer-encoded score multiplier
_SCORE_MULT_BITS = 20
_RAW_LIMIT_BITS = 61


class TapeForbiddenError(RuntimeError):
    """A pinned randomness tape was requested without the test gate enabled."""


@dataclass(frozen=True)
class PrivacyBudget:
    """Total budget split evenly over T rounds of (selection, measurement)."""

    epsilon: float
    iterations: int

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be a positive finite number, got {self.epsilon}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError(f"iterations must be a positive integer, got {self.iterations}")

    @property
    def eps_prime(self) -> float:
        return self.epsilon / (2 * self.iterations)

    @property
    def laplace_scale(self) -> float:
        return 2 * self.iterations / self.epsilon


class PinnedTape:
    """Deterministic stand-in for the joint randomness (testing only).

    Two counter-based streams are kept: one feeding uniform draws, one feeding
    sign bits.  A uniform draw is the top ``f`` bits of a raw word, so both the
    plaintext and the shared code paths see the exact same fixed-point value.
    Using a tape voids every privacy guarantee, hence the gate.
    """

    def __init__(self, seed: int, frac_bits: int = 16, allow: bool = False):
        if not (allow or os.environ.get(TAPE_ENV) == "1"):
            raise TapeForbiddenError(f"pinned randomness tapes require {TAPE_ENV}=1")
        self.seed = int(seed)
        self.f = frac_bits
        self._uniform = np.random.Generator(np.random.Philox(key=[self.seed, 1]))
        self._bits = np.random.Generator(np.random.Philox(key=[self.seed, 2]))

    @classmethod
    def from_file(cls, path, frac_bits: int = 16, allow: bool = False) -> "PinnedTape":
        with open(path) as fh:
            text = fh.read().strip()
        try:
            seed = int(text.split("=")[-1])
        except ValueError:
            raise ValueError(f"tape file {path} must contain an integer seed") from None
        return cls(seed, frac_bits, allow)

    def uniform_raw(self, size=None) -> np.ndarray:
        """Fixed-point integers in [0, 2^f)."""
        raw = self._uniform.bit_generator.random_raw(size)
        return np.asarray(raw, dtype=np.uint64) >> np.uint64(64 - self.f)

    def uniform(self, size=None):
        return self.uniform_raw(size) / float(1 << self.f)

    def bit(self, size=None) -> np.ndarray:
        raw = self._bits.bit_generator.random_raw(size)
        return np.asarray(raw, dtype=np.uint64) >> np.uint64(63)


# ------------------------------------------------------------- plaintext


def plain_exp_mechanism_select(scores_true, scores_approx, eps_prime: float, rng=None,
                               uniform=None) -> np.ndarray | int:
    """Exponential mechanism by the max-shifted cumulative-threshold scan.

    Picks ``i`` with probability proportional to
    ``exp(0.5 * eps_prime * |approx_i - true_i|)``.  Works on the last axis;
    leading axes are independent trials.  ``uniform`` overrides the draw
    (e.g. from a :class:`PinnedTape`).
    """
    qd = np.asarray(scores_true, dtype=np.float64)
    qa = np.asarray(scores_approx, dtype=np.float64)
    if qd.shape[-1:] == (0,) or qd.ndim == 0:
        raise ValueError("exponential mechanism needs at least one candidate")
    if not (eps_prime > 0):
        raise ValueError("eps_prime must be positive")
    err = 0.5 * eps_prime * np.abs(qa - qd)
    es = np.exp(err - err.max(axis=-1, keepdims=True))
    cs = np.cumsum(es, axis=-1)
    if uniform is None:
        rng = rng if rng is not None else np.random.default_rng()
        uniform = rng.random(cs.shape[:-1])
    t = np.asarray(uniform) * cs[..., -1]
    above = cs > t[..., None]
    n = cs.shape[-1]
    idx = np.where(above.any(axis=-1), above.argmax(axis=-1), n - 1)
    return int(idx) if idx.ndim == 0 else idx


def select_by_scores(scores, eps_prime: float, rng=None, uniform=None):
    """Convenience form taking utility scores directly."""
    scores = np.asarray(scores, dtype=np.float64)
    return plain_exp_mechanism_select(np.zeros_like(scores), scores, eps_prime, rng, uniform)


def plain_laplace(value, b: float, rng=None, uniform=None, bit=None):
    """``value + b * ln(x) * c`` with x uniform on (0, 1] and c a random sign."""
    if b < 0:
        raise ValueError("Laplace scale must be non-negative")
    value = np.asarray(value, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng()
    u = rng.random(value.shape) if uniform is None else np.asarray(uniform, dtype=np.float64)
    s = rng.integers(0, 2, value.shape) if bit is None else np.asarray(bit)
    noise = b * np.log1p(-u) * (2.0 * s - 1.0)
    out = value + noise if b > 0 else value.copy()
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------------ MPC


def score_scaling(eps_prime: float, answer_bound: float, f: int) -> tuple[int, int]:
    """Integer multiplier ``c_int`` ~ 0.5 * eps_prime * 2^g and the extra bits ``g``.

    ``g`` keeps roughly 20 significant bits in the multiplier while the
    scaled score difference stays below 2^61 for answers bounded by
    ``answer_bound``.
    """
    c = 0.5 * eps_prime
    g = _SCORE_MULT_BITS - math.floor(math.log2(c))
    cap = math.floor(_RAW_LIMIT_BITS - f - math.log2(c * max(answer_bound, 1.0) + 1.0)) - 1
    g = max(0, min(g, cap, 62 - prim.EXP_INT_BITS - f))
    c_int = int(round(c * 2**g))
    if c_int < 1:
        raise ValueError("eps_prime too small for the fixed-point score encoding")
    return c_int, g


def threshold_index(p: Party, cumulative: Share, threshold: Share) -> Share:
    """1-based index of the first cumulative entry strictly above the threshold.

    Returns N when no entry exceeds it.  ``cumulative`` has shape (..., N)
    and ``threshold`` shape (...); both at the same scale.
    """
    n = cumulative.shape[-1]
    above = prim.lt(p, threshold.expand_dims(-1).broadcast_to(cumulative.shape), cumulative)
    s = above.sum(axis=-1)
    cnd = prim.eq(p, s, 0)
    return n - p.mul(s - 1, 1 - cnd)


def pi_qem(p: Party, answers: Share, approx, eps_prime: float, answer_bound: float,
           pinned_uniform=None, label: str = "qem-index") -> np.ndarray | int:
    """Exponential-mechanism selection over shared true answers.

    ``answers`` holds fixed-point q(D) values (shape (..., N)), ``approx`` the
    public q(A) values.  Only the selected index is opened.
    """
    f = p.f
    n = answers.shape[-1]
    if n == 0:
        raise ValueError("exponential mechanism needs at least one candidate")
    c_int, g = score_scaling(eps_prime, answer_bound, f)
    s = f + g
    qa = as_ring(np.round(np.asarray(approx, dtype=np.float64) * 2**f).astype(np.int64))
    diff = (answers - qa) * np.uint64(c_int)           # scale f + g
    sign = prim.lt(p, diff, 0)
    err = p.mul(1 - 2 * sign, diff)
    top = prim.maximum(p, err)
    delta = err - top.expand_dims(-1).broadcast_to(err.shape)
    es = prim.exp_neg(p, delta, s)                     # scale f
    cs = es.cumsum(axis=-1)
    batch = cs.shape[:-1]
    if pinned_uniform is None:
        r = prim.rand_uniform(p, batch)
    else:
        r = p.constant(np.broadcast_to(as_ring(np.asarray(pinned_uniform, dtype=np.uint64)), batch).copy())
    t = p.mul(cs[..., n - 1], r)                       # scale 2f, kept exact
    k = threshold_index(p, cs << f, t)
    opened = np.reshape(to_signed(p.open(k, label)) - 1, batch)
    return int(opened) if opened.ndim == 0 else opened


def laplace_scaling(b: float) -> tuple[int, int]:
    if b == 0:
        return 0, 0
    g = max(0, 24 - math.ceil(math.log2(b + 1.0)))
    return int(round(b * 2**g)), g


def pi_lap(p: Party, answer: Share, b: float, pinned_uniform=None, pinned_bit=None,
           label: str = "lap-measurement"):
    """Laplace measurement of a shared fixed-point answer; opens only the noisy value."""
    if b < 0:
        raise ValueError("Laplace scale must be non-negative")
    f = p.f
    shape = answer.shape
    if pinned_uniform is None:
        u = prim.rand_uniform(p, shape)
    else:
        u = p.constant(np.broadcast_to(as_ring(np.asarray(pinned_uniform, dtype=np.uint64)), shape).copy())
    x = (-u)._add_public(np.uint64(1 << f))
    lnx = prim.ln(p, x)
    if pinned_bit is None:
        bit = prim.rand_bit(p, shape)
    else:
        bit = p.constant(np.broadcast_to(as_ring(np.asarray(pinned_bit, dtype=np.uint64)), shape).copy())
    sgn = 2 * bit - 1
    w = p.mul(lnx, sgn)
    b_int, g = laplace_scaling(b)
    m = answer * np.uint64(1 << g) + w * np.uint64(b_int)
    raw = np.reshape(to_signed(p.open(m, label)).astype(np.float64), shape) / float(2 ** (f + g))
    return float(raw) if raw.ndim == 0 else raw


