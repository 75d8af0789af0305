"""Arithmetic in Z_2^64 and the fixed-point codec used for every shared value.

Ring elements are stored as ``numpy.uint64``; numpy wraps on overflow, which is
exactly reduction mod 2^64.  Negative reals use the two's-complement embedding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RING_BITS = 64
MODULUS = 1 << RING_BITS
RING_DTYPE = np.uint64


class RingRangeError(ValueError):
    """A real value does not fit the fixed-point range of the codec."""


def as_ring(value) -> np.ndarray:
    """Coerce ints (possibly negative, possibly Python bigints) to uint64 ring elements."""
    if isinstance(value, np.ndarray):
        if value.dtype == RING_DTYPE:
            return value
        if value.dtype.kind == "i":
            return value.astype(np.int64).view(RING_DTYPE)
        if value.dtype.kind == "u":
            return value.astype(RING_DTYPE)
        if value.dtype == object:
            return np.array([int(v) % MODULUS for v in value.ravel()], dtype=RING_DTYPE).reshape(value.shape)
        raise TypeError(f"cannot map dtype {value.dtype} into the ring")
    if isinstance(value, (int, np.integer)):
        return np.array(int(value) % MODULUS, dtype=RING_DTYPE)
    return as_ring(np.asarray(value))


def to_signed(value) -> np.ndarray:
    """Signed (two's-complement) view of ring elements as int64."""
    return as_ring(value).view(np.int64)


def sar(value: np.ndarray, bits: int) -> np.ndarray:
    """Arithmetic shift right on the signed view, returned as ring elements."""
    return (to_signed(value) >> np.int64(bits)).view(RING_DTYPE)


def _scalar_or_array(result: np.ndarray, like):
    if np.ndim(like) == 0 and not isinstance(like, np.ndarray):
        return result.item() if result.dtype != RING_DTYPE else int(result)
    return result


@dataclass(frozen=True)
class FixedPointCodec:
    """Fixed-point encoding of reals into Z_2^k with ``f`` fractional bits.

    Representable values lie in ``[-2^(k-f-1), 2^(k-f-1))`` at resolution ``2^-f``.
    """

    f: int = 16
    k: int = RING_BITS

    def __post_init__(self):
        if self.k != RING_BITS:
            raise ValueError("only the 64-bit ring is supported")
        if not 0 <= self.f < self.k - 1:
            raise ValueError(f"fractional bits must lie in [0, {self.k - 2}], got {self.f}")

    @property
    def scale(self) -> int:
        return 1 << self.f

    @property
    def bound(self) -> float:
        return float(2 ** (self.k - self.f - 1))

    def encode(self, x, frac_bits: int | None = None):
        """round(x * 2^f) mod 2^64, rounding half away from zero."""
        bits = self.f if frac_bits is None else frac_bits
        arr = np.asarray(x, dtype=np.float64)
        limit = float(2 ** (self.k - bits - 1))
        if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) >= limit):
            raise RingRangeError(f"value outside fixed-point range +/-{limit} (f={bits})")
        scaled = np.abs(arr) * float(2**bits)
        rounded = np.copysign(np.floor(scaled + 0.5), arr)
        out = rounded.astype(np.int64).view(RING_DTYPE)
        return _scalar_or_array(out, x)

    def decode(self, e, frac_bits: int | None = None):
        bits = self.f if frac_bits is None else frac_bits
        out = to_signed(e).astype(np.float64) / float(2**bits)
        if np.ndim(e) == 0 and not isinstance(e, np.ndarray):
            return float(out)
        return out

    def trunc(self, e, bits: int | None = None):
        """Plaintext rescaling of a raw product: floor division by 2^bits on the signed view."""
        out = sar(e, self.f if bits is None else bits)
        return _scalar_or_array(out, e)


DEFAULT_CODEC = FixedPointCodec()


def encode_fixed(x, codec: FixedPointCodec = DEFAULT_CODEC):
    return codec.encode(x)


def decode_fixed(e, codec: FixedPointCodec = DEFAULT_CODEC):
    return codec.decode(e)


def trunc_plain(e, codec: FixedPointCodec = DEFAULT_CODEC):
    return codec.trunc(e)
