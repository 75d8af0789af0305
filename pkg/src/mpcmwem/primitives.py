"""Comparison, selection and transcendental protocols over replicated shares.

Every function takes the calling party's :class:`~mpcmwem.sharing.Party` as
its first argument and works elementwise on arrays of any shape, so large
batches cost the same number of rounds as a single element.

Comparisons extract the sign bit of a difference: the three arithmetic
summands are reinterpreted as boolean sharings, reduced with a carry-save
layer, and added with a Kogge-Stone prefix adder (8 rounds).  The sign bit is
converted back to an arithmetic 0/1 sharing with two multiplications.
"""
from __future__ import annotations

import math

import numpy as np

from .ring import RING_DTYPE, as_ring
from .sharing import BoolShare, Party, Share, concat

ONE = np.uint64(1)

# e^(-t) on [0, 1], degree 5 (Chebyshev nodes), max abs error 4.5e-7
EXP_COEFFS = (0.9999995544211946, -0.9999678512243935, 0.4996208737479463,
              -0.16501271678028187, 0.03833892232810025, -0.0050997276264818465)
# ln(0.75 + y) on [-0.25, 0.25], degree 6, max abs error 1.7e-6
LN_COEFFS = (-0.2876820724517809, 1.3333667808028833, -0.8889280863885825, 0.7858888082686764,
             -0.7851623022141002, 0.9738990672059507, -1.0898950777134035)

EXP_INT_BITS = 4  # inputs below -2^EXP_INT_BITS = -16 clamp to 0


def _fixed(value: float, bits: int) -> np.uint64:
    return np.uint64(as_ring(int(round(value * 2**bits))))


def _summands(p: Party, x: Share) -> list[BoolShare]:
    """Boolean sharings of the three arithmetic summands x0, x1, x2 (local)."""
    zero = np.zeros_like(x.a)
    out = [BoolShare(zero, zero, p.pid) for _ in range(3)]
    out[p.pid] = BoolShare(x.a, zero, p.pid)
    out[p.next] = BoolShare(zero, x.b, p.pid)
    return out


def a2b(p: Party, x: Share) -> BoolShare:
    """Bit decomposition: XOR sharing of the 64-bit two's-complement word."""
    s0, s1, s2 = _summands(p, x)
    t = s0 ^ s1 ^ s2
    carry = p.and_(s0 ^ s2, s1 ^ s2) ^ s2
    carry = carry << 1
    prop = t ^ carry
    gen = p.and_(t, carry)
    P = prop
    k = 1
    while k < 64:
        if 2 * k < 64:
            pg, pp = p.and_many([(P, gen << k), (P, P << k)])
            P = pp
        else:
            (pg,) = p.and_many([(P, gen << k)])
        gen = gen ^ pg
        k *= 2
    return prop ^ (gen << 1)


def _bool_bits_to_arith(p: Party, bits: BoolShare) -> Share:
    """Arithmetic 0/1 sharing from an XOR sharing whose words are 0 or 1."""
    zero = np.zeros_like(bits.a)
    parts = [Share(zero, zero, p.pid) for _ in range(3)]
    parts[p.pid] = Share(bits.a & ONE, zero, p.pid)
    parts[p.next] = Share(zero, bits.b & ONE, p.pid)
    u = parts[0] + parts[1] - 2 * p.mul(parts[0], parts[1])
    return u + parts[2] - 2 * p.mul(u, parts[2])


def b2a_bits(p: Party, words: BoolShare, positions) -> Share:
    """Arithmetic sharings of the chosen bit positions, stacked on a new last axis."""
    shifts = np.asarray(list(positions), dtype=np.uint64)
    a = (words.a[..., None] >> shifts) & ONE
    b = (words.b[..., None] >> shifts) & ONE
    return _bool_bits_to_arith(p, BoolShare(a, b, p.pid))


def msb(p: Party, x: Share) -> Share:
    """Arithmetic sharing of the sign bit of ``x``."""
    bits = a2b(p, x) >> 63
    return _bool_bits_to_arith(p, bits)


def lt(p: Party, x: Share, y) -> Share:
    """[x < y] on the signed view; requires |x - y| < 2^63."""
    return msb(p, x - y)


def gt(p: Party, x: Share, y) -> Share:
    if isinstance(y, Share):
        return lt(p, y, x)
    return msb(p, -x + y)


def eq(p: Party, x: Share, y) -> Share:
    d = x - y
    flat = d.reshape(-1)
    both = msb(p, concat([flat, -flat]))
    n = flat.size
    return (1 - both[:n] - both[n:]).reshape(d.shape)


def select(p: Party, c: Share, a, b) -> Share:
    """``a`` where the bit ``c`` is 1, else ``b``."""
    diff = a - b
    if not isinstance(diff, Share):
        return c * as_ring(diff) + b
    return p.mul(c, diff) + b


def maximum(p: Party, v: Share) -> Share:
    """Maximum along the last axis by a balanced tournament."""
    if v.shape[-1] == 0:
        raise ValueError("maximum of an empty vector")
    while v.shape[-1] > 1:
        n = v.shape[-1]
        h = n // 2
        left, right = v[..., 0:2 * h:2], v[..., 1:2 * h:2]
        c = lt(p, right, left)
        best = p.mul(c, left - right) + right
        if n % 2:
            best = concat([best, v[..., n - 1:]], axis=-1)
        v = best
    return v[..., 0]


# ----------------------------------------------------------- transcendental


def exp_neg(p: Party, x: Share, scale: int | None = None) -> Share:
    """e^x for x <= 0, result at the codec's scale.

    ``x`` may carry ``scale >= f`` fractional bits.  Values below -16 give 0.
    The input is split obliviously into a 4-bit integer part and an ``f``-bit
    fraction; e^-frac is a polynomial and each integer bit j selects a factor
    e^(-2^j).
    """
    f = p.f
    s = f if scale is None else scale
    if s < f or s + EXP_INT_BITS > 62:
        raise ValueError(f"unsupported input scale {s}")
    z = -x
    in_range = lt(p, z, np.uint64(1 << (s + EXP_INT_BITS)))
    z = p.mul(in_range, z)
    bits = a2b(p, z)
    positions = list(range(s - f, s)) + list(range(s, s + EXP_INT_BITS))
    arith = b2a_bits(p, bits, positions)
    frac_weights = np.array([1 << j for j in range(f)], dtype=RING_DTYPE)
    t = (arith[..., :f] * frac_weights).sum(axis=-1)
    one = _fixed(1.0, f)
    factors = [arith[..., f + j] * _fixed(math.exp(-(2**j)) - 1.0, f) + one for j in range(EXP_INT_BITS)]

    p2, f01, f23 = p.mul_fixed_many([(t, t), (factors[0], factors[1]), (factors[2], factors[3])])
    p3, p4, fall = p.mul_fixed_many([(p2, t), (p2, p2), (f01, f23)])
    p5_raw, gate = p.mul_many([(p4, t), (fall, in_range)])
    p5 = p.trunc(p5_raw)
    powers = [t, p2, p3, p4, p5]
    acc = p.constant(_fixed(EXP_COEFFS[0], 2 * f))
    for coef, power in zip(EXP_COEFFS[1:], powers):
        acc = acc + power * _fixed(coef, f)
    poly = p.trunc(acc)
    return p.mul_fixed(poly, gate)


def ln(p: Party, x: Share) -> Share:
    """Natural log for x in [2^-f, 1] at the codec's scale.

    ``x = m * 2^k`` with ``m`` in [0.5, 1) is found by locating the leading
    one bit obliviously; ln m is a polynomial around 0.75.
    """
    f = p.f
    bits = a2b(p, x) & np.uint64((1 << (f + 1)) - 1)
    y = bits
    k = 1
    while k <= f:
        shifted = y >> k
        y = y ^ shifted ^ p.and_(y, shifted)
        k *= 2
    onehot = y ^ (y >> 1)
    oh = b2a_bits(p, onehot, range(f + 1))
    norm = (oh * np.array([1 << (f - e) for e in range(f + 1)], dtype=RING_DTYPE)).sum(axis=-1)
    expo = (oh * as_ring(np.array([e + 1 - f for e in range(f + 1)], dtype=np.int64))).sum(axis=-1)

    g = f + 1
    m = p.mul(x, norm)                          # scale g, in [0.5, 1)
    u = m - _fixed(0.75, g)
    (u2,) = p.mul_fixed_many([(u, u)], g)
    u3, u4 = p.mul_fixed_many([(u2, u), (u2, u2)], g)
    u5, u6 = p.mul_fixed_many([(u4, u), (u3, u3)], g)
    acc = p.constant(_fixed(LN_COEFFS[0], f + g)) + expo * _fixed(math.log(2.0), f + g)
    for coef, power in zip(LN_COEFFS[1:], (u, u2, u3, u4, u5, u6)):
        acc = acc + power * _fixed(coef, f)
    return p.trunc(acc, g)


# ------------------------------------------------------------ randomness


def rand_bit(p: Party, shape=()) -> Share:
    """Uniform shared bit(s): XOR of one private bit from each party."""
    local = p.rng.integers(0, 2, size=shape, dtype=np.uint64)
    b0, b1, b2 = p.input_all(local)
    u = b0 + b1 - 2 * p.mul(b0, b1)
    return u + b2 - 2 * p.mul(u, b2)


def rand_uniform(p: Party, shape=()) -> Share:
    """Uniform fixed-point value(s) on {0, 2^-f, ..., 1 - 2^-f}."""
    f = p.f
    bits = rand_bit(p, np.shape(np.empty(shape)) + (f,))
    weights = np.array([1 << (f - j) for j in range(1, f + 1)], dtype=RING_DTYPE)
    return (bits * weights).sum(axis=-1)
