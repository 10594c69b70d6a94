"""Bit-level emulation of the camera's arithmetic.

Two number formats are modelled:

* ``HalfFloat``: IEEE binary16 bit patterns (``uint16``) with no subnormal
  support.  Subnormal operands read as signed zero and subnormal results are
  flushed to signed zero.  Every result is rounded to nearest, ties to even.
  Overflow produces infinity.  NaN results are the canonical quiet NaN 0x7E00.
* ``FixedArray``: exact integer arrays carrying a fractional-bit count, used by
  the alignment and preprocessing front end.

The binary16 kernels operate on the integer significands directly.  The
multiplier and divider normalise with a single 0-or-1 position shift; only the
adder needs a priority encoder.  They are compiled with numba and exposed as
numpy ufuncs, so they broadcast over arrays of bit patterns.

``wide_oracle`` is an independent route (float64 compute, numpy's
float64->float16 conversion, then flush) used by the self test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

HALF_NAN = 0x7E00
HALF_INF = 0x7C00
HALF_MAX = 65504.0
HALF_MIN_NORMAL = 2.0**-14

_SIGN = 0x8000


# ---------------------------------------------------------------- scalar core

@numba.njit(cache=True)
def _round_pack(sign, sig, g, e):
    """Round ``sig`` (11 + g significant bits) with biased exponent ``e``.

    The value represented is ``sig * 2**(e - 25 - g)``.  The lowest bit of
    ``sig`` may be a sticky bit, so ``g`` must be at least 2 whenever the
    significand is inexact.
    """
    if e >= 1:
        q = sig >> g
        rem = sig & ((1 << g) - 1)
        half = 1 << (g - 1)
        if rem > half or (rem == half and (q & 1) == 1):
            q += 1
        if q == 2048:
            q = 1024
            e += 1
        if e >= 31:
            return sign | HALF_INF
        return sign | (e << 10) | (q - 1024)
    if e == 0:
        # [2^-15, 2^-14): round on the subnormal grid, keep only a carry to 2^-14
        g1 = g + 1
        q = sig >> g1
        rem = sig & ((1 << g1) - 1)
        half = 1 << (g1 - 1)
        if rem > half or (rem == half and (q & 1) == 1):
            q += 1
        if q == 1024:
            return sign | 0x0400
    return sign


@numba.njit(cache=True)
def _mul_scalar(x, y):
    x = np.int64(x)
    y = np.int64(y)
    sign = (x ^ y) & _SIGN
    ex = (x >> 10) & 31
    ey = (y >> 10) & 31
    mx = x & 1023
    my = y & 1023
    x_nan = ex == 31 and mx != 0
    y_nan = ey == 31 and my != 0
    if x_nan or y_nan:
        return HALF_NAN
    if ex == 31 or ey == 31:
        if ex == 0 or ey == 0:
            return HALF_NAN
        return sign | HALF_INF
    if ex == 0 or ey == 0:
        return sign
    p = (mx | 1024) * (my | 1024)
    if p >= 1 << 21:
        return _round_pack(sign, p, 11, ex + ey - 14)
    return _round_pack(sign, p, 10, ex + ey - 15)


@numba.njit(cache=True)
def _div_scalar(x, y):
    x = np.int64(x)
    y = np.int64(y)
    sign = (x ^ y) & _SIGN
    ex = (x >> 10) & 31
    ey = (y >> 10) & 31
    mx = x & 1023
    my = y & 1023
    if (ex == 31 and mx != 0) or (ey == 31 and my != 0):
        return HALF_NAN
    if ex == 31:
        if ey == 31:
            return HALF_NAN
        return sign | HALF_INF
    if ey == 31:
        return sign
    if ey == 0:
        if ex == 0:
            return HALF_NAN
        return sign | HALF_INF
    if ex == 0:
        return sign
    num = (mx | 1024) << 13
    den = my | 1024
    q = num // den
    sticky = 1 if num - q * den != 0 else 0
    sig = (q << 1) | sticky
    if sig >= 1 << 14:
        return _round_pack(sign, sig, 4, ex - ey + 15)
    return _round_pack(sign, sig, 3, ex - ey + 14)


@numba.njit(cache=True)
def _add_scalar(x, y):
    x = np.int64(x)
    y = np.int64(y)
    ex = (x >> 10) & 31
    ey = (y >> 10) & 31
    mx = x & 1023
    my = y & 1023
    sx = x & _SIGN
    sy = y & _SIGN
    if (ex == 31 and mx != 0) or (ey == 31 and my != 0):
        return HALF_NAN
    if ex == 31:
        if ey == 31 and sx != sy:
            return HALF_NAN
        return sx | HALF_INF
    if ey == 31:
        return sy | HALF_INF
    if ex == 0 and ey == 0:
        return sx & sy
    if ex == 0:
        return y
    if ey == 0:
        return x
    em = min(ex, ey)
    a = (mx | 1024) << (ex - em)
    b = (my | 1024) << (ey - em)
    if sx:
        a = -a
    if sy:
        b = -b
    s = a + b
    if s == 0:
        return 0
    sign = 0
    if s < 0:
        sign = _SIGN
        s = -s
    n = 0
    t = s
    while t > 0:
        t >>= 1
        n += 1
    e = em + n - 11
    if n <= 11:
        # exact result, no rounding needed
        if e <= 0:
            return sign
        return sign | (e << 10) | ((s << (11 - n)) - 1024)
    return _round_pack(sign, s, n - 11, e)


@numba.njit(cache=True)
def _from_float_scalar(v):
    if math.isnan(v):
        return HALF_NAN
    sign = _SIGN if (v < 0 or (v == 0 and math.copysign(1.0, v) < 0)) else 0
    a = abs(v)
    if math.isinf(a):
        return sign | HALF_INF
    if a == 0.0:
        return sign
    m, e = math.frexp(a)
    sig = np.int64(math.ldexp(m, 53))
    if e + 14 >= 32:
        return sign | HALF_INF
    return _round_pack(sign, sig, 42, e + 14)


@numba.njit(cache=True)
def _to_float_scalar(h):
    h = np.int64(h)
    e = (h >> 10) & 31
    m = h & 1023
    s = -1.0 if (h & _SIGN) else 1.0
    if e == 0:
        return s * 0.0
    if e == 31:
        if m != 0:
            return np.nan
        return s * np.inf
    return s * math.ldexp(float(m | 1024), int(e) - 25)


# ------------------------------------------------------------------ ufuncs

@numba.vectorize(["uint16(uint16, uint16)"], cache=True)
def _hf_add(x, y):
    return _add_scalar(x, y)


@numba.vectorize(["uint16(uint16, uint16)"], cache=True)
def _hf_mul(x, y):
    return _mul_scalar(x, y)


@numba.vectorize(["uint16(uint16, uint16)"], cache=True)
def _hf_div(x, y):
    return _div_scalar(x, y)


@numba.vectorize(["uint16(float64)"], cache=True)
def _hf_from_float(v):
    return _from_float_scalar(v)


@numba.vectorize(["float64(uint16)"], cache=True)
def _hf_to_float(h):
    return _to_float_scalar(h)


def _bits(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint16)


def hf_add(x, y) -> np.ndarray:
    """binary16 sum of two bit patterns (arrays broadcast)."""
    return _hf_add(_bits(x), _bits(y))


def hf_sub(x, y) -> np.ndarray:
    return _hf_add(_bits(x), hf_neg(y))


def hf_mul(x, y) -> np.ndarray:
    return _hf_mul(_bits(x), _bits(y))


def hf_div(x, y) -> np.ndarray:
    return _hf_div(_bits(x), _bits(y))


def hf_neg(x) -> np.ndarray:
    return _bits(x) ^ np.uint16(_SIGN)


def hf_from_real(v) -> np.ndarray:
    """Round reals to binary16 bit patterns (RNE, flush to zero)."""
    return _hf_from_float(np.asarray(v, dtype=np.float64))


def hf_to_real(h) -> np.ndarray:
    """Decode binary16 bit patterns to float64; subnormal patterns read as zero."""
    return _hf_to_float(_bits(h))


def hf_is_finite(h) -> np.ndarray:
    return (_bits(h) & HALF_INF) != HALF_INF


# ------------------------------------------------------------- wide oracle

def _daz_float64(h: np.ndarray) -> np.ndarray:
    h = _bits(h)
    sub = (h & HALF_INF) == 0
    h = np.where(sub, h & _SIGN, h).astype(np.uint16)
    return h.view(np.float16).astype(np.float64)


def _round_flush(v: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        h = np.asarray(v, dtype=np.float64).astype(np.float16).view(np.uint16)
    h = np.where((h & HALF_INF) == 0, h & _SIGN, h)
    nan = ((h & HALF_INF) == HALF_INF) & ((h & 1023) != 0)
    return np.where(nan, HALF_NAN, h).astype(np.uint16)


def wide_oracle(op: str, x, y=None) -> np.ndarray:
    """Reference result: float64 compute, round to binary16, flush subnormals.

    ``op`` is one of ``add``, ``mul``, ``div`` (bit-pattern operands) or
    ``from_real`` (float operand).  Double rounding through float64 is
    harmless here because 53 >= 2*11 + 2.
    """
    if op == "from_real":
        return _round_flush(np.asarray(x, dtype=np.float64))
    a = _daz_float64(x)
    b = _daz_float64(y)
    with np.errstate(all="ignore"):
        if op == "add":
            r = a + b
        elif op == "mul":
            r = a * b
        elif op == "div":
            r = a / b
        else:
            raise ValueError(f"unknown op {op!r}")
    return _round_flush(r)


def selftest(n: int = 1_000_000, seed: int = 0) -> dict[str, int]:
    """Compare each binary16 op with the wide oracle on ``n`` random pairs.

    Returns a mismatch count per op.
    """
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 1 << 16, size=n, dtype=np.uint16)
    y = rng.integers(0, 1 << 16, size=n, dtype=np.uint16)
    ops = {"add": hf_add, "mul": hf_mul, "div": hf_div}
    out = {name: int(np.count_nonzero(fn(x, y) != wide_oracle(name, x, y)))
           for name, fn in ops.items()}
    v = rng.standard_normal(n) * np.exp2(rng.uniform(-30, 20, n))
    out["from_real"] = int(np.count_nonzero(hf_from_real(v) != wide_oracle("from_real", v)))
    return out


# -------------------------------------------------------------- fixed point

@dataclass(frozen=True)
class FixedArray:
    """Exact fixed-point array: ``values * 2**-frac_bits``.

    Sums align fractional bits by left shifts, so no bit is ever dropped.
    ``word_bits`` is the declared two's-complement width; results wrap to it.
    """

    values: np.ndarray
    frac_bits: int = 0
    word_bits: int = 48

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.int64))

    @classmethod
    def from_int(cls, a, frac_bits: int = 0, word_bits: int = 48) -> "FixedArray":
        return cls(np.asarray(a, dtype=np.int64) << frac_bits, frac_bits, word_bits)

    def _wrap(self, v: np.ndarray) -> np.ndarray:
        half = np.int64(1) << (self.word_bits - 1)
        return ((v + half) & ((half << 1) - 1)) - half

    def aligned(self, frac_bits: int) -> np.ndarray:
        if frac_bits < self.frac_bits:
            raise ValueError("alignment would drop fractional bits")
        return self.values << (frac_bits - self.frac_bits)

    def __add__(self, other: "FixedArray") -> "FixedArray":
        f = max(self.frac_bits, other.frac_bits)
        return FixedArray(self._wrap(self.aligned(f) + other.aligned(f)), f, self.word_bits)

    def __sub__(self, other: "FixedArray") -> "FixedArray":
        f = max(self.frac_bits, other.frac_bits)
        return FixedArray(self._wrap(self.aligned(f) - other.aligned(f)), f, self.word_bits)

    def __neg__(self) -> "FixedArray":
        return FixedArray(self._wrap(-self.values), self.frac_bits, self.word_bits)

    def scale(self, numerator: int, shift: int) -> "FixedArray":
        """Multiply by ``numerator / 2**shift`` exactly."""
        return FixedArray(self._wrap(self.values * numerator), self.frac_bits + shift, self.word_bits)

    def with_values(self, values: np.ndarray) -> "FixedArray":
        return FixedArray(values, self.frac_bits, self.word_bits)

    @property
    def shape(self):
        return self.values.shape

    def to_real(self) -> np.ndarray:
        return np.ldexp(self.values.astype(np.float64), -self.frac_bits)

    def to_half(self) -> np.ndarray:
        return hf_from_real(self.to_real())
