"""Scalar back ends shared by the dense and streaming engines.

A back end wraps one number format behind the handful of operations the
pipeline needs, and optionally tallies them per element in a ``Counter`` with
the keys ``adders``, ``true_mults``, ``easy_mults`` and ``dividers``.

Multiplication by a kernel tap goes through :meth:`Arith.scale`, which counts
an easy multiply when the tap is a signed power of two and a true multiply
otherwise.  Multiplication by a calibrated parameter always counts as true.
"""

from __future__ import annotations

from collections import Counter
from fractions import Fraction

import numpy as np

from . import numerics as nx


def is_power_of_two(c: Fraction) -> bool:
    c = abs(Fraction(c))
    if c == 0:
        return False
    n, d = c.numerator, c.denominator
    return (n & (n - 1)) == 0 and (d & (d - 1)) == 0


class Arith:
    name = "abstract"

    def __init__(self, counter: Counter | None = None):
        self.counter = counter

    def _tally(self, key: str, arr) -> None:
        if self.counter is not None:
            self.counter[key] += int(np.size(arr))

    # elementwise arithmetic, counted
    def add(self, a, b):
        r = self._add(a, b)
        self._tally("adders", r)
        return r

    def sub(self, a, b):
        r = self._sub(a, b)
        self._tally("adders", r)
        return r

    def mul(self, a, b):
        r = self._mul(a, b)
        self._tally("true_mults", r)
        return r

    def div(self, a, b):
        r = self._div(a, b)
        self._tally("dividers", r)
        return r

    def scale(self, a, c: Fraction):
        r = self._scale(a, Fraction(c))
        self._tally("easy_mults" if is_power_of_two(c) else "true_mults", r)
        return r

    # data movement, not counted
    def take(self, a, idx, axis):
        return np.take(a, idx, axis=axis)

    def keep(self, a, mask):
        """Zero every element where ``mask`` is false."""
        return np.where(mask, a, self.zeros_like(a))

    def zeros_like(self, a):
        return np.zeros_like(a)

    def const(self, value, shape=()):
        return np.full(shape, self.encode(value))

    def encode(self, v):
        raise NotImplementedError

    def decode(self, a) -> np.ndarray:
        raise NotImplementedError


class WideArith(Arith):
    """float64 arithmetic, the clean reference."""

    name = "wide"

    def encode(self, v):
        return np.asarray(v, dtype=np.float64)

    def decode(self, a):
        return np.asarray(a, dtype=np.float64)

    def _add(self, a, b):
        return a + b

    def _sub(self, a, b):
        return a - b

    def _mul(self, a, b):
        return a * b

    def _div(self, a, b):
        with np.errstate(divide="ignore", invalid="ignore"):
            return a / b

    def _scale(self, a, c):
        return a * float(c)


class HalfArith(Arith):
    """binary16 without subnormals, on uint16 bit patterns."""

    name = "half"

    def __init__(self, counter: Counter | None = None):
        super().__init__(counter)
        self._consts: dict[Fraction, np.uint16] = {}

    def encode(self, v):
        return nx.hf_from_real(v)

    def decode(self, a):
        return nx.hf_to_real(a)

    def _tap(self, c: Fraction) -> np.uint16:
        h = self._consts.get(c)
        if h is None:
            h = nx.hf_from_real(float(c))
            if Fraction(float(nx.hf_to_real(h))) != c:
                raise ValueError(f"tap {c} is not exact in binary16")
            self._consts[c] = h
        return h

    def _add(self, a, b):
        return nx.hf_add(a, b)

    def _sub(self, a, b):
        return nx.hf_sub(a, b)

    def _mul(self, a, b):
        return nx.hf_mul(a, b)

    def _div(self, a, b):
        return nx.hf_div(a, b)

    def _scale(self, a, c):
        return nx.hf_mul(a, self._tap(c))


class ExactArith(Arith):
    """Rational arithmetic on object arrays of Fractions, for oracles."""

    name = "exact"

    def encode(self, v):
        a = np.asarray(v, dtype=object)
        out = np.empty(a.shape, dtype=object)
        out.flat[:] = [Fraction(x) for x in a.flat]
        return out

    def decode(self, a):
        return np.asarray(a, dtype=np.float64)

    def zeros_like(self, a):
        out = np.empty(np.shape(a), dtype=object)
        out.fill(Fraction(0))
        return out

    def _add(self, a, b):
        return a + b

    def _sub(self, a, b):
        return a - b

    def _mul(self, a, b):
        return a * b

    def _div(self, a, b):
        return a / b

    def _scale(self, a, c):
        return a * c


class FixedArith(Arith):
    """Exact fixed point for the front end; taps must be dyadic."""

    name = "fixed"

    def encode(self, v):
        return nx.FixedArray.from_int(np.asarray(v, dtype=np.int64))

    def decode(self, a):
        return a.to_real()

    def _add(self, a, b):
        return a + b

    def _sub(self, a, b):
        return a - b

    def _mul(self, a, b):
        raise TypeError("fixed-point front end has no general multiplier")

    _div = _mul

    def _scale(self, a, c):
        d = c.denominator
        if d & (d - 1):
            raise ValueError("fixed-point taps need power-of-two denominators")
        return a.scale(c.numerator, d.bit_length() - 1)

    def take(self, a, idx, axis):
        return a.with_values(np.take(a.values, idx, axis=axis))

    def keep(self, a, mask):
        return a.with_values(np.where(mask, a.values, 0))

    def zeros_like(self, a):
        return a.with_values(np.zeros_like(a.values))


def make_arith(name: str, counter: Counter | None = None) -> Arith:
    table = {"wide": WideArith, "half": HalfArith, "exact": ExactArith, "fixed": FixedArith}
    try:
        return table[name](counter)
    except KeyError:
        raise ValueError(f"unknown numerics {name!r}") from None
