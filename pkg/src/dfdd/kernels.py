"""Convolution kernels and their dense (whole-frame) application.

Kernels hold exact rational taps.  Application is correlation: output pixel
``p`` sums ``taps[i] * x[p + i - anchor]``.  Odd kernels are centred; even
kernels are cropped to the bottom-right (``br``, anchor ``K/2``) or top-left
(``tl``, anchor ``K/2 - 1``).

Borders replicate the nearest in-range sample *of the same lattice phase*.
With ``period == 1`` this is plain edge replication.  Scale-N kernels work on
a lattice of stride ``2**N`` embedded in the full-resolution frame, so their
border reads stay on that lattice.  This keeps the interleaved kernels
equivalent to ordinary kernels applied to the decimated frame, borders
included.

Zero taps are skipped and every other tap costs one multiply.  A kernel is
applied as a row pass followed by a column pass when both 1-D factors have
at least two nonzero taps.  Otherwise it is applied tap by tap in row-major
order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .arith import Arith, ExactArith, WideArith

F = Fraction


@dataclass(frozen=True)
class Kernel:
    taps: tuple[tuple[Fraction, ...], ...]
    anchor: tuple[int, int]
    crop_side: str = "centered"
    factors: tuple[tuple[Fraction, ...], tuple[Fraction, ...]] | None = None
    stride: int = 1
    name: str = ""

    def __post_init__(self):
        if self.factors is not None:
            col, row = self.factors
            outer = tuple(tuple(a * b for b in row) for a in col)
            if outer != self.taps:
                raise ValueError(f"{self.name}: factors do not reproduce taps")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.taps), len(self.taps[0])

    def array(self) -> np.ndarray:
        return np.array(self.taps, dtype=object)

    def nonzero(self) -> list[tuple[int, int, Fraction]]:
        """(row offset, col offset, tap) for nonzero taps in row-major order."""
        ar, ac = self.anchor
        return [(i - ar, j - ac, t)
                for i, row in enumerate(self.taps)
                for j, t in enumerate(row) if t != 0]

    def factor_taps(self, axis: int) -> list[tuple[int, Fraction]]:
        """(offset, tap) for the nonzero taps of the column (0) or row (1) factor."""
        vec = self.factors[axis]
        a = self.anchor[axis]
        return [(i - a, t) for i, t in enumerate(vec) if t != 0]

    @property
    def separable(self) -> bool:
        if self.factors is None:
            return False
        return all(sum(1 for t in f if t != 0) >= 2 for f in self.factors)

    @property
    def reach(self) -> tuple[int, int]:
        """(rows above, rows below) the anchor that the kernel reads."""
        rows = [i for i, row in enumerate(self.taps) if any(t != 0 for t in row)]
        a = self.anchor[0]
        return a - rows[0], rows[-1] - a

    @property
    def buffered_lines(self) -> int:
        return len(self.taps) - 1


def _outer(col, row, **kw) -> Kernel:
    col = tuple(F(c) for c in col)
    row = tuple(F(r) for r in row)
    taps = tuple(tuple(a * b for b in row) for a in col)
    return Kernel(taps=taps, factors=(col, row), **kw)


def _even_anchor(k: int, crop_side: str) -> int:
    if crop_side == "br":
        return k // 2
    if crop_side == "tl":
        return k // 2 - 1
    raise ValueError(f"even kernels need crop_side 'tl' or 'br', got {crop_side!r}")


def gaussian5() -> Kernel:
    f = [F(c, 16) for c in (1, 4, 6, 4, 1)]
    return _outer(f, f, anchor=(2, 2), name="gaussian5")


def box2(crop_side: str = "tl") -> Kernel:
    a = _even_anchor(2, crop_side)
    f = [F(1, 2), F(1, 2)]
    return _outer(f, f, anchor=(a, a), crop_side=crop_side, name=f"box2_{crop_side}")


def upsampler_bilinear3() -> Kernel:
    f = [F(1, 2), F(1), F(1, 2)]
    return _outer(f, f, anchor=(1, 1), name="bilinear3")


def upsampler_shifted4(crop_side: str = "br") -> Kernel:
    a = _even_anchor(4, crop_side)
    f = [F(c, 4) for c in (1, 3, 3, 1)]
    return _outer(f, f, anchor=(a, a), crop_side=crop_side, name=f"upsampler4_{crop_side}")


def deriv_kernels(smoothed: bool = False) -> tuple[Kernel, Kernel, Kernel]:
    """3x3 pass, d/dx and d/dy kernels.

    The default derivatives are plain central differences ``(-1/2, 0, 1/2)``.
    ``smoothed=True`` gives the Sobel form ``(1 2 1)/4 x (-1 0 1)/2``.
    """
    unit = [F(0), F(1), F(0)]
    diff = [F(-1, 2), F(0), F(1, 2)]
    side = [F(1, 4), F(1, 2), F(1, 4)] if smoothed else unit
    pas = _outer(unit, unit, anchor=(1, 1), name="pass")
    dx = _outer(side, diff, anchor=(1, 1), name="dx")
    dy = _outer(diff, side, anchor=(1, 1), name="dy")
    return pas, dx, dy


def _spread(vec, step: int) -> tuple[Fraction, ...]:
    out = [F(0)] * ((len(vec) - 1) * step + 1)
    for i, t in enumerate(vec):
        out[i * step] = t
    return tuple(out)


def interleave(base: Kernel, scale: int) -> Kernel:
    """Spread the taps of ``base`` by ``2**scale`` with zeros between them."""
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if scale == 0:
        return base
    s = 1 << scale
    taps = tuple(_spread(row, s) for row in base.taps)
    rows = [[F(0)] * len(taps[0]) for _ in range((len(taps) - 1) * s + 1)]
    for i, row in enumerate(taps):
        rows[i * s] = list(row)
    factors = None
    if base.factors is not None:
        factors = (_spread(base.factors[0], s), _spread(base.factors[1], s))
    return replace(base,
                   taps=tuple(tuple(r) for r in rows),
                   anchor=(base.anchor[0] * s, base.anchor[1] * s),
                   factors=factors,
                   stride=base.stride * s,
                   name=f"{base.name}@{scale}" if "@" not in base.name else base.name)


def _conv1d(a, b):
    out = [F(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return tuple(out)


def compose(first: Kernel, second: Kernel) -> Kernel:
    """Kernel equal to applying ``first`` and then ``second``."""
    a, b = first.array(), second.array()
    h = a.shape[0] + b.shape[0] - 1
    w = a.shape[1] + b.shape[1] - 1
    out = np.full((h, w), F(0), dtype=object)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[i:i + b.shape[0], j:j + b.shape[1]] += a[i, j] * b
    factors = None
    if first.factors is not None and second.factors is not None:
        factors = (_conv1d(first.factors[0], second.factors[0]),
                   _conv1d(first.factors[1], second.factors[1]))
    return Kernel(taps=tuple(tuple(r) for r in out),
                  anchor=(first.anchor[0] + second.anchor[0], first.anchor[1] + second.anchor[1]),
                  crop_side=second.crop_side,
                  factors=factors,
                  name=f"{first.name}*{second.name}")


# ------------------------------------------------------------------ borders

def edge_index(i: int | np.ndarray, n: int, period: int = 1):
    """Map (possibly out-of-range) indices to in-range ones of the same phase."""
    i = np.asarray(i)
    low = np.mod(i, period)
    over = i - (n - 1)
    high = i - period * ((over + period - 1) // period)
    out = np.where(i < 0, low, np.where(i > n - 1, high, i))
    if np.any(out < 0) or np.any(out > n - 1):
        raise ValueError("image too small")
    return out


@lru_cache(maxsize=512)
def tap_index(n: int, offset: int, period: int) -> np.ndarray:
    """Source index for every output position along an axis of length n."""
    idx = edge_index(np.arange(n) + offset, n, period)
    idx.setflags(write=False)
    return idx


# -------------------------------------------------------------- application

def default_arith(img) -> Arith:
    a = np.asarray(img)
    if a.dtype == object or np.issubdtype(a.dtype, np.integer):
        return ExactArith()
    return WideArith()


def pass_1d(x, taps, axis: int, period: int, ar: Arith):
    """Accumulate ``taps`` along ``axis`` left to right."""
    n = x.shape[axis]
    acc = None
    for off, t in taps:
        term = ar.scale(ar.take(x, tap_index(n, off, period), axis), t)
        acc = term if acc is None else ar.add(acc, term)
    return acc


def apply_direct(x, k: Kernel, period: int, ar: Arith):
    h, w = x.shape[-2], x.shape[-1]
    acc = None
    for dr, dc, t in k.nonzero():
        src = ar.take(ar.take(x, tap_index(h, dr, period), -2), tap_index(w, dc, period), -1)
        term = ar.scale(src, t)
        acc = term if acc is None else ar.add(acc, term)
    return acc


def conv2_dense(img, k: Kernel, arith: Arith | None = None, period: int | None = None,
                method: str = "auto"):
    """Same-size correlation of the last two axes of ``img`` with ``k``.

    ``period`` is the lattice period used at borders; it defaults to the
    kernel's tap stride.  ``method`` is ``auto``, ``separable`` or ``direct``.
    """
    ar = arith or default_arith(img)
    x = img if arith is not None else ar.encode(img)
    kh, kw = k.shape
    if x.shape[-2] < kh or x.shape[-1] < kw:
        raise ValueError("image too small")
    period = k.stride if period is None else period
    use_sep = k.separable if method == "auto" else method == "separable"
    if use_sep:
        if k.factors is None:
            raise ValueError(f"{k.name} has no separable factors")
        t = pass_1d(x, k.factor_taps(1), -1, period, ar)
        return pass_1d(t, k.factor_taps(0), -2, period, ar)
    return apply_direct(x, k, period, ar)


def brute_conv(img, k: Kernel, period: int | None = None) -> np.ndarray:
    """Quadruple-loop exact oracle for :func:`conv2_dense`."""
    img = np.asarray(img, dtype=object)
    period = k.stride if period is None else period
    h, w = img.shape
    ar, ac = k.anchor
    out = np.empty((h, w), dtype=object)
    for y in range(h):
        for x in range(w):
            s = F(0)
            for i, row in enumerate(k.taps):
                for j, t in enumerate(row):
                    if t:
                        yy = int(edge_index(y + i - ar, h, period))
                        xx = int(edge_index(x + j - ac, w, period))
                        s += t * F(img[yy, xx])
            out[y, x] = s
    return out


def lattice_mask(shape: tuple[int, int], period: int) -> np.ndarray:
    """True where both coordinates are multiples of ``period``."""
    h, w = shape
    return ((np.arange(h) % period == 0)[:, None]) & ((np.arange(w) % period == 0)[None, :])


def zero_insert_dense(x, scale: int, ar: Arith):
    """Keep samples on the stride-2**(scale+1) lattice, zero elsewhere."""
    return ar.keep(x, lattice_mask(x.shape[-2:], 2 << scale))
