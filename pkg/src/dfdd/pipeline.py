"""The streaming depth pipeline.

Per scale ``n`` (lattice stride ``s = 2**n``) the graph computes::

    L   = Up_n(ZeroInsert_n(Box_n(A))) - A        band-pass of the average image
    V   = a_n * G_n(L)
    W   = b_n * V - G_n(D)
    VW+ = sum_d w_{3n+d} * V_d * W_d              d over pass/dx/dy (or pass only)
    WW+ = sum_d w_{3n+d} * W_d * W_d

``A`` and ``D`` are the half-sum and half-difference images.  ``Box_n(A)``
and ``Box_n(D)`` feed scale ``n + 1``.  ``VW+`` and ``WW+`` are brought back
to full resolution by ``n`` zero-insert/upsample steps, summed across scales
and divided once: ``Z = sum VW+ / sum WW+`` and ``C = sum VW+``.

Per-pixel parameters come from 16 radial zones selected by squared distance
to the optical centre.  A pixel is valid when ``C >= C_thresh`` and
``Z_min < Z < Z_max`` for its zone.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import jsonschema
import numpy as np

from . import kernels as K
from .arith import Arith, FixedArith, make_arith
from .numerics import FixedArray
from .streaming import Graph, Node, Port

N_ZONES = 16
HOMOGRAPHY_FRAC = 8
INTENSITY_SHIFT = 8          # 8-bit samples are read as value / 256
DEFAULT_LINE_BUDGET = 8


class ParamsError(ValueError):
    """Parameter file failed validation; ``errors`` lists each problem."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


# ------------------------------------------------------------- parameters

@dataclass(frozen=True)
class Zone:
    r2_max: float
    a: tuple[float, ...]
    b: tuple[float, ...]
    c_thresh: float = 0.0
    z_min: float = 0.0
    z_max: float = math.inf


@dataclass(frozen=True)
class CalibrationParams:
    n_scales: int
    derivatives_enabled: bool
    zones: tuple[Zone, ...]
    omega: tuple[float, ...] = (1 / 6,) * 6
    optical_center: tuple[float, float] | None = None
    homography: tuple[float, ...] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    denoise: bool = False

    def __post_init__(self):
        errors = []
        if self.n_scales < 1:
            errors.append("n_scales must be >= 1")
        if len(self.zones) != N_ZONES:
            errors.append(f"zones must have {N_ZONES} entries")
        r2 = [z.r2_max for z in self.zones]
        if any(b <= a for a, b in zip(r2, r2[1:])):
            errors.append("zone radii must be strictly increasing")
        for i, z in enumerate(self.zones):
            if len(z.a) < self.n_scales or len(z.b) < self.n_scales:
                errors.append(f"zones[{i}]: a and b need one entry per scale")
        if len(self.omega) != 6:
            errors.append("omega must have 6 entries")
        if len(self.homography) != 6:
            errors.append("homography must have 6 entries")
        if errors:
            raise ParamsError(errors)

    @property
    def estimates(self) -> int:
        return self.n_scales * (3 if self.derivatives_enabled else 1)

    def table(self, key: str, scale: int | None = None) -> np.ndarray:
        if scale is None:
            return np.array([getattr(z, key) for z in self.zones], dtype=np.float64)
        return np.array([getattr(z, key)[scale] for z in self.zones], dtype=np.float64)

    def with_tables(self, **tables) -> "CalibrationParams":
        """Replace per-zone fields: ``a=[[...per zone] per scale]``, ``c_thresh=[...]``."""
        zones = []
        for i, z in enumerate(self.zones):
            kw = {}
            for key, val in tables.items():
                if key in ("a", "b"):
                    kw[key] = tuple(float(v[i]) for v in val)
                else:
                    kw[key] = float(val[i])
            zones.append(replace(z, **kw))
        return replace(self, zones=tuple(zones))

    # --------------------------------------------------------- file format

    def to_dict(self) -> dict:
        def num(v):
            return "inf" if v == math.inf else v
        return {
            "n_scales": self.n_scales,
            "derivatives_enabled": self.derivatives_enabled,
            "optical_center": list(self.optical_center) if self.optical_center else None,
            "zones": [{"r2_max": num(z.r2_max), "a": list(z.a), "b": list(z.b),
                       "c_thresh": z.c_thresh, "z_min": z.z_min, "z_max": num(z.z_max)}
                      for z in self.zones],
            "omega": list(self.omega),
            "homography": list(self.homography),
            "denoise": self.denoise,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationParams":
        errors = sorted(f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
                        for e in _VALIDATOR.iter_errors(d))
        if errors:
            raise ParamsError(errors)

        def num(v):
            return math.inf if v == "inf" else float(v)
        zones = tuple(Zone(num(z["r2_max"]), tuple(map(float, z["a"])), tuple(map(float, z["b"])),
                           float(z["c_thresh"]), float(z["z_min"]), num(z["z_max"]))
                      for z in d["zones"])
        oc = d.get("optical_center")
        return cls(n_scales=d["n_scales"], derivatives_enabled=d["derivatives_enabled"],
                   zones=zones, omega=tuple(map(float, d["omega"])),
                   optical_center=tuple(map(float, oc)) if oc else None,
                   homography=tuple(map(float, d["homography"])), denoise=d["denoise"])

    @classmethod
    def from_json(cls, text: str) -> "CalibrationParams":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParamsError([f"<root>: not valid JSON ({e.msg} at line {e.lineno})"]) from None
        return cls.from_dict(d)


_NUM = {"anyOf": [{"type": "number"}, {"const": "inf"}]}
PARAMS_SCHEMA = {
    "type": "object",
    "required": ["n_scales", "derivatives_enabled", "zones", "omega", "homography", "denoise"],
    "additionalProperties": False,
    "properties": {
        "n_scales": {"type": "integer", "minimum": 1, "maximum": 4},
        "derivatives_enabled": {"type": "boolean"},
        "optical_center": {"anyOf": [{"type": "null"},
                                     {"type": "array", "items": {"type": "number"},
                                      "minItems": 2, "maxItems": 2}]},
        "zones": {"type": "array", "minItems": N_ZONES, "maxItems": N_ZONES, "items": {
            "type": "object",
            "required": ["r2_max", "a", "b", "c_thresh", "z_min", "z_max"],
            "additionalProperties": False,
            "properties": {
                "r2_max": _NUM,
                "a": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "b": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "c_thresh": {"type": "number"},
                "z_min": {"type": "number"},
                "z_max": _NUM,
            }}},
        "omega": {"type": "array", "items": {"type": "number"}, "minItems": 6, "maxItems": 6},
        "homography": {"type": "array", "items": {"type": "number"}, "minItems": 6, "maxItems": 6},
        "denoise": {"type": "boolean"},
    },
}
_VALIDATOR = jsonschema.Draft202012Validator(PARAMS_SCHEMA)


def corner_radius2(width: int, height: int, center=None) -> float:
    cx, cy = center if center is not None else ((width - 1) / 2, (height - 1) / 2)
    return max((x - cx) ** 2 + (y - cy) ** 2 for x in (0, width - 1) for y in (0, height - 1))


def equal_width_radii2(width: int, height: int, center=None) -> list[float]:
    """Squared outer radii of 16 equal-width annuli reaching the far corner."""
    r2 = corner_radius2(width, height, center)
    return [r2 * (z + 1) ** 2 / N_ZONES ** 2 for z in range(N_ZONES)]


def default_params(width: int, height: int, a, b, n_scales: int = 2,
                   derivatives_enabled: bool = True, **kw) -> CalibrationParams:
    """Uniform parameters over equal-width zones; ``a``/``b`` give one value per scale."""
    a = tuple(float(v) for v in np.broadcast_to(np.atleast_1d(a)[:n_scales], (n_scales,)))
    b = tuple(float(v) for v in np.broadcast_to(np.atleast_1d(b)[:n_scales], (n_scales,)))
    zkw = {k: kw.pop(k) for k in ("c_thresh", "z_min", "z_max") if k in kw}
    zones = tuple(Zone(r2, a, b, **zkw) for r2 in equal_width_radii2(width, height, kw.get("optical_center")))
    return CalibrationParams(n_scales=n_scales, derivatives_enabled=derivatives_enabled,
                             zones=zones, **kw)


# ----------------------------------------------------------- radial zones

class RadialZones:
    """Zone selection from squared distance, without square roots.

    Coordinates are doubled so a half-pixel optical centre stays integral:
    ``D2 = (2x - 2cx)^2 + (2y - 2cy)^2`` and zone ``z`` holds ``D2 < 4 r2_max[z]``.
    Pixels beyond the last radius fall in the outermost zone.
    """

    def __init__(self, params: CalibrationParams, width: int, height: int):
        cx, cy = params.optical_center or ((width - 1) / 2, (height - 1) / 2)
        self.c2x = int(round(2 * cx))
        self.c2y = int(round(2 * cy))
        self.width, self.height = width, height
        self.limits = [math.ceil(4 * Fraction(z.r2_max)) if z.r2_max != math.inf else None
                       for z in params.zones]
        finite = [t for t in self.limits if t is not None]
        self._sorted = np.array(finite, dtype=np.int64)
        ux = 2 * np.arange(width, dtype=np.int64) - self.c2x
        self._ux2 = ux * ux
        self._row = -1
        self._v = 0

    def zone_of_d2(self, d2: int) -> int:
        for z, t in enumerate(self.limits):
            if t is None or d2 < t:
                return z
        return N_ZONES - 1

    def pixel_zones(self):
        """Per-pixel zones in raster order with incremental distance updates."""
        v = -self.c2y
        v2 = v * v
        for _ in range(self.height):
            u = -self.c2x
            d2 = u * u + v2
            for _ in range(self.width):
                yield self.zone_of_d2(d2)
                d2 += 4 * u + 4
                u += 2
            v2 += 4 * v + 4
            v += 2

    def row(self, y: int) -> np.ndarray:
        """Zones of one row; consecutive rows update ``v^2`` incrementally."""
        if y == self._row + 1 and self._row >= 0:
            self._v2 += 4 * self._v + 4
            self._v += 2
        else:
            self._v = 2 * y - self.c2y
            self._v2 = self._v * self._v
        self._row = y
        d2 = self._ux2 + self._v2
        return np.minimum(np.searchsorted(self._sorted, d2, side="right"), N_ZONES - 1)

    def frame(self) -> np.ndarray:
        return np.stack([self.row(y) for y in range(self.height)])


def sqrt_zones(width: int, height: int, center=None) -> np.ndarray:
    """Naive zone map: floor(distance / annulus width), clamped."""
    cx, cy = center if center is not None else ((width - 1) / 2, (height - 1) / 2)
    rad = math.sqrt(corner_radius2(width, height, center))
    y, x = np.mgrid[0:height, 0:width]
    d = np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
    return np.minimum(np.floor(d / (rad / N_ZONES)).astype(np.int64), N_ZONES - 1)


def radial_params(index: int, params: CalibrationParams, width: int, height: int) -> dict:
    """Zone parameters of the pixel at raster position ``index``."""
    zones = RadialZones(params, width, height)
    z = zones.row(index // width)[index % width]
    zone = params.zones[int(z)]
    return {"zone": int(z), "a": zone.a, "b": zone.b, "c_thresh": zone.c_thresh,
            "z_min": zone.z_min, "z_max": zone.z_max}


@dataclass
class ZoneTables:
    """Zone parameters encoded in one back end, indexed by zone number."""

    a: list
    b: list
    c_thresh: np.ndarray
    z_min: np.ndarray
    z_max: np.ndarray
    omega: list

    @classmethod
    def build(cls, params: CalibrationParams, ar: Arith) -> "ZoneTables":
        a = [ar.encode(params.table("a", n)) for n in range(params.n_scales)]
        b = [ar.encode(params.table("b", n)) for n in range(params.n_scales)]
        # thresholds are compared in the working format
        def fmt(v):
            return ar.decode(ar.encode(v))
        omega = [ar.encode(np.float64(w)) for w in params.omega]
        return cls(a, b, fmt(params.table("c_thresh")), fmt(params.table("z_min")),
                   fmt(params.table("z_max")), omega)


# ---------------------------------------------------------- pointwise math

def v_w(ar: Arith, g_lap, g_delta, a, b):
    v = ar.mul(a, g_lap)
    w = ar.sub(ar.mul(b, v), g_delta)
    return v, w


def cross_terms(ar: Arith, vs: Sequence, ws: Sequence, omegas: Sequence):
    vw = ww = None
    for v, w, om in zip(vs, ws, omegas):
        t_vw = ar.mul(om, ar.mul(v, w))
        t_ww = ar.mul(om, ar.mul(w, w))
        vw = t_vw if vw is None else ar.add(vw, t_vw)
        ww = t_ww if ww is None else ar.add(ww, t_ww)
    return vw, ww


def mask_values(ar: Arith, z_raw, conf, zone, tables: ZoneTables):
    """Decode and threshold: returns (depth with NaN for null, confidence, valid)."""
    z = ar.decode(z_raw)
    c = ar.decode(conf)
    with np.errstate(invalid="ignore"):
        valid = (np.isfinite(z) & np.isfinite(c)
                 & (c >= tables.c_thresh[zone])
                 & (z > tables.z_min[zone]) & (z < tables.z_max[zone]))
    return np.where(valid, z, np.nan), c, valid


@dataclass
class DepthMap:
    depth: np.ndarray
    confidence: np.ndarray
    valid: np.ndarray
    z_raw: np.ndarray = field(repr=False, default=None)

    @property
    def density(self) -> float:
        return float(self.valid.mean())


# ---------------------------------------------------------------- homography

@dataclass(frozen=True)
class Homography:
    """Affine map from output to source pixel coordinates, Q.8 coefficients."""

    q: tuple[int, ...]

    @classmethod
    def from_real(cls, m: Sequence[float]) -> "Homography":
        return cls(tuple(int(round(v * (1 << HOMOGRAPHY_FRAC))) for v in m))

    @classmethod
    def identity(cls) -> "Homography":
        return cls.from_real((1, 0, 0, 0, 1, 0))

    def source(self, x: np.ndarray, y: np.ndarray):
        m = self.q
        return m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]

    def line_reach(self, width: int, height: int) -> tuple[int, int]:
        """(lines above, lines below) of source rows needed for any output row."""
        y, x = np.mgrid[0:height, 0:width]
        _, ys = self.source(x, y)
        y0 = np.clip(ys >> HOMOGRAPHY_FRAC, 0, height - 1)
        y1 = np.clip((ys >> HOMOGRAPHY_FRAC) + 1, 0, height - 1)
        above = int(max(0, (y - y0).max()))
        below = int(max(0, (y1 - y).max()))
        return above, below


def resample(hom: Homography, src_rows, y: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resample of output rows ``y`` (Q.16 integers).

    ``src_rows(idx)`` returns the integer source samples at row indices
    ``idx`` (same shape as the requested grid) for each column index grid.
    """
    x = np.arange(width, dtype=np.int64)[None, :]
    y = np.asarray(y, dtype=np.int64)[:, None]
    xs, ys = hom.source(x, y)
    one = 1 << HOMOGRAPHY_FRAC
    fx, fy = xs & (one - 1), ys & (one - 1)
    x0 = np.clip(xs >> HOMOGRAPHY_FRAC, 0, width - 1)
    x1 = np.clip((xs >> HOMOGRAPHY_FRAC) + 1, 0, width - 1)
    y0 = np.clip(ys >> HOMOGRAPHY_FRAC, 0, height - 1)
    y1 = np.clip((ys >> HOMOGRAPHY_FRAC) + 1, 0, height - 1)
    p00, p01 = src_rows(y0, x0), src_rows(y0, x1)
    p10, p11 = src_rows(y1, x0), src_rows(y1, x1)
    return ((one - fx) * (one - fy) * p00 + fx * (one - fy) * p01
            + (one - fx) * fy * p10 + fx * fy * p11)


def check_line_budget(hom: Homography, width: int, height: int, budget: int) -> tuple[int, int]:
    above, below = hom.line_reach(width, height)
    if above + below > budget:
        raise ValueError("homography exceeds buffer")
    return above, below


def apply_homography(img: np.ndarray, hom: Homography, line_budget: int = DEFAULT_LINE_BUDGET) -> FixedArray:
    """Whole-frame bilinear resampling in fixed point (2 * 8 fractional bits)."""
    img = np.asarray(img, dtype=np.int64)
    h, w = img.shape
    check_line_budget(hom, w, h, line_budget)
    vals = resample(hom, lambda yy, xx: img[yy, xx], np.arange(h), w, h)
    return FixedArray(vals, 2 * HOMOGRAPHY_FRAC)


class HomographyNode(Node):
    """Streams the resampled second image using a line buffer of source rows."""

    role = "homography"

    def __init__(self, name, src: Port, hom: Homography, width: int, height: int, budget: int):
        super().__init__(name, [src])
        self.hom = hom
        self.above, below = check_line_budget(hom, width, height, budget)
        self.lookahead = below
        self.buffered_lines = self.above + below
        self.footprint = (self.buffered_lines + 1, 2)

    def reset(self, width, height):
        super().reset(width, height)
        self.buf = {}
        self.received = 0

    def step(self, t, rows):
        if rows[0] is not None:
            self.buf[self.received] = rows[0].values
            self.received += 1
        r = self.out_row(t)
        if r is None:
            return [None]

        def fetch(yy, xx):
            rows_needed = np.unique(yy)
            if rows_needed.max() >= self.received:
                raise RuntimeError(f"{self.name}: read ahead of input")
            table = np.stack([self.buf[int(j)] for j in rows_needed])
            return table[np.searchsorted(rows_needed, yy), xx]

        vals = resample(self.hom, fetch, np.array([r]), self.width, self.height)[0]
        for j in [j for j in self.buf if j < r + 1 - self.above]:
            del self.buf[j]
        return [FixedArray(vals, 2 * HOMOGRAPHY_FRAC)]


# ------------------------------------------------------------ graph build

def _to_working(ar: Arith):
    def convert(r, row):
        return ar.encode(row.to_real())
    return convert


def build_front_end(g: Graph, params: CalibrationParams, ar: Arith, width: int, height: int,
                    line_budget: int = DEFAULT_LINE_BUDGET) -> tuple[Port, Port]:
    """Alignment, sum/difference, optional denoise, halving and conversion."""
    fx = FixedArith()
    hom = Homography.from_real(params.homography)
    i1 = g.source("i1")
    i2 = g.source("i2")
    h2 = g.add(HomographyNode("homography", i2, hom, width, height, line_budget)).port()
    s, d = g.map("sum_diff", [i1, h2], lambda r, a, b: (fx.add(a, b), fx.sub(a, b)),
                 n_out=2, role="preprocess", delay_role="preprocess")
    if params.denoise:
        s = _denoise(g, "ave", s, fx)
        d = _denoise(g, "delta", d, fx)
    # halve and bring 8-bit samples to [0, 1): one exact shift
    conv = _to_working(ar)
    shift = INTENSITY_SHIFT + 1
    (ave,) = g.map("to_working(ave)", [s], lambda r, x: conv(r, x.scale(1, shift)), role="preprocess")
    (delta,) = g.map("to_working(delta)", [d], lambda r, x: conv(r, x.scale(1, shift)), role="preprocess")
    return ave, delta


def _denoise(g: Graph, tag: str, x: Port, fx: FixedArith) -> Port:
    (boxed,) = g.conv(f"denoise_box({tag})", x, [K.box2("tl")], fx, period=1, role="preprocess")
    (hp,) = g.map(f"denoise_sub({tag})", [x, boxed], lambda r, a, b: fx.sub(a, b), role="preprocess",
                  delay_role="preprocess")
    (out,) = g.conv(f"denoise_gauss({tag})", hp, [K.gaussian5()], fx, period=1, role="preprocess")
    return out


def build_scale(g: Graph, n: int, ave: Port, delta: Port, params: CalibrationParams,
                tables: ZoneTables, zones: RadialZones, ar: Arith):
    """One scale of the pyramid; returns (VW+, WW+, next ave, next delta)."""
    s = 1 << n
    gk = K.interleave(K.gaussian5(), n)
    box = K.interleave(K.box2("tl"), n)
    up = K.interleave(K.upsampler_shifted4("br"), n)

    (box_a,) = g.conv(f"down(ave)@{n}", ave, [box], ar, s, n, "downsampler")
    z = g.zero_insert(f"zero_insert(ave)@{n}", box_a, n, ar)
    (up_a,) = g.conv(f"up(ave)@{n}", z, [up], ar, 2 * s, n, "upsampler")
    (lap,) = g.map(f"laplacian@{n}", [up_a, ave], lambda r, u, x: ar.sub(u, x), scale=n)
    (g_lap,) = g.conv(f"gauss(lap)@{n}", lap, [gk], ar, s, n, "gaussian")
    (g_delta,) = g.conv(f"gauss(delta)@{n}", delta, [gk], ar, s, n, "gaussian")
    (box_d,) = g.conv(f"down(delta)@{n}", delta, [box], ar, s, n, "downsampler")

    a_tab, b_tab = tables.a[n], tables.b[n]

    def vw_fn(r, gl, gd):
        zr = zones.row(r)
        return v_w(ar, gl, gd, a_tab[zr], b_tab[zr])

    v, w = g.map(f"v_w@{n}", [g_lap, g_delta], vw_fn, n_out=2, scale=n, role="v_w")
    if params.derivatives_enabled:
        dk = [K.interleave(k, n) for k in K.deriv_kernels()]
        vs = g.conv(f"pdd(V)@{n}", v, dk, ar, s, n, "pass_dx_dy")
        ws = g.conv(f"pdd(W)@{n}", w, dk, ar, s, n, "pass_dx_dy")
        omegas = tables.omega[3 * n:3 * n + 3]
    else:
        vs, ws = [v], [w]
        omegas = tables.omega[3 * n:3 * n + 1]
    k = len(vs)
    vw, ww = g.map(f"cross@{n}", vs + ws,
                   lambda r, *x: cross_terms(ar, x[:k], x[k:], omegas),
                   n_out=2, scale=n, role="cross")
    for m in range(n - 1, -1, -1):
        upm = K.interleave(K.upsampler_shifted4("br"), m)
        zvw = g.zero_insert(f"zero_insert(VW)@{n}->{m}", vw, m, ar)
        zww = g.zero_insert(f"zero_insert(WW)@{n}->{m}", ww, m, ar)
        (vw,) = g.conv(f"up(VW)@{n}->{m}", zvw, [upm], ar, 2 << m, n, "upsampler")
        (ww,) = g.conv(f"up(WW)@{n}->{m}", zww, [upm], ar, 2 << m, n, "upsampler")
    return vw, ww, box_a, box_d


def build_graph(params: CalibrationParams, ar: Arith, width: int, height: int,
                line_budget: int = DEFAULT_LINE_BUDGET) -> Graph:
    check_dims(params, width, height)
    g = Graph()
    tables = ZoneTables.build(params, ar)
    ave, delta = build_front_end(g, params, ar, width, height, line_budget)
    acc_vw = acc_ww = None
    for n in range(params.n_scales):
        zones = RadialZones(params, width, height)
        vw, ww, ave, delta = build_scale(g, n, ave, delta, params, tables, zones, ar)
        if acc_vw is None:
            acc_vw, acc_ww = vw, ww
        else:
            acc_vw, acc_ww = g.map(f"scale_sum@{n}", [acc_vw, acc_ww, vw, ww],
                                   lambda r, a, b, c, d: (ar.add(a, c), ar.add(b, d)),
                                   n_out=2, role="scale_sum", delay_role="latency_buffer")
    zones = RadialZones(params, width, height)
    (z_raw,) = g.map("divide", [acc_vw, acc_ww], lambda r, c, d: ar.div(c, d), role="divide")

    def mask_fn(r, z, c):
        return mask_values(ar, z, c, zones.row(r), tables)
    # the confidence is the numerator accumulator itself
    depth, c_out, valid = g.map("mask", [z_raw, acc_vw], mask_fn, n_out=3, role="mask")
    g.output("z_raw", z_raw)
    g.output("depth", depth)
    g.output("confidence", c_out)
    g.output("valid", valid)
    return g


def check_dims(params: CalibrationParams, width: int, height: int) -> None:
    m = 1 << params.n_scales
    if width % m or height % m:
        raise ValueError(f"image dimensions must be divisible by {m}")
    if min(width, height) < 5 << (params.n_scales - 1):
        raise ValueError("image too small")


def as_fixed(img) -> FixedArray:
    return FixedArray(np.asarray(img, dtype=np.int64), 0)


def run_pipeline(i1, i2, params: CalibrationParams, numerics: str = "half",
                 counter: Counter | None = None, line_budget: int = DEFAULT_LINE_BUDGET,
                 graph_out: list | None = None) -> DepthMap:
    """Stream one image pair through the pipeline."""
    i1 = np.asarray(i1)
    i2 = np.asarray(i2)
    if i1.shape != i2.shape:
        raise ValueError("image pair dimensions differ")
    h, w = i1.shape
    ar = make_arith(numerics, counter)
    g = build_graph(params, ar, w, h, line_budget)
    if graph_out is not None:
        graph_out.append(g)
    rows = g.run({"i1": as_fixed(i1), "i2": as_fixed(i2)}, w, h)
    return DepthMap(depth=np.stack(rows["depth"]), confidence=np.stack(rows["confidence"]),
                    valid=np.stack(rows["valid"]), z_raw=ar.decode(np.stack(rows["z_raw"])))
