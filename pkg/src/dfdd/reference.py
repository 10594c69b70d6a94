"""Dense whole-frame evaluation of the depth pipeline.

The composition mirrors :mod:`dfdd.pipeline` operation for operation but
works on full frames with :func:`dfdd.kernels.conv2_dense`.  It runs in wide
(float64) numerics as the clean reference, or in the emulated binary16 format
for bit-exact comparison with the streaming engine.

The calibration loss also lives here.  The parameter-free part of the
computation (front end, band-pass and Gaussian outputs per scale) is cached
per image.  The parameter-dependent tail runs batched over all images.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import kernels as K
from .arith import Arith, FixedArith, WideArith, make_arith
from .pipeline import (DEFAULT_LINE_BUDGET, INTENSITY_SHIFT, N_ZONES, CalibrationParams, DepthMap,
                       Homography, RadialZones, ZoneTables, apply_homography, check_dims,
                       cross_terms, mask_values, v_w)
from .numerics import FixedArray


def preprocess_dense(i1, i2, params: CalibrationParams, ar: Arith,
                     line_budget: int = DEFAULT_LINE_BUDGET):
    """Half-sum and half-difference images in the working format."""
    i1 = np.asarray(i1, dtype=np.int64)
    i2 = np.asarray(i2, dtype=np.int64)
    if i1.shape != i2.shape:
        raise ValueError("image pair dimensions differ")
    fx = FixedArith()
    h2 = apply_homography(i2, Homography.from_real(params.homography), line_budget)
    a = FixedArray(i1) + h2
    d = FixedArray(i1) - h2
    if params.denoise:
        a = _denoise(a, fx)
        d = _denoise(d, fx)
    shift = INTENSITY_SHIFT + 1
    return ar.encode(a.scale(1, shift).to_real()), ar.encode(d.scale(1, shift).to_real())


def _denoise(x: FixedArray, fx: FixedArith) -> FixedArray:
    hp = x - K.conv2_dense(x, K.box2("tl"), fx, period=1)
    return K.conv2_dense(hp, K.gaussian5(), fx, period=1)


def upsample_to_full(x, n: int, ar: Arith):
    """Bring a scale-``n`` signal back to full resolution."""
    for m in range(n - 1, -1, -1):
        x = K.zero_insert_dense(x, m, ar)
        x = K.conv2_dense(x, K.interleave(K.upsampler_shifted4("br"), m), ar, period=2 << m)
    return x


def scale_prefix(ave, delta, n_scales: int, ar: Arith):
    """Parameter-free per-scale signals: list of (G(L_n), G(D_n))."""
    out = []
    for n in range(n_scales):
        s = 1 << n
        box = K.interleave(K.box2("tl"), n)
        gk = K.interleave(K.gaussian5(), n)
        box_a = K.conv2_dense(ave, box, ar, period=s)
        up = K.conv2_dense(K.zero_insert_dense(box_a, n, ar),
                           K.interleave(K.upsampler_shifted4("br"), n), ar, period=2 * s)
        lap = ar.sub(up, ave)
        g_lap = K.conv2_dense(lap, gk, ar, period=s)
        g_delta = K.conv2_dense(delta, gk, ar, period=s)
        box_d = K.conv2_dense(delta, box, ar, period=s)
        out.append((g_lap, g_delta))
        ave, delta = box_a, box_d
    return out


def scale_tail(prefix, params: CalibrationParams, tables: ZoneTables, zone_map, ar: Arith,
               metric: str = "VW"):
    """Per-scale products, upsampling, cross-scale sums and the division.

    Returns ``(z_raw, conf, score)`` where ``score`` is the confidence under
    ``metric`` (``VW`` returns ``conf`` itself).
    """
    acc_vw = acc_ww = acc_abs = None
    for n, (g_lap, g_delta) in enumerate(prefix):
        s = 1 << n
        v, w = v_w(ar, g_lap, g_delta, tables.a[n][zone_map], tables.b[n][zone_map])
        if params.derivatives_enabled:
            dk = [K.interleave(k, n) for k in K.deriv_kernels()]
            vs = [K.conv2_dense(v, k, ar, period=s) for k in dk]
            ws = [K.conv2_dense(w, k, ar, period=s) for k in dk]
            omegas = tables.omega[3 * n:3 * n + 3]
        else:
            vs, ws = [v], [w]
            omegas = tables.omega[3 * n:3 * n + 1]
        vw, ww = cross_terms(ar, vs, ws, omegas)
        vw = upsample_to_full(vw, n, ar)
        ww = upsample_to_full(ww, n, ar)
        if metric == "absW":
            ab = sum(float(ar.decode(om)) * np.abs(ar.decode(x)) for om, x in zip(omegas, ws))
            ab = upsample_to_full(ab, n, WideArith())
            acc_abs = ab if acc_abs is None else acc_abs + ab
        acc_vw = vw if acc_vw is None else ar.add(acc_vw, vw)
        acc_ww = ww if acc_ww is None else ar.add(acc_ww, ww)
    z_raw = ar.div(acc_vw, acc_ww)
    score = {"VW": acc_vw, "W2": acc_ww, "absW": acc_abs}[metric]
    return z_raw, acc_vw, score


def reference_pipeline(i1, i2, params: CalibrationParams, numerics: str = "wide",
                       counter: Counter | None = None, line_budget: int = DEFAULT_LINE_BUDGET,
                       metric: str = "VW"):
    """Dense evaluation; returns ``(z_raw, conf)`` in the working format."""
    h, w = np.shape(i1)
    check_dims(params, w, h)
    ar = make_arith(numerics, counter)
    ave, delta = preprocess_dense(i1, i2, params, ar, line_budget)
    zone_map = RadialZones(params, w, h).frame()
    tables = ZoneTables.build(params, ar)
    z_raw, conf, _ = scale_tail(scale_prefix(ave, delta, params.n_scales, ar), params, tables,
                                zone_map, ar, metric)
    return z_raw, conf


def reference_depth(i1, i2, params: CalibrationParams, numerics: str = "wide",
                    counter: Counter | None = None) -> DepthMap:
    h, w = np.shape(i1)
    ar = make_arith(numerics, counter)
    z_raw, conf = reference_pipeline(i1, i2, params, numerics, counter)
    zone_map = RadialZones(params, w, h).frame()
    depth, c, valid = mask_values(ar, z_raw, conf, zone_map, ZoneTables.build(params, ar))
    return DepthMap(depth=depth, confidence=c, valid=valid, z_raw=ar.decode(z_raw))


# ------------------------------------------------------------ calibration loss

TOP_FRACTION = 0.1


@dataclass
class Batch:
    """Cached parameter-free signals for a stack of same-size image pairs."""

    prefix: list
    zone_map: np.ndarray
    z_true: np.ndarray               # (B, H, W)
    groups: np.ndarray               # (B*16, maxn) flat pixel indices, -1 padded
    width: int
    height: int

    @property
    def size(self) -> int:
        return self.z_true.shape[0]


def prepare_batch(samples: Sequence, params: CalibrationParams) -> Batch:
    """Run the front end and per-scale prefix once per image (wide numerics)."""
    ar = WideArith()
    h, w = np.shape(samples[0].i1)
    check_dims(params, w, h)
    pre = [scale_prefix(*preprocess_dense(s.i1, s.i2, params, ar), params.n_scales, ar)
           for s in samples]
    prefix = [(np.stack([p[n][0] for p in pre]), np.stack([p[n][1] for p in pre]))
              for n in range(params.n_scales)]
    zone_map = RadialZones(params, w, h).frame()
    z_true = np.stack([np.broadcast_to(np.asarray(s.z_true, dtype=np.float64), (h, w))
                       for s in samples])
    b = len(samples)
    flat_zone = zone_map.ravel()
    members = [np.flatnonzero(flat_zone == z) for z in range(N_ZONES)]
    maxn = max(len(m) for m in members)
    groups = np.full((b * N_ZONES, maxn), -1, dtype=np.int64)
    for i in range(b):
        for z, m in enumerate(members):
            groups[i * N_ZONES + z, :len(m)] = i * h * w + m
    return Batch(prefix, zone_map, z_true, groups, w, h)


def evaluate_batch(batch: Batch, params: CalibrationParams, metric: str = "VW"):
    """Wide-numerics ``(z_raw, conf, score)`` stacks for a prepared batch."""
    ar = WideArith()
    return scale_tail(batch.prefix, params, ZoneTables.build(params, ar), batch.zone_map, ar, metric)


@dataclass
class LossParts:
    loss: float
    group_sum: np.ndarray            # (B*16,) summed |error| of selected pixels
    group_count: np.ndarray          # (B*16,) selected pixels
    group_valid: np.ndarray          # (B*16,) numerically valid pixels

    @property
    def selected(self) -> int:
        return int(self.group_count.sum())

    @property
    def empty_groups(self) -> np.ndarray:
        return np.flatnonzero(self.group_count == 0)


def top_confident(conf_groups: np.ndarray, valid_groups: np.ndarray):
    """Mask of the ceil(10%) most confident valid pixels in each group row."""
    n_valid = valid_groups.sum(axis=1)
    k = np.ceil(TOP_FRACTION * n_valid - 1e-9).astype(np.int64)
    key = np.where(valid_groups, conf_groups, -np.inf)
    kmax = int(k.max()) if k.size else 0
    sel = np.zeros_like(valid_groups)
    if kmax == 0:
        return sel, n_valid
    part = np.argpartition(-key, kmax - 1, axis=1)[:, :kmax]
    top = np.take_along_axis(key, part, axis=1)
    order = np.argsort(-top, axis=1, kind="stable")
    ranked = np.take_along_axis(part, order, axis=1)
    take = np.arange(kmax)[None, :] < k[:, None]
    rows = np.broadcast_to(np.arange(sel.shape[0])[:, None], ranked.shape)
    sel[rows[take], ranked[take]] = True
    return sel, n_valid


def masked_mae(batch: Batch, z_raw: np.ndarray, conf: np.ndarray) -> LossParts:
    """MAE over the top-10% most confident valid pixels per zone per image."""
    g = batch.groups
    pad = g < 0
    gi = np.where(pad, 0, g)
    z = z_raw.ravel()[gi]
    c = conf.ravel()[gi]
    with np.errstate(invalid="ignore"):
        valid = ~pad & np.isfinite(z) & np.isfinite(c) & (c > 0)
    sel, n_valid = top_confident(c, valid)
    err = np.where(sel, np.abs(z - batch.z_true.ravel()[gi]), 0.0)
    gsum = err.sum(axis=1)
    gcnt = sel.sum(axis=1)
    total = gcnt.sum()
    loss = float(gsum.sum() / total) if total else math.inf
    return LossParts(loss, gsum, gcnt, n_valid)


# --------------------------------------------------------- parameter vector

def param_layout(params: CalibrationParams) -> list[tuple[str, int, int | None]]:
    """(field, scale, zone) per free parameter: a and b per zone per scale, then omega."""
    out = []
    for n in range(params.n_scales):
        out += [("a", n, z) for z in range(N_ZONES)]
        out += [("b", n, z) for z in range(N_ZONES)]
    out += [("omega", i, None) for i in range(6)]
    return out


def pack(params: CalibrationParams) -> np.ndarray:
    v = [params.table(f, n)[z] if f != "omega" else params.omega[n]
         for f, n, z in param_layout(params)]
    return np.array(v, dtype=np.float64)


def unpack(vec: np.ndarray, params: CalibrationParams) -> CalibrationParams:
    n_s = params.n_scales
    per = 2 * N_ZONES
    a = [vec[n * per:n * per + N_ZONES] for n in range(n_s)]
    b = [vec[n * per + N_ZONES:(n + 1) * per] for n in range(n_s)]
    extra_a = [params.table("a", n) for n in range(n_s, len(params.zones[0].a))]
    extra_b = [params.table("b", n) for n in range(n_s, len(params.zones[0].b))]
    out = params.with_tables(a=a + extra_a, b=b + extra_b)
    return replace(out, omega=tuple(float(x) for x in vec[n_s * per:n_s * per + 6]))


def used_omega(params: CalibrationParams) -> list[int]:
    per = 3 if params.derivatives_enabled else 1
    return [3 * n + d for n in range(params.n_scales) for d in range(per)]


def relative_steps(vec: np.ndarray, rel: float) -> np.ndarray:
    return rel * np.maximum(np.abs(vec), 1e-6)


def loss_and_gradient(batch: Batch, params: CalibrationParams, rel_step: float = 1e-4,
                      method: str = "zonewise") -> tuple[float, np.ndarray, LossParts]:
    """Masked-MAE loss and its central-difference gradient over :func:`pack` order.

    ``method="exact"`` perturbs one parameter per evaluation pair.
    ``method="zonewise"`` perturbs one (field, scale) block across all 16 zones at once and
    credits each zone with the loss change of its own pixels.  ω entries are always
    perturbed one at a time.
    """
    base = masked_mae(batch, *evaluate_batch(batch, params)[:2])
    vec = pack(params)
    h = relative_steps(vec, rel_step)
    grad = np.zeros_like(vec)
    layout = param_layout(params)

    def loss_at(v):
        return masked_mae(batch, *evaluate_batch(batch, unpack(v, params))[:2])

    if method == "exact":
        for i, (f, k, _) in enumerate(layout):
            if f == "omega" and k not in used_omega(params):
                continue
            e = np.zeros_like(vec)
            e[i] = h[i]
            grad[i] = (loss_at(vec + e).loss - loss_at(vec - e).loss) / (2 * h[i])
        return base.loss, grad, base
    if method != "zonewise":
        raise ValueError(f"unknown gradient method {method!r}")

    n_img = batch.size
    for start in range(0, params.n_scales * 2 * N_ZONES, N_ZONES):
        block = slice(start, start + N_ZONES)
        e = np.zeros_like(vec)
        e[block] = h[block]
        plus, minus = loss_at(vec + e), loss_at(vec - e)
        zs_plus = plus.group_sum.reshape(n_img, N_ZONES).sum(0) / max(plus.selected, 1)
        zs_minus = minus.group_sum.reshape(n_img, N_ZONES).sum(0) / max(minus.selected, 1)
        grad[block] = (zs_plus - zs_minus) / (2 * h[block])
    for i, (f, k, _) in enumerate(layout):
        if f == "omega" and k in used_omega(params):
            e = np.zeros_like(vec)
            e[i] = h[i]
            grad[i] = (loss_at(vec + e).loss - loss_at(vec - e).loss) / (2 * h[i])
    return base.loss, grad, base
