"""Calibration of per-zone a, b and the estimate weights, threshold selection,
and working-range evaluation over a depth-sweep dataset.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .pipeline import N_ZONES, CalibrationParams, RadialZones, ZoneTables
from .arith import WideArith, make_arith
from .reference import (Batch, evaluate_batch, loss_and_gradient, masked_mae, pack,
                        prepare_batch, reference_pipeline, unpack)

LADDER_LOW = 1e-7
LADDER_HIGH = 2e-5
DENSITY_FLOOR = 0.05
ERROR_FRACTION = 0.1
METRICS = ("VW", "W2", "absW")


class CalibrationError(RuntimeError):
    pass


# -------------------------------------------------------------- optimizer

@dataclass
class OptimizeResult:
    params: CalibrationParams
    loss: float
    initial_loss: float
    history: list[float]
    best_iteration: int


def optimize(samples: Sequence, init: CalibrationParams, iters: int = 100, lr: float = 0.05,
             betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
             rel_step: float = 1e-4, gradient: str = "zonewise",
             batch: Batch | None = None, progress=None) -> OptimizeResult:
    """Adam over a, b (per zone, per scale) and omega, minimising the masked MAE.

    Steps are taken on ``p / |p0|`` so the learning rate is a relative step
    size shared by parameters of very different magnitude.  The lowest-loss
    iterate is returned.
    """
    if len(samples) == 0:
        raise ValueError("empty dataset")
    batch = batch or prepare_batch(samples, init)
    p0 = pack(init)
    unit = np.maximum(np.abs(p0), 1e-12)
    theta = p0 / unit
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = betas
    history = []
    best = (math.inf, init, -1)
    params = init
    for t in range(iters + 1):
        params = unpack(theta * unit, init)
        loss, grad, _ = loss_and_gradient(batch, params, rel_step, gradient)
        if t == 0 and not math.isfinite(loss):
            raise CalibrationError("bad initialization: loss is not finite; start from the "
                                   "physical estimates a ~ -A^2, b ~ rho - 1/s")
        history.append(loss)
        if progress:
            progress(t, loss)
        if loss < best[0]:
            best = (loss, params, t)
        if t == iters:
            break
        g = np.nan_to_num(grad * unit, nan=0.0, posinf=0.0, neginf=0.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** (t + 1))
        vh = v / (1 - b2 ** (t + 1))
        theta = theta - lr * mh / (np.sqrt(vh) + eps)
    return OptimizeResult(best[1], best[0], history[0], history, best[2])


# ------------------------------------------------------------- evaluation

@dataclass
class DepthCurve:
    z_true: np.ndarray
    mae: np.ndarray
    density: np.ndarray

    def within(self, floor: float = DENSITY_FLOOR) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return (self.density > 0) & (self.mae < ERROR_FRACTION * self.z_true) \
                & (self.density >= floor)


def working_range(curve: DepthCurve, floor: float = DENSITY_FLOOR) -> tuple[float, float, float]:
    """Longest contiguous run of depths meeting the error and density limits.

    Returns ``(z_first, z_last, span)``; an empty range is ``(nan, nan, 0)``.
    Ties go to the nearer run.
    """
    ok = curve.within(floor)
    best = (0, -1, -1)
    start = None
    for i, flag in enumerate(list(ok) + [False]):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            n = i - start
            if n > best[0]:
                best = (n, start, i - 1)
            start = None
    if best[0] == 0:
        return math.nan, math.nan, 0.0
    lo, hi = curve.z_true[best[1]], curve.z_true[best[2]]
    return float(lo), float(hi), float(hi - lo)


def _masked(z, score, params: CalibrationParams, zone_map, sparsity: float | None):
    """Validity masks for a stack of wide-precision estimates."""
    tables = ZoneTables.build(params, WideArith())
    with np.errstate(invalid="ignore"):
        finite = np.isfinite(z) & np.isfinite(score)
        in_range = (z > tables.z_min[zone_map]) & (z < tables.z_max[zone_map])
        if sparsity is None:
            return finite & in_range & (score >= tables.c_thresh[zone_map])
        keep = np.zeros_like(finite)
        for i in range(z.shape[0]):
            ok = finite[i] & in_range[i]
            n = int(math.ceil((1 - sparsity / 100.0) * ok.sum() - 1e-9))
            if n <= 0:
                continue
            s = np.where(ok, score[i], -np.inf).ravel()
            idx = np.argsort(-s, kind="stable")[:n]
            keep[i].flat[idx] = True
        return keep


def depth_curve(z, valid, z_true) -> DepthCurve:
    b = z.shape[0]
    err = np.where(valid, np.abs(z - z_true[:, None, None]), 0.0)
    cnt = valid.reshape(b, -1).sum(1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mae = np.where(cnt > 0, err.reshape(b, -1).sum(1) / np.maximum(cnt, 1), np.nan)
    return DepthCurve(np.asarray(z_true, dtype=np.float64), mae, cnt / valid[0].size)


@dataclass
class Estimates:
    z: np.ndarray
    score: np.ndarray
    z_true: np.ndarray
    zone_map: np.ndarray


def estimate_stack(samples: Sequence, params: CalibrationParams, metric: str = "VW",
                   numerics: str = "wide", batch: Batch | None = None) -> Estimates:
    """Unmasked depth and confidence for every sample."""
    if metric not in METRICS:
        raise ValueError(f"unknown confidence metric {metric!r}")
    h, w = np.shape(samples[0].i1)
    zone_map = RadialZones(params, w, h).frame()
    z_true = np.array([s.z_true for s in samples], dtype=np.float64)
    if numerics == "wide":
        batch = batch or prepare_batch(samples, params)
        z, conf, score = evaluate_batch(batch, params, metric)
        return Estimates(z, score, z_true, zone_map)
    if metric != "VW":
        raise ValueError("alternate confidence metrics need wide numerics")
    ar = make_arith(numerics)
    zs, scores = [], []
    for s in samples:
        z_raw, conf = reference_pipeline(s.i1, s.i2, params, numerics)
        zs.append(ar.decode(z_raw))
        scores.append(ar.decode(conf))
    return Estimates(np.stack(zs), np.stack(scores), z_true, zone_map)


@dataclass
class CalibReport:
    params: CalibrationParams
    curve: DepthCurve
    working_range: tuple[float, float, float]
    metric: str = "VW"
    sparsity: float | None = None
    final_loss: float | None = None
    initial_loss: float | None = None
    loss_history: list[float] = field(default_factory=list)
    threshold_factor: float | None = None

    @property
    def wr_span(self) -> float:
        return self.working_range[2]

    def wr_flags(self) -> np.ndarray:
        lo, hi, span = self.working_range
        if span == 0 and math.isnan(lo):
            return np.zeros(len(self.curve.z_true), dtype=bool)
        z = self.curve.z_true
        return (z >= lo - 1e-12) & (z <= hi + 1e-12)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["z_true", "mae", "density", "wr_flag"])
        for z, m, d, f in zip(self.curve.z_true, self.curve.mae, self.curve.density,
                              self.wr_flags()):
            wr.writerow([f"{z:.4f}", "nan" if not np.isfinite(m) else f"{m:.6f}",
                         f"{d:.6f}", int(f)])
        return buf.getvalue()

    def to_text(self) -> str:
        lo, hi, span = self.working_range
        lines = [f"confidence metric: {self.metric}",
                 f"sparsity: {'thresholds' if self.sparsity is None else f'{self.sparsity:g}%'}"]
        if self.final_loss is not None:
            lines.append(f"loss: initial {self.initial_loss:.6g}, final {self.final_loss:.6g}")
        if self.threshold_factor is not None:
            c = self.params.table("c_thresh")
            lines.append(f"threshold ladder factor {self.threshold_factor:.6g}, "
                         f"zone thresholds {c[0]:.6g} .. {c[-1]:.6g}")
        if span > 0 or not math.isnan(lo):
            lines.append(f"working range: {lo:.2f} m to {hi:.2f} m ({span:.2f} m)")
        else:
            lines.append("working range: empty")
        inside = self.wr_flags()
        if inside.any():
            lines.append(f"mean density inside range: {self.curve.density[inside].mean():.3f}")
        lines.append("zone  r2_max      a[0]          b[0]          c_thresh")
        for i, zn in enumerate(self.params.zones):
            lines.append(f"{i:>4}  {zn.r2_max:<10.4g}  {zn.a[0]:<12.6g}  {zn.b[0]:<12.6g}  "
                         f"{zn.c_thresh:.6g}")
        lines.append("omega: " + ", ".join(f"{w:.6g}" for w in self.params.omega))
        return "\n".join(lines) + "\n"


def evaluate(samples: Sequence, params: CalibrationParams, confidence_metric: str = "VW",
             sparsity: float | None = None, numerics: str = "wide",
             density_floor: float = DENSITY_FLOOR, estimates: Estimates | None = None) -> CalibReport:
    """MAE and density per depth and the working range.

    With ``sparsity`` set, each image keeps only its top ``100 - sparsity``
    percent of pixels by confidence and the zone thresholds are ignored.
    """
    if sparsity is not None and not 0 <= sparsity < 100:
        raise ValueError("sparsity is a percentile in [0, 100)")
    est = estimates or estimate_stack(samples, params, confidence_metric, numerics)
    valid = _masked(est.z, est.score, params, est.zone_map, sparsity)
    curve = depth_curve(est.z, valid, est.z_true)
    return CalibReport(params, curve, working_range(curve, density_floor),
                       confidence_metric, sparsity)


# -------------------------------------------------------------- thresholds

def threshold_ladder(low: float = LADDER_LOW, high: float = LADDER_HIGH) -> np.ndarray:
    """Log-uniform thresholds from the central zone outward."""
    return np.geomspace(low, high, N_ZONES)


def with_thresholds(params: CalibrationParams, thresholds) -> CalibrationParams:
    zones = tuple(replace(z, c_thresh=float(t)) for z, t in zip(params.zones, thresholds))
    return replace(params, zones=zones)


def _score(curve: DepthCurve, floor: float) -> tuple[float, float]:
    lo, hi, span = working_range(curve, floor)
    if math.isnan(lo):
        return (-1.0, 0.0)
    inside = (curve.z_true >= lo) & (curve.z_true <= hi)
    # whole runs first, then lower error inside the run
    rel = np.nanmean(curve.mae[inside] / curve.z_true[inside])
    return (span, -rel)


def select_thresholds(samples: Sequence, params: CalibrationParams, metric: str = "VW",
                      density_floor: float = DENSITY_FLOOR, log_range: tuple[float, float] = (-4.0, 8.0),
                      coarse: int = 49, refine: int = 30,
                      estimates: Estimates | None = None) -> tuple[CalibrationParams, CalibReport]:
    """Scale a fixed log-uniform ladder by the factor that maximises working range."""
    est = estimates or estimate_stack(samples, params, metric)
    ladder = threshold_ladder()
    cache: dict[float, tuple] = {}

    def run(logk: float):
        if logk not in cache:
            p = with_thresholds(params, ladder * 10.0 ** logk)
            valid = _masked(est.z, est.score, p, est.zone_map, None)
            curve = depth_curve(est.z, valid, est.z_true)
            cache[logk] = (_score(curve, density_floor), p, curve)
        return cache[logk]

    grid = np.linspace(*log_range, coarse)
    scores = [run(float(k))[0] for k in grid]
    i = max(range(len(grid)), key=lambda j: (scores[j], -j))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    for _ in range(refine):
        if run(c)[0] >= run(d)[0]:
            b, d = d, c
            c = b - phi * (b - a)
        else:
            a, c = c, d
            d = a + phi * (b - a)
    best_k = max(cache, key=lambda k: (cache[k][0], -k))
    score, p, curve = cache[best_k]
    rep = CalibReport(p, curve, working_range(curve, density_floor), metric, None,
                      threshold_factor=10.0 ** best_k)
    return p, rep


def calibrate(samples: Sequence, init: CalibrationParams, iters: int = 100, lr: float = 0.05,
              gradient: str = "zonewise", progress=None) -> CalibReport:
    """Optimise, then select thresholds; returns the report with final params."""
    batch = prepare_batch(samples, init)
    res = optimize(samples, init, iters, lr, gradient=gradient, batch=batch, progress=progress)
    est = estimate_stack(samples, res.params, batch=batch)
    params, rep = select_thresholds(samples, res.params, estimates=est)
    rep.final_loss = res.loss
    rep.initial_loss = res.initial_loss
    rep.loss_history = res.history
    return rep
