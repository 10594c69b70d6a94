"""Static per-pixel FLOP and buffered-line accounting, and its reconciliation
against an instrumented streaming pipeline.

The static model counts from the stated per-scale composition:

* FLOPs per scale ``n``: 2 Gaussians, 2 downsamplers, ``1 + 2n`` upsamplers,
  the V/W stage and one cross multiplication; plus one add-and-divide stage
  for the whole pipeline.
* Lines per scale ``n``: 4 Gaussian, 4 downsampler, 3 upsampler and (with
  derivatives) 2 pass/dx/dy buffers of the scale, plus two upsampler buffers
  for every coarser level below it.  The cross-scale latency buffer holds
  ``L(N-1) - L(0)`` lines.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CostBreakdown:
    adders: int = 0
    true_mults: int = 0
    easy_mults: int = 0
    dividers: int = 0
    scale_buffer_lines: int = 0
    latency_buffer_lines: int = 0

    @property
    def total_flops(self) -> int:
        return self.adders + self.true_mults + self.easy_mults + self.dividers

    @property
    def total_lines(self) -> int:
        return self.scale_buffer_lines + self.latency_buffer_lines

    def __add__(self, o: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(*(a + b for a, b in zip(self._tuple(), o._tuple())))

    def __mul__(self, k: int) -> "CostBreakdown":
        return CostBreakdown(*(a * k for a in self._tuple()))

    __rmul__ = __mul__

    def _tuple(self):
        return (self.adders, self.true_mults, self.easy_mults, self.dividers,
                self.scale_buffer_lines, self.latency_buffer_lines)


FLOP_KEYS = ("adders", "true_mults", "easy_mults", "dividers")


def op_costs(op: str, dxdy: bool = True, n_scales: int = 1) -> CostBreakdown:
    """Per-pixel arithmetic of one operator."""
    table = {
        "gaussian5": CostBreakdown(8, 2, 8, 0),
        "downsampler": CostBreakdown(2, 0, 4, 0),
        "upsampler": CostBreakdown(6, 4, 4, 0),
        "vw_stage": CostBreakdown(2, 2, 0, 0),
    }
    if op in table:
        return table[op]
    if op == "cross_mult":
        return CostBreakdown(8, 12, 10, 0) if dxdy else CostBreakdown(0, 4, 0, 0)
    if op == "add_divide":
        return CostBreakdown(2 * (n_scales - 1), 0, 0, 1)
    raise ValueError(f"unknown op {op!r}")


def scale_flops(n: int, dxdy: bool) -> CostBreakdown:
    return (2 * op_costs("gaussian5") + 2 * op_costs("downsampler")
            + (1 + 2 * n) * op_costs("upsampler") + op_costs("vw_stage")
            + op_costs("cross_mult", dxdy))


def pipeline_flops(n_scales: int, dxdy: bool) -> CostBreakdown:
    if n_scales < 1:
        raise ValueError("n_scales must be >= 1")
    total = op_costs("add_divide", n_scales=n_scales)
    for n in range(n_scales):
        total = total + scale_flops(n, dxdy)
    return total


# ------------------------------------------------------------------ lines

def gaussian_lines(n: int) -> int:
    return 4 << n


def downsampler_lines(n: int) -> int:
    return 1 << n


def upsampler_lines(n: int) -> int:
    return 3 << n


def pdd_lines(n: int) -> int:
    return 2 << n


def scale_line_terms(n: int, dxdy: bool) -> dict[str, int]:
    """Buffered lines of scale ``n`` split by filter kind."""
    return {
        "gaussian": 4 * gaussian_lines(n),
        "downsampler": 4 * downsampler_lines(n),
        "upsampler": 3 * upsampler_lines(n) + 2 * sum(upsampler_lines(i - 1) for i in range(1, n + 1)),
        "pass_dx_dy": 2 * pdd_lines(n) if dxdy else 0,
    }


def scale_latency(n: int, dxdy: bool) -> int:
    own = gaussian_lines(n) + downsampler_lines(n) + upsampler_lines(n)
    if dxdy:
        own += pdd_lines(n)
    return own + sum(upsampler_lines(i - 1) + downsampler_lines(i - 1) for i in range(1, n + 1))


def pipeline_lines(n_scales: int, dxdy: bool) -> CostBreakdown:
    if n_scales < 1:
        raise ValueError("n_scales must be >= 1")
    scale = sum(sum(scale_line_terms(n, dxdy).values()) for n in range(n_scales))
    latency = scale_latency(n_scales - 1, dxdy) - scale_latency(0, dxdy)
    return CostBreakdown(scale_buffer_lines=scale, latency_buffer_lines=latency)


def pipeline_costs(n_scales: int, dxdy: bool) -> CostBreakdown:
    return pipeline_flops(n_scales, dxdy) + pipeline_lines(n_scales, dxdy)


# --------------------------------------------------------------- tables

def _md(header: list[str], rows: list[list]) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(out)


def table_ops() -> str:
    rows = []
    for label, op, kw in [("Gaussian 5x5 filter", "gaussian5", {}),
                          ("Downsampler filter", "downsampler", {}),
                          ("Upsampler filter", "upsampler", {}),
                          ("V_N & W_N", "vw_stage", {}),
                          ("Cross multiplication (DX_DY_ENABLE=1)", "cross_mult", {"dxdy": True}),
                          ("Cross multiplication (DX_DY_ENABLE=0)", "cross_mult", {"dxdy": False}),
                          ("Add & divide (N=1)", "add_divide", {"n_scales": 1})]:
        c = op_costs(op, **kw)
        rows.append([label, c.adders, c.true_mults, c.easy_mults, c.dividers, c.total_flops])
    return _md(["Operation", "Adders", "True mults", "Easy mults", "Dividers", "FLOPs"], rows)


def table_flops(scales=(1, 2, 3)) -> str:
    rows = []
    for n in scales:
        for d in (0, 1):
            c = pipeline_flops(n, bool(d))
            rows.append([n, d, c.adders, c.true_mults, c.easy_mults, c.dividers, c.total_flops])
    return _md(["N (scales)", "DX_DY_ENABLE", "Adders", "True mults", "Easy mults", "Dividers",
                "Total FLOPs"], rows)


def table_lines(scales=(1, 2, 3)) -> str:
    rows = []
    for n in scales:
        for d in (0, 1):
            c = pipeline_lines(n, bool(d))
            rows.append([n, d, c.scale_buffer_lines, c.latency_buffer_lines, c.total_lines])
    return _md(["N (scales)", "DX_DY_ENABLE", "Scale buffers", "Latency buffers", "Total buffers"], rows)


def cost_report(n_scales: int | None = None, dxdy: bool | None = None) -> str:
    parts = ["## Per-operation arithmetic", "", table_ops(), "",
             "## Per-pixel FLOPs", "", table_flops(), "",
             "## Buffered lines", "", table_lines()]
    if n_scales is not None:
        c = pipeline_costs(n_scales, bool(dxdy))
        parts += ["", f"## Configuration N={n_scales}, DX_DY_ENABLE={int(bool(dxdy))}", "",
                  f"total FLOPs per pixel: {c.total_flops}",
                  f"total buffered lines: {c.total_lines}"]
    return "\n".join(parts) + "\n"


# ------------------------------------------------------------------ audit

FRONT_END_ROLES = {"homography", "preprocess"}


@dataclass
class AuditReport:
    n_scales: int
    dxdy: bool
    flops_static: dict[str, int]
    flops_dynamic: dict[str, float]
    lines_static: dict[str, int]
    lines_dynamic: dict[str, int]
    nodes: list[dict] = field(default_factory=list)
    dividers_per_frame: int = 0
    pixels: int = 0

    @property
    def flop_mismatches(self) -> dict[str, tuple]:
        return {k: (self.flops_static[k], self.flops_dynamic.get(k, 0))
                for k in FLOP_KEYS if self.flops_static[k] != self.flops_dynamic.get(k, 0)}

    @property
    def line_mismatches(self) -> dict[str, tuple]:
        keys = sorted(set(self.lines_static) | set(self.lines_dynamic))
        return {k: (self.lines_static.get(k, 0), self.lines_dynamic.get(k, 0))
                for k in keys if self.lines_static.get(k, 0) != self.lines_dynamic.get(k, 0)}

    @property
    def static_total_lines(self) -> int:
        return sum(self.lines_static.values())

    @property
    def dynamic_total_lines(self) -> int:
        return sum(self.lines_dynamic.values())

    def text(self) -> str:
        out = [f"audit N={self.n_scales} DX_DY_ENABLE={int(self.dxdy)}",
               "flops per pixel (static / instrumented):"]
        for k in FLOP_KEYS:
            out.append(f"  {k:<12} {self.flops_static[k]:>5} / {self.flops_dynamic.get(k, 0):g}")
        out.append(f"dividers per frame: {self.dividers_per_frame} for {self.pixels} pixels")
        out.append("buffered lines by kind (static / node sum):")
        for k in sorted(set(self.lines_static) | set(self.lines_dynamic)):
            out.append(f"  {k:<16} {self.lines_static.get(k, 0):>5} / {self.lines_dynamic.get(k, 0)}")
        out.append(f"  {'total':<16} {self.static_total_lines:>5} / {self.dynamic_total_lines}")
        mism = self.line_mismatches
        if mism:
            out.append("line mismatches by node kind: " +
                       ", ".join(f"{k} {a}->{b}" for k, (a, b) in mism.items()))
            out.append("nodes:")
            for d in self.nodes:
                if d["role"] in mism:
                    out.append(f"  {d['name']:<40} {d['buffered_lines']}")
        return "\n".join(out)


def audit(graph, counter: Counter, width: int, height: int, n_scales: int, dxdy: bool) -> AuditReport:
    """Reconcile an instrumented run of ``graph`` against the static model.

    ``counter`` must hold the arithmetic tallies of exactly one frame.
    """
    pixels = width * height
    static = pipeline_flops(n_scales, dxdy)
    flops_static = {k: getattr(static, k) for k in FLOP_KEYS}
    flops_dynamic = {k: counter.get(k, 0) / pixels for k in FLOP_KEYS}

    lines_static: dict[str, int] = defaultdict(int)
    for n in range(n_scales):
        for k, v in scale_line_terms(n, dxdy).items():
            if v:
                lines_static[k] += v
    lat = pipeline_lines(n_scales, dxdy).latency_buffer_lines
    if lat:
        lines_static["latency_buffer"] = lat

    lines_dynamic: dict[str, int] = defaultdict(int)
    nodes = graph.report()
    for d in nodes:
        if d["role"] in FRONT_END_ROLES or d["buffered_lines"] == 0:
            continue
        lines_dynamic[d["role"]] += d["buffered_lines"]
    return AuditReport(n_scales, dxdy, flops_static, flops_dynamic, dict(lines_static),
                       dict(lines_dynamic), nodes, int(counter.get("dividers", 0)), pixels)


def filter_inventory(graph) -> dict[str, int]:
    """Number of nodes of each filter kind in a graph."""
    return dict(Counter(d["role"] for d in graph.report()
                        if d["role"] in ("gaussian", "downsampler", "upsampler", "pass_dx_dy")))


def static_inventory(n_scales: int, dxdy: bool) -> dict[str, int]:
    inv = {"gaussian": 2 * n_scales, "downsampler": 2 * n_scales,
           "upsampler": sum(1 + 2 * n for n in range(n_scales))}
    if dxdy:
        inv["pass_dx_dy"] = 2 * n_scales
    return inv
