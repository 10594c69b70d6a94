import time
from collections import Counter

import numpy as np
import pytest

from dfdd import costmodel as cm
from dfdd.pipeline import default_params, run_pipeline

S2 = {(1, 0): (28, 14, 28, 1, 71), (1, 1): (36, 22, 38, 1, 97),
      (2, 0): (70, 36, 64, 1, 171), (2, 1): (86, 52, 84, 1, 223),
      (3, 0): (124, 66, 108, 1, 299), (3, 1): (148, 90, 138, 1, 377)}
S3 = {(1, 0): (29, 0, 29), (1, 1): (33, 0, 33), (2, 0): (93, 12, 105),
      (2, 1): (105, 14, 119), (3, 0): (227, 36, 263), (3, 1): (255, 42, 297)}


def test_op_rows():
    assert cm.op_costs("gaussian5").total_flops == 18
    assert cm.op_costs("upsampler").total_flops == 14
    assert cm.op_costs("downsampler").total_flops == 6
    assert cm.op_costs("vw_stage").total_flops == 4
    assert cm.op_costs("cross_mult", dxdy=True).total_flops == 30
    assert cm.op_costs("cross_mult", dxdy=False).total_flops == 4
    assert cm.op_costs("add_divide", n_scales=1).total_flops == 1
    assert cm.op_costs("add_divide", n_scales=3).total_flops == 5
    with pytest.raises(ValueError):
        cm.op_costs("fft")


@pytest.mark.parametrize("key", sorted(S2))
def test_flop_table(key):
    c = cm.pipeline_flops(key[0], bool(key[1]))
    assert (c.adders, c.true_mults, c.easy_mults, c.dividers, c.total_flops) == S2[key]


@pytest.mark.parametrize("key", sorted(S3))
def test_line_table(key):
    c = cm.pipeline_lines(key[0], bool(key[1]))
    assert (c.scale_buffer_lines, c.latency_buffer_lines, c.total_lines) == S3[key]


def test_markdown_tables():
    text = cm.cost_report(2, True)
    assert "| 2 | 1 | 86 | 52 | 84 | 1 | 223 |" in text
    assert "| 2 | 1 | 105 | 14 | 119 |" in text
    assert "total FLOPs per pixel: 223" in text


def test_invalid_scale_count():
    with pytest.raises(ValueError):
        cm.pipeline_flops(0, True)


def _audit(n, dxdy, w=32, h=24):
    rng = np.random.default_rng(0)
    p = default_params(w, h, [-5.0] * n, [1.5] * n, n_scales=n, derivatives_enabled=dxdy)
    c, g = Counter(), []
    run_pipeline(rng.integers(0, 256, (h, w)), rng.integers(0, 256, (h, w)), p,
                 counter=c, graph_out=g)
    return cm.audit(g[0], c, w, h, n, dxdy), g[0]


@pytest.mark.parametrize("n,dxdy", [(1, False), (1, True), (2, False), (2, True)])
def test_audit_flops_and_inventory(n, dxdy):
    rep, graph = _audit(n, dxdy)
    assert rep.flop_mismatches == {}
    assert rep.dividers_per_frame == 32 * 24
    assert cm.filter_inventory(graph) == cm.static_inventory(n, dxdy)
    assert rep.lines_dynamic.get("latency_buffer", 0) == rep.lines_static.get("latency_buffer", 0)
    assert rep.lines_dynamic.get("pass_dx_dy", 0) == rep.lines_static.get("pass_dx_dy", 0)


@pytest.mark.xfail(strict=True, reason="the static per-scale inventory counts four Gaussian and "
                   "four downsampler buffers per scale, the FLOP inventory only two filters each")
@pytest.mark.parametrize("n,dxdy", [(1, False), (2, True)])
def test_audit_line_totals_match_static(n, dxdy):
    rep, _ = _audit(n, dxdy)
    assert rep.dynamic_total_lines == rep.static_total_lines


def test_audit_lists_mismatched_nodes():
    rep, _ = _audit(1, False)
    text = rep.text()
    assert "gauss(lap)@0" in text and "static / instrumented" in text


def test_tables_are_fast():
    t = time.perf_counter()
    for n in (1, 2, 3):
        for d in (0, 1):
            cm.pipeline_costs(n, bool(d))
    cm.cost_report()
    assert time.perf_counter() - t < 1.0
