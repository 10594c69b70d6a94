from collections import Counter
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfdd import kernels as K
from dfdd.arith import ExactArith, HalfArith
from dfdd.streaming import (CausalityError, ConvNode, Graph, PixelStream, Source,
                            decimate2, format_report, latency_buffer, stream_conv,
                            stream_upsample, zero_insert, _drive)
from oracles import naive_bilinear_upsample

ALL = [K.gaussian5(), K.box2("tl"), K.box2("br"), K.upsampler_shifted4("br"),
       *K.deriv_kernels()]


def half_frame(rng, h, w):
    ar = HalfArith()
    return ar.encode(rng.normal(0, 4, (h, w)))


@pytest.mark.parametrize("k", ALL, ids=lambda k: k.name)
@pytest.mark.parametrize("scale", [0, 1, 2])
def test_stream_conv_equals_dense(k, scale, rng):
    ar = HalfArith()
    frame = half_frame(rng, 40, 36)
    s = stream_conv(PixelStream.from_frame(frame), k, ar, scale)
    out = s.to_frame()
    assert np.array_equal(out, K.conv2_dense(frame, K.interleave(k, scale), ar))


@settings(max_examples=50, deadline=None)
@given(st.integers(16, 64), st.integers(16, 48), st.integers(0, 2**31), st.integers(0, 1))
def test_stream_conv_random_sizes(w, h, seed, scale):
    rng = np.random.default_rng(seed)
    ar = HalfArith()
    frame = half_frame(rng, h, w)
    for k in (K.gaussian5(), K.upsampler_shifted4("br")):
        out = stream_conv(PixelStream.from_frame(frame), k, ar, scale).to_frame()
        assert np.array_equal(out, K.conv2_dense(frame, K.interleave(k, scale), ar))


def test_buffered_lines_follow_kernel_height():
    ar = HalfArith()
    src = Source("in", [])
    for scale, g, u, d in [(0, 4, 3, 1), (1, 8, 6, 2), (2, 16, 12, 4)]:
        n = ConvNode("g", src.port(), [K.interleave(K.gaussian5(), scale)], ar)
        assert n.buffered_lines == g
        n = ConvNode("u", src.port(), [K.interleave(K.upsampler_shifted4("br"), scale)], ar)
        assert n.buffered_lines == u
        n = ConvNode("d", src.port(), [K.interleave(K.box2("tl"), scale)], ar)
        assert n.buffered_lines == d
        pdd = [K.interleave(k, scale) for k in K.deriv_kernels()]
        assert ConvNode("p", src.port(), pdd, ar).buffered_lines == 2 << scale


def test_stream_is_raster_ordered(rng):
    frame = rng.integers(0, 100, (5, 7))
    s = PixelStream.from_frame(frame)
    assert list(s.samples()) == list(frame.ravel())


def test_decimate():
    ar = ExactArith()
    const = np.full((6, 8), F(5), dtype=object)
    out = decimate2(PixelStream.from_frame(const), ar).to_frame()
    assert out.shape == (3, 4) and np.all(out == 5)
    tiny = np.array([[1, 2], [3, 4]], dtype=object)
    assert decimate2(PixelStream.from_frame(tiny), ar).to_frame()[0, 0] == F(10, 4)
    with pytest.raises(ValueError, match="decimate requires even dims"):
        decimate2(PixelStream.from_frame(np.zeros((5, 4), dtype=object)), ar)


def test_decimate_8x8_against_dense(rng):
    ar = ExactArith()
    img = rng.integers(0, 256, (8, 8)).astype(object)
    out = decimate2(PixelStream.from_frame(img), ar).to_frame()
    want = (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2]) / F(4)
    assert np.array_equal(out, want)


def test_zero_insert_expand():
    ar = ExactArith()
    x = np.array([[1, 2], [3, 4]], dtype=object)
    out = zero_insert(PixelStream.from_frame(x), 0, ar, expand=True).to_frame()
    want = np.zeros((4, 4), dtype=object)
    want[0::2, 0::2] = x
    assert np.array_equal(out, want)
    s = zero_insert(PixelStream.from_frame(np.zeros((4, 4), dtype=object)), 0, ar)
    assert np.all(s.to_frame() == 0)
    assert s.node.buffered_lines == 0


def test_upsample_constant_and_lines():
    ar = ExactArith()
    const = np.full((12, 12), F(3), dtype=object)
    s = stream_upsample(PixelStream.from_frame(const), 0, ar)
    out = s.to_frame()
    assert np.all(out[2:-2, 2:-2] == 3)
    assert s.node.buffered_lines == 3


def test_upsampler_matches_naive_bilinear(rng):
    ar = ExactArith()
    img = rng.integers(0, 256, (16, 20)).astype(object)
    boxed = stream_conv(PixelStream.from_frame(img), K.box2("tl"), ar, period=1).to_frame()
    up = stream_upsample(PixelStream.from_frame(boxed), 0, ar).to_frame()
    g = decimate2(PixelStream.from_frame(img), ar).to_frame()
    naive = naive_bilinear_upsample(g)
    assert np.array_equal(up[2:-2, 2:-2], naive[2:-2, 2:-2])


def test_latency_buffer(rng):
    ar = ExactArith()
    img = rng.integers(0, 256, (6, 5)).astype(object)
    assert np.array_equal(latency_buffer(PixelStream.from_frame(img), 0, ar).to_frame(), img)
    s = latency_buffer(PixelStream.from_frame(img), 2, ar)
    out = s.to_frame()
    flat_in, flat_out = img.ravel(), out.ravel()
    for t in range(img.size):
        assert flat_out[t] == (flat_in[t - 2 * 5] if t >= 10 else 0)
    assert s.node.buffered_lines == 2
    with pytest.raises(ValueError):
        latency_buffer(PixelStream.from_frame(img), -1, ar)


def test_causality_is_enforced(rng):
    ar = HalfArith()
    frame = half_frame(rng, 16, 16)
    node = ConvNode("g", Source("in", []).port(), [K.gaussian5()], ar)
    node.lookahead = 0                      # pretend no lines are needed ahead
    with pytest.raises(CausalityError):
        list(_drive(node, PixelStream.from_frame(frame), 16, 16))


def test_graph_alignment_and_report(rng):
    ar = HalfArith()
    g = Graph()
    src = g.source("x")
    (blur,) = g.conv("blur", src, K.gaussian5(), ar, role="gaussian")
    (diff,) = g.map("diff", [blur, src], lambda r, a, b: ar.sub(a, b))
    g.output("diff", diff)
    frame = half_frame(rng, 16, 16)
    rows = g.run({"x": frame}, 16, 16)["diff"]
    want = ar.sub(K.conv2_dense(frame, K.gaussian5(), ar), frame)
    assert np.array_equal(np.stack(rows), want)
    rep = g.report()
    assert sum(d["buffered_lines"] for d in rep) == 4 + 2
    assert "blur" in format_report(rep)


def test_counts_are_per_sample(rng):
    c = Counter()
    ar = HalfArith(c)
    frame = half_frame(rng, 16, 16)
    stream_conv(PixelStream.from_frame(frame), K.gaussian5(), ar).to_frame()
    assert c["adders"] == 8 * 256
    assert c["easy_mults"] == 8 * 256 and c["true_mults"] == 2 * 256
