import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfdd.arith import ExactArith, HalfArith, WideArith
from dfdd.numerics import FixedArray
from dfdd.pipeline import (N_ZONES, CalibrationParams, Homography, ParamsError, RadialZones,
                           ZoneTables, apply_homography, cross_terms, default_params,
                           mask_values, radial_params, run_pipeline, sqrt_zones, v_w)
from dfdd.reference import preprocess_dense, reference_pipeline


def params(w=32, h=24, n=2, dxdy=True, **kw):
    return default_params(w, h, [-5.0, -1.4][:n], [1.5, 1.5][:n], n_scales=n,
                          derivatives_enabled=dxdy, **kw)


def pair(rng, h, w):
    return rng.integers(0, 256, (h, w)), rng.integers(0, 256, (h, w))


# ------------------------------------------------------------ parameters

def test_params_round_trip():
    p = params(z_max=2.0, c_thresh=1e-4)
    q = CalibrationParams.from_json(p.to_json())
    assert q == p
    assert p.estimates == 6


def test_params_schema_errors_are_listed():
    d = json.loads(params().to_json())
    d["omega"] = [1, 2]
    d["zones"][3]["r2_max"] = "far"
    with pytest.raises(ParamsError) as e:
        CalibrationParams.from_dict(d)
    assert len(e.value.errors) == 2
    assert any(s.startswith("omega") for s in e.value.errors)
    assert any(s.startswith("zones/3/r2_max") for s in e.value.errors)


def test_params_invariants():
    p = params()
    zones = list(p.zones)
    zones[4], zones[5] = zones[5], zones[4]
    with pytest.raises(ParamsError, match="strictly increasing"):
        CalibrationParams(2, True, tuple(zones))


# ---------------------------------------------------------------- zones

def test_zone_of_centre_and_corner():
    p = params(480, 400)
    assert radial_params(200 * 480 + 240, p, 480, 400)["zone"] == 0
    assert radial_params(0, p, 480, 400)["zone"] == N_ZONES - 1
    assert radial_params(480 * 400 - 1, p, 480, 400)["zone"] == N_ZONES - 1


@pytest.mark.parametrize("w,h", [(480, 400), (96, 72), (33, 17)])
def test_squared_distance_zones_match_sqrt(w, h):
    p = params(w, h)
    assert np.array_equal(RadialZones(p, w, h).frame(), sqrt_zones(w, h))


def test_incremental_pixel_walk_matches_rows():
    p = params(40, 30)
    z = RadialZones(p, 40, 30)
    walk = np.fromiter(z.pixel_zones(), dtype=np.int64).reshape(30, 40)
    assert np.array_equal(walk, RadialZones(p, 40, 30).frame())


# ------------------------------------------------------------ homography

def test_homography_examples():
    img = np.arange(48).reshape(6, 8) * 3
    out = apply_homography(img, Homography.identity())
    assert np.array_equal(out.to_real(), img)
    shifted = apply_homography(img, Homography.from_real((1, 0, 1, 0, 1, 0))).to_real()
    assert np.array_equal(shifted[:, :-1], img[:, 1:])
    ramp = np.tile(np.arange(8), (4, 1))
    half = apply_homography(ramp, Homography.from_real((1, 0, 0.5, 0, 1, 0))).to_real()
    assert np.array_equal(half[:, :-1], ramp[:, :-1] + 0.5)


def test_homography_line_budget():
    img = np.zeros((40, 40), dtype=np.int64)
    with pytest.raises(ValueError, match="homography exceeds buffer"):
        apply_homography(img, Homography.from_real((1, 0, 0, 0, 1, 12)), line_budget=8)


# ------------------------------------------------------------ preprocess

def test_preprocess_examples(rng):
    ar = WideArith()
    p = params(16, 16)
    i = rng.integers(0, 256, (16, 16))
    ave, delta = preprocess_dense(i, i, p, ar)
    assert np.all(delta == 0)
    ave, _ = preprocess_dense(np.full((16, 16), 100), np.zeros((16, 16), dtype=int), p, ar)
    assert np.all(ave == 50 / 256)
    with pytest.raises(ValueError):
        preprocess_dense(np.zeros((4, 4)), np.zeros((4, 6)), p, ar)


# ---------------------------------------------------------- pointwise math

def test_joint_depth_examples():
    ar = ExactArith()
    one = np.array([1], dtype=object)
    vw, ww = cross_terms(ar, [2 * one], [4 * one], [ar.encode(np.array([0.3]))[0]])
    assert vw[0] / ww[0] == 0.5
    vw, ww = cross_terms(ar, [one, 0 * one], [one, one], [1, 1])
    assert vw[0] / ww[0] == 0.5


def test_v_w_with_zero_delta_gives_inverse_b():
    ar = WideArith()
    lap = np.array([0.3, -2.0, 5.0])
    v, w = v_w(ar, lap, np.zeros(3), -4.0, 2.5)
    assert np.allclose(v / w, 1 / 2.5)


def test_mask_rules():
    ar = WideArith()
    p = params(16, 16, c_thresh=1.0, z_min=0.2, z_max=2.0)
    t = ZoneTables.build(p, ar)
    zone = np.zeros(5, dtype=np.int64)
    z = np.array([1.1, 1.1, 5.0, np.nan, np.inf])
    c = np.array([2.0, 0.5, 2.0, 2.0, 2.0])
    depth, _, valid = mask_values(ar, z, c, zone, t)
    assert list(valid) == [True, False, False, False, False]
    assert np.isnan(depth[1])


# ----------------------------------------------------------- whole pipeline

def test_flat_scene_has_zero_confidence():
    p = params(32, 24)
    flat = np.full((24, 32), 90)
    dm = run_pipeline(flat, flat, p)
    assert dm.density == 0.0
    assert np.all(dm.confidence == 0)
    z, c = reference_pipeline(flat, flat, p)
    assert np.all(c == 0)


def test_identical_pair_is_crash_free_and_deterministic(rng):
    p = params(32, 24, z_min=0.1, z_max=0.5)
    i = rng.integers(0, 256, (24, 32))
    a, b = run_pipeline(i, i, p), run_pipeline(i, i, p)
    assert np.array_equal(a.valid, b.valid)
    assert np.array_equal(a.z_raw, b.z_raw, equal_nan=True)
    # in wide numerics Z = 1/b wherever defined, and 1/1.5 lies outside (0.1, 0.5)
    from dfdd.reference import reference_depth
    assert reference_depth(i, i, p).density == 0.0


@pytest.mark.parametrize("n,dxdy", [(1, False), (1, True), (2, False), (2, True)])
def test_streaming_equals_dense_half(n, dxdy, rng):
    p = params(32, 24, n, dxdy, c_thresh=1e-4)
    for _ in range(3):
        i1, i2 = pair(rng, 24, 32)
        dm = run_pipeline(i1, i2, p)
        z, c = reference_pipeline(i1, i2, p, numerics="half")
        ar = HalfArith()
        assert np.array_equal(np.stack([dm.z_raw]), np.stack([ar.decode(z)]), equal_nan=True)
        assert np.array_equal(dm.confidence, ar.decode(c), equal_nan=True)


def test_streaming_equals_dense_with_homography_and_denoise(rng):
    p = params(32, 24, 2, True, homography=(1, 0.01, 0.75, -0.02, 1, 1.25), denoise=True)
    i1, i2 = pair(rng, 24, 32)
    dm = run_pipeline(i1, i2, p)
    z, c = reference_pipeline(i1, i2, p, numerics="half")
    assert np.array_equal(dm.z_raw, HalfArith().decode(z), equal_nan=True)


def test_half_close_to_wide(rng):
    p = params(32, 24)
    i1, i2 = pair(rng, 24, 32)
    zh, ch = reference_pipeline(i1, i2, p, numerics="half")
    zw, cw = reference_pipeline(i1, i2, p, numerics="wide")
    ch = HalfArith().decode(ch)
    big = np.abs(cw) > 1e-2 * np.abs(cw).max()
    close = np.isclose(ch[big], cw[big], rtol=0.05)
    assert close.mean() > 0.95


def test_one_division_per_pixel(rng):
    for n, dxdy in [(1, False), (2, True)]:
        c = Counter()
        i1, i2 = pair(rng, 24, 32)
        run_pipeline(i1, i2, params(32, 24, n, dxdy), counter=c)
        assert c["dividers"] == 32 * 24


def test_single_estimate_is_v_over_w(rng):
    p = params(32, 24, 1, False)
    i1, i2 = pair(rng, 24, 32)
    from dfdd.reference import preprocess_dense, scale_prefix
    ar = WideArith()
    (g_lap, g_delta), = scale_prefix(*preprocess_dense(i1, i2, p, ar), 1, ar)
    v = -5.0 * g_lap
    w = 1.5 * v - g_delta
    z, c = reference_pipeline(i1, i2, p)
    assert np.allclose(z, v / w, rtol=1e-12)
    assert np.allclose(c, v * w / 6, rtol=1e-12)


def test_omega_scale_invariance_wide(rng):
    i1, i2 = pair(rng, 24, 32)
    p = params(32, 24)
    q = CalibrationParams(**{**p.__dict__, "omega": tuple(3 * w for w in p.omega)})
    z1, _ = reference_pipeline(i1, i2, p)
    z2, _ = reference_pipeline(i1, i2, q)
    assert np.allclose(z1, z2, rtol=1e-13)


def test_dims_must_divide_scales(rng):
    i1, i2 = pair(rng, 24, 30)
    with pytest.raises(ValueError):
        run_pipeline(i1, i2, params(30, 24, 2))
