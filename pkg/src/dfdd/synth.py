"""Thin-lens defocus simulator for differentially focused image pairs.

A front-parallel textured plane at depth ``Z`` is seen by two sensors at
distances ``s1 < s2`` behind a lens of focal length ``f`` and aperture ``A``.
Each sensor's blur circle has radius ``(A/2) s |1/f - 1/s - 1/Z|`` and the
point-spread function is Gaussian with sigma equal to half that radius.  The
texture is fixed in pixel coordinates, so magnification changes are ignored.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import read_pgm, write_pgm

DEPTH_START = 0.24
DEPTH_STOP = 1.36
DEPTH_STEP = 0.02


def sensor_distance(f: float, z_focus: float) -> float:
    """Lens-to-sensor distance that brings depth ``z_focus`` into focus."""
    return 1.0 / (1.0 / f - 1.0 / z_focus)


@dataclass(frozen=True)
class OpticalConfig:
    focal_length: float = 8e-3
    aperture: float = 5e-3
    s1: float = sensor_distance(8e-3, 0.9)
    s2: float = sensor_distance(8e-3, 0.55)
    pixel_pitch: float = 3.6e-6
    width: int = 96
    height: int = 72
    noise_sigma: float = 0.0
    field_curvature: float = 0.0     # change of 1/s at the frame corner, 1/m

    def __post_init__(self):
        if not self.s2 > self.s1:
            raise ValueError("sensor distances must satisfy s2 > s1")
        if min(self.focal_length, self.aperture, self.pixel_pitch) <= 0:
            raise ValueError("optical constants must be positive")
        if self.s1 <= self.focal_length:
            raise ValueError("sensors must sit beyond the focal length")

    def sensor(self, k: int) -> float:
        if k not in (1, 2):
            raise ValueError("sensor index is 1 or 2")
        return self.s1 if k == 1 else self.s2

    def focus_depth(self, k: int) -> float:
        s = self.sensor(k)
        return 1.0 / (1.0 / self.focal_length - 1.0 / s)

    @property
    def crossover_depth(self) -> float:
        """Depth at which both sensors see the same blur."""
        return 1.0 / crossover_inverse(self)


def crossover_inverse(cfg: OpticalConfig) -> float:
    """1/Z where the two blur radii are equal (between the focus depths)."""
    k1, k2 = cfg.s1, cfg.s2
    r1 = 1 / cfg.focal_length - 1 / cfg.s1
    r2 = 1 / cfg.focal_length - 1 / cfg.s2
    # k1 (r1 - u) = k2 (u - r2)
    return (k1 * r1 + k2 * r2) / (k1 + k2)


def blur_sigma(z, sensor: int, cfg: OpticalConfig, curvature=0.0):
    """Gaussian PSF sigma in pixels; ``curvature`` shifts 1/s per pixel."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("depth must be positive")
    s = cfg.sensor(sensor)
    rho = 1 / cfg.focal_length - 1 / s + curvature
    r = 0.5 * cfg.aperture * s * np.abs(rho - 1 / z) / cfg.pixel_pitch
    return 0.5 * r


def curvature_map(cfg: OpticalConfig) -> np.ndarray:
    """Per-pixel 1/s shift, quadratic in radius from the frame centre."""
    if cfg.field_curvature == 0:
        return np.zeros((cfg.height, cfg.width))
    y, x = np.mgrid[0:cfg.height, 0:cfg.width]
    cy, cx = (cfg.height - 1) / 2, (cfg.width - 1) / 2
    r2 = ((x - cx) ** 2 + (y - cy) ** 2) / (cx * cx + cy * cy)
    return cfg.field_curvature * r2


def blur_image(texture: np.ndarray, sigma) -> np.ndarray:
    """Blur with a constant sigma, or per pixel by interpolating a sigma ladder."""
    t = np.asarray(texture, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim == 0 or np.ptp(sigma) == 0:
        return gaussian_filter(t, float(sigma.flat[0]), mode="reflect")
    levels = np.linspace(sigma.min(), sigma.max(), 17)
    stack = np.stack([gaussian_filter(t, float(s), mode="reflect") for s in levels])
    pos = (sigma - levels[0]) / (levels[1] - levels[0])
    lo = np.clip(np.floor(pos).astype(int), 0, len(levels) - 2)
    frac = pos - lo
    yy, xx = np.indices(t.shape)
    return (1 - frac) * stack[lo, yy, xx] + frac * stack[lo + 1, yy, xx]


@dataclass
class SceneSpec:
    texture: np.ndarray
    depth: float | np.ndarray
    seed: int = 0

    def __post_init__(self):
        if np.any(np.asarray(self.depth) <= 0):
            raise ValueError("depth must be positive")


def quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_pair(scene: SceneSpec, cfg: OpticalConfig, quantized: bool = True,
                sigmas: tuple | None = None):
    """Render (i1, i2) for a scene; ``sigmas`` overrides the per-sensor blur."""
    tex = np.asarray(scene.texture, dtype=np.float64)
    if tex.shape != (cfg.height, cfg.width):
        raise ValueError(f"texture shape {tex.shape} does not match the sensor")
    curv = curvature_map(cfg)
    rng = np.random.default_rng(scene.seed)
    out = []
    for k in (1, 2):
        if sigmas is not None:
            sig = sigmas[k - 1]
        elif cfg.field_curvature == 0 and np.ndim(scene.depth) == 0:
            sig = float(blur_sigma(scene.depth, k, cfg))
        else:
            sig = blur_sigma(np.broadcast_to(scene.depth, tex.shape), k, cfg, curv)
        img = blur_image(tex, sig)
        if not quantized:
            out.append(img)
            continue
        if cfg.noise_sigma > 0:
            img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
        out.append(quantize(img))
    return out[0], out[1]


def make_texture(width: int, height: int, seed: int = 0, square: int = 6,
                 noise_sigma: float = 1.0) -> np.ndarray:
    """Checkerboard blended with smoothed noise, in [16, 240]."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width]
    board = ((x // square + y // square) % 2).astype(np.float64)
    noise = gaussian_filter(rng.standard_normal((height, width)), noise_sigma, mode="wrap")
    noise /= noise.std() or 1.0
    t = 0.5 * board + 0.25 * np.tanh(0.75 * noise) + 0.25
    return 16 + 224 * np.clip(t, 0, 1)


def depth_ladder(start: float = DEPTH_START, stop: float = DEPTH_STOP,
                 step: float = DEPTH_STEP) -> np.ndarray:
    """Depths in the half-open interval [start, stop) at ``step``."""
    if step <= 0 or stop < start:
        raise ValueError("depth range and step are inconsistent")
    n = max(1, int(np.ceil((stop - start) / step - 1e-9)))
    return np.round(start + step * np.arange(n), 10)


@dataclass
class Sample:
    i1: np.ndarray
    i2: np.ndarray
    z_true: float
    seed: int
    index: int = 0


@dataclass
class Dataset:
    samples: list[Sample]
    cfg: OpticalConfig = field(default_factory=OpticalConfig)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def depths(self) -> np.ndarray:
        return np.array([s.z_true for s in self.samples])

    def digest(self) -> str:
        h = hashlib.sha256()
        for s in self.samples:
            h.update(s.i1.tobytes())
            h.update(s.i2.tobytes())
            h.update(repr(s.z_true).encode())
        return h.hexdigest()


def make_dataset(cfg: OpticalConfig | None = None, depths: Sequence[float] | None = None,
                 texture: np.ndarray | None = None, seed: int = 0) -> Dataset:
    """Image pairs of one textured plane swept through ``depths``."""
    cfg = cfg or OpticalConfig()
    depths = depth_ladder() if depths is None else np.asarray(depths, dtype=np.float64)
    tex = make_texture(cfg.width, cfg.height, seed) if texture is None else texture
    samples = []
    for i, z in enumerate(depths):
        s = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        i1, i2 = render_pair(SceneSpec(tex, float(z), s), cfg)
        samples.append(Sample(i1, i2, float(z), s, i))
    return Dataset(samples, cfg)


MANIFEST = "manifest.csv"
OPTICS = "optics.json"
MANIFEST_FIELDS = ["index", "z_true_m", "seed", "i1", "i2"]


def save_dataset(ds: Dataset, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / MANIFEST, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(MANIFEST_FIELDS)
        for s in ds.samples:
            n1, n2 = f"pair_{s.index:03d}_1.pgm", f"pair_{s.index:03d}_2.pgm"
            write_pgm(out / n1, s.i1)
            write_pgm(out / n2, s.i2)
            wr.writerow([s.index, f"{s.z_true:.4f}", s.seed, n1, n2])
    (out / OPTICS).write_text(json.dumps(asdict(ds.cfg), indent=2, sort_keys=True) + "\n")
    return out / MANIFEST


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Load a dataset directory (or its manifest file)."""
    p = Path(path)
    manifest = p / MANIFEST if p.is_dir() else p
    if not manifest.exists():
        raise FileNotFoundError(f"no dataset manifest at {manifest}")
    samples = []
    with open(manifest, newline="") as f:
        for row in csv.DictReader(f):
            missing = [k for k in MANIFEST_FIELDS if k not in row]
            if missing:
                raise ValueError(f"manifest missing columns {missing}")
            samples.append(Sample(read_pgm(manifest.parent / row["i1"]),
                                  read_pgm(manifest.parent / row["i2"]),
                                  float(row["z_true_m"]), int(row["seed"]), int(row["index"])))
    if not samples:
        raise ValueError("empty dataset")
    optics = manifest.parent / OPTICS
    cfg = OpticalConfig(**json.loads(optics.read_text())) if optics.exists() else OpticalConfig()
    return Dataset(samples, cfg)


# ------------------------------------------------------- physical estimates

def bandpass_gain(n: int) -> float:
    """Ratio of the scale-``n`` band-pass output to the Laplacian, on a paraboloid."""
    from .arith import WideArith
    from .reference import scale_prefix

    size = 16 << n
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    para = (x - size / 2) ** 2 + (y - size / 2) ** 2
    g_lap = scale_prefix(para, np.zeros_like(para), n + 1, WideArith())[n][0]
    return float(g_lap[size // 2, size // 2]) / 4.0


def physical_init(cfg: OpticalConfig, n_scales: int) -> tuple[list[float], list[float]]:
    """First-order (a, b) per scale for the Z = aL / (b aL - D) model.

    For Gaussian blur ``dI/d(sigma^2) = lap(I)/2``, so the half difference is
    ``(sigma1^2 - sigma2^2) lap(I)/4``.  That is linear in 1/Z when both
    sensors share a magnification, which fixes ``a`` and ``b``.
    """
    kappa2 = (cfg.aperture / (4 * cfg.pixel_pitch)) ** 2 * cfg.s1 * cfg.s2
    r1 = 1 / cfg.focal_length - 1 / cfg.s1
    r2 = 1 / cfg.focal_length - 1 / cfg.s2
    b = 0.5 * (r1 + r2)
    a = [kappa2 * (r1 - r2) / (2 * bandpass_gain(n)) for n in range(n_scales)]
    return a, [b] * n_scales
