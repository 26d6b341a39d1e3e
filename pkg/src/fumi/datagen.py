"""Synthetic scenes: spectral libraries, Dirichlet abundances and degradations."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    BandNoise,
    BlurOperator,
    DegradationModel,
    Downsampler,
    SpectralImage,
    apply_blur,
    degrade,
    downsample,
    mix,
    snr_to_variance,
)

__all__ = [
    "SpectralLibrary",
    "SceneSpec",
    "Scene",
    "load_library",
    "save_library",
    "synth_library",
    "sample_scene",
    "landsat_like_response",
    "pan_response",
    "gaussian_kernel",
    "default_blur",
    "make_degradation",
    "simulate",
    "LANDSAT_WINDOWS_NM",
]

WAVELENGTH_RANGE_NM = (383.0, 2508.0)

# Seven disjoint windows modelled on the Landsat 8 OLI reflective bands
# (coastal trimmed at 450 nm so it does not overlap blue).
LANDSAT_WINDOWS_NM = (
    (433.0, 450.0),
    (450.0, 515.0),
    (525.0, 600.0),
    (630.0, 680.0),
    (845.0, 885.0),
    (1560.0, 1660.0),
    (2100.0, 2300.0),
)


@dataclass
class SpectralLibrary:
    names: list
    spectra: np.ndarray
    wavelengths: np.ndarray

    def __post_init__(self):
        self.spectra = np.asarray(self.spectra, dtype=float)
        self.wavelengths = np.asarray(self.wavelengths, dtype=float)
        if self.spectra.ndim != 2:
            raise ValueError("library spectra must be a bands x materials matrix")
        if self.spectra.shape != (self.wavelengths.size, len(self.names)):
            raise ValueError("library dimensions disagree with names/wavelengths")
        if np.any(np.diff(self.wavelengths) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        bad = np.argwhere((self.spectra < 0) | (self.spectra > 1) | ~np.isfinite(self.spectra))
        if bad.size:
            r, c = bad[0]
            raise ValueError(
                f"reflectance {self.spectra[r, c]!r} out of [0, 1] at row {r + 1}, "
                f"column {self.names[c]!r}"
            )

    @property
    def n_bands(self) -> int:
        return self.spectra.shape[0]

    @property
    def size(self) -> int:
        return self.spectra.shape[1]


def load_library(path) -> SpectralLibrary:
    """Read a library CSV: header ``wavelength,<name>,...`` then one row per band."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header and at least one band row")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise ValueError(f"{path}: header needs a wavelength column and a material")
    names = header[1:]
    wl, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(cell) for cell in row]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        for name, v in zip(names, values[1:]):
            if not 0.0 <= v <= 1.0:
                raise ValueError(
                    f"{path}:{lineno}: reflectance {v!r} for {name!r} out of [0, 1]"
                )
        wl.append(values[0])
        data.append(values[1:])
    return SpectralLibrary(names, np.array(data), np.array(wl))


def save_library(lib: SpectralLibrary, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["wavelength", *lib.names])
        for wl, row in zip(lib.wavelengths, lib.spectra):
            w.writerow([repr(float(wl)), *(repr(float(v)) for v in row)])


def synth_library(n_bands: int = 224, count: int = 20, seed=0) -> SpectralLibrary:
    """Smooth random reflectance spectra standing in for a measured library.

    Each spectrum is a sum of positive Gaussian bumps over a gentle slope,
    min-max rescaled onto ``[0.05, 0.95]``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    wl = np.linspace(*WAVELENGTH_RANGE_NM, n_bands)
    x = np.linspace(0.0, 1.0, n_bands)
    spectra = np.empty((n_bands, count))
    for k in range(count):
        n_bumps = rng.integers(3, 9)
        centers = rng.uniform(-0.1, 1.1, n_bumps)
        widths = rng.uniform(0.03, 0.25, n_bumps)
        amps = rng.uniform(0.2, 1.0, n_bumps)
        s = rng.uniform(-0.5, 0.5) * x
        s = s + (amps * np.exp(-0.5 * ((x[:, None] - centers) / widths) ** 2)).sum(axis=1)
        s = (s - s.min()) / (s.max() - s.min())
        spectra[:, k] = np.clip(0.05 + 0.9 * s, 0.05, 0.95)
    return SpectralLibrary([f"synth_{k:03d}" for k in range(count)], spectra, wl)


@dataclass
class SceneSpec:
    n_rows: int = 100
    n_cols: int = 100
    p: int = 5
    dirichlet_alpha: np.ndarray | float = 1.0
    seed: int = 0

    def alpha(self) -> np.ndarray:
        a = np.broadcast_to(np.asarray(self.dirichlet_alpha, dtype=float), (self.p,)).copy()
        if np.any(a <= 0):
            raise ValueError("Dirichlet concentration must be > 0")
        return a


def sample_scene(spec: SceneSpec, lib: SpectralLibrary, rng=None):
    """Draw ``(M_ref, A_ref, X_ref)`` with Dirichlet abundances."""
    if spec.p > lib.size:
        raise ValueError(f"p={spec.p} exceeds the library size {lib.size}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    idx = np.sort(rng.choice(lib.size, size=spec.p, replace=False))
    M = lib.spectra[:, idx].copy()
    A = rng.dirichlet(spec.alpha(), size=spec.n_rows * spec.n_cols).T.copy()
    return M, A, mix(M, A, spec.n_rows, spec.n_cols)


def _window_bounds(n_bands: int):
    lo, hi = WAVELENGTH_RANGE_NM
    scale = n_bands / (hi - lo)
    bounds = []
    for a, b in LANDSAT_WINDOWS_NM:
        start = int(np.floor((a - lo) * scale))
        stop = max(int(np.ceil((b - lo) * scale)), start + 1)
        bounds.append((start, stop))
    return bounds


def landsat_like_response(n_bands_hs: int, n_bands: int = 7) -> np.ndarray:
    """Boxcar multispectral response, each row normalised to sum to one.

    For seven bands the windows follow :data:`LANDSAT_WINDOWS_NM` (band index
    mapped linearly onto 383-2508 nm).  Other band counts, or HS grids too
    coarse to keep those windows disjoint, split the band axis into equal
    contiguous windows.
    """
    if not 1 <= n_bands <= n_bands_hs:
        raise ValueError("need 1 <= n_bands <= number of HS bands")
    bounds = _window_bounds(n_bands_hs) if n_bands == 7 else None
    if bounds is not None:
        ends = [b for _, b in bounds]
        starts = [a for a, _ in bounds]
        if any(s < e for s, e in zip(starts[1:], ends[:-1])) or ends[-1] > n_bands_hs:
            bounds = None
    if bounds is None:
        edges = np.linspace(0, n_bands_hs, n_bands + 1).round().astype(int)
        bounds = list(zip(edges[:-1], edges[1:]))
    R = np.zeros((n_bands, n_bands_hs))
    for i, (a, b) in enumerate(bounds):
        R[i, a:b] = 1.0 / (b - a)
    return R


def pan_response(n_bands_hs: int, n_avg: int = 50) -> np.ndarray:
    if not 1 <= n_avg <= n_bands_hs:
        raise ValueError("need 1 <= n_avg <= number of HS bands")
    R = np.zeros((1, n_bands_hs))
    R[0, :n_avg] = 1.0 / n_avg
    return R


def gaussian_kernel(sigma: float = 1.7, size: int = 7) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel size must be a positive odd integer")
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def default_blur(n_rows: int, n_cols: int, sigma: float = 1.7, size: int = 7) -> BlurOperator:
    return BlurOperator(gaussian_kernel(sigma, size), n_rows, n_cols)


def make_degradation(X: SpectralImage, blur: BlurOperator, d: int, R: np.ndarray,
                     snr_hs: float = 50.0, snr_ms: float = 50.0,
                     draw_noise: bool = True) -> DegradationModel:
    """Degradation model whose band noise variances hit the requested SNRs."""
    S = Downsampler(d)
    clean_h = downsample(S, apply_blur(blur, X)).data
    clean_m = R @ X.data
    return DegradationModel(blur, S, R, snr_to_variance(clean_h, snr_hs),
                            snr_to_variance(clean_m, snr_ms), draw_noise=draw_noise)


@dataclass
class Scene:
    """Reference scene plus its simulated observations."""

    M_ref: np.ndarray | None
    A_ref: np.ndarray | None
    X_ref: SpectralImage
    Y_H: SpectralImage
    Y_M: SpectralImage
    model: DegradationModel
    meta: dict = field(default_factory=dict)


def simulate(spec: SceneSpec, lib: SpectralLibrary, *, sigma: float = 1.7, size: int = 7,
             d: int = 4, response: np.ndarray | None = None, snr_hs: float = 50.0,
             snr_ms: float = 50.0, draw_noise: bool = True) -> Scene:
    """Full synthetic pipeline for one seed.

    The seed is split into independent streams for the scene draw and the
    observation noise.
    """
    scene_ss, noise_ss = np.random.SeedSequence(spec.seed).spawn(2)
    M, A, X = sample_scene(spec, lib, np.random.default_rng(scene_ss))
    if response is None:
        response = landsat_like_response(lib.n_bands, 7)
    blur = default_blur(spec.n_rows, spec.n_cols, sigma, size)
    model = make_degradation(X, blur, d, response, snr_hs, snr_ms, draw_noise)
    Y_H, Y_M = degrade(X, model, np.random.default_rng(noise_ss))
    meta = {"seed": int(spec.seed), "sigma": float(sigma), "size": int(size), "d": int(d),
            "snr_hs": float(snr_hs), "snr_ms": float(snr_ms), "noise": bool(draw_noise)}
    return Scene(M, A, X, Y_H, Y_M, model, meta)
