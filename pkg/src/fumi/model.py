"""Image containers and the linear degradation operators.

A multi-band image is held as a ``bands x pixels`` matrix.  Pixels are stacked
column-major: pixel ``j`` sits at ``row = j % n_rows`` and ``col = j // n_rows``.
All spatial operators below act on the right of that matrix (row-wise on the
band images), spectral operators act on the left.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpectralImage",
    "BlurOperator",
    "Downsampler",
    "BandNoise",
    "DegradationModel",
    "mix",
    "apply_spectral_response",
    "apply_blur",
    "apply_blur_adjoint",
    "downsample",
    "upsample_zero",
    "degrade",
    "snr_to_variance",
    "as_band_images",
    "from_band_images",
]


def as_band_images(X: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    """View a ``bands x pixels`` matrix as ``(bands, n_cols, n_rows)``.

    The returned array is the *transposed* band image (columns first), which is
    what column-major stacking gives for free.  It is a view when ``X`` is
    C-contiguous.
    """
    return X.reshape(X.shape[0], n_cols, n_rows)


def from_band_images(cube_t: np.ndarray) -> np.ndarray:
    """Inverse of :func:`as_band_images`."""
    return cube_t.reshape(cube_t.shape[0], -1)


@dataclass
class SpectralImage:
    """A ``bands x pixels`` image with its spatial shape."""

    data: np.ndarray
    n_rows: int
    n_cols: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("SpectralImage data must be 2-D (bands x pixels)")
        if self.data.shape[1] != self.n_rows * self.n_cols:
            raise ValueError(
                f"pixel count {self.data.shape[1]} != {self.n_rows} x {self.n_cols}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("SpectralImage contains non-finite entries")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def pixels(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def cube(self) -> np.ndarray:
        """Return the image as a ``(bands, n_rows, n_cols)`` array."""
        return as_band_images(self.data, self.n_rows, self.n_cols).transpose(0, 2, 1)

    @classmethod
    def from_cube(cls, cube: np.ndarray) -> "SpectralImage":
        cube = np.asarray(cube, dtype=float)
        b, r, c = cube.shape
        data = np.ascontiguousarray(cube.transpose(0, 2, 1)).reshape(b, r * c)
        return cls(data, r, c)

    def with_data(self, data: np.ndarray) -> "SpectralImage":
        return SpectralImage(data, self.n_rows, self.n_cols)


def _centered_pad(kernel: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    kr, kc = kernel.shape
    if kr > n_rows or kc > n_cols:
        raise ValueError("kernel larger than image")
    padded = np.zeros((n_rows, n_cols))
    padded[:kr, :kc] = kernel
    return np.roll(padded, (-(kr // 2), -(kc // 2)), axis=(0, 1))


@dataclass
class BlurOperator:
    """Cyclic 2-D convolution with a fixed kernel, stored by its spectrum.

    ``spectrum`` is the 2-D DFT of the kernel zero-padded to the image size and
    rolled so the kernel centre sits at index ``(0, 0)``; it holds the
    eigenvalues of the circulant blur matrix.
    """

    kernel: np.ndarray
    n_rows: int
    n_cols: int
    spectrum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        if k.ndim != 2:
            raise ValueError("blur kernel must be 2-D")
        total = k.sum()
        if not np.isclose(total, 1.0, rtol=0, atol=1e-12):
            raise ValueError(f"blur kernel must sum to 1 (got {total!r})")
        self.kernel = k
        self.spectrum = np.fft.fft2(_centered_pad(k, self.n_rows, self.n_cols))

    @classmethod
    def identity(cls, n_rows: int, n_cols: int) -> "BlurOperator":
        return cls(np.ones((1, 1)), n_rows, n_cols)

    @property
    def spectrum_t(self) -> np.ndarray:
        """Spectrum laid out for the ``(n_cols, n_rows)`` band-image view."""
        return self.spectrum.T


@dataclass(frozen=True)
class Downsampler:
    """Uniform decimation by ``d`` along both axes, keeping one phase."""

    d: int = 1
    phase: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("decimation factor must be an integer >= 1")
        if not all(0 <= p < self.d for p in self.phase):
            raise ValueError("phase offsets must lie in [0, d)")

    def check(self, n_rows: int, n_cols: int) -> None:
        if n_rows % self.d or n_cols % self.d:
            raise ValueError(
                f"image shape {n_rows}x{n_cols} not divisible by d={self.d}"
            )

    def coarse_shape(self, n_rows: int, n_cols: int) -> tuple[int, int]:
        self.check(n_rows, n_cols)
        return n_rows // self.d, n_cols // self.d


@dataclass
class BandNoise:
    """Per-band noise variances (diagonal row covariance)."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if v.ndim != 1:
            raise ValueError("variances must be a vector")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("noise variances must be finite and > 0")
        self.variances = v


@dataclass
class DegradationModel:
    """Everything needed to map a reference image to its two observations.

    ``noise_hs`` / ``noise_ms`` give the band variances used both to draw the
    noise and to weight the likelihood.  ``draw_noise=False`` keeps the
    variances as weights but generates noiseless observations.
    """

    blur: BlurOperator
    downsampler: Downsampler
    response: np.ndarray
    noise_hs: BandNoise
    noise_ms: BandNoise
    draw_noise: bool = True

    def __post_init__(self):
        R = np.asarray(self.response, dtype=float)
        if R.ndim != 2:
            raise ValueError("spectral response must be a matrix")
        if np.any(R < 0):
            raise ValueError("spectral response weights must be nonnegative")
        if np.any(~(R > 0).any(axis=1)):
            raise ValueError("every spectral response row needs a nonzero weight")
        self.response = R
        self.downsampler.check(self.blur.n_rows, self.blur.n_cols)
        if self.noise_hs.variances.size != R.shape[1]:
            raise ValueError("HS noise vector length must equal the HS band count")
        if self.noise_ms.variances.size != R.shape[0]:
            raise ValueError("MS noise vector length must equal the MS band count")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.blur.n_rows, self.blur.n_cols)


# --------------------------------------------------------------------------
# Array-level operators (bands x pixels in, bands x pixels out)
# --------------------------------------------------------------------------

def blur_rows(X: np.ndarray, spectrum: np.ndarray, shape: tuple[int, int],
              adjoint: bool = False) -> np.ndarray:
    """Circularly convolve every row of ``X`` (a stacked band image)."""
    n_rows, n_cols = shape
    cube_t = as_band_images(np.ascontiguousarray(X), n_rows, n_cols)
    spec_t = spectrum.T
    if adjoint:
        spec_t = spec_t.conj()
    out = np.fft.ifft2(np.fft.fft2(cube_t) * spec_t)
    imag = np.abs(out.imag).max(initial=0.0)
    scale = max(np.abs(out.real).max(initial=0.0), 1.0)
    if imag > 1e-10 * scale:
        raise FloatingPointError(f"blur left an imaginary residue of {imag:g}")
    return from_band_images(np.ascontiguousarray(out.real))


def downsample_rows(X: np.ndarray, shape: tuple[int, int], d: int,
                    phase: tuple[int, int] = (0, 0)) -> np.ndarray:
    n_rows, n_cols = shape
    if n_rows % d or n_cols % d:
        raise ValueError(f"image shape {n_rows}x{n_cols} not divisible by d={d}")
    cube_t = as_band_images(X, n_rows, n_cols)
    return from_band_images(np.ascontiguousarray(cube_t[:, phase[1]::d, phase[0]::d]))


def upsample_zero_rows(Y: np.ndarray, shape: tuple[int, int], d: int,
                       phase: tuple[int, int] = (0, 0)) -> np.ndarray:
    n_rows, n_cols = shape
    if n_rows % d or n_cols % d:
        raise ValueError(f"image shape {n_rows}x{n_cols} not divisible by d={d}")
    m_rows, m_cols = n_rows // d, n_cols // d
    if Y.shape[1] != m_rows * m_cols:
        raise ValueError("coarse image has the wrong pixel count")
    out = np.zeros((Y.shape[0], n_cols, n_rows), dtype=Y.dtype)
    out[:, phase[1]::d, phase[0]::d] = as_band_images(Y, m_rows, m_cols)
    return from_band_images(out)


# --------------------------------------------------------------------------
# SpectralImage-level operations
# --------------------------------------------------------------------------

def mix(M: np.ndarray, A: np.ndarray, n_rows: int | None = None,
        n_cols: int | None = None) -> SpectralImage:
    """Linear mixture ``X = M A``.

    Without a spatial shape the image is laid out as a single row of pixels.
    """
    M = np.asarray(M, dtype=float)
    A = np.asarray(A, dtype=float)
    if M.ndim != 2 or A.ndim != 2 or M.shape[1] != A.shape[0]:
        raise ValueError(f"cannot mix {M.shape} endmembers with {A.shape} abundances")
    if n_rows is None:
        n_rows, n_cols = 1, A.shape[1]
    elif n_cols is None:
        n_cols = A.shape[1] // n_rows
    return SpectralImage(M @ A, n_rows, n_cols)


def apply_spectral_response(R: np.ndarray, X: SpectralImage) -> SpectralImage:
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[1] != X.bands:
        raise ValueError(f"response with {R.shape} cannot act on {X.bands} bands")
    return X.with_data(R @ X.data)


def apply_blur(blur: BlurOperator, X: SpectralImage) -> SpectralImage:
    if (blur.n_rows, blur.n_cols) != X.shape:
        raise ValueError(f"blur built for {(blur.n_rows, blur.n_cols)}, image is {X.shape}")
    return X.with_data(blur_rows(X.data, blur.spectrum, X.shape))


def apply_blur_adjoint(blur: BlurOperator, X: SpectralImage) -> SpectralImage:
    if (blur.n_rows, blur.n_cols) != X.shape:
        raise ValueError(f"blur built for {(blur.n_rows, blur.n_cols)}, image is {X.shape}")
    return X.with_data(blur_rows(X.data, blur.spectrum, X.shape, adjoint=True))


def downsample(S: Downsampler, X: SpectralImage) -> SpectralImage:
    m_rows, m_cols = S.coarse_shape(*X.shape)
    return SpectralImage(downsample_rows(X.data, X.shape, S.d, S.phase), m_rows, m_cols)


def upsample_zero(S: Downsampler, Y: SpectralImage) -> SpectralImage:
    """Zero-insertion upsampling, the exact adjoint of :func:`downsample`."""
    shape = (Y.n_rows * S.d, Y.n_cols * S.d)
    return SpectralImage(upsample_zero_rows(Y.data, shape, S.d, S.phase), *shape)


def snr_to_variance(signal: np.ndarray, snr_db) -> BandNoise:
    """Per-entry noise variance giving the requested band SNR.

    ``variance_i = ||signal_i||^2 / (count * 10**(snr_i / 10))`` so that the
    expected noise energy of band ``i`` is the band energy over the SNR ratio.
    """
    signal = np.atleast_2d(np.asarray(signal, dtype=float))
    snr = np.broadcast_to(np.asarray(snr_db, dtype=float), (signal.shape[0],))
    if not np.all(np.isfinite(snr)):
        raise ValueError("SNR values must be finite")
    energy = np.sum(signal**2, axis=1)
    if np.any(energy <= 0):
        raise ValueError("zero-energy band: SNR undefined")
    return BandNoise(energy / (signal.shape[1] * 10.0 ** (snr / 10.0)))


def degrade(X: SpectralImage, model: DegradationModel,
            rng_seed=None) -> tuple[SpectralImage, SpectralImage]:
    """Return ``(Y_H, Y_M) = (X B S + N_H, R X + N_M)``."""
    if model.shape != X.shape:
        raise ValueError(f"model built for {model.shape}, image is {X.shape}")
    if model.response.shape[1] != X.bands:
        raise ValueError("spectral response does not match the image band count")
    Y_H = downsample(model.downsampler, apply_blur(model.blur, X))
    Y_M = apply_spectral_response(model.response, X)
    if model.draw_noise:
        rng = np.random.default_rng(rng_seed)
        sd_h = np.sqrt(model.noise_hs.variances)[:, None]
        sd_m = np.sqrt(model.noise_ms.variances)[:, None]
        Y_H = Y_H.with_data(Y_H.data + sd_h * rng.standard_normal(Y_H.data.shape))
        Y_M = Y_M.with_data(Y_M.data + sd_m * rng.standard_normal(Y_M.data.shape))
    return Y_H, Y_M
