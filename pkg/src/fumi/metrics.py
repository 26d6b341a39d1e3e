"""Fusion and unmixing quality measures."""
from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .model import SpectralImage

log = logging.getLogger(__name__)

__all__ = [
    "FusionReport",
    "UnmixReport",
    "fusion_metrics",
    "unmix_metrics",
    "rsnr",
    "sam",
    "uiqi",
    "ergas",
    "degree_of_distortion",
    "nmse_db",
    "align_endmembers",
    "upsample_baseline",
    "rmse_map",
]

RSNR_CAP_DB = 300.0
NMSE_FLOOR_DB = -300.0


def _arr(X):
    return X.data if isinstance(X, SpectralImage) else np.asarray(X, dtype=float)


@dataclass
class FusionReport:
    rsnr_db: float
    uiqi: float
    sam_deg: float
    ergas: float
    dd: float
    wall_time_s: float = 0.0
    sam_skipped: int = field(default=0, compare=False)

    FIELDS = ("rsnr_db", "uiqi", "sam_deg", "ergas", "dd", "wall_time_s")

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.FIELDS}


@dataclass
class UnmixReport:
    sam_M_deg: float
    nmse_M_db: float
    nmse_A_db: float
    permutation: list

    FIELDS = ("sam_M_deg", "nmse_M_db", "nmse_A_db", "permutation")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["permutation"] = [int(i) for i in self.permutation]
        return {k: d[k] for k in self.FIELDS}


def rsnr(X_hat, X_ref) -> float:
    X_hat, X_ref = _arr(X_hat), _arr(X_ref)
    err = np.sum((X_hat - X_ref) ** 2)
    sig = np.sum(X_ref**2)
    if err == 0:
        return RSNR_CAP_DB
    return float(min(10 * np.log10(sig / err), RSNR_CAP_DB))


def _angles_deg(U, W):
    nu = np.linalg.norm(U, axis=0)
    nw = np.linalg.norm(W, axis=0)
    ok = (nu > 0) & (nw > 0)
    cos = np.sum(U[:, ok] * W[:, ok], axis=0) / (nu[ok] * nw[ok])
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))), int(np.count_nonzero(~ok))


def sam(X_hat, X_ref) -> tuple[float, int]:
    """Mean spectral angle (degrees) and the number of zero-norm pixels skipped."""
    ang, skipped = _angles_deg(_arr(X_hat), _arr(X_ref))
    if skipped:
        log.warning("SAM skipped %d zero-norm pixels", skipped)
    return (float(ang.mean()) if ang.size else 0.0), skipped


def uiqi(X_hat, X_ref) -> float:
    """Universal image quality index, one global window per band, band-averaged."""
    X_hat, X_ref = _arr(X_hat), _arr(X_ref)
    mx = X_ref.mean(axis=1)
    my = X_hat.mean(axis=1)
    vx = X_ref.var(axis=1)
    vy = X_hat.var(axis=1)
    cxy = np.mean((X_ref - mx[:, None]) * (X_hat - my[:, None]), axis=1)
    num = 4 * cxy * mx * my
    den = (vx + vy) * (mx**2 + my**2)
    q = np.empty_like(num)
    ok = den > 0
    q[ok] = num[ok] / den[ok]
    # degenerate bands (constant or zero-mean): 1 only for identical bands
    same = np.all(X_hat == X_ref, axis=1)
    q[~ok] = np.where(same[~ok], 1.0, 0.0)
    return float(q.mean())


def ergas(X_hat, X_ref, d: float) -> float:
    X_hat, X_ref = _arr(X_hat), _arr(X_ref)
    rmse = np.sqrt(np.mean((X_hat - X_ref) ** 2, axis=1))
    means = X_ref.mean(axis=1)
    return float(100.0 / d * np.sqrt(np.mean((rmse / means) ** 2)))


def degree_of_distortion(X_hat, X_ref) -> float:
    X_hat, X_ref = _arr(X_hat), _arr(X_ref)
    return float(np.abs(X_hat - X_ref).sum() / X_ref.size)


def fusion_metrics(X_hat, X_ref, d: float, wall_time_s: float = 0.0) -> FusionReport:
    X_hat, X_ref = _arr(X_hat), _arr(X_ref)
    if X_hat.shape != X_ref.shape:
        raise ValueError(f"shape mismatch {X_hat.shape} vs {X_ref.shape}")
    s, skipped = sam(X_hat, X_ref)
    return FusionReport(
        rsnr_db=rsnr(X_hat, X_ref),
        uiqi=uiqi(X_hat, X_ref),
        sam_deg=s,
        ergas=ergas(X_hat, X_ref, d),
        dd=degree_of_distortion(X_hat, X_ref),
        wall_time_s=float(wall_time_s),
        sam_skipped=skipped,
    )


def nmse_db(est, ref) -> float:
    est, ref = np.asarray(est, dtype=float), np.asarray(ref, dtype=float)
    err = np.sum((est - ref) ** 2)
    if err == 0:
        return NMSE_FLOOR_DB
    return float(max(10 * np.log10(err / np.sum(ref**2)), NMSE_FLOOR_DB))


def _sam_matrix(M_hat, M_ref):
    nh = np.linalg.norm(M_hat, axis=0)
    nr = np.linalg.norm(M_ref, axis=0)
    cos = (M_ref.T @ M_hat) / np.outer(nr, nh)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def align_endmembers(M_hat, M_ref, method: str = "auto") -> np.ndarray:
    """Permutation ``perm`` such that ``M_hat[:, perm]`` lines up with ``M_ref``.

    ``"exhaustive"`` minimises the summed spectral angle over all ``p!``
    pairings; ``"greedy"`` repeatedly takes the smallest remaining angle.
    ``"auto"`` is exhaustive up to ``p = 8``.
    """
    cost = _sam_matrix(np.asarray(M_hat, float), np.asarray(M_ref, float))
    p = cost.shape[0]
    if method == "auto":
        method = "exhaustive" if p <= 8 else "greedy"
    if method == "exhaustive":
        best, best_perm = np.inf, None
        rows = np.arange(p)
        for perm in itertools.permutations(range(p)):
            c = cost[rows, perm].sum()
            if c < best:
                best, best_perm = c, perm
        return np.array(best_perm)
    if method != "greedy":
        raise ValueError(f"unknown alignment method {method!r}")
    perm = np.full(p, -1)
    work = cost.copy()
    for _ in range(p):
        i, j = np.unravel_index(np.argmin(work), work.shape)
        perm[i] = j
        work[i, :] = np.inf
        work[:, j] = np.inf
    return perm


def unmix_metrics(M_hat, A_hat, M_ref, A_ref, method: str = "auto") -> UnmixReport:
    M_hat, A_hat = np.asarray(M_hat, float), np.asarray(A_hat, float)
    M_ref, A_ref = np.asarray(M_ref, float), np.asarray(A_ref, float)
    if M_hat.shape[1] != M_ref.shape[1] or A_hat.shape[0] != A_ref.shape[0]:
        raise ValueError("endmember counts differ between estimate and reference")
    perm = align_endmembers(M_hat, M_ref, method)
    Mh, Ah = M_hat[:, perm], A_hat[perm]
    ang, _ = _angles_deg(Mh, M_ref)
    return UnmixReport(
        sam_M_deg=float(ang.mean()),
        nmse_M_db=nmse_db(Mh, M_ref),
        nmse_A_db=nmse_db(Ah, A_ref),
        permutation=[int(i) for i in perm],
    )


def upsample_baseline(Y_H: SpectralImage, d: int, method: str = "bicubic") -> SpectralImage:
    """Interpolate the HS image back to the fine grid (no fusion).

    Coarse sample ``(i, j)`` sits at fine position ``(i*d, j*d)``, matching the
    zero-phase decimation.  ``"nearest"`` replicates each sample over its
    ``d x d`` block, ``"bicubic"`` uses periodic cubic splines.
    """
    cube = Y_H.cube()
    b, mr, mc = cube.shape
    n_rows, n_cols = mr * d, mc * d
    if method == "nearest":
        up = np.repeat(np.repeat(cube, d, axis=1), d, axis=2)
    elif method == "bicubic":
        rr, cc = np.meshgrid(np.arange(n_rows) / d, np.arange(n_cols) / d, indexing="ij")
        up = np.stack([
            ndimage.map_coordinates(band, [rr, cc], order=3, mode="grid-wrap")
            for band in cube
        ])
    else:
        raise ValueError(f"unknown upsampling method {method!r}")
    return SpectralImage.from_cube(up)


def rmse_map(X_hat: SpectralImage, X_ref: SpectralImage) -> np.ndarray:
    """Per-pixel RMSE across bands, as an ``(n_rows, n_cols)`` image."""
    err = np.sqrt(np.mean((X_hat.data - X_ref.data) ** 2, axis=0))
    return err.reshape(X_ref.n_cols, X_ref.n_rows).T
