"""Closed-form solvers for the two Sylvester equations of the fusion problem.

Abundance system  ``C1 A + A C2 = C3`` with ``C2 = (BS)(BS)^T``: ``C1`` is
diagonalised, and ``C2`` is handled in the Fourier domain.  There, uniform
decimation couples frequencies only within aliasing groups of size ``d**2``.
Each group then needs a rank-one (Sherman-Morrison / Woodbury) solve.

Endmember system ``H1 M + M H2 = H3``: both small factors are diagonalised and
the transformed unknown is obtained by an elementwise division.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from . import kernels
from .model import as_band_images, from_band_images, _centered_pad

__all__ = [
    "CirculantSpectrum",
    "AbundanceSylvesterSystem",
    "EndmemberSylvesterSystem",
    "circulant_spectrum",
    "solve_abundance_sylvester",
    "solve_endmember_sylvester",
    "kron_solve_oracle",
    "real_eig",
    "eig_inv_times",
    "eig_times",
    "eig_times_inv",
]

EIG_IMAG_TOL = 1e-10


# --------------------------------------------------------------------------
# Eigen-decompositions of products of symmetric positive (semi)definite pairs
# --------------------------------------------------------------------------

def real_eig(C: np.ndarray):
    """Eigen-decompose a matrix whose spectrum is known to be real.

    Returns ``(Q, Q_inv, lambdas)``.  Imaginary parts up to ``1e-10`` (relative
    to the spectral radius) are treated as round-off; anything larger raises.
    """
    w, Q = np.linalg.eig(C)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if np.iscomplexobj(w):
        if np.abs(w.imag).max() > EIG_IMAG_TOL * scale:
            raise np.linalg.LinAlgError("matrix has genuinely complex eigenvalues")
        w = w.real
        Q = Q.real
    Q_inv = np.linalg.inv(Q)
    return Q, Q_inv, w


def eig_inv_times(A_spd: np.ndarray, B_sym: np.ndarray):
    """Eigen-pairs of ``A^{-1} B`` with ``A`` SPD and ``B`` symmetric."""
    w, V = sla.eigh(_sym(B_sym), _sym(A_spd))
    return V, V.T @ A_spd, w


def eig_times(S_spd: np.ndarray, P_sym: np.ndarray, S_inv: np.ndarray | None = None):
    """Eigen-pairs of ``S P`` with ``S`` SPD and ``P`` symmetric."""
    if S_inv is None:
        S_inv = np.linalg.inv(S_spd)
    w, V = sla.eigh(_sym(P_sym), _sym(S_inv))
    return V, V.T @ S_inv, w


def eig_times_inv(X_sym: np.ndarray, Y_spd: np.ndarray):
    """Eigen-pairs of ``X Y^{-1}`` with ``Y`` SPD and ``X`` symmetric."""
    w, W = sla.eigh(_sym(X_sym), _sym(Y_spd))
    return Y_spd @ W, W.T, w


def _sym(X):
    return 0.5 * (X + X.T)


# --------------------------------------------------------------------------
# Abundance system
# --------------------------------------------------------------------------

@dataclass
class CirculantSpectrum:
    """Blur eigenvalues partitioned into decimation aliasing groups.

    Internally the spectrum is stored in the ``(n_cols, n_rows)`` layout that
    column-major pixel stacking produces, reshaped to ``(d, m_cols, d, m_rows)``:
    axes 0 and 2 enumerate the ``d**2`` aliasing blocks, axes 1 and 3 the ``m``
    coarse frequencies.
    """

    D: np.ndarray
    n_rows: int
    n_cols: int
    d: int
    grid: np.ndarray = field(init=False, repr=False)
    power_grid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_rows % self.d or self.n_cols % self.d:
            raise ValueError(
                f"image shape {self.n_rows}x{self.n_cols} not divisible by d={self.d}"
            )
        self.D = np.asarray(self.D, dtype=complex)
        d, mr, mc = self.d, self.n_rows // self.d, self.n_cols // self.d
        self.grid = np.ascontiguousarray(self.D.T.reshape(d, mc, d, mr))
        self.power_grid = np.ascontiguousarray((np.abs(self.grid) ** 2).sum(axis=(0, 2)))

    @property
    def d_total(self) -> int:
        return self.d * self.d

    @property
    def m(self) -> int:
        return (self.n_rows // self.d) * (self.n_cols // self.d)

    @property
    def blocks(self) -> np.ndarray:
        """``(d_total, m)`` array; row ``t`` is the block ``D_t``."""
        return self.grid.transpose(0, 2, 1, 3).reshape(self.d_total, self.m)

    @property
    def power_sum(self) -> np.ndarray:
        return self.power_grid.reshape(-1)

    def frequency_order(self) -> np.ndarray:
        """Permutation taking column-major frequency indices to block order."""
        d, mr, mc = self.d, self.n_rows // self.d, self.n_cols // self.d
        idx = np.arange(self.n_rows * self.n_cols).reshape(d, mc, d, mr)
        return idx.transpose(0, 2, 1, 3).reshape(-1)


def circulant_spectrum(kernel: np.ndarray, n_rows: int, n_cols: int, d: int) -> CirculantSpectrum:
    if n_rows % d or n_cols % d:
        raise ValueError(f"image shape {n_rows}x{n_cols} not divisible by d={d}")
    D = np.fft.fft2(_centered_pad(np.asarray(kernel, dtype=float), n_rows, n_cols))
    return CirculantSpectrum(D, n_rows, n_cols, d)


@dataclass
class AbundanceSylvesterSystem:
    """``C1 A + A (BS)(BS)^T = C3`` together with ``C1 = Q diag(lambdas) Q^{-1}``."""

    C1: np.ndarray
    C3: np.ndarray
    spectrum: CirculantSpectrum
    Q: np.ndarray
    Q_inv: np.ndarray
    lambdas: np.ndarray

    @classmethod
    def build(cls, C1, C3, spectrum, eigen=None) -> "AbundanceSylvesterSystem":
        C1 = np.asarray(C1, dtype=float)
        Q, Q_inv, lam = real_eig(C1) if eigen is None else eigen
        return cls(C1, np.asarray(C3, dtype=float), spectrum, Q, Q_inv, np.asarray(lam))

    def with_rhs(self, C3: np.ndarray) -> "AbundanceSylvesterSystem":
        return replace(self, C3=C3)

    @property
    def d_total(self) -> int:
        return self.spectrum.d_total

    def apply_C2(self, A: np.ndarray) -> np.ndarray:
        """``A (BS)(BS)^T`` evaluated with FFTs (for residual checks)."""
        sp = self.spectrum
        n_rows, n_cols, d = sp.n_rows, sp.n_cols, sp.d
        Ahat = np.fft.fft2(as_band_images(np.ascontiguousarray(A), n_rows, n_cols)) * sp.D.T
        Z = np.fft.ifft2(Ahat).real
        mask = np.zeros((n_cols, n_rows))
        mask[::d, ::d] = 1.0
        Zhat = np.fft.fft2(Z * mask) * sp.D.T.conj()
        return from_band_images(np.ascontiguousarray(np.fft.ifft2(Zhat).real))

    def residual(self, A: np.ndarray) -> float:
        return float(np.linalg.norm(self.C1 @ A + self.apply_C2(A) - self.C3))


def solve_abundance_sylvester(system: AbundanceSylvesterSystem) -> np.ndarray:
    """Closed-form solution of the abundance Sylvester equation."""
    lam = np.asarray(system.lambdas, dtype=float)
    if np.any(lam <= 0):
        raise np.linalg.LinAlgError("C1 must have strictly positive eigenvalues")
    if not np.all(np.isfinite(system.C3)):
        raise FloatingPointError("non-finite entries in C3")
    sp = system.spectrum
    p = system.C3.shape[0]
    d, mr, mc = sp.d, sp.n_rows // sp.d, sp.n_cols // sp.d
    Cbar = system.Q_inv @ system.C3
    Chat = np.fft.fft2(as_band_images(np.ascontiguousarray(Cbar), sp.n_rows, sp.n_cols))
    Abar = kernels.woodbury_combine(
        Chat.reshape(p, d, mc, d, mr), sp.grid, sp.power_grid, lam, float(sp.d_total)
    )
    Abar = np.fft.ifft2(Abar.reshape(p, sp.n_cols, sp.n_rows))
    A = system.Q @ from_band_images(np.ascontiguousarray(Abar.real))
    if not np.all(np.isfinite(A)):
        raise FloatingPointError("abundance solve produced non-finite values")
    return A


# --------------------------------------------------------------------------
# Endmember system
# --------------------------------------------------------------------------

@dataclass
class EndmemberSylvesterSystem:
    """``H1 M + M H2 = H3`` with ``H1 = V1 diag(s) V1^{-1}``, ``H2 = V2 diag(t) V2^{-1}``."""

    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    V1: np.ndarray
    V1_inv: np.ndarray
    s: np.ndarray
    V2: np.ndarray
    V2_inv: np.ndarray
    t: np.ndarray

    @classmethod
    def build(cls, H1, H2, H3, eigen1=None, eigen2=None) -> "EndmemberSylvesterSystem":
        V1, V1_inv, s = real_eig(H1) if eigen1 is None else eigen1
        V2, V2_inv, t = real_eig(H2) if eigen2 is None else eigen2
        return cls(np.asarray(H1), np.asarray(H2), np.asarray(H3, dtype=float),
                   V1, V1_inv, np.asarray(s), V2, V2_inv, np.asarray(t))

    def with_rhs(self, H3: np.ndarray) -> "EndmemberSylvesterSystem":
        return replace(self, H3=H3)

    @property
    def Htilde(self) -> np.ndarray:
        return self.s[:, None] + self.t[None, :]

    def residual(self, M: np.ndarray) -> float:
        return float(np.linalg.norm(self.H1 @ M + M @ self.H2 - self.H3))


def solve_endmember_sylvester(system: EndmemberSylvesterSystem) -> np.ndarray:
    t = np.asarray(system.t, dtype=float)
    s = np.asarray(system.s, dtype=float)
    scale = max(1.0, float(np.abs(s).max(initial=0.0)), float(np.abs(t).max(initial=0.0)))
    if np.any(t <= 0):
        raise np.linalg.LinAlgError("H2 must have strictly positive eigenvalues")
    if np.any(s < -EIG_IMAG_TOL * scale):
        raise np.linalg.LinAlgError("H1 must have nonnegative eigenvalues")
    Ht = system.Htilde
    if Ht.min() <= 1e-14 * scale:
        raise np.linalg.LinAlgError("near-zero entry in the eigenvalue-sum matrix")
    Mt = (system.V1_inv @ system.H3 @ system.V2) / Ht
    return system.V1 @ Mt @ system.V2_inv


def kron_solve_oracle(P: np.ndarray, Qm: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Dense reference solve of ``P X + X Qm = C`` by vectorisation.

    ``(I kron P + Qm^T kron I) vec(X) = vec(C)`` with column-stacking ``vec``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Qm = np.atleast_2d(np.asarray(Qm, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    a, b = P.shape[0], Qm.shape[0]
    if a * b > 4096:
        raise ValueError("oracle limited to a total dimension of 4096")
    W = np.kron(np.eye(b), P) + np.kron(Qm.T, np.eye(a))
    x = np.linalg.solve(W, C.reshape(-1, order="F"))
    return x.reshape(a, b, order="F")
