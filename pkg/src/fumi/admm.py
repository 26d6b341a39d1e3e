"""Inner ADMM solvers for the abundance and endmember sub-problems."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .model import (
    DegradationModel,
    SpectralImage,
    blur_rows,
    downsample_rows,
    upsample_zero_rows,
)
from .projections import ProjectionConfig, project_abundances, project_box_unit
from .sylvester import (
    AbundanceSylvesterSystem,
    CirculantSpectrum,
    EndmemberSylvesterSystem,
    eig_inv_times,
    eig_times,
    eig_times_inv,
    solve_abundance_sylvester,
    solve_endmember_sylvester,
)

log = logging.getLogger(__name__)

__all__ = [
    "Covariance",
    "FusionProblem",
    "Objective",
    "AdmmAbundanceState",
    "AdmmEndmemberState",
    "objective",
    "admm_abundance",
    "admm_endmember",
    "abundance_coefficients",
    "endmember_coefficients",
    "ridge",
]

RIDGE_COND = 1e12
RIDGE_SCALE = 1e-10


def ridge(S: np.ndarray, what: str) -> np.ndarray:
    """Add a tiny diagonal load when ``S`` is numerically singular."""
    cond = np.linalg.cond(S)
    if np.isfinite(cond) and cond <= RIDGE_COND:
        return S
    k = S.shape[0]
    load = RIDGE_SCALE * np.trace(S) / k
    if not load > 0:
        raise np.linalg.LinAlgError(
            f"{what} is singular and has zero trace; check the endmember/abundance "
            "rank or add a ridge term"
        )
    log.warning("%s ill-conditioned (cond=%.3g); adding ridge %.3g", what, cond, load)
    return S + load * np.eye(k)


class Covariance:
    """Band covariance given either as a variance vector or an SPD matrix."""

    def __init__(self, cov):
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 2 and np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
            cov = np.diag(cov).copy()
        if cov.ndim == 1:
            if np.any(cov <= 0):
                raise ValueError("variances must be > 0")
            self.diag = cov
            self.size = cov.size
        elif cov.ndim == 2 and cov.shape[0] == cov.shape[1]:
            self.diag = None
            self.size = cov.shape[0]
            w, U = np.linalg.eigh(0.5 * (cov + cov.T))
            if w.min() <= 0:
                raise ValueError("band covariance must be positive definite")
            self._w, self._U = w, U
        else:
            raise ValueError("covariance must be a vector or a square matrix")
        self.raw = cov

    @property
    def is_diagonal(self) -> bool:
        return self.diag is not None

    def _power(self, e: float) -> np.ndarray:
        return (self._U * self._w**e) @ self._U.T

    @cached_property
    def dense(self) -> np.ndarray:
        return np.diag(self.diag) if self.is_diagonal else self._power(1.0)

    @cached_property
    def inv(self) -> np.ndarray:
        return np.diag(1.0 / self.diag) if self.is_diagonal else self._power(-1.0)

    def apply(self, X, power: float = 1.0):
        """``Lambda**power @ X``."""
        if self.is_diagonal:
            return (self.diag**power)[:, None] * X
        return self._power(power) @ X

    def weighted_sq_norm(self, X) -> float:
        """``||Lambda^{-1/2} X||_F^2``."""
        if self.is_diagonal:
            return float(np.sum(X**2 / self.diag[:, None]))
        return float(np.sum(X * (self.inv @ X)))


@dataclass
class Objective:
    value: float
    hs_term: float
    ms_term: float


@dataclass
class FusionProblem:
    """Observations and known operators of one fusion job.

    ``Y_H`` is ``bands x m`` on the coarse grid, ``Y_M`` is ``n_bands x n`` on
    the fine grid.  ``basis`` is set when the spectral dimension has been
    reduced to a subspace (``Y_H``, ``cov_hs`` and ``R`` are then already
    projected); it is only used to apply the box constraint in the lifted
    domain.
    """

    Y_H: np.ndarray
    Y_M: np.ndarray
    R: np.ndarray
    spectrum: CirculantSpectrum
    cov_hs: Covariance
    cov_ms: Covariance
    basis: np.ndarray | None = None

    def __post_init__(self):
        if not isinstance(self.cov_hs, Covariance):
            self.cov_hs = Covariance(self.cov_hs)
        if not isinstance(self.cov_ms, Covariance):
            self.cov_ms = Covariance(self.cov_ms)
        self.Y_H = np.asarray(self.Y_H, dtype=float)
        self.Y_M = np.asarray(self.Y_M, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        sp = self.spectrum
        if self.Y_M.shape[1] != sp.n_rows * sp.n_cols:
            raise ValueError("Y_M pixel count does not match the image shape")
        if self.Y_H.shape[1] != sp.m:
            raise ValueError("Y_H pixel count does not match the decimated shape")
        if self.R.shape != (self.Y_M.shape[0], self.Y_H.shape[0]):
            raise ValueError(f"R has shape {self.R.shape}, expected "
                             f"{(self.Y_M.shape[0], self.Y_H.shape[0])}")
        if self.cov_hs.size != self.Y_H.shape[0] or self.cov_ms.size != self.Y_M.shape[0]:
            raise ValueError("noise covariance sizes do not match the band counts")

    @classmethod
    def from_observations(cls, Y_H: SpectralImage, Y_M: SpectralImage,
                          model: DegradationModel) -> "FusionProblem":
        if model.downsampler.phase != (0, 0):
            raise ValueError("the frequency-domain solver assumes decimation phase (0, 0)")
        spectrum = CirculantSpectrum(model.blur.spectrum, model.blur.n_rows,
                                     model.blur.n_cols, model.downsampler.d)
        return cls(Y_H.data, Y_M.data, model.response, spectrum,
                   Covariance(model.noise_hs.variances),
                   Covariance(model.noise_ms.variances))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.spectrum.n_rows, self.spectrum.n_cols)

    @property
    def d(self) -> int:
        return self.spectrum.d

    def BS(self, A: np.ndarray) -> np.ndarray:
        """``A B S``: blur then decimate every row."""
        return downsample_rows(blur_rows(A, self.spectrum.D, self.shape), self.shape, self.d)

    def BS_adjoint(self, Z: np.ndarray) -> np.ndarray:
        """``Z (BS)^T``: zero-insert then apply the adjoint blur."""
        return blur_rows(upsample_zero_rows(Z, self.shape, self.d), self.spectrum.D,
                         self.shape, adjoint=True)

    @cached_property
    def YH_BSt(self) -> np.ndarray:
        return self.BS_adjoint(self.Y_H)

    @cached_property
    def RtLmR(self) -> np.ndarray:
        return self.R.T @ self.cov_ms.apply(self.R, -1.0)

    @cached_property
    def RtLm_YM(self) -> np.ndarray:
        return self.R.T @ self.cov_ms.apply(self.Y_M, -1.0)

    @cached_property
    def H1_eigen(self):
        return eig_times(self.cov_hs.dense, self.RtLmR, S_inv=self.cov_hs.inv)

    @cached_property
    def H1(self) -> np.ndarray:
        return self.cov_hs.dense @ self.RtLmR


def objective(M: np.ndarray, A: np.ndarray, problem: FusionProblem) -> Objective:
    """Negative log-likelihood (up to a constant) of ``(M, A)``."""
    if M.shape[1] != A.shape[0]:
        raise ValueError(f"M {M.shape} and A {A.shape} do not conform")
    if M.shape[0] != problem.Y_H.shape[0]:
        raise ValueError("M band count does not match Y_H")
    rH = problem.Y_H - M @ problem.BS(A)
    rM = problem.Y_M - (problem.R @ M) @ A
    hs = 0.5 * problem.cov_hs.weighted_sq_norm(rH)
    ms = 0.5 * problem.cov_ms.weighted_sq_norm(rM)
    return Objective(hs + ms, hs, ms)


# --------------------------------------------------------------------------
# Abundances
# --------------------------------------------------------------------------

@dataclass
class AdmmAbundanceState:
    V: np.ndarray
    G: np.ndarray
    mu: float
    iter: int = 0
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("ADMM penalty mu must be > 0")
        if self.V.shape != self.G.shape:
            raise ValueError("V and G shapes differ")

    @classmethod
    def start(cls, V0: np.ndarray, mu: float) -> "AdmmAbundanceState":
        V0 = np.array(V0, dtype=float)
        return cls(V0, np.zeros_like(V0), mu)


def abundance_coefficients(M: np.ndarray, problem: FusionProblem, mu: float):
    """Return ``(C1, C3_fixed, K, eigen)`` with ``C3 = C3_fixed + K (V + G)``."""
    LhM = problem.cov_hs.apply(M, -1.0)
    Am = ridge(M.T @ LhM, "M^T Lambda_H^{-1} M")
    RM = problem.R @ M
    Bm = RM.T @ problem.cov_ms.apply(RM, -1.0) + mu * np.eye(M.shape[1])
    C1 = np.linalg.solve(Am, Bm)
    rhs = LhM.T @ problem.YH_BSt + RM.T @ problem.cov_ms.apply(problem.Y_M, -1.0)
    C3_fixed = np.linalg.solve(Am, rhs)
    K = mu * np.linalg.inv(Am)
    return C1, C3_fixed, K, eig_inv_times(Am, Bm)


def admm_abundance(M: np.ndarray, problem: FusionProblem, state: AdmmAbundanceState,
                   n_iters: int = 30,
                   projection: ProjectionConfig | None = None) -> np.ndarray:
    """Run ``n_iters`` ADMM cycles for the abundances at fixed ``M``.

    ``state`` is updated in place so a later call warm-starts from it.  The
    feasible splitting variable ``V`` is returned.
    """
    M = np.asarray(M, dtype=float)
    if n_iters <= 0:
        state.V = project_abundances(state.V, projection)
        return state.V.copy()
    C1, C3_fixed, K, eigen = abundance_coefficients(M, problem, state.mu)
    system = AbundanceSylvesterSystem.build(C1, C3_fixed, problem.spectrum, eigen=eigen)
    V, G = state.V, state.G
    for _ in range(n_iters):
        A = solve_abundance_sylvester(system.with_rhs(C3_fixed + K @ (V + G)))
        V_new = project_abundances(A - G, projection)
        G = G - (A - V_new)
        state.primal_residuals.append(float(np.linalg.norm(A - V_new)))
        state.dual_residuals.append(float(state.mu * np.linalg.norm(V_new - V)))
        V = V_new
        state.iter += 1
    if not (np.all(np.isfinite(V)) and np.all(np.isfinite(G))):
        raise FloatingPointError("abundance ADMM diverged (non-finite iterates)")
    state.V, state.G = V, G
    return V.copy()


# --------------------------------------------------------------------------
# Endmembers
# --------------------------------------------------------------------------

@dataclass
class AdmmEndmemberState:
    T: np.ndarray
    G: np.ndarray
    mu: float
    iter: int = 0
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("ADMM penalty mu must be > 0")

    @classmethod
    def start(cls, M0: np.ndarray, problem: FusionProblem, mu: float) -> "AdmmEndmemberState":
        T0 = problem.cov_hs.apply(np.asarray(M0, dtype=float), -0.5)
        return cls(T0, np.zeros_like(T0), mu)


def endmember_coefficients(A: np.ndarray, problem: FusionProblem, mu: float):
    """Return ``(H2, H3_fixed, K, eigen2)`` with ``H3 = H3_fixed + Lh^{1/2}(T+G) K``."""
    A_H = problem.BS(A)
    p = A.shape[0]
    X2 = A_H @ A_H.T + mu * np.eye(p)
    Y2 = ridge(A @ A.T, "A A^T")
    Y2_inv = np.linalg.inv(Y2)
    H2 = X2 @ Y2_inv
    lhs = problem.Y_H @ A_H.T + problem.cov_hs.apply(problem.RtLm_YM @ A.T)
    H3_fixed = lhs @ Y2_inv
    return H2, H3_fixed, mu * Y2_inv, eig_times_inv(X2, Y2)


def _box_in_domain(Z: np.ndarray, basis: np.ndarray | None) -> np.ndarray:
    if basis is None:
        return project_box_unit(Z)
    return basis.T @ project_box_unit(basis @ Z)


def admm_endmember(A: np.ndarray, problem: FusionProblem, state: AdmmEndmemberState,
                   n_iters: int = 30) -> np.ndarray:
    """Run ``n_iters`` ADMM cycles for the endmembers at fixed ``A``.

    Returns ``Lambda_H^{1/2} T`` after the box projection (in the lifted
    domain when a subspace basis is attached to ``problem``).
    """
    cov = problem.cov_hs
    if n_iters > 0:
        H2, H3_fixed, K, eigen2 = endmember_coefficients(A, problem, state.mu)
        system = EndmemberSylvesterSystem.build(problem.H1, H2, H3_fixed,
                                                eigen1=problem.H1_eigen, eigen2=eigen2)
        T, G = state.T, state.G
        for _ in range(n_iters):
            M = solve_endmember_sylvester(system.with_rhs(H3_fixed + cov.apply(T + G, 0.5) @ K))
            T_new = cov.apply(_box_in_domain(M - cov.apply(G, 0.5), problem.basis), -0.5)
            scaled = cov.apply(M, -0.5)
            G = G - (scaled - T_new)
            state.primal_residuals.append(float(np.linalg.norm(scaled - T_new)))
            state.dual_residuals.append(float(state.mu * np.linalg.norm(T_new - T)))
            T = T_new
            state.iter += 1
        if not (np.all(np.isfinite(T)) and np.all(np.isfinite(G))):
            raise FloatingPointError("endmember ADMM diverged (non-finite iterates)")
        state.T, state.G = T, G
    return _box_in_domain(cov.apply(state.T, 0.5), problem.basis)
