"""Outer alternating (block coordinate descent) driver."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .admm import (
    AdmmAbundanceState,
    AdmmEndmemberState,
    Covariance,
    FusionProblem,
    Objective,
    admm_abundance,
    abundance_coefficients,
    admm_endmember,
    objective,
)
from .model import DegradationModel, SpectralImage
from .projections import ProjectionConfig
from .sylvester import AbundanceSylvesterSystem, solve_abundance_sylvester

log = logging.getLogger(__name__)

__all__ = [
    "FumiConfig",
    "FumiResult",
    "MonotonicityError",
    "successive_projection",
    "initialize_endmembers",
    "quick_fusion",
    "identify_subspace",
    "project_model",
    "default_mu",
    "run_fumi",
]

MONOTONE_SLACK = 1e-9
ABS_STOP = 1e-18
# consecutive outer iterations without any decrease before giving up
STALL_LIMIT = 5


class MonotonicityError(RuntimeError):
    pass


@dataclass
class FumiConfig:
    p: int = 5
    mode: str = "unsupervised"
    use_subspace: bool = False
    subspace_rank: int | None = None
    mu: float | None = None
    inner_iters: int = 30
    outer_tol: float = 1e-4
    max_outer: int = 100
    seed: int = 0
    enforce_sum_to_one: bool = True
    abundance_init: str = "uniform"
    safeguard: bool = True
    init: str = "fused"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.mode not in ("supervised", "unsupervised"):
            raise ValueError(f"mode must be 'supervised' or 'unsupervised', not {self.mode!r}")
        if not self.outer_tol > 0:
            raise ValueError("outer_tol must be > 0")
        if self.mu is not None and not self.mu > 0:
            raise ValueError("mu must be > 0")
        if self.inner_iters < 0 or self.max_outer < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.abundance_init not in ("uniform", "random"):
            raise ValueError("abundance_init must be 'uniform' or 'random'")
        if self.init not in ("fused", "hs"):
            raise ValueError("init must be 'fused' or 'hs'")
        if self.subspace_rank is not None and self.subspace_rank < 1:
            raise ValueError("subspace_rank must be >= 1")


@dataclass
class FumiResult:
    M_hat: np.ndarray
    A_hat: np.ndarray
    X_hat: SpectralImage
    objective_trace: list
    iterations: int
    wall_time: float
    converged: bool
    M_init: np.ndarray = field(repr=False, default=None)
    mu: float = 0.0

    def trace_values(self) -> np.ndarray:
        return np.array([o.value for o in self.objective_trace])


def successive_projection(Y: np.ndarray, p: int) -> list[int]:
    """Pick ``p`` pixel indices by successive orthogonal projections.

    The first pick is the pixel of largest norm; each later pick maximises the
    residual norm after projecting out the span of the earlier picks.  Pixels
    whose residual has vanished are never picked.
    """
    Y = np.asarray(Y, dtype=float)
    if p > Y.shape[1]:
        raise ValueError(f"cannot pick {p} endmembers from {Y.shape[1]} pixels")
    Rz = Y.copy()
    norms = np.sum(Rz**2, axis=0)
    floor = 1e-24 * max(norms.max(initial=0.0), np.finfo(float).tiny)
    picks: list[int] = []
    for _ in range(p):
        norms = np.sum(Rz**2, axis=0)
        norms[picks] = -1.0
        j = int(np.argmax(norms))
        if norms[j] <= floor:
            raise ValueError(f"image spans fewer than p={p} independent pixel directions")
        picks.append(j)
        q = Rz[:, j] / np.sqrt(norms[j])
        for _ in range(2):
            Rz -= np.outer(q, q @ Rz)
    return picks


def initialize_endmembers(Y_H, p: int) -> np.ndarray:
    Y = Y_H.data if isinstance(Y_H, SpectralImage) else np.asarray(Y_H, dtype=float)
    idx = successive_projection(Y, p)
    return np.clip(Y[:, idx], 0.0, 1.0)


def quick_fusion(problem: FusionProblem, rank: int, mu: float) -> np.ndarray:
    """Unconstrained fused image restricted to the leading HS subspace.

    Solves the abundance least-squares problem with the ``rank`` leading left
    singular vectors of ``Y_H`` standing in for the endmembers, which gives a
    cheap full-resolution estimate without any simplex projection.
    """
    E = identify_subspace(problem.Y_H, rank)
    C1, C3, _, eigen = abundance_coefficients(E, problem, mu)
    Z = solve_abundance_sylvester(AbundanceSylvesterSystem.build(C1, C3, problem.spectrum, eigen))
    return E @ Z


def identify_subspace(Y_H, rank: int) -> np.ndarray:
    """Leading left singular vectors of the HS image."""
    Y = Y_H.data if isinstance(Y_H, SpectralImage) else np.asarray(Y_H, dtype=float)
    if not 1 <= rank <= min(Y.shape):
        raise ValueError(f"subspace rank {rank} outside [1, {min(Y.shape)}]")
    U, _, _ = np.linalg.svd(Y, full_matrices=False)
    return U[:, :rank]


def project_model(E: np.ndarray, Y_H: np.ndarray, cov_hs, R: np.ndarray):
    """Return ``(E^T Y_H, E^T Lambda_H E, R E)``."""
    cov = cov_hs if isinstance(cov_hs, Covariance) else Covariance(cov_hs)
    return E.T @ Y_H, E.T @ cov.dense @ E, R @ E


def default_mu(model: DegradationModel) -> float:
    """Average noise power pooled over every HS and MS band."""
    pooled = np.concatenate([model.noise_hs.variances, model.noise_ms.variances])
    return float(pooled.mean())


def _initial_abundances(p: int, n: int, config: FumiConfig) -> np.ndarray:
    if config.abundance_init == "random":
        rng = np.random.default_rng(config.seed)
        return rng.dirichlet(np.ones(p), size=n).T.copy()
    return np.full((p, n), 1.0 / p)


def run_fumi(Y_H: SpectralImage, Y_M: SpectralImage, model: DegradationModel,
             config: FumiConfig, M_init: np.ndarray | None = None,
             callback=None) -> FumiResult:
    """Alternate abundance and endmember ADMM solves until the objective settles.

    Without ``M_init`` the endmembers start from successive projections on
    either a quick unconstrained fusion (``init="fused"``) or ``Y_H`` itself
    (``init="hs"``).  In supervised mode ``M`` stays at that initial value and
    only the abundance solver runs.
    ``callback(t, objective)`` is called after each outer iteration.
    """
    t0 = time.perf_counter()
    problem = FusionProblem.from_observations(Y_H, Y_M, model)
    p = config.p
    mu = config.mu if config.mu is not None else default_mu(model)
    if M_init is not None:
        M0 = np.asarray(M_init, dtype=float)
    elif config.init == "fused":
        M0 = initialize_endmembers(quick_fusion(problem, p, mu), p)
    else:
        M0 = initialize_endmembers(Y_H, p)
    if M0.shape != (Y_H.bands, p):
        raise ValueError(f"initial endmembers have shape {M0.shape}, expected {(Y_H.bands, p)}")

    E = None
    M = M0
    if config.use_subspace:
        rank = config.subspace_rank or p
        E = identify_subspace(Y_H, rank)
        yh, cov, R = project_model(E, problem.Y_H, problem.cov_hs, problem.R)
        problem = FusionProblem(yh, problem.Y_M, R, problem.spectrum, Covariance(cov),
                                problem.cov_ms, basis=E)
        M = E.T @ M0

    projection = ProjectionConfig(enforce_sum_to_one=config.enforce_sum_to_one)
    a_state = AdmmAbundanceState.start(_initial_abundances(p, Y_M.pixels, config), mu)
    m_state = AdmmEndmemberState.start(M, problem, mu)
    update_M = config.mode == "unsupervised" and config.max_outer > 0

    trace: list[Objective] = []
    A = None
    converged = False
    stalled = 0
    n_outer = max(config.max_outer, 1)
    t = 0
    for t in range(1, n_outer + 1):
        A_new = admm_abundance(M, problem, a_state, config.inner_iters, projection)
        M_new = admm_endmember(A_new, problem, m_state, config.inner_iters) if update_M else M
        obj = objective(M_new, A_new, problem)
        # The safeguard judges the whole sweep: a slightly worse abundance
        # candidate is often more than repaid by the endmember update.
        if A is None or not config.safeguard or obj.value <= trace[-1].value:
            A, M = A_new, M_new
        else:
            obj = trace[-1]
        if trace and obj.value > trace[-1].value + MONOTONE_SLACK:
            raise MonotonicityError(
                f"objective rose from {trace[-1].value!r} to {obj.value!r} at outer "
                f"iteration {t}; enable the safeguard or reduce mu"
            )
        trace.append(obj)
        if callback is not None:
            callback(t, obj)
        progressed = len(trace) < 2 or obj.value < trace[-2].value
        log.debug("outer %d: L=%.10g (hs %.4g, ms %.4g)%s", t, obj.value, obj.hs_term,
                  obj.ms_term, "" if progressed else " [no progress]")
        if obj.value < ABS_STOP:
            converged = True
            break
        # A rejected sweep leaves the trace flat while the warm-started inner
        # solvers keep moving, so it is not evidence of convergence.
        stalled = 0 if progressed else stalled + 1
        if not progressed and stalled < STALL_LIMIT:
            continue
        if len(trace) >= 2:
            prev = trace[-2].value
            if abs(obj.value - prev) <= config.outer_tol * abs(prev):
                converged = True
                break

    M_full = E @ M if E is not None else M
    X_hat = SpectralImage(M_full @ A, *Y_M.shape)
    return FumiResult(M_full, A, X_hat, trace, t, time.perf_counter() - t0, converged, M0, mu)
