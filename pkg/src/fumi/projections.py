"""Euclidean projections used by the ADMM splitting steps."""
from dataclasses import dataclass

import numpy as np

from . import kernels

__all__ = [
    "ProjectionConfig",
    "project_simplex_columns",
    "project_nonneg",
    "project_box_unit",
    "project_abundances",
]


@dataclass(frozen=True)
class ProjectionConfig:
    """Which abundance constraint set to project on.

    With ``enforce_sum_to_one=False`` only nonnegativity is kept, the relaxed
    model used when the sum-to-one constraint is not trusted.
    """

    enforce_sum_to_one: bool = True
    tolerance: float = 1e-12

    def __post_init__(self):
        if not 0 < self.tolerance <= 1e-6:
            raise ValueError("tolerance must lie in (0, 1e-6]")


def project_simplex_columns(V: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Project every column of ``V`` on the unit probability simplex.

    Sort-based rule: with ``y`` the column sorted in decreasing order, keep
    the largest ``K`` with ``(sum(y[:K]) - 1) / K < y[K-1]`` and shift by
    ``tau = (sum(y[:K]) - 1) / K`` before clipping at zero.  Columns that are
    already nonnegative and sum to one within ``tol`` are returned unchanged,
    which makes the projection exactly idempotent.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        return project_simplex_columns(V[:, None], tol)[:, 0]
    if V.shape[0] == 1:
        return np.ones_like(V)
    out = kernels.project_simplex_columns(V)
    feasible = (V.min(axis=0) >= 0) & (np.abs(V.sum(axis=0) - 1.0) <= tol)
    if feasible.any():
        out[:, feasible] = V[:, feasible]
    return out


def project_nonneg(V: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(V, dtype=float), 0.0)


def project_box_unit(V: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(V, dtype=float), 0.0, 1.0)


def project_abundances(V: np.ndarray, config: ProjectionConfig | None = None) -> np.ndarray:
    if config is None or config.enforce_sum_to_one:
        return project_simplex_columns(V, 1e-12 if config is None else config.tolerance)
    return project_nonneg(V)
