import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import simplex_qp_oracle
from fumi import _fallback, kernels
from fumi.projections import (
    ProjectionConfig,
    project_abundances,
    project_box_unit,
    project_nonneg,
    project_simplex_columns,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestSimplex:
    def test_fixed_point(self):
        np.testing.assert_allclose(project_simplex_columns(np.array([0.3, 0.7])), [0.3, 0.7],
                                   atol=1e-16)

    def test_symmetric(self):
        np.testing.assert_allclose(project_simplex_columns(np.array([1.0, 1.0])), [0.5, 0.5])

    def test_hand_example(self):
        out = project_simplex_columns(np.array([0.9, 0.3, -0.2]))
        np.testing.assert_allclose(out, [0.8, 0.2, 0.0], atol=1e-15)
        np.testing.assert_allclose(out, simplex_qp_oracle([0.9, 0.3, -0.2]), atol=1e-15)

    def test_single_endmember(self):
        np.testing.assert_array_equal(project_simplex_columns(np.array([[-3.0, 0.2, 7.0]])), 1.0)

    def test_ties(self):
        np.testing.assert_allclose(project_simplex_columns(np.array([2.0, 2.0, 2.0, -1.0])),
                                   [1 / 3, 1 / 3, 1 / 3, 0.0], atol=1e-15)

    def test_columns_independent(self):
        rng = np.random.default_rng(0)
        V = rng.normal(size=(4, 9))
        out = project_simplex_columns(V)
        for j in range(9):
            np.testing.assert_array_equal(out[:, j], project_simplex_columns(V[:, j]))

    @pytest.mark.parametrize("p,count", [(5, 300), (8, 60)])
    def test_qp_oracle(self, p, count):
        rng = np.random.default_rng(p)
        V = rng.normal(scale=2.0, size=(p, count))
        out = project_simplex_columns(V)
        for j in range(count):
            np.testing.assert_allclose(out[:, j], simplex_qp_oracle(V[:, j]), atol=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, (5, 3), elements=finite))
    def test_feasible_and_idempotent(self, V):
        P = project_simplex_columns(V)
        assert P.min() >= 0
        np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-12)
        np.testing.assert_array_equal(project_simplex_columns(P), P)

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, (6, 1), elements=finite), arrays(float, (6, 1), elements=finite))
    def test_nonexpansive(self, x, y):
        lhs = np.linalg.norm(project_simplex_columns(x) - project_simplex_columns(y))
        assert lhs <= np.linalg.norm(x - y) + 1e-12


class TestBackends:
    @pytest.mark.parametrize("p", [2, 5, 24, 30])
    def test_simplex_backends_agree(self, p):
        V = np.random.default_rng(p).normal(size=(p, 500))
        np.testing.assert_allclose(kernels.project_simplex_columns(V),
                                   _fallback.project_simplex_columns(V), atol=1e-14)

    def test_woodbury_backends_agree(self):
        rng = np.random.default_rng(1)
        p, d, m1, m2 = 3, 2, 3, 4
        C = rng.normal(size=(p, d, m1, d, m2)) + 1j * rng.normal(size=(p, d, m1, d, m2))
        D = rng.normal(size=(d, m1, d, m2)) + 1j * rng.normal(size=(d, m1, d, m2))
        power = (np.abs(D) ** 2).sum(axis=(0, 2))
        lam = rng.uniform(0.5, 2, p)
        np.testing.assert_allclose(kernels.woodbury_combine(C, D, power, lam, 4.0),
                                   _fallback.woodbury_combine(C, D, power, lam, 4.0), atol=1e-13)

    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "python")


class TestOrthantAndBox:
    def test_examples(self):
        v = np.array([-1.0, 0.5, 2.0])
        np.testing.assert_array_equal(project_nonneg(v), [0, 0.5, 2])
        np.testing.assert_array_equal(project_box_unit(v), [0, 0.5, 1])

    def test_feasible_identity(self):
        v = np.array([0.0, 0.25, 1.0])
        np.testing.assert_array_equal(project_nonneg(v), v)
        np.testing.assert_array_equal(project_box_unit(v), v)

    @pytest.mark.parametrize("proj,lo,hi", [(project_nonneg, 0, np.inf), (project_box_unit, 0, 1)])
    def test_local_optimality_grid(self, proj, lo, hi):
        rng = np.random.default_rng(2)
        steps = np.linspace(-0.5, 0.5, 11)
        for _ in range(20):
            x = rng.normal(scale=1.5, size=3)
            z = proj(x)
            best = np.sum((z - x) ** 2)
            for delta in np.array(np.meshgrid(steps, steps, steps)).reshape(3, -1).T:
                w = z + delta
                if np.all(w >= lo) and np.all(w <= hi):
                    assert np.sum((w - x) ** 2) >= best - 1e-15


class TestConfig:
    def test_relaxed_uses_orthant(self):
        V = np.array([[2.0, -1.0], [0.5, 0.3]])
        out = project_abundances(V, ProjectionConfig(enforce_sum_to_one=False))
        np.testing.assert_array_equal(out, project_nonneg(V))

    def test_default_is_simplex(self):
        V = np.array([[2.0, -1.0], [0.5, 0.3]])
        np.testing.assert_array_equal(project_abundances(V), project_simplex_columns(V))

    @pytest.mark.parametrize("tol", [0.0, 1e-3])
    def test_tolerance_range(self, tol):
        with pytest.raises(ValueError):
            ProjectionConfig(tolerance=tol)
