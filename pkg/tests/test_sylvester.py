import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fumi.model import blur_rows, downsample_rows
from fumi.sylvester import (
    AbundanceSylvesterSystem,
    EndmemberSylvesterSystem,
    circulant_spectrum,
    eig_inv_times,
    eig_times,
    eig_times_inv,
    kron_solve_oracle,
    real_eig,
    solve_abundance_sylvester,
    solve_endmember_sylvester,
)


def spd(rng, k, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(k, k)))
    return (Q * np.geomspace(1.0, cond, k)) @ Q.T


def psd(rng, k, rank):
    F = rng.normal(size=(k, rank))
    return F @ F.T


def random_kernel(rng, kr, kc):
    k = rng.random((kr, kc)) + 0.1
    return k / k.sum()


def dense_BS(spec):
    n = spec.n_rows * spec.n_cols
    shape = (spec.n_rows, spec.n_cols)
    return downsample_rows(blur_rows(np.eye(n), spec.D, shape), shape, spec.d)


def random_abundance_system(rng, p, n_rows, n_cols, d, kernel_size=3):
    spec = circulant_spectrum(random_kernel(rng, kernel_size, kernel_size), n_rows, n_cols, d)
    Am, Bm = spd(rng, p), spd(rng, p)
    C1 = np.linalg.solve(Am, Bm)
    C3 = rng.normal(size=(p, n_rows * n_cols))
    return AbundanceSylvesterSystem.build(C1, C3, spec, eigen=eig_inv_times(Am, Bm)), spec


def random_endmember_system(rng, m, p):
    Lh = np.diag(rng.uniform(0.5, 2.0, m))
    P = psd(rng, m, min(m, 3))
    X2, Y2 = spd(rng, p), spd(rng, p)
    H1, H2 = Lh @ P, X2 @ np.linalg.inv(Y2)
    H3 = rng.normal(size=(m, p))
    return EndmemberSylvesterSystem.build(H1, H2, H3, eigen1=eig_times(Lh, P),
                                          eigen2=eig_times_inv(X2, Y2))


class TestSpectrum:
    def test_delta_kernel(self):
        spec = circulant_spectrum(np.ones((1, 1)), 8, 6, 2)
        np.testing.assert_allclose(spec.D, 1.0)
        np.testing.assert_allclose(spec.power_sum, spec.d_total)

    def test_symmetric_gaussian_is_real(self):
        from fumi.datagen import gaussian_kernel

        spec = circulant_spectrum(gaussian_kernel(1.7, 7), 16, 16, 4)
        assert np.abs(spec.D.imag).max() <= 1e-12

    def test_aliasing_identity_dense(self):
        """F^H S S^T F equals (1/d_total)(J kron I_m) in block frequency order."""
        n_rows, n_cols, d = 8, 8, 2
        spec = circulant_spectrum(np.ones((1, 1)), n_rows, n_cols, d)
        n = n_rows * n_cols
        mask = np.zeros((n_cols, n_rows))
        mask[::d, ::d] = 1.0
        order = spec.frequency_order()
        # dense matrix of x_hat -> fft(mask * ifft(x_hat)) in block order
        Op = np.zeros((n, n), dtype=complex)
        for k in range(n):
            e = np.zeros(n, dtype=complex)
            e[order[k]] = 1.0
            y = np.fft.fft2(mask * np.fft.ifft2(e.reshape(n_cols, n_rows))).reshape(-1)
            Op[:, k] = y[order]
        m = spec.m
        ref = np.kron(np.ones((spec.d_total, spec.d_total)), np.eye(m)) / spec.d_total
        np.testing.assert_allclose(Op, ref, atol=1e-10)

    def test_blocks_shape(self):
        spec = circulant_spectrum(np.ones((3, 3)) / 9, 12, 8, 4)
        assert spec.blocks.shape == (16, 6)
        np.testing.assert_allclose((np.abs(spec.blocks) ** 2).sum(axis=0), spec.power_sum)

    def test_divisibility(self):
        with pytest.raises(ValueError):
            circulant_spectrum(np.ones((1, 1)), 9, 8, 2)


class TestAbundanceSolver:
    def test_delta_d1_dense(self):
        rng = np.random.default_rng(0)
        spec = circulant_spectrum(np.ones((1, 1)), 4, 4, 1)
        C1 = np.linalg.solve(spd(rng, 3), spd(rng, 3))
        C3 = rng.normal(size=(3, 16))
        A = solve_abundance_sylvester(AbundanceSylvesterSystem.build(C1, C3, spec))
        np.testing.assert_allclose(A, np.linalg.solve(C1 + np.eye(3), C3), atol=1e-12)

    def test_zero_rhs(self):
        rng = np.random.default_rng(1)
        system, _ = random_abundance_system(rng, 3, 8, 8, 2)
        A = solve_abundance_sylvester(system.with_rhs(np.zeros_like(system.C3)))
        np.testing.assert_array_equal(A, 0.0)

    def test_matches_kron_oracle(self):
        rng = np.random.default_rng(2)
        system, spec = random_abundance_system(rng, 3, 8, 8, 2)
        A = solve_abundance_sylvester(system)
        BS = dense_BS(spec)
        C2 = BS @ BS.T
        ref = kron_solve_oracle(system.C1, C2, system.C3)
        assert np.linalg.norm(A - ref) <= 1e-8 * np.linalg.norm(ref)
        assert system.residual(A) <= 1e-9 * np.linalg.norm(system.C3)

    def test_apply_C2_matches_dense(self):
        rng = np.random.default_rng(3)
        system, spec = random_abundance_system(rng, 2, 8, 6, 2, kernel_size=3)
        BS = dense_BS(spec)
        A = rng.normal(size=(2, 48))
        np.testing.assert_allclose(system.apply_C2(A), A @ BS @ BS.T, atol=1e-12)

    def test_asymmetric_kernel(self):
        rng = np.random.default_rng(4)
        spec = circulant_spectrum(random_kernel(rng, 3, 5), 8, 10, 2)
        C1 = np.linalg.solve(spd(rng, 2), spd(rng, 2))
        system = AbundanceSylvesterSystem.build(C1, rng.normal(size=(2, 80)), spec)
        A = solve_abundance_sylvester(system)
        BS = dense_BS(spec)
        ref = kron_solve_oracle(C1, BS @ BS.T, system.C3)
        assert np.linalg.norm(A - ref) <= 1e-8 * np.linalg.norm(ref)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 5), st.sampled_from([(4, 4), (8, 4), (6, 8)]), st.sampled_from([1, 2]),
           st.integers(0, 2**31))
    def test_residual_property(self, p, shape, d, seed):
        rng = np.random.default_rng(seed)
        system, _ = random_abundance_system(rng, p, *shape, d)
        A = solve_abundance_sylvester(system)
        C2_norm = np.linalg.norm(system.apply_C2(np.eye(shape[0] * shape[1])))
        bound = 1e-9 * (np.linalg.norm(system.C1) * np.linalg.norm(A)
                        + np.linalg.norm(A) * C2_norm + np.linalg.norm(system.C3))
        assert system.residual(A) <= bound

    def test_nonpositive_eigenvalue(self):
        spec = circulant_spectrum(np.ones((1, 1)), 4, 4, 1)
        system = AbundanceSylvesterSystem.build(-np.eye(2), np.ones((2, 16)), spec)
        with pytest.raises(np.linalg.LinAlgError):
            solve_abundance_sylvester(system)

    def test_nonfinite_rhs(self):
        spec = circulant_spectrum(np.ones((1, 1)), 4, 4, 1)
        C3 = np.ones((2, 16))
        C3[0, 0] = np.nan
        with pytest.raises(FloatingPointError):
            solve_abundance_sylvester(AbundanceSylvesterSystem.build(np.eye(2), C3, spec))

    def test_frozen_value(self):
        """Regression value produced by the dense Kronecker oracle."""
        rng = np.random.default_rng(20240101)
        system, spec = random_abundance_system(rng, 2, 4, 4, 2)
        A = solve_abundance_sylvester(system)
        BS = dense_BS(spec)
        ref = kron_solve_oracle(system.C1, BS @ BS.T, system.C3)
        np.testing.assert_allclose(A, ref, rtol=1e-10, atol=1e-12)


class TestEndmemberSolver:
    def test_identity_factors(self):
        H3 = np.random.default_rng(5).normal(size=(4, 3))
        sys_ = EndmemberSylvesterSystem.build(np.eye(4), np.eye(3), H3)
        np.testing.assert_allclose(solve_endmember_sylvester(sys_), H3 / 2, atol=1e-14)

    def test_zero_H2_rejected(self):
        sys_ = EndmemberSylvesterSystem.build(np.eye(2), np.zeros((2, 2)), np.ones((2, 2)))
        with pytest.raises(np.linalg.LinAlgError):
            solve_endmember_sylvester(sys_)

    def test_matches_kron_oracle(self):
        rng = np.random.default_rng(6)
        sys_ = random_endmember_system(rng, 5, 3)
        M = solve_endmember_sylvester(sys_)
        ref = kron_solve_oracle(sys_.H1, sys_.H2, sys_.H3)
        assert np.linalg.norm(M - ref) <= 1e-9 * np.linalg.norm(ref)
        assert sys_.residual(M) <= 1e-9 * np.linalg.norm(sys_.H3)

    def test_generic_eigen_path(self):
        rng = np.random.default_rng(7)
        Lh = np.diag(rng.uniform(0.5, 2, 4))
        H1 = Lh @ psd(rng, 4, 4)
        H2 = spd(rng, 2) @ np.linalg.inv(spd(rng, 2))
        H3 = rng.normal(size=(4, 2))
        M = solve_endmember_sylvester(EndmemberSylvesterSystem.build(H1, H2, H3))
        np.testing.assert_allclose(M, kron_solve_oracle(H1, H2, H3), rtol=1e-9, atol=1e-12)


class TestEigenHelpers:
    def test_products_have_real_nonnegative_spectra(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            S, P = spd(rng, 5), psd(rng, 5, 5)
            Q, Q_inv, w = real_eig(S @ P)
            assert np.all(np.isreal(w)) and w.min() >= -1e-10 * abs(w).max()
            np.testing.assert_allclose(Q @ np.diag(w) @ Q_inv, S @ P, atol=1e-9)
            # rank-deficient products go through the symmetric-definite path
            P3 = psd(rng, 5, 3)
            _, _, w3 = eig_times(S, P3)
            assert w3.min() >= -1e-10 * abs(w3).max()
            np.testing.assert_allclose(np.sort(w3), np.sort(np.linalg.eigvals(S @ P3).real),
                                       atol=1e-9 * abs(w3).max())

    def test_complex_spectrum_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            real_eig(np.array([[0.0, -1.0], [1.0, 0.0]]))

    @pytest.mark.parametrize("helper", ["inv_times", "times", "times_inv"])
    def test_reconstruction(self, helper):
        rng = np.random.default_rng(9)
        S, P = spd(rng, 4), psd(rng, 4, 4)
        if helper == "inv_times":
            Q, Qi, w = eig_inv_times(S, P)
            target = np.linalg.solve(S, P)
        elif helper == "times":
            Q, Qi, w = eig_times(S, P)
            target = S @ P
        else:
            Q, Qi, w = eig_times_inv(P, S)
            target = P @ np.linalg.inv(S)
        np.testing.assert_allclose(Q @ Qi, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(Q @ np.diag(w) @ Qi, target, atol=1e-9)


class TestKronOracle:
    def test_identity(self):
        C = np.random.default_rng(10).normal(size=(3, 4))
        np.testing.assert_allclose(kron_solve_oracle(np.eye(3), np.eye(4), C), C / 2)

    def test_scalar(self):
        np.testing.assert_allclose(kron_solve_oracle(np.array([[2.0]]), np.array([[3.0]]),
                                                     np.array([[10.0]])), [[2.0]])

    def test_size_cap(self):
        with pytest.raises(ValueError):
            kron_solve_oracle(np.eye(100), np.eye(100), np.zeros((100, 100)))
