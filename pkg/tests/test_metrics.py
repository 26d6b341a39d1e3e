import itertools
import math

import numpy as np
import pytest

from fumi.metrics import (
    FusionReport,
    UnmixReport,
    align_endmembers,
    degree_of_distortion,
    ergas,
    fusion_metrics,
    nmse_db,
    rmse_map,
    rsnr,
    sam,
    uiqi,
    unmix_metrics,
    upsample_baseline,
)
from fumi.model import SpectralImage


def loop_metrics(Xh, X, d):
    """Scalar re-implementation used as an oracle."""
    L, n = X.shape
    err = sig = 0.0
    for i in range(L):
        for j in range(n):
            err += (Xh[i, j] - X[i, j]) ** 2
            sig += X[i, j] ** 2
    r = 10 * math.log10(sig / err)
    angles = []
    for j in range(n):
        dot = sum(Xh[i, j] * X[i, j] for i in range(L))
        nh = math.sqrt(sum(Xh[i, j] ** 2 for i in range(L)))
        nr = math.sqrt(sum(X[i, j] ** 2 for i in range(L)))
        angles.append(math.degrees(math.acos(max(-1.0, min(1.0, dot / (nh * nr))))))
    qs, terms = [], []
    for i in range(L):
        mx = sum(X[i]) / n
        my = sum(Xh[i]) / n
        vx = sum((x - mx) ** 2 for x in X[i]) / n
        vy = sum((y - my) ** 2 for y in Xh[i]) / n
        c = sum((X[i, j] - mx) * (Xh[i, j] - my) for j in range(n)) / n
        qs.append(4 * c * mx * my / ((vx + vy) * (mx**2 + my**2)))
        rmse = math.sqrt(sum((Xh[i, j] - X[i, j]) ** 2 for j in range(n)) / n)
        terms.append((rmse / mx) ** 2)
    dd = sum(abs(Xh[i, j] - X[i, j]) for i in range(L) for j in range(n)) / (L * n)
    return dict(rsnr_db=r, sam_deg=sum(angles) / n, uiqi=sum(qs) / L,
                ergas=100 / d * math.sqrt(sum(terms) / L), dd=dd)


@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    X = rng.uniform(0.1, 1.0, (3, 16))
    Xh = X + rng.normal(scale=0.05, size=X.shape)
    return Xh, X


class TestFusionMetrics:
    def test_perfect(self):
        X = np.random.default_rng(1).uniform(0.1, 1, (4, 20))
        r = fusion_metrics(X.copy(), X, 4)
        assert r.rsnr_db == 300.0
        assert r.sam_deg == pytest.approx(0.0, abs=1e-6)
        assert r.uiqi == pytest.approx(1.0, abs=1e-12)
        assert r.ergas == 0.0 and r.dd == 0.0

    def test_scaled_by_two(self):
        X = np.random.default_rng(2).uniform(0.1, 1, (4, 20))
        assert sam(2 * X, X)[0] == pytest.approx(0.0, abs=1e-6)
        assert rsnr(2 * X, X) == pytest.approx(0.0, abs=1e-12)

    def test_loop_oracle(self, pair):
        Xh, X = pair
        ref = loop_metrics(Xh, X, 4)
        got = fusion_metrics(Xh, X, 4).to_dict()
        for k, v in ref.items():
            assert got[k] == pytest.approx(v, rel=1e-12, abs=1e-12), k

    def test_pixel_permutation_invariance(self, pair):
        Xh, X = pair
        perm = np.random.default_rng(3).permutation(X.shape[1])
        a = fusion_metrics(Xh, X, 2).to_dict()
        b = fusion_metrics(Xh[:, perm], X[:, perm], 2).to_dict()
        for k in a:
            assert a[k] == pytest.approx(b[k], rel=1e-12, abs=1e-14)

    def test_rsnr_noise_ladder(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(0.1, 1, (5, 400))
        noise = rng.normal(size=X.shape)
        values = [rsnr(X + s * noise, X) for s in (0.001, 0.01, 0.1)]
        assert values[0] > values[1] > values[2]
        np.testing.assert_allclose(np.diff(values), -20.0, atol=1e-9)

    def test_sam_scale_invariant_per_pixel(self, pair):
        Xh, X = pair
        scale = np.random.default_rng(5).uniform(0.5, 3, X.shape[1])
        assert sam(Xh * scale, X)[0] == pytest.approx(sam(Xh, X)[0], rel=1e-12)

    def test_sam_skips_zero_pixels(self, pair, caplog):
        Xh, X = pair
        Xh = Xh.copy()
        Xh[:, 0] = 0.0
        value, skipped = sam(Xh, X)
        assert skipped == 1
        assert value == pytest.approx(sam(Xh[:, 1:], X[:, 1:])[0], rel=1e-14)
        assert "skipped" in caplog.text

    def test_ergas_scales_inverse_with_ratio(self, pair):
        Xh, X = pair
        assert ergas(Xh, X, 2) == pytest.approx(2 * ergas(Xh, X, 4), rel=1e-14)

    def test_uiqi_constant_band(self):
        X = np.vstack([np.full(10, 0.5), np.linspace(0.1, 1, 10)])
        assert uiqi(X, X) == 1.0

    def test_dd(self):
        X = np.ones((2, 3))
        assert degree_of_distortion(X + 0.25, X) == pytest.approx(0.25)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fusion_metrics(np.ones((2, 4)), np.ones((2, 5)), 2)

    def test_accepts_images(self, pair):
        Xh, X = pair
        a = fusion_metrics(SpectralImage(Xh, 4, 4), SpectralImage(X, 4, 4), 2)
        assert a == fusion_metrics(Xh, X, 2)

    def test_report_keys(self, pair):
        d = fusion_metrics(*pair, 2, wall_time_s=1.5).to_dict()
        assert list(d) == list(FusionReport.FIELDS)
        assert d["wall_time_s"] == 1.5


class TestUnmixMetrics:
    @pytest.fixture
    def truth(self):
        rng = np.random.default_rng(6)
        M = rng.uniform(0.05, 0.95, (30, 4))
        A = rng.dirichlet(np.ones(4), 50).T
        return M, A

    def test_permuted_perfect(self, truth):
        M, A = truth
        perm = np.array([2, 0, 3, 1])
        r = unmix_metrics(M[:, perm], A[perm], M, A)
        assert r.nmse_M_db == -300.0 and r.nmse_A_db == -300.0
        assert r.sam_M_deg == pytest.approx(0.0, abs=1e-6)
        np.testing.assert_array_equal(M[:, perm][:, r.permutation], M)

    def test_nmse_matches_epsilon(self, truth):
        M, _ = truth
        U = np.random.default_rng(7).normal(size=M.shape)
        U *= np.linalg.norm(M) / np.linalg.norm(U)
        for eps in (1e-1, 1e-3):
            assert nmse_db(M + eps * U, M) == pytest.approx(20 * np.log10(eps), abs=1e-9)

    def test_greedy_agrees_with_exhaustive_when_clear(self, truth):
        M, A = truth
        noisy = M + np.random.default_rng(8).normal(scale=0.01, size=M.shape)
        perm = np.array([3, 1, 0, 2])
        a = align_endmembers(noisy[:, perm], M, "greedy")
        b = align_endmembers(noisy[:, perm], M, "exhaustive")
        np.testing.assert_array_equal(a, b)

    def test_exhaustive_is_optimal(self):
        rng = np.random.default_rng(9)
        Mh, M = rng.random((6, 4)), rng.random((6, 4))
        from fumi.metrics import _sam_matrix

        cost = _sam_matrix(Mh, M)
        best = min(cost[np.arange(4), list(p)].sum() for p in itertools.permutations(range(4)))
        perm = align_endmembers(Mh, M, "exhaustive")
        assert cost[np.arange(4), perm].sum() == pytest.approx(best)

    def test_unknown_method(self, truth):
        with pytest.raises(ValueError):
            align_endmembers(truth[0], truth[0], "hungarian")

    def test_count_mismatch(self, truth):
        M, A = truth
        with pytest.raises(ValueError):
            unmix_metrics(M[:, :3], A[:3], M, A)

    def test_report_keys(self, truth):
        M, A = truth
        d = unmix_metrics(M, A, M, A).to_dict()
        assert list(d) == list(UnmixReport.FIELDS)
        assert d["permutation"] == [0, 1, 2, 3]


class TestBaseline:
    def test_nearest_replicates(self):
        cube = np.random.default_rng(10).random((2, 3, 4))
        up = upsample_baseline(SpectralImage.from_cube(cube), 2, "nearest").cube()
        assert up.shape == (2, 6, 8)
        np.testing.assert_array_equal(up[:, ::2, ::2], cube)
        np.testing.assert_array_equal(up[:, 1::2, 1::2], cube)

    def test_bicubic_interpolates_samples(self):
        cube = np.random.default_rng(11).random((2, 4, 4))
        up = upsample_baseline(SpectralImage.from_cube(cube), 3, "bicubic").cube()
        np.testing.assert_allclose(up[:, ::3, ::3], cube, atol=1e-10)

    def test_bicubic_constant(self):
        up = upsample_baseline(SpectralImage(np.full((1, 16), 0.4), 4, 4), 2)
        np.testing.assert_allclose(up.data, 0.4, atol=1e-12)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            upsample_baseline(SpectralImage(np.ones((1, 4)), 2, 2), 2, "lanczos")

    def test_rmse_map(self):
        X = SpectralImage(np.zeros((2, 6)), 2, 3)
        Xh = X.with_data(np.zeros((2, 6)))
        Xh.data[:, 3] = 2.0  # pixel j = 3 is row 1, column 1
        m = rmse_map(Xh, X)
        assert m.shape == (2, 3)
        assert m[1, 1] == 2.0 and m.sum() == 2.0
