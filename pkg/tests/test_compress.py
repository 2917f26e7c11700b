import itertools

import numpy as np
import pytest

from embcompress.compress import (
    CompressedEmbedding,
    QuantizationGrid,
    clip,
    compress_kmeans,
    compress_pca,
    compress_uniform,
    decompress,
    find_clip_threshold,
    kmeans_1d,
    quantization_objective,
    quantize_det,
    quantize_stoch,
)
from embcompress.linalg import LinalgError, fro_norm, thin_svd
from embcompress.rng import CounterRng
from embcompress.theory import gen_student_t_matrix

RNG = np.random.default_rng(99)


def contiguous_partition_optimum(values, K):
    """Exhaustive optimal 1-D k-means loss: the optimum respects sorted
    order, so enumerate all contiguous partitions of the sorted values."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size

    def seg_cost(i, j):
        seg = v[i:j]
        return float(np.sum((seg - seg.mean()) ** 2))

    best = np.inf
    for cuts in itertools.combinations(range(1, n), min(K, n) - 1):
        bounds = (0, *cuts, n)
        cost = sum(seg_cost(bounds[t], bounds[t + 1]) for t in range(len(bounds) - 1))
        best = min(best, cost)
    return best


def kmeans_loss(values, centroids, assign):
    return float(np.sum((np.asarray(values, float) - centroids[assign]) ** 2))


class TestGrid:
    def test_levels_and_spacing(self):
        g = QuantizationGrid(2, 1.0)
        np.testing.assert_allclose(g.levels, [-1.0, -1 / 3, 1 / 3, 1.0])
        assert g.spacing == pytest.approx(2 / 3)
        assert g.num_levels == 4

    def test_levels_symmetric_and_equispaced(self):
        g = QuantizationGrid(5, 2.5)
        lv = g.levels
        np.testing.assert_allclose(lv, -lv[::-1], atol=1e-15)
        np.testing.assert_allclose(np.diff(lv), g.spacing, atol=1e-15)
        assert lv[0] == -2.5 and lv[-1] == 2.5

    def test_invalid(self):
        with pytest.raises(ValueError):
            QuantizationGrid(0, 1.0)
        with pytest.raises(ValueError):
            QuantizationGrid(32, 1.0)
        with pytest.raises(ValueError):
            QuantizationGrid(4, 0.0)


class TestClip:
    def test_values(self):
        assert clip(np.array([[0.5]]), 1.0)[0, 0] == 0.5
        assert clip(np.array([[-3.0]]), 1.0)[0, 0] == -1.0
        assert clip(np.array([[1.0000001]]), 1.0)[0, 0] == 1.0

    def test_requires_positive_threshold(self):
        with pytest.raises(ValueError):
            clip(np.zeros((1, 1)), 0.0)


class TestDeterministicRounding:
    def test_one_bit(self):
        assert quantize_det(0.3, QuantizationGrid(1, 1.0)) == 1.0

    def test_two_bit_nearest(self):
        assert quantize_det(0.5, QuantizationGrid(2, 1.0)) == pytest.approx(1 / 3)

    def test_midpoint_rounds_up(self):
        assert quantize_det(2 / 3, QuantizationGrid(2, 1.0)) == 1.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="clip"):
            quantize_det(1.5, QuantizationGrid(2, 1.0))

    def test_error_at_most_half_spacing(self):
        rng = np.random.default_rng(1)
        for bits in (1, 2, 4, 8, 16):
            X = rng.normal(size=(100, 20)) * 3.0
            r = 0.8 * float(np.max(np.abs(X)))
            g = QuantizationGrid(bits, r)
            xc = np.clip(X, -r, r)
            q = quantize_det(xc, g)
            assert np.max(np.abs(q - xc)) <= g.spacing / 2


class TestStochasticRounding:
    def test_grid_point_is_fixed(self):
        g = QuantizationGrid(2, 1.0)
        rng = CounterRng(3)
        cols = np.arange(500)
        out = quantize_stoch(np.full(500, 1 / 3), g, rng, 0, cols)
        np.testing.assert_allclose(out, 1 / 3, atol=1e-15)

    def test_bracket_probabilities(self):
        # x = 0.5 sits a quarter of the way from 1/3 to 1
        g = QuantizationGrid(2, 1.0)
        rng = CounterRng(11)
        cols = np.arange(200_000)
        out = quantize_stoch(np.full(cols.size, 0.5), g, rng, 0, cols)
        p_hi = np.mean(out == 1.0)
        assert p_hi == pytest.approx(0.25, abs=0.005)
        assert np.all((out == 1.0) | (np.abs(out - 1 / 3) < 1e-15))

    def test_moment_check_one_bit(self):
        # mean of 10^6 +-1 draws at x=0 should be within 3 * sigma / 10^3
        g = QuantizationGrid(1, 1.0)
        rng = CounterRng(17)
        cols = np.arange(1_000_000)
        out = quantize_stoch(np.zeros(cols.size), g, rng, 0, cols)
        assert abs(out.mean()) <= 3.0e-3

    def test_variance_popoviciu_bound(self):
        g = QuantizationGrid(3, 2.0)
        rng = CounterRng(23)
        x = 0.37
        cols = np.arange(200_000)
        out = quantize_stoch(np.full(cols.size, x), g, rng, 0, cols)
        assert out.var() <= g.spacing**2 / 4 + 1e-3
        assert g.spacing**2 / 4 <= g.clip**2 / (2**g.bits - 1) ** 2 + 1e-15


class TestClipThreshold:
    def test_exactly_representable_matrix(self):
        v = 0.7777731
        X = np.where(RNG.random((40, 25)) < 0.5, -v, v)
        rstar = find_clip_threshold(X, 1, tol=1e-6)
        f = quantization_objective(X, 1)
        sweep = np.arange(1e-4, v + 1e-4, 1e-4)
        best_sweep = min(f(float(r)) for r in sweep)
        assert f(rstar) <= best_sweep
        assert f(rstar) == pytest.approx(0.0, abs=1e-4)

    def test_outliers_get_clipped(self):
        X = np.full((100, 100), 0.1)
        X[::2] *= -1.0
        flat = X.ravel()
        idx = RNG.choice(flat.size, size=flat.size // 100, replace=False)
        flat[idx] = np.where(RNG.random(idx.size) < 0.5, -10.0, 10.0)
        rstar = find_clip_threshold(X, 1, tol=0.01)
        assert rstar < 10.0 * 0.5  # clipping the 1% outliers beats covering them
        # dense grid oracle at step 1e-3 * max|X|
        f = quantization_objective(X, 1)
        rs = np.arange(1e-2, 10.0 + 1e-2, 1e-2)
        assert f(rstar) <= min(f(float(r)) for r in rs) + 1e-6

    def test_fine_grid_limit(self):
        X = RNG.normal(size=(50, 20))
        f = quantization_objective(X, 31)
        assert f(float(np.max(np.abs(X)))) <= 1e-6 * fro_norm(X)

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError, match="all-zero"):
            find_clip_threshold(np.zeros((3, 3)), 2)

    @pytest.mark.parametrize("bits", [1, 2, 4])
    def test_golden_close_to_grid_sweep(self, bits):
        X = gen_student_t_matrix(100, 100, df=5.0, scale=1.0, seed=9)
        tol = 0.01
        f = quantization_objective(X, bits)
        rstar = find_clip_threshold(X, bits, tol=tol)
        xmax = float(np.max(np.abs(X)))
        rs = np.linspace(xmax / 1000, xmax, 1000)
        vals = [f(float(r)) for r in rs]
        i = int(np.argmin(vals))
        # allowed slack: the objective's variation over one tol-width
        slack = (
            max(f(min(rs[i] + tol, xmax)), f(max(rs[i] - tol, rs[0]))) - vals[i]
        )
        assert f(rstar) <= vals[i] + slack + 1e-12

    def test_grid_method_matches_sweep(self):
        X = RNG.normal(size=(30, 10))
        r = find_clip_threshold(X, 2, method="grid")
        f = quantization_objective(X, 2)
        xmax = float(np.max(np.abs(X)))
        rs = np.linspace(xmax / 1000, xmax, 1000)
        assert f(r) == min(f(float(v)) for v in rs)


class TestUniformCompression:
    def test_grid_matrix_round_trips_exactly(self):
        g = QuantizationGrid(3, 0.9371)
        codes = RNG.integers(0, 8, size=(30, 12))
        codes[0, 0] = 7  # pin max|X| to the clip value
        codes[0, 1] = 0
        X = g.values_for(codes)
        C = compress_uniform(X, 3)
        np.testing.assert_array_equal(decompress(C), X)

    def test_reconstruction_within_half_spacing(self):
        X = RNG.normal(size=(60, 15))
        C = compress_uniform(X, 4)
        clipped = np.clip(X, -C.grid.clip, C.grid.clip)
        assert np.max(np.abs(decompress(C) - clipped)) <= C.grid.spacing / 2

    def test_stochastic_runs_are_reproducible(self):
        X = RNG.normal(size=(50, 9))
        a = compress_uniform(X, 2, rounding="stochastic", seed=42)
        b = compress_uniform(X, 2, rounding="stochastic", seed=42)
        np.testing.assert_array_equal(a.codes, b.codes)
        c = compress_uniform(X, 2, rounding="stochastic", seed=43)
        assert np.any(c.codes != a.codes)

    @pytest.mark.parametrize("rounding", ["deterministic", "stochastic"])
    def test_thread_count_invariance(self, rounding):
        X = RNG.normal(size=(203, 17))
        one = compress_uniform(X, 3, rounding=rounding, seed=5, threads=1)
        many = compress_uniform(X, 3, rounding=rounding, seed=5, threads=8)
        np.testing.assert_array_equal(one.codes, many.codes)
        assert one.grid == many.grid

    def test_unbiasedness_of_stochastic_rounding(self):
        X = RNG.normal(size=(4, 5))
        C0 = compress_uniform(X, 2, rounding="stochastic", seed=0)
        r = C0.grid.clip
        target = np.clip(X, -r, r)
        draws = 10_000
        acc = np.zeros_like(X)
        for seed in range(draws):
            acc += decompress(compress_uniform(X, 2, rounding="stochastic", seed=seed))
        mean = acc / draws
        bound = 4.0 * C0.grid.spacing / np.sqrt(draws)
        frac_ok = np.mean(np.abs(mean - target) <= bound)
        assert frac_ok >= 0.99

    def test_compression_rate_near_32x_at_one_bit(self):
        X = RNG.normal(size=(1000, 96))
        C = compress_uniform(X, 1)
        assert 30.0 <= C.compression_rate <= 32.0


class TestKmeans1D:
    def test_two_clusters_exact(self):
        centroids, assign = kmeans_1d([0.0, 0.0, 1.0, 1.0], 2)
        np.testing.assert_allclose(centroids, [0.0, 1.0])
        assert kmeans_loss([0.0, 0.0, 1.0, 1.0], centroids, assign) == 0.0

    def test_three_points_two_clusters(self):
        values = [0.0, 0.4, 1.0]
        centroids, assign = kmeans_1d(values, 2)
        # exhaustive contiguous-partition oracle gives loss 0.08 at (0.2, 1)
        assert contiguous_partition_optimum(values, 2) == pytest.approx(0.08)
        np.testing.assert_allclose(centroids, [0.2, 1.0])
        assert kmeans_loss(values, centroids, assign) == pytest.approx(0.08)

    def test_single_cluster_is_mean(self):
        values = RNG.normal(size=17)
        centroids, assign = kmeans_1d(values, 1)
        assert centroids[0] == pytest.approx(values.mean())
        assert np.all(assign == 0)

    def test_more_clusters_than_distinct_values(self):
        centroids, assign = kmeans_1d([1.0, 1.0, 2.0], 4)
        assert centroids.shape == (4,)
        assert kmeans_loss([1.0, 1.0, 2.0], centroids, assign) == pytest.approx(0.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_near_optimal_on_small_instances(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 13))
        K = int(rng.integers(2, 4))
        values = rng.normal(size=n)
        centroids, assign = kmeans_1d(values, K)
        loss = kmeans_loss(values, centroids, assign)
        opt = contiguous_partition_optimum(values, K)
        assert loss <= 1.05 * opt + 1e-12

    def test_centroids_sorted(self):
        centroids, _ = kmeans_1d(RNG.normal(size=500), 16)
        assert np.all(np.diff(centroids) >= 0)


class TestKmeansCompression:
    def test_lossless_when_few_distinct_values(self):
        X = RNG.choice([-2.0, -0.5, 0.25, 3.0], size=(20, 6))
        C = compress_kmeans(X, 2)
        np.testing.assert_allclose(decompress(C), X, atol=1e-12)

    def test_one_bit_sign_matrix(self):
        X = np.array([[-1.0, -1.0], [1.0, 1.0]])
        C = compress_kmeans(X, 1)
        np.testing.assert_allclose(C.codebook, [-1.0, 1.0])

    def test_adapts_better_than_uniform_on_heavy_tails(self):
        X = gen_student_t_matrix(300, 30, df=3.0, scale=1.0, seed=5)
        for bits in (1, 2, 4):
            err_uniform = fro_norm(decompress(compress_uniform(X, bits)) - X)
            err_kmeans = fro_norm(decompress(compress_kmeans(X, bits)) - X)
            assert err_kmeans <= err_uniform

    def test_bits_range(self):
        with pytest.raises(ValueError):
            compress_kmeans(np.ones((2, 2)), 17)


class TestPcaCompression:
    def test_full_rank_keep_v_round_trip(self):
        X = RNG.normal(size=(30, 6))
        C = compress_pca(X, 6, keep_v=True)
        assert fro_norm(decompress(C) - X) <= 1e-8 * fro_norm(X)

    def test_rank_one_exact(self):
        u = RNG.normal(size=(20, 1))
        v = RNG.normal(size=(1, 5))
        X = u @ v
        C = compress_pca(X, 1, keep_v=True)
        assert fro_norm(decompress(C) - X) <= 1e-10 * fro_norm(X)

    def test_truncation_error_matches_spectral_tail(self):
        X = RNG.normal(size=(40, 10))
        s = thin_svd(X).s
        for k in (2, 5, 8):
            C = compress_pca(X, k, keep_v=True)
            tail = float(np.sum(s[k:] ** 2))
            assert fro_norm(decompress(C) - X) ** 2 == pytest.approx(tail, rel=1e-9)

    def test_reduced_shape_without_v(self):
        X = RNG.normal(size=(25, 8))
        C = compress_pca(X, 3)
        assert decompress(C).shape == (25, 3)

    def test_k_beyond_rank_rejected(self):
        X = np.outer(RNG.normal(size=12), RNG.normal(size=7))
        with pytest.raises(LinalgError, match="rank"):
            compress_pca(X, 3)


class TestCompressedEmbedding:
    def test_field_discipline(self):
        with pytest.raises(ValueError):
            CompressedEmbedding(method="uniform", n=2, d_orig=2, bits=2, codes=None)
        with pytest.raises(ValueError):
            CompressedEmbedding(method="nope", n=2, d_orig=2)

    def test_codes_stay_below_level_count(self):
        X = RNG.normal(size=(40, 11))
        for C in (compress_uniform(X, 3), compress_kmeans(X, 3)):
            from embcompress.bitpack import unpack_codes

            codes = unpack_codes(C.codes, C.d_orig, C.bits)
            assert codes.max() < (1 << C.bits)

    def test_payload_layout_example(self):
        # 9 one-bit codes per row pad to 2 bytes: codes block is 8 bytes
        X = RNG.normal(size=(4, 9))
        C = compress_uniform(X, 1)
        assert C.codes.nbytes == 8
