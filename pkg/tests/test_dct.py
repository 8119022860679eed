import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusedesc.dct import (
    DctPlan,
    DctStats,
    ZigzagOrder,
    dct2,
    denormalize_coeffs,
    fit_dct_stats,
    idct2,
    normalize_coeffs,
    zigzag_select,
)
from fusedesc.errors import BoundsError, DatasetError, DimensionError

from oracles import JPEG_ZIGZAG_8, direct_dct2, loop_dct2_pure, zigzag_pairs_by_walk


class TestDctPlan:
    @pytest.mark.parametrize("n", [1, 2, 8, 64])
    def test_basis_is_orthonormal(self, n):
        plan = DctPlan(n)
        np.testing.assert_allclose(plan.basis @ plan.basis.T, np.eye(n), atol=1e-9)

    def test_invalid_size(self):
        with pytest.raises(DimensionError):
            DctPlan(0)


class TestDct2:
    def test_constant_patch_all_energy_in_dc(self):
        c = 1.7
        plan = DctPlan(64)
        coeffs = dct2(np.full((64, 64), c), plan)
        assert coeffs[0, 0] == pytest.approx(64 * c, rel=1e-12)
        rest = coeffs.copy()
        rest[0, 0] = 0.0
        np.testing.assert_allclose(rest, 0.0, atol=1e-9)

    def test_zero_patch(self):
        np.testing.assert_array_equal(dct2(np.zeros((8, 8)), DctPlan(8)), np.zeros((8, 8)))

    def test_matches_pure_python_quadruple_loop_8x8(self):
        rng = np.random.default_rng(0)
        patch = rng.standard_normal((8, 8))
        np.testing.assert_allclose(
            dct2(patch, DctPlan(8)), loop_dct2_pure(patch.tolist()), atol=1e-9
        )

    def test_matches_direct_summation_64x64(self):
        rng = np.random.default_rng(1)
        patch = rng.standard_normal((64, 64))
        np.testing.assert_allclose(dct2(patch, DctPlan(64)), direct_dct2(patch), atol=1e-9)

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            dct2(np.zeros((8, 8)), DctPlan(16))

    def test_parseval(self):
        rng = np.random.default_rng(2)
        for n in (8, 64):
            patch = rng.standard_normal((n, n))
            coeffs = dct2(patch, DctPlan(n))
            assert (coeffs**2).sum() == pytest.approx((patch**2).sum(), rel=1e-6)

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(3)
        plan = DctPlan(16)
        patch = rng.standard_normal((16, 16))
        np.testing.assert_allclose(idct2(dct2(patch, plan), plan), patch, atol=1e-9)

    def test_linearity(self):
        rng = np.random.default_rng(4)
        plan = DctPlan(12)
        p, q = rng.standard_normal((2, 12, 12))
        a, b = 2.5, -0.75
        np.testing.assert_allclose(
            dct2(a * p + b * q, plan),
            a * dct2(p, plan) + b * dct2(q, plan),
            atol=1e-9,
        )


class TestZigzag:
    def test_jpeg_8x8_sequence(self):
        assert ZigzagOrder(8).flat_indices.tolist() == JPEG_ZIGZAG_8

    @given(st.integers(min_value=1, max_value=16))
    @settings(max_examples=16, deadline=None)
    def test_is_permutation_with_monotone_antidiagonals(self, n):
        order = ZigzagOrder(n)
        assert sorted(order.flat_indices.tolist()) == list(range(n * n))
        diags = [r + c for r, c in order.pairs]
        assert diags == sorted(diags)
        assert order.pairs[0] == (0, 0)

    @given(st.integers(min_value=2, max_value=12))
    @settings(max_examples=11, deadline=None)
    def test_matches_walk_oracle(self, n):
        assert ZigzagOrder(n).pairs == zigzag_pairs_by_walk(n)

    def test_hand_example_4x4(self):
        mat = np.arange(16.0).reshape(4, 4)
        out = zigzag_select(mat, ZigzagOrder(4), 6)
        np.testing.assert_array_equal(out, [0.0, 1.0, 4.0, 8.0, 5.0, 2.0])

    def test_single_coefficient_is_dc(self):
        mat = np.arange(16.0).reshape(4, 4) + 3.0
        np.testing.assert_array_equal(zigzag_select(mat, ZigzagOrder(4), 1), [3.0])

    def test_561_is_the_triangle_r_plus_c_le_32(self):
        order = ZigzagOrder(64)
        selected = set(order.pairs[:561])
        expected = {(r, c) for r in range(64) for c in range(64) if r + c <= 32}
        assert selected == expected

    def test_count_out_of_bounds(self):
        with pytest.raises(BoundsError):
            zigzag_select(np.zeros((4, 4)), ZigzagOrder(4), 17)


class TestDctStats:
    def test_hand_example_two_vectors(self):
        stats = fit_dct_stats([np.array([0.0, 2.0]), np.array([2.0, 2.0])])
        np.testing.assert_allclose(stats.mean, [1.0, 2.0])
        assert stats.std[0] == pytest.approx(np.sqrt(2.0))  # (n-1) denominator
        assert stats.std[1] == 1e-8  # degenerate variance floored
        assert stats.count == 2

    def test_identical_vectors_floored(self):
        stats = fit_dct_stats([np.ones(4)] * 5)
        np.testing.assert_array_equal(stats.std, np.full(4, 1e-8))

    def test_self_normalization_has_zero_mean(self):
        rng = np.random.default_rng(5)
        vectors = rng.standard_normal((40, 6)) * 10.0 + 3.0
        stats = fit_dct_stats(vectors)
        normalized = normalize_coeffs(vectors, stats)
        np.testing.assert_allclose(normalized.mean(axis=0), 0.0, atol=1e-12)

    def test_empty_input_rejected(self):
        with pytest.raises(DatasetError):
            fit_dct_stats([])

    def test_single_vector_rejected(self):
        with pytest.raises(DatasetError):
            fit_dct_stats([np.ones(3)])

    def test_global_mode_uses_one_pair(self):
        rng = np.random.default_rng(6)
        vectors = rng.standard_normal((10, 5))
        stats = fit_dct_stats(vectors, global_stats=True)
        assert np.unique(stats.mean).size == 1
        assert np.unique(stats.std).size == 1
        assert stats.mean[0] == pytest.approx(vectors.mean())


class TestNormalize:
    def test_mean_input_maps_to_zero(self):
        stats = DctStats(np.array([1.0, -2.0]), np.array([3.0, 4.0]))
        np.testing.assert_array_equal(normalize_coeffs(stats.mean, stats), [0.0, 0.0])

    def test_identity_stats(self):
        stats = DctStats(np.zeros(3), np.ones(3))
        v = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(normalize_coeffs(v, stats), v)

    def test_roundtrip(self):
        rng = np.random.default_rng(7)
        stats = DctStats(rng.standard_normal(6), np.abs(rng.standard_normal(6)) + 0.1)
        v = rng.standard_normal(6)
        np.testing.assert_allclose(
            denormalize_coeffs(normalize_coeffs(v, stats), stats), v, atol=1e-6
        )

    def test_length_mismatch(self):
        stats = DctStats(np.zeros(3), np.ones(3))
        with pytest.raises(DimensionError):
            normalize_coeffs(np.zeros(4), stats)
