import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusedesc.binary import (
    BinaryDescriptor,
    DescriptorSet,
    IndexPair,
    cosine_rows,
    hamming,
    hamming_rows,
    match_distances,
    normalized_hamming,
    pack_bits,
    quantize_rows,
    read_descriptors,
    read_distances_csv,
    sign_quantize,
    unpack_bits,
    write_descriptors,
    write_distances_csv,
)
from fusedesc.dataset import PairSpec
from fusedesc.errors import CompatibilityError, DimensionError, FormatError


class TestPacking:
    @given(st.lists(st.booleans(), min_size=1, max_size=200))
    @settings(max_examples=100, deadline=None)
    def test_pack_unpack_roundtrip(self, bits):
        arr = np.array(bits, dtype=np.uint8)
        words = pack_bits(arr)
        np.testing.assert_array_equal(unpack_bits(words, len(bits))[0], arr)

    def test_bit_zero_is_word_lsb(self):
        words = pack_bits(np.array([1] + [0] * 63, dtype=np.uint8))
        assert words[0, 0] == 1

    def test_trailing_bits_are_zero(self):
        words = pack_bits(np.ones(10, dtype=np.uint8))
        assert words[0, 0] == (1 << 10) - 1


class TestSignQuantize:
    def test_hand_example_with_zero_rule(self):
        b = sign_quantize(np.array([0.3, -0.2, 0.0, -7.0]))
        np.testing.assert_array_equal(b.bits(), [1, 0, 1, 0])

    def test_all_positive_is_all_ones(self):
        b = sign_quantize(np.full(70, 0.5))
        assert b.bit_count() == 70
        np.testing.assert_array_equal(b.bits(), np.ones(70, dtype=np.uint8))

    @given(st.integers(min_value=1, max_value=150), st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=60, deadline=None)
    def test_negation_complements(self, length, seed):
        rng = np.random.default_rng(seed)
        d = rng.standard_normal(length)
        d[d == 0.0] = 1.0
        plus, minus = sign_quantize(d), sign_quantize(-d)
        np.testing.assert_array_equal(minus.bits(), 1 - plus.bits())

    def test_quantize_rows_matches_per_row(self):
        rng = np.random.default_rng(1)
        mat = rng.standard_normal((9, 37))
        words = quantize_rows(mat)
        for i in range(9):
            np.testing.assert_array_equal(words[i], sign_quantize(mat[i]).words)


class TestHamming:
    def test_self_distance_zero(self):
        b = sign_quantize(np.random.default_rng(2).standard_normal(64))
        assert hamming(b, b) == 0

    def test_four_bit_example_matches_bitcount_form(self):
        b1 = BinaryDescriptor(4, pack_bits(np.array([1, 1, 0, 0], dtype=np.uint8))[0])
        b2 = BinaryDescriptor(4, pack_bits(np.array([1, 0, 1, 0], dtype=np.uint8))[0])
        assert hamming(b1, b2) == 2
        inner = int((b1.bits() & b2.bits()).sum())
        assert b1.bit_count() + b2.bit_count() - 2 * inner == 2

    def test_complement_distance_is_length(self):
        d = np.random.default_rng(3).standard_normal(130)
        d[d == 0.0] = 1.0
        assert hamming(sign_quantize(d), sign_quantize(-d)) == 130

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            hamming(sign_quantize(np.ones(8)), sign_quantize(np.ones(9)))

    @given(st.integers(min_value=1, max_value=200), st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=60, deadline=None)
    def test_popcount_form_equals_bitcount_identity(self, length, seed):
        rng = np.random.default_rng(seed)
        x = rng.integers(0, 2, size=(2, length)).astype(np.uint8)
        b1 = BinaryDescriptor(length, pack_bits(x[0])[0])
        b2 = BinaryDescriptor(length, pack_bits(x[1])[0])
        inner = int((x[0] & x[1]).sum())
        assert hamming(b1, b2) == b1.bit_count() + b2.bit_count() - 2 * inner

    def test_metric_properties_b8_sampled_triples(self):
        descriptors = [
            BinaryDescriptor(8, np.array([v], dtype=np.uint64)) for v in range(256)
        ]
        for a, b in itertools.combinations(descriptors[:64], 2):
            assert hamming(a, b) == hamming(b, a)
        rng = np.random.default_rng(4)
        for _ in range(2000):
            i, j, k = rng.integers(0, 256, size=3)
            a, b, c = descriptors[i], descriptors[j], descriptors[k]
            assert hamming(a, c) <= hamming(a, b) + hamming(b, c)
        for d in descriptors:
            assert hamming(d, d) == 0


class TestNormalizedHamming:
    def test_identical_and_complement(self):
        d = np.random.default_rng(5).standard_normal(64)
        d[d == 0.0] = 1.0
        b = sign_quantize(d)
        assert normalized_hamming(b, b) == 0.0
        assert normalized_hamming(b, sign_quantize(-d)) == 1.0

    @pytest.mark.parametrize("bits", [8, 64, 128])
    def test_cosine_identity_on_sign_vectors(self, bits):
        from fusedesc.autodiff import Tensor, cosine_distance

        rng = np.random.default_rng(bits)
        for _ in range(500):
            u = rng.choice([-1.0, 1.0], size=bits)
            v = rng.choice([-1.0, 1.0], size=bits)
            cos = float(cosine_distance(Tensor(u), Tensor(v)).data)
            nh = normalized_hamming(sign_quantize(u), sign_quantize(v))
            assert cos == 1.0 - 2.0 * nh  # bitwise equality

    def test_hamming_rows_matches_scalar(self):
        rng = np.random.default_rng(6)
        a = quantize_rows(rng.standard_normal((20, 77)))
        b = quantize_rows(rng.standard_normal((20, 77)))
        rows = hamming_rows(a, b)
        for i in range(20):
            assert rows[i] == hamming(
                BinaryDescriptor(77, a[i]), BinaryDescriptor(77, b[i])
            )


def _random_set(rng, kind, count=11, bits=40):
    if kind == "real":
        data = rng.standard_normal((count, bits)).astype(np.float32)
    else:
        data = quantize_rows(rng.standard_normal((count, bits)))
    return DescriptorSet(kind, bits, data, rng.integers(0, 1000, size=count))


class TestDescriptorFile:
    @pytest.mark.parametrize("kind", ["real", "binary"])
    def test_roundtrip(self, tmp_path, kind):
        rng = np.random.default_rng(7)
        dset = _random_set(rng, kind)
        path = tmp_path / "d.pfds"
        write_descriptors(dset, path)
        loaded = read_descriptors(path)
        assert loaded.kind == kind and loaded.bit_length == 40
        np.testing.assert_array_equal(loaded.data, dset.data)
        np.testing.assert_array_equal(loaded.ids, dset.ids)

    def test_empty_set_roundtrips(self, tmp_path):
        dset = DescriptorSet("binary", 64, np.zeros((0, 1), dtype=np.uint64), np.zeros(0))
        path = tmp_path / "empty.pfds"
        write_descriptors(dset, path)
        loaded = read_descriptors(path)
        assert loaded.count == 0 and loaded.bit_length == 64

    def test_rewrite_bit_identical(self, tmp_path):
        dset = _random_set(np.random.default_rng(8), "real")
        p1, p2 = tmp_path / "a.pfds", tmp_path / "b.pfds"
        write_descriptors(dset, p1)
        write_descriptors(read_descriptors(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncation_rejected_with_offset(self, tmp_path):
        dset = _random_set(np.random.default_rng(9), "binary")
        path = tmp_path / "d.pfds"
        write_descriptors(dset, path)
        blob = path.read_bytes()
        for cut in (3, 7, 12, len(blob) - 2):
            bad = tmp_path / "cut.pfds"
            bad.write_bytes(blob[:cut])
            with pytest.raises(FormatError) as err:
                read_descriptors(bad)
            assert err.value.offset is not None

    def test_trailing_garbage_rejected(self, tmp_path):
        dset = _random_set(np.random.default_rng(10), "real")
        path = tmp_path / "d.pfds"
        write_descriptors(dset, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError):
            read_descriptors(path)

    def test_quantized_preserves_ids(self):
        dset = _random_set(np.random.default_rng(11), "real")
        q = dset.quantized()
        assert q.kind == "binary"
        np.testing.assert_array_equal(q.ids, dset.ids)
        np.testing.assert_array_equal(q.data, quantize_rows(dset.data))


class TestMatching:
    def test_identical_files_diagonal_pairs_score_zero(self):
        rng = np.random.default_rng(12)
        dset = _random_set(rng, "binary", count=6)
        other = DescriptorSet("binary", dset.bit_length, dset.data.copy(), dset.ids.copy())
        diagonal = [IndexPair(i, i) for i in range(6)]
        np.testing.assert_array_equal(match_distances(dset, other, diagonal), np.zeros(6))

    def test_kind_mismatch(self):
        rng = np.random.default_rng(13)
        with pytest.raises(CompatibilityError):
            match_distances(
                _random_set(rng, "real"), _random_set(rng, "binary"), [PairSpec(0, 1, 0)]
            )

    def test_real_distance_is_half_one_minus_cosine(self):
        rng = np.random.default_rng(14)
        dset = _random_set(rng, "real", count=5)
        pairs = [PairSpec(0, 1, 0), PairSpec(2, 3, 1)]
        d = match_distances(dset, dset, pairs)
        cos = cosine_rows(dset.data[[0, 2]], dset.data[[1, 3]])
        np.testing.assert_allclose(d, (1.0 - cos) / 2.0, rtol=1e-6)

    def test_distances_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(15)
        distances = rng.random(17)
        path = tmp_path / "distances.csv"
        write_distances_csv(distances, path)
        np.testing.assert_array_equal(read_distances_csv(path), distances)
