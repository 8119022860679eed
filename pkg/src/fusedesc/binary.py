"""Sign quantization, packed binary descriptors, and Hamming-space matching.

Bits pack little-endian into 64-bit words so distances reduce to word-wise
XOR plus population count. Bit j is 1 when descriptor element j is >= 0
(exact zero maps to 1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._binio import ByteReader, ByteWriter
from .errors import CompatibilityError, DimensionError, FormatError

_WORD_BITS = 64


def _word_count(bit_length: int) -> int:
    return (bit_length + _WORD_BITS - 1) // _WORD_BITS


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Boolean rows -> uint64 words, bit j at word j//64, bit position j%64."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    n, b = bits.shape
    padded = _word_count(b) * _WORD_BITS
    if padded != b:
        bits = np.concatenate([bits, np.zeros((n, padded - b), dtype=np.uint8)], axis=1)
    packed = np.packbits(bits, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64)


def unpack_bits(words: np.ndarray, bit_length: int) -> np.ndarray:
    words = np.atleast_2d(np.asarray(words, dtype=np.uint64))
    raw = words.astype("<u8").view(np.uint8).reshape(words.shape[0], -1)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    return bits[:, :bit_length]


@dataclass
class BinaryDescriptor:
    bit_length: int
    words: np.ndarray  # (ceil(B/64),) uint64, trailing bits zero

    def __post_init__(self):
        self.words = np.asarray(self.words, dtype=np.uint64)
        if self.words.shape != (_word_count(self.bit_length),):
            raise DimensionError(
                f"{self.bit_length}-bit descriptor needs "
                f"{_word_count(self.bit_length)} words, got {self.words.shape}"
            )

    def bits(self) -> np.ndarray:
        return unpack_bits(self.words[None], self.bit_length)[0]

    def bit_count(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def __eq__(self, other):
        return (
            isinstance(other, BinaryDescriptor)
            and self.bit_length == other.bit_length
            and np.array_equal(self.words, other.words)
        )


def sign_quantize(d: np.ndarray) -> BinaryDescriptor:
    """bit j = 1 iff d_j >= 0."""
    d = np.asarray(d)
    if d.ndim != 1:
        raise DimensionError(f"descriptor must be a vector, got shape {d.shape}")
    return BinaryDescriptor(d.shape[0], pack_bits(d >= 0)[0])


def quantize_rows(matrix: np.ndarray) -> np.ndarray:
    """(N, B) real descriptors -> (N, ceil(B/64)) packed sign words."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise DimensionError(f"expected (N, B) descriptors, got shape {matrix.shape}")
    return pack_bits(matrix >= 0)


def hamming(b1: BinaryDescriptor, b2: BinaryDescriptor) -> int:
    """Number of differing bit positions (popcount of XOR)."""
    if b1.bit_length != b2.bit_length:
        raise DimensionError(
            f"descriptor lengths differ: {b1.bit_length} vs {b2.bit_length}"
        )
    return int(np.bitwise_count(b1.words ^ b2.words).sum())


def normalized_hamming(b1: BinaryDescriptor, b2: BinaryDescriptor) -> float:
    """Hamming distance over B: 0 for identical, 1 for complementary."""
    return hamming(b1, b2) / b1.bit_length


def hamming_rows(words_a: np.ndarray, words_b: np.ndarray) -> np.ndarray:
    """Row-wise Hamming distances between two (N, W) packed word arrays."""
    a = np.asarray(words_a, dtype=np.uint64)
    b = np.asarray(words_b, dtype=np.uint64)
    if a.shape != b.shape:
        raise DimensionError(f"word array shapes differ: {a.shape} vs {b.shape}")
    return np.bitwise_count(a ^ b).sum(axis=1).astype(np.int64)


def cosine_rows(mat_a: np.ndarray, mat_b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity between two (N, B) real descriptor arrays."""
    a = np.asarray(mat_a, dtype=np.float64)
    b = np.asarray(mat_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"descriptor shapes differ: {a.shape} vs {b.shape}")
    denom = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
    return (a * b).sum(axis=1) / denom


# ---------------------------------------------------------------------------
# descriptor sets and the "PFDS" file


@dataclass
class DescriptorSet:
    """A batch of descriptors plus the patch index each one came from."""

    kind: str  # "real" | "binary"
    bit_length: int
    data: np.ndarray  # real: (N, B) float32; binary: (N, ceil(B/64)) uint64
    ids: np.ndarray  # (N,) uint64 source patch identifiers

    def __post_init__(self):
        if self.kind not in ("real", "binary"):
            raise ValueError(f"kind must be 'real' or 'binary', got {self.kind!r}")
        if self.kind == "real":
            self.data = np.ascontiguousarray(self.data, dtype=np.float32)
            expected = self.bit_length
        else:
            self.data = np.ascontiguousarray(self.data, dtype=np.uint64)
            expected = _word_count(self.bit_length)
        self.ids = np.ascontiguousarray(self.ids, dtype=np.uint64)
        if self.data.ndim != 2 or self.data.shape[1] != expected:
            raise DimensionError(
                f"{self.kind} payload must be (N, {expected}), got {self.data.shape}"
            )
        if self.ids.shape != (self.data.shape[0],):
            raise DimensionError("one source id required per descriptor")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    def quantized(self) -> "DescriptorSet":
        if self.kind != "real":
            raise CompatibilityError("only real descriptor sets can be quantized")
        return DescriptorSet("binary", self.bit_length, quantize_rows(self.data), self.ids)


_DESCRIPTOR_MAGIC = b"PFDS"
_DESCRIPTOR_VERSION = 1
_KIND_CODES = {"real": 0, "binary": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def write_descriptors(dset: DescriptorSet, path):
    w = ByteWriter()
    w.raw(_DESCRIPTOR_MAGIC)
    w.u8(_DESCRIPTOR_VERSION)
    w.u8(_KIND_CODES[dset.kind])
    w.u16(dset.bit_length)
    w.u64(dset.count)
    w.array(dset.data, np.float32 if dset.kind == "real" else np.uint64)
    w.array(dset.ids, np.uint64)
    w.write_to(path)


def read_descriptors(path) -> DescriptorSet:
    with open(path, "rb") as fh:
        r = ByteReader(fh.read(), path=path)
    r.expect_magic(_DESCRIPTOR_MAGIC)
    version = r.u8("version")
    if version != _DESCRIPTOR_VERSION:
        raise FormatError(
            f"unsupported descriptor version {version}", offset=4, path=path
        )
    kind_code = r.u8("kind")
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"unknown descriptor kind {kind_code}", offset=5, path=path)
    kind = _KIND_NAMES[kind_code]
    bit_length = r.u16("bit length")
    count = r.u64("count")
    width = bit_length if kind == "real" else _word_count(bit_length)
    data = r.array(
        np.float32 if kind == "real" else np.uint64, count * width, "payload"
    ).reshape(count, width)
    ids = r.array(np.uint64, count, "source ids")
    r.expect_eof("descriptor set")
    return DescriptorSet(kind, bit_length, data, ids)


# ---------------------------------------------------------------------------
# pairwise matching


@dataclass(frozen=True)
class IndexPair:
    """Cross-file pair: unlike in-store pairs, index_a may equal index_b."""

    index_a: int
    index_b: int


def match_distances(set_a: DescriptorSet, set_b: DescriptorSet, pairs) -> np.ndarray:
    """Distance per (index_a, index_b) pair.

    Binary sets compare by normalized Hamming distance; real sets by the
    cosine similarity mapped to (1 - c) / 2 so matching pairs score near 0
    either way.
    """
    if set_a.kind != set_b.kind:
        raise CompatibilityError(f"descriptor kinds differ: {set_a.kind} vs {set_b.kind}")
    if set_a.bit_length != set_b.bit_length:
        raise CompatibilityError(
            f"descriptor widths differ: {set_a.bit_length} vs {set_b.bit_length}"
        )
    idx_a = np.array([p.index_a for p in pairs], dtype=np.int64)
    idx_b = np.array([p.index_b for p in pairs], dtype=np.int64)
    if idx_a.size and (idx_a.max(initial=0) >= set_a.count or idx_b.max(initial=0) >= set_b.count):
        raise CompatibilityError("pair indices exceed descriptor counts")
    if set_a.kind == "binary":
        return hamming_rows(set_a.data[idx_a], set_b.data[idx_b]) / set_a.bit_length
    return (1.0 - cosine_rows(set_a.data[idx_a], set_b.data[idx_b])) / 2.0


def write_distances_csv(distances: np.ndarray, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "distance"])
        for i, d in enumerate(distances):
            writer.writerow([i, repr(float(d))])


def read_distances_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["pair_id", "distance"]:
            raise FormatError(f"unexpected distances header {header!r}", path=path)
        return np.array([float(row[1]) for row in reader], dtype=np.float64)
