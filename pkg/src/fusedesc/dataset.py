"""Patch stores: mosaic ingestion, pair sampling, and synthetic generation.

Stores hold 64x64 single-channel uint8 patches plus the 3D-point identity of
each patch; a pair is matching exactly when both patches share a point id.
"""

from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from ._binio import ByteReader, ByteWriter
from .errors import DatasetError, DimensionError, FormatError
from .rng import sub_rng

PATCH_SIZE = 64
_MOSAIC_SIDE = 1024
_GRID = _MOSAIC_SIDE // PATCH_SIZE  # 16
_PATCHES_PER_MOSAIC = _GRID * _GRID  # 256


@dataclass
class PatchStore:
    name: str
    patches: np.ndarray  # (N, 64, 64) uint8
    point_ids: np.ndarray  # (N,) int64

    def __post_init__(self):
        self.patches = np.ascontiguousarray(self.patches, dtype=np.uint8)
        self.point_ids = np.ascontiguousarray(self.point_ids, dtype=np.int64)
        if self.patches.ndim != 3 or self.patches.shape[1:] != (PATCH_SIZE, PATCH_SIZE):
            raise DimensionError(
                f"patches must be (N, {PATCH_SIZE}, {PATCH_SIZE}), got {self.patches.shape}"
            )
        if self.point_ids.shape != (self.patches.shape[0],):
            raise DatasetError(
                f"{self.patches.shape[0]} patches but {self.point_ids.shape[0]} point ids"
            )

    @property
    def count(self) -> int:
        return self.patches.shape[0]


@dataclass(frozen=True)
class PairSpec:
    index_a: int
    index_b: int
    label: int

    def __post_init__(self):
        if self.index_a == self.index_b:
            raise DatasetError(f"pair may not reference patch {self.index_a} twice")


def pair_label(store: PatchStore, index_a: int, index_b: int) -> int:
    return int(store.point_ids[index_a] == store.point_ids[index_b])


# ---------------------------------------------------------------------------
# Brown-style mosaic ingestion


def _mosaic_files(directory: Path) -> list[Path]:
    files = [
        p
        for p in directory.iterdir()
        if p.suffix.lower() in (".bmp", ".png") and re.search(r"\d+", p.stem)
    ]

    def file_number(p: Path) -> int:
        return int(re.findall(r"\d+", p.stem)[-1])

    return sorted(files, key=file_number)


def _load_mosaic(path: Path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim == 3:
        warnings.warn(f"{path.name} is multi-channel; using the first channel")
        arr = arr[:, :, 0]
    if arr.shape != (_MOSAIC_SIDE, _MOSAIC_SIDE):
        raise FormatError(
            f"mosaic must be {_MOSAIC_SIDE}x{_MOSAIC_SIDE}, got {arr.shape}", path=path
        )
    return arr.astype(np.uint8)


def _mosaic_to_patches(mosaic: np.ndarray) -> np.ndarray:
    return (
        mosaic.reshape(_GRID, PATCH_SIZE, _GRID, PATCH_SIZE)
        .transpose(0, 2, 1, 3)
        .reshape(_PATCHES_PER_MOSAIC, PATCH_SIZE, PATCH_SIZE)
    )


def ingest_brown(directory) -> PatchStore:
    """Load a directory of 1024x1024 patch mosaics plus its info file.

    Patch i occupies cell i mod 256 (row-major) of mosaic i // 256. The info
    file holds one line per patch whose first token is the patch's 3D-point
    id; the final mosaic may be partially used, but every other cell count
    mismatch is rejected.
    """
    directory = Path(directory)
    info_path = directory / "info.txt"
    if not info_path.exists():
        raise DatasetError(f"no info.txt in {directory}")
    point_ids = []
    with open(info_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                point_ids.append(int(tokens[0]))
            except ValueError:
                raise DatasetError(
                    f"{info_path}:{line_no}: first token {tokens[0]!r} is not a point id"
                ) from None
    count = len(point_ids)
    if count == 0:
        raise DatasetError(f"{info_path} lists no patches")

    files = _mosaic_files(directory)
    if not files:
        raise DatasetError(f"no numbered .bmp/.png mosaics in {directory}")
    capacity = _PATCHES_PER_MOSAIC * len(files)
    needed_files = -(-count // _PATCHES_PER_MOSAIC)
    if count > capacity or needed_files != len(files):
        raise DatasetError(
            f"info.txt lists {count} patches but {len(files)} mosaics hold "
            f"{capacity} cells ({needed_files} files expected)"
        )

    patches = np.concatenate([_mosaic_to_patches(_load_mosaic(p)) for p in files])
    return PatchStore(directory.name, patches[:count], np.asarray(point_ids))


# ---------------------------------------------------------------------------
# pair sampling


def _matching_pair_universe(point_ids: np.ndarray) -> list[tuple[int, int]]:
    groups: dict[int, list[int]] = {}
    for idx, pid in enumerate(point_ids):
        groups.setdefault(int(pid), []).append(idx)
    pairs = []
    for members in groups.values():
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                pairs.append((members[i], members[j]))
    return pairs


def sample_pairs(store: PatchStore, n_matching: int, n_nonmatching: int, seed: int):
    """Uniform per-class pair sampling without replacement, seeded."""
    rng = sub_rng(seed, "pair-sampling")
    n = store.count
    matching_universe = _matching_pair_universe(store.point_ids)
    total_pairs = n * (n - 1) // 2
    nonmatching_available = total_pairs - len(matching_universe)
    if n_matching > len(matching_universe):
        raise DatasetError(
            f"requested {n_matching} matching pairs but only "
            f"{len(matching_universe)} exist"
        )
    if n_nonmatching > nonmatching_available:
        raise DatasetError(
            f"requested {n_nonmatching} non-matching pairs but only "
            f"{nonmatching_available} exist"
        )

    pairs: list[PairSpec] = []
    if n_matching:
        chosen = rng.choice(len(matching_universe), size=n_matching, replace=False)
        pairs += [
            PairSpec(*matching_universe[i], 1) for i in sorted(int(c) for c in chosen)
        ]

    if n_nonmatching:
        if nonmatching_available <= max(200_000, 4 * n_nonmatching):
            universe = [
                (i, j)
                for i in range(n)
                for j in range(i + 1, n)
                if store.point_ids[i] != store.point_ids[j]
            ]
            chosen = rng.choice(len(universe), size=n_nonmatching, replace=False)
            pairs += [PairSpec(*universe[i], 0) for i in sorted(int(c) for c in chosen)]
        else:
            seen: set[tuple[int, int]] = set()
            while len(seen) < n_nonmatching:
                i, j = (int(v) for v in rng.integers(0, n, size=2))
                if i == j or store.point_ids[i] == store.point_ids[j]:
                    continue
                key = (min(i, j), max(i, j))
                if key not in seen:
                    seen.add(key)
                    pairs.append(PairSpec(*key, 0))
    return pairs


# ---------------------------------------------------------------------------
# synthetic desk-scale data


@dataclass
class SyntheticSpec:
    """Band-limited random textures with jittered matching partners."""

    base_count: int = 200
    n_matching: int = 200
    n_nonmatching: int = 200
    illumination_jitter: float = 0.15  # multiplicative amplitude
    shift_range: float = 0.5  # max sub-pixel shift per axis
    noise_std: float = 3.0  # additive, in 0..255 units
    texture_sigma: float = 3.0  # band limit of the base textures
    seed: int = 0

    def validate(self):
        if self.base_count < 2:
            raise DatasetError("need at least 2 base patches")
        if min(self.illumination_jitter, self.shift_range, self.noise_std) < 0:
            raise DatasetError("jitter amplitudes must be >= 0")
        max_nonmatching = self.base_count * (self.base_count - 1) // 2
        if self.n_nonmatching > max_nonmatching:
            raise DatasetError(
                f"{self.n_nonmatching} non-matching pairs need more than "
                f"{self.base_count} bases"
            )


_FIELD_MARGIN = 16


def _to_u8(field: np.ndarray) -> np.ndarray:
    return np.clip(np.round(field), 0, 255).astype(np.uint8)


def generate_synthetic(spec: SyntheticSpec) -> tuple[PatchStore, list[PairSpec]]:
    """Anchor patch per base plus one jittered partner per matching pair."""
    spec.validate()
    rng = sub_rng(spec.seed, "synthetic")
    side = PATCH_SIZE + 2 * _FIELD_MARGIN
    lo, hi = _FIELD_MARGIN, _FIELD_MARGIN + PATCH_SIZE

    fields = []
    anchors = np.empty((spec.base_count, PATCH_SIZE, PATCH_SIZE), dtype=np.uint8)
    for b in range(spec.base_count):
        field = ndimage.gaussian_filter(
            rng.standard_normal((side, side)), spec.texture_sigma
        )
        field = 128.0 + 45.0 * field / max(field.std(), 1e-12)
        fields.append(field)
        anchors[b] = _to_u8(field[lo:hi, lo:hi])

    partners = np.empty((spec.n_matching, PATCH_SIZE, PATCH_SIZE), dtype=np.uint8)
    partner_base = np.empty(spec.n_matching, dtype=np.int64)
    for k in range(spec.n_matching):
        b = k % spec.base_count
        partner_base[k] = b
        field = fields[b]
        if spec.shift_range > 0:
            offset = rng.uniform(-spec.shift_range, spec.shift_range, size=2)
            field = ndimage.shift(field, offset, order=3, mode="nearest")
        view = field[lo:hi, lo:hi]
        if spec.illumination_jitter > 0:
            view = view * (1.0 + rng.uniform(-spec.illumination_jitter, spec.illumination_jitter))
        if spec.noise_std > 0:
            view = view + rng.normal(0.0, spec.noise_std, size=view.shape)
        partners[k] = _to_u8(view)

    patches = np.concatenate([anchors, partners])
    point_ids = np.concatenate(
        [np.arange(spec.base_count, dtype=np.int64), partner_base]
    )
    store = PatchStore(f"synthetic-{spec.seed}", patches, point_ids)

    pairs = [
        PairSpec(int(partner_base[k]), spec.base_count + k, 1)
        for k in range(spec.n_matching)
    ]
    combos = spec.base_count * (spec.base_count - 1) // 2
    chosen = rng.choice(combos, size=spec.n_nonmatching, replace=False)
    # linear index -> (i, j) over the upper triangle, row-major
    for c in sorted(int(v) for v in chosen):
        i = int((2 * spec.base_count - 1 - np.sqrt((2 * spec.base_count - 1) ** 2 - 8 * c)) // 2)
        j = c - i * (2 * spec.base_count - i - 1) // 2 + i + 1
        pairs.append(PairSpec(i, j, 0))
    return store, pairs


# ---------------------------------------------------------------------------
# store file ("PFPS") and pair listings

_STORE_MAGIC = b"PFPS"


def save_store(store: PatchStore, path):
    """magic, count, 64x64 bytes per patch, then point ids (u32)."""
    if np.any(store.point_ids < 0) or np.any(store.point_ids > 0xFFFFFFFF):
        raise DatasetError("point ids must fit in 32 bits for the store file")
    w = ByteWriter()
    w.raw(_STORE_MAGIC)
    w.u64(store.count)
    w.array(store.patches, np.uint8)
    w.array(store.point_ids, np.uint32)
    w.write_to(path)


def load_store(path) -> PatchStore:
    with open(path, "rb") as fh:
        r = ByteReader(fh.read(), path=path)
    r.expect_magic(_STORE_MAGIC)
    count = r.u64("patch count")
    patches = r.array(np.uint8, count * PATCH_SIZE * PATCH_SIZE, "patches").reshape(
        count, PATCH_SIZE, PATCH_SIZE
    )
    point_ids = r.array(np.uint32, count, "point ids").astype(np.int64)
    r.expect_eof("patch store")
    return PatchStore(Path(path).stem, patches, point_ids)


def save_pairs_csv(pairs, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index_a", "index_b", "label"])
        for p in pairs:
            writer.writerow([p.index_a, p.index_b, p.label])


def load_pairs_csv(path) -> list[PairSpec]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index_a", "index_b", "label"]:
            raise FormatError(f"unexpected pairs header {header!r}", path=path)
        return [PairSpec(int(a), int(b), int(lbl)) for a, b, lbl in reader]


def load_brown_pair_file(path) -> list[PairSpec]:
    """Pre-sampled pair listing: per line, tokens 0/3 are patch indices and
    tokens 1/4 the 3D-point ids deciding the label."""
    pairs = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 5:
                raise FormatError(f"line {line_no}: expected >= 5 tokens", path=path)
            a, pid_a, b, pid_b = int(tokens[0]), int(tokens[1]), int(tokens[3]), int(tokens[4])
            pairs.append(PairSpec(a, b, int(pid_a == pid_b)))
    return pairs
