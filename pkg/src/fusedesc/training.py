"""Input normalization, squared-cosine loss, batching, and the training loop.

Patches are first divided by their own L2 norm (cancelling global illumination
scaling) and then standardized with a scalar mean/std fitted over the
L2-normalized training split; DCT coefficients get their own per-coefficient
statistics from the same split. Training minimizes (label - cosine)^2 per
sample with one Adagrad step per batch and early-stops on a held-out
validation split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import network as net
from ._binio import ByteReader, ByteWriter
from .dct import DctStats
from .errors import (
    DatasetError,
    DegenerateInputError,
    TrainingDivergedError,
)
from .rng import sub_seed


@dataclass
class PreprocStats:
    """Scalar pixel statistics plus the DCT coefficient statistics."""

    pixel_mean: float
    pixel_std: float
    dct_stats: DctStats | None = None
    dataset_id: str = ""

    def __post_init__(self):
        if self.pixel_std <= 0:
            raise DegenerateInputError(f"pixel std must be > 0, got {self.pixel_std}")


@dataclass(eq=False)
class Sample:
    patch_a: np.ndarray
    patch_b: np.ndarray
    label: int  # 1 = same 3D point, 0 = different


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-4
    matching_per_batch: int = 100
    nonmatching_per_batch: int = 100
    max_epochs: int = 400
    patience_epochs: int = 10
    seed: int = 0
    validation_metric: str = "loss"  # "loss" | "fpr95"

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        for name in ("matching_per_batch", "nonmatching_per_batch", "max_epochs", "patience_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.patience_epochs > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.validation_metric not in ("loss", "fpr95"):
            raise ValueError(f"unknown validation metric {self.validation_metric!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        from dataclasses import fields as dc_fields

        known = {f.name for f in dc_fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


# ---------------------------------------------------------------------------
# preprocessing


def _l2_normalize_rows(patches: np.ndarray) -> np.ndarray:
    p = np.asarray(patches, dtype=np.float64)
    norms = np.sqrt((p * p).sum(axis=(1, 2), keepdims=True))
    if np.any(norms == 0.0):
        raise DegenerateInputError("all-zero patch cannot be L2-normalized")
    return p / norms


def fit_preproc_stats(
    patches: np.ndarray,
    config: net.NetworkConfig,
    dataset_id: str = "",
    global_dct_stats: bool = False,
) -> PreprocStats:
    """Fit pixel and DCT statistics over the training patches only."""
    from .dct import fit_dct_stats

    normalized = _l2_normalize_rows(patches)
    mean = float(normalized.mean())
    std = float(normalized.std())
    stats = PreprocStats(mean, std, dataset_id=dataset_id)
    if config.dct_coeff_count:
        pre = (normalized - mean) / std
        plan, order = net._plan_and_order(config.input_size)
        take = order.flat_indices[: config.dct_coeff_count]
        coeffs = np.einsum("ij,njk,lk->nil", plan.basis, pre, plan.basis, optimize=True)
        vectors = coeffs.reshape(pre.shape[0], -1)[:, take]
        stats.dct_stats = fit_dct_stats(vectors, global_stats=global_dct_stats)
    return stats


def preprocess_patch(raw: np.ndarray, stats: PreprocStats) -> np.ndarray:
    """L2-normalize one patch, then standardize with the fitted scalars."""
    return preprocess_batch(np.asarray(raw)[None], stats)[0]


def preprocess_batch(raw: np.ndarray, stats: PreprocStats) -> np.ndarray:
    return (_l2_normalize_rows(raw) - stats.pixel_mean) / stats.pixel_std


# ---------------------------------------------------------------------------
# loss and batches


def pair_loss(label, cosine):
    """(label - cosine)^2; works on floats and on tape tensors alike."""
    if isinstance(cosine, ad.Tensor):
        return ad.square(ad.sub_const(label, cosine))
    return (label - cosine) ** 2


def _batch_indices(labels: np.ndarray, config: TrainingConfig, epoch_seed) -> list[np.ndarray]:
    rng = np.random.default_rng(epoch_seed)
    matching = np.flatnonzero(labels == 1)
    nonmatching = np.flatnonzero(labels == 0)
    n_batches = min(
        len(matching) // config.matching_per_batch,
        len(nonmatching) // config.nonmatching_per_batch,
    )
    if n_batches == 0:
        raise DatasetError(
            f"pool of {len(matching)} matching / {len(nonmatching)} non-matching "
            f"samples cannot fill a {config.matching_per_batch}+"
            f"{config.nonmatching_per_batch} batch"
        )
    rng.shuffle(matching)
    rng.shuffle(nonmatching)
    batches = []
    for b in range(n_batches):
        m = matching[b * config.matching_per_batch : (b + 1) * config.matching_per_batch]
        n = nonmatching[
            b * config.nonmatching_per_batch : (b + 1) * config.nonmatching_per_batch
        ]
        batches.append(np.concatenate([m, n]))
    return batches


def make_batches(samples, config: TrainingConfig, epoch_seed) -> list[list[Sample]]:
    """Deterministic class-balanced batches; leftover samples are dropped."""
    config.validate()
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return [
        [samples[i] for i in idx] for idx in _batch_indices(labels, config, epoch_seed)
    ]


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation_error: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    def best_validation_error(self) -> float:
        return min(r.validation_error for r in self.records)


def write_history_csv(history: TrainingHistory, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "validation_error"])
        for r in history.records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.validation_error)])


class _SampleArrays:
    """Preprocessed per-side patch/DCT arrays for a sample list."""

    def __init__(self, samples, net_config: net.NetworkConfig, stats: PreprocStats, dtype):
        if not samples:
            raise DatasetError("sample set is empty")
        self.labels = np.array([s.label for s in samples], dtype=np.int64)
        self.a = preprocess_batch(np.stack([s.patch_a for s in samples]), stats).astype(dtype)
        self.b = preprocess_batch(np.stack([s.patch_b for s in samples]), stats).astype(dtype)
        self.dct_a = self.dct_b = None
        if net_config.dct_coeff_count:
            self.dct_a = net.dct_feature_rows(self.a, net_config, stats.dct_stats)
            self.dct_b = net.dct_feature_rows(self.b, net_config, stats.dct_stats)


def _validation_error(
    arrays: _SampleArrays, store, net_config, train_config: TrainingConfig
) -> float:
    # run the DCT branch from the precomputed rows to keep epochs cheap
    from .binary import cosine_rows

    n = arrays.labels.shape[0]
    da = np.empty((n, net_config.bottleneck), dtype=np.float32)
    db = np.empty_like(da)
    for s in range(0, n, 256):
        sl = slice(s, min(n, s + 256))
        feats_a = arrays.dct_a[sl] if arrays.dct_a is not None else None
        feats_b = arrays.dct_b[sl] if arrays.dct_b is not None else None
        da[sl] = net.forward_batch(
            arrays.a[sl][:, None], feats_a, store, net_config, mode="eval"
        ).data
        db[sl] = net.forward_batch(
            arrays.b[sl][:, None], feats_b, store, net_config, mode="eval"
        ).data
    cos = cosine_rows(da, db)
    if train_config.validation_metric == "loss":
        return float(np.mean((arrays.labels - cos) ** 2))
    from .evaluation import ScoredPair, evaluate

    pairs = [
        ScoredPair(i, int(l), float((1.0 - c) / 2.0))
        for i, (l, c) in enumerate(zip(arrays.labels, cos))
    ]
    return evaluate(pairs).fpr_at_tpr95


def train(
    train_samples,
    validation_samples,
    net_config: net.NetworkConfig,
    train_config: TrainingConfig,
    stats: PreprocStats | None = None,
    dtype=np.float32,
    params: ad.ParameterStore | None = None,
) -> tuple[ad.ParameterStore, TrainingHistory]:
    """Run the full loop; returns the best-validation-epoch parameters.

    ``stats`` defaults to statistics fitted on the training samples' patches
    (never the validation ones).
    """
    net_config.validate()
    train_config.validate()
    shared = set(map(id, train_samples)) & set(map(id, validation_samples))
    if shared:
        raise DatasetError("train and validation sets share samples")

    if stats is None:
        patches = np.concatenate(
            [
                np.stack([s.patch_a for s in train_samples]),
                np.stack([s.patch_b for s in train_samples]),
            ]
        )
        stats = fit_preproc_stats(patches, net_config)

    train_arrays = _SampleArrays(train_samples, net_config, stats, dtype)
    val_arrays = _SampleArrays(validation_samples, net_config, stats, dtype)

    store = params if params is not None else net.init_params(
        net_config, train_config.seed, dtype=dtype
    )
    net.validate_params(store, net_config)

    history = TrainingHistory()
    best_val = np.inf
    best_values: dict[str, np.ndarray] | None = None
    labels_f = train_arrays.labels.astype(store.dtype)

    for epoch in range(1, train_config.max_epochs + 1):
        batch_losses = []
        for batch_no, idx in enumerate(
            _batch_indices(
                train_arrays.labels,
                train_config,
                sub_seed(train_config.seed, "batch", epoch),
            )
        ):
            tape = ad.Tape()
            n = idx.shape[0]
            stacked = np.concatenate([train_arrays.a[idx], train_arrays.b[idx]])[:, None]
            feats = None
            if train_arrays.dct_a is not None:
                feats = np.concatenate([train_arrays.dct_a[idx], train_arrays.dct_b[idx]])
            out = net.forward_batch(stacked, feats, store, net_config, mode="train", tape=tape)
            d1, d2 = ad.split_rows(out, n)
            cos = ad.cosine_distance(d1, d2)
            loss = ad.mean_all(pair_loss(labels_f[idx], cos))
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            batch_losses.append(value)
            tape.backward(loss)
            ad.adagrad_step(store, train_config.learning_rate)
            store.zero_grad()

        val_error = _validation_error(val_arrays, store, net_config, train_config)
        history.records.append(EpochRecord(epoch, float(np.mean(batch_losses)), val_error))

        if val_error < best_val:
            best_val = val_error
            best_values = store.copy_values()
            history.best_epoch = epoch
        if epoch - history.best_epoch >= train_config.patience_epochs:
            history.stop_reason = f"no improvement for {train_config.patience_epochs} epochs"
            break
    else:
        history.stop_reason = f"reached max_epochs={train_config.max_epochs}"

    if best_values is not None:
        store.load_values(best_values)
    return store, history


# ---------------------------------------------------------------------------
# preprocessing-stats file ("PFST")

_STATS_MAGIC = b"PFST"


def save_preproc_stats(stats: PreprocStats, path):
    """magic, pixel mean/std (f64), F_D, per-coefficient mean/std arrays."""
    w = ByteWriter()
    w.raw(_STATS_MAGIC)
    w.f64(stats.pixel_mean)
    w.f64(stats.pixel_std)
    if stats.dct_stats is None:
        w.u32(0)
    else:
        w.u32(stats.dct_stats.mean.shape[0])
        w.array(stats.dct_stats.mean, np.float64)
        w.array(stats.dct_stats.std, np.float64)
    w.write_to(path)


def load_preproc_stats(path) -> PreprocStats:
    with open(path, "rb") as fh:
        r = ByteReader(fh.read(), path=path)
    r.expect_magic(_STATS_MAGIC)
    mean = r.f64("pixel mean")
    std = r.f64("pixel std")
    count = r.u32("DCT coefficient count")
    dct_stats = None
    if count:
        dmean = r.array(np.float64, count, "DCT means")
        dstd = r.array(np.float64, count, "DCT stds")
        dct_stats = DctStats(dmean, dstd)
    r.expect_eof("preprocessing stats")
    return PreprocStats(mean, std, dct_stats)
