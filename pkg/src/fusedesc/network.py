"""The Siamese descriptor subnetwork: configuration, parameters, forward pass.

A subnetwork is M convolutional modules (wide 5x5 conv -> batch norm -> tanh
-> 2x2 max-pool, with the final pool optionally dropped), flattened into F_C
convolutional features, concatenated with F_D normalized low-frequency DCT
coefficients of the same input, then projected through a tanh hidden layer
onto the bottleneck that emits the descriptor. The two siamese branches are
the same parameter set applied twice.
"""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .dct import DctPlan, DctStats, ZigzagOrder, dct2, normalize_coeffs, zigzag_select
from .errors import ConfigurationError
from .rng import sub_rng

KERNEL_SIZE = 5


@dataclass
class NetworkConfig:
    module_count: int = 3
    first_module_filters: int = 64
    drop_final_maxpool: bool = False
    dct_coeff_count: int = 561  # 0 disables the DCT branch
    fc_width: int = 512
    bottleneck: int = 128
    input_size: int = 64
    tanh_bottleneck: bool = False

    def validate(self):
        if self.module_count not in (2, 3, 4, 5):
            raise ConfigurationError(f"module_count must be 2..5, got {self.module_count}")
        for name in ("first_module_filters", "fc_width", "bottleneck", "input_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.dct_coeff_count < 0 or self.dct_coeff_count > self.input_size**2:
            raise ConfigurationError(
                f"dct_coeff_count must be in 0..{self.input_size ** 2}, "
                f"got {self.dct_coeff_count}"
            )
        pools = self.pool_count
        if self.input_size % (1 << pools) != 0:
            raise ConfigurationError(
                f"input size {self.input_size} is not divisible by 2^{pools}"
            )
        if self.input_size >> pools < 1:
            raise ConfigurationError("featuremaps would shrink below 1 pixel")

    @property
    def pool_count(self) -> int:
        return self.module_count - (1 if self.drop_final_maxpool else 0)

    def label(self) -> str:
        """Row label like "3", "4-mp", "3,DCT"."""
        base = str(self.module_count) + ("-mp" if self.drop_final_maxpool else "")
        return base + (",DCT" if self.dct_coeff_count else "")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown network config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "NetworkConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class FeatureCounts:
    featuremap_count: int  # FMN
    featuremap_side: int  # FMR is side x side
    conv_features: int  # F_C = FMN * side^2


def feature_counts(config: NetworkConfig) -> FeatureCounts:
    config.validate()
    fmn = config.first_module_filters << (config.module_count - 1)
    side = config.input_size >> config.pool_count
    return FeatureCounts(fmn, side, fmn * side * side)


def module_filters(config: NetworkConfig, k: int) -> int:
    return config.first_module_filters << (k - 1)


def fused_feature_count(config: NetworkConfig) -> int:
    return feature_counts(config).conv_features + config.dct_coeff_count


def dct_complexity_overhead(config: NetworkConfig) -> float:
    """Relative feature-count increase F_D / F_C from enabling the DCT branch."""
    return config.dct_coeff_count / feature_counts(config).conv_features


def parameter_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Expected shape of every store entry, running statistics included."""
    config.validate()
    shapes: dict[str, tuple[int, ...]] = {}
    in_ch = 1
    for k in range(1, config.module_count + 1):
        out_ch = module_filters(config, k)
        shapes[f"m{k}.conv.w"] = (out_ch, in_ch, KERNEL_SIZE, KERNEL_SIZE)
        shapes[f"m{k}.conv.b"] = (out_ch,)
        shapes[f"m{k}.bn.gamma"] = (out_ch,)
        shapes[f"m{k}.bn.beta"] = (out_ch,)
        shapes[f"m{k}.bn.run_mean"] = (out_ch,)
        shapes[f"m{k}.bn.run_var"] = (out_ch,)
        shapes[f"m{k}.bn.steps"] = (1,)
        in_ch = out_ch
    shapes["fc.w"] = (config.fc_width, fused_feature_count(config))
    shapes["fc.b"] = (config.fc_width,)
    shapes["out.w"] = (config.bottleneck, config.fc_width)
    shapes["out.b"] = (config.bottleneck,)
    return shapes


_STATE_SUFFIXES = (".bn.run_mean", ".bn.run_var", ".bn.steps")


def _is_state(name: str) -> bool:
    return name.endswith(_STATE_SUFFIXES)


def parameter_breakdown(config: NetworkConfig) -> dict[str, int]:
    """Learnable value count per layer entry (running stats excluded)."""
    return {
        name: int(np.prod(shape))
        for name, shape in parameter_shapes(config).items()
        if not _is_state(name)
    }


def parameter_count(config: NetworkConfig) -> int:
    """Exact learnable parameter count over all layers."""
    return sum(parameter_breakdown(config).values())


def init_params(config: NetworkConfig, seed: int, dtype=np.float32) -> ad.ParameterStore:
    """Seeded uniform +-sqrt(6/(fan_in+fan_out)) weights; identity batch norm."""
    rng = sub_rng(seed, "init")
    store = ad.ParameterStore(dtype=dtype)
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".conv.w"):
            fan_in = shape[1] * shape[2] * shape[3]
            fan_out = shape[0] * shape[2] * shape[3]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            store.add(name, rng.uniform(-limit, limit, size=shape))
        elif name.endswith((".w",)):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            store.add(name, rng.uniform(-limit, limit, size=shape))
        elif name.endswith(".bn.gamma") or name.endswith(".bn.run_var"):
            store.add(name, np.ones(shape))
        else:  # biases, bn beta, run_mean, steps
            store.add(name, np.zeros(shape))
    return store


def validate_params(store: ad.ParameterStore, config: NetworkConfig):
    expected = parameter_shapes(config)
    have = set(store.names())
    missing = set(expected) - have
    extra = have - set(expected)
    if missing or extra:
        raise ConfigurationError(
            f"parameter names disagree with config (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})"
        )
    for name, shape in expected.items():
        actual = store[name].value.shape
        if actual != shape:
            raise ConfigurationError(f"{name} has shape {actual}, config wants {shape}")


# ---------------------------------------------------------------------------
# DCT feature extraction for the fusion branch


@functools.lru_cache(maxsize=8)
def _plan_and_order(size: int) -> tuple[DctPlan, ZigzagOrder]:
    return DctPlan(size), ZigzagOrder(size)


def dct_feature_rows(
    patches: np.ndarray, config: NetworkConfig, dct_stats: DctStats
) -> np.ndarray:
    """Normalized zig-zag DCT coefficients for (N, S, S) preprocessed patches."""
    plan, order = _plan_and_order(config.input_size)
    take = order.flat_indices[: config.dct_coeff_count]
    # separable transform batched over N via einsum of the two basis products
    p = np.asarray(patches, dtype=np.float64)
    coeffs = np.einsum("ij,njk,lk->nil", plan.basis, p, plan.basis, optimize=True)
    selected = coeffs.reshape(p.shape[0], -1)[:, take]
    return normalize_coeffs(selected, dct_stats)


def _resolve_dct_stats(stats) -> DctStats | None:
    # accepts a DctStats directly or anything carrying one (PreprocStats)
    if stats is None or isinstance(stats, DctStats):
        return stats
    return stats.dct_stats


# ---------------------------------------------------------------------------
# forward passes


def forward_batch(
    patches: np.ndarray,
    dct_feats: np.ndarray | None,
    store: ad.ParameterStore,
    config: NetworkConfig,
    mode: str = "eval",
    tape: ad.Tape | None = None,
) -> ad.Tensor:
    """Descriptors for a (N, 1, S, S) preprocessed batch.

    ``dct_feats`` must hold the matching (N, F_D) normalized coefficients
    whenever the config enables the DCT branch.
    """
    validate_params(store, config)
    n = patches.shape[0]
    if patches.shape != (n, 1, config.input_size, config.input_size):
        raise ConfigurationError(
            f"patch batch shape {patches.shape} does not match config input size "
            f"{config.input_size}"
        )
    if config.dct_coeff_count:
        if dct_feats is None or dct_feats.shape != (n, config.dct_coeff_count):
            raise ConfigurationError(
                f"need (N, {config.dct_coeff_count}) DCT features for the fusion branch"
            )

    x = ad.Tensor(np.ascontiguousarray(patches, dtype=store.dtype), tape)
    for k in range(1, config.module_count + 1):
        x = ad.conv2d(x, store.tensor(f"m{k}.conv.w", tape), store.tensor(f"m{k}.conv.b", tape))
        state = ad.BatchNormState(
            store[f"m{k}.bn.run_mean"].value,
            store[f"m{k}.bn.run_var"].value,
            store[f"m{k}.bn.steps"].value,
        )
        x = ad.spatial_batchnorm(
            x,
            store.tensor(f"m{k}.bn.gamma", tape),
            store.tensor(f"m{k}.bn.beta", tape),
            state,
            mode=mode,
        )
        x = ad.tanh_activation(x)
        if not (k == config.module_count and config.drop_final_maxpool):
            x = ad.maxpool2x2(x)

    fused = ad.flatten(x)
    if config.dct_coeff_count:
        fused = ad.concat(fused, ad.Tensor(dct_feats.astype(store.dtype)))
    hidden = ad.tanh_activation(
        ad.linear(fused, store.tensor("fc.w", tape), store.tensor("fc.b", tape))
    )
    out = ad.linear(hidden, store.tensor("out.w", tape), store.tensor("out.b", tape))
    if config.tanh_bottleneck:
        out = ad.tanh_activation(out)
    return out


def forward(
    patch: np.ndarray,
    params: ad.ParameterStore,
    config: NetworkConfig,
    stats=None,
    mode: str = "eval",
) -> np.ndarray:
    """Descriptor of one preprocessed patch (length-B vector)."""
    feats = None
    if config.dct_coeff_count:
        feats = dct_feature_rows(patch[None], config, _resolve_dct_stats(stats))
    out = forward_batch(np.asarray(patch)[None, None], feats, params, config, mode=mode)
    return out.data[0].copy()


def siamese_forward(
    pair: tuple[np.ndarray, np.ndarray],
    params: ad.ParameterStore,
    config: NetworkConfig,
    stats=None,
    mode: str = "eval",
) -> tuple[np.ndarray, np.ndarray, float]:
    """Both descriptors under the shared parameter set, plus their cosine.

    Eval mode runs the two patches independently (so results match two
    ``forward`` calls exactly); train mode stacks them into one batch-2 pass
    for the benefit of batch normalization.
    """
    a, b = pair
    if mode == "eval":
        d1 = forward(a, params, config, stats, mode)
        d2 = forward(b, params, config, stats, mode)
    else:
        feats = None
        if config.dct_coeff_count:
            feats = dct_feature_rows(np.stack([a, b]), config, _resolve_dct_stats(stats))
        out = forward_batch(
            np.stack([a, b])[:, None], feats, params, config, mode=mode
        )
        d1, d2 = out.data[0].copy(), out.data[1].copy()
    cos = ad.cosine_distance(ad.Tensor(d1), ad.Tensor(d2))
    return d1, d2, float(cos.data)


def extract_descriptors(
    patches: np.ndarray,
    params: ad.ParameterStore,
    config: NetworkConfig,
    stats=None,
    batch_size: int = 256,
) -> np.ndarray:
    """Eval-mode descriptors for (N, S, S) preprocessed patches, as float32."""
    n = patches.shape[0]
    dct_stats = _resolve_dct_stats(stats)
    out = np.empty((n, config.bottleneck), dtype=np.float32)
    for s in range(0, n, batch_size):
        chunk = np.asarray(patches[s : s + batch_size])
        feats = None
        if config.dct_coeff_count:
            feats = dct_feature_rows(chunk, config, dct_stats)
        res = forward_batch(chunk[:, None], feats, params, config, mode="eval")
        out[s : s + chunk.shape[0]] = res.data.astype(np.float32)
    return out
