"""Command-line entry points tying the pipeline into reproducible runs.

Every command echoes its resolved configuration into the output directory;
re-running with the same inputs and seed reproduces all outputs bit-for-bit
on a fixed platform. All randomness flows from the run seed through named
sub-seeds. Relative output paths resolve under ``$FUSEDESC_OUT_ROOT`` (default
the working directory).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import binary, dataset, evaluation, network, training
from .errors import CompatibilityError, FusedescError
from .rng import sub_rng

ENV_OUT_ROOT = "FUSEDESC_OUT_ROOT"


def _resolve_out(path) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    return Path(os.environ.get(ENV_OUT_ROOT, ".")) / p


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(out_dir: Path, payload: dict):
    with open(out_dir / "resolved-config.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config_file(path) -> tuple[dict, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    unknown = set(doc) - {"network", "training"}
    if unknown:
        raise CompatibilityError(f"unknown config sections: {sorted(unknown)}")
    return dict(doc.get("network", {})), dict(doc.get("training", {}))


_NET_FLAGS = {
    "module_count": "module_count",
    "first_module_filters": "first_module_filters",
    "drop_final_maxpool": "drop_final_maxpool",
    "dct_coeff_count": "dct_coeff_count",
    "fc_width": "fc_width",
    "bottleneck": "bottleneck",
    "tanh_bottleneck": "tanh_bottleneck",
}
_TRAIN_FLAGS = {
    "learning_rate": "learning_rate",
    "matching_per_batch": "matching_per_batch",
    "nonmatching_per_batch": "nonmatching_per_batch",
    "max_epochs": "max_epochs",
    "patience_epochs": "patience_epochs",
    "seed": "seed",
    "validation_metric": "validation_metric",
}


def _resolve_run_config(args) -> tuple[network.NetworkConfig, training.TrainingConfig]:
    net_dict, train_dict = {}, {}
    if getattr(args, "config", None):
        net_dict, train_dict = _load_config_file(args.config)
    for flag, key in _NET_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            net_dict[key] = value
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            train_dict[key] = value
    try:
        return network.NetworkConfig.from_dict(net_dict), training.TrainingConfig.from_dict(
            train_dict
        )
    except ValueError as exc:
        raise CompatibilityError(str(exc)) from exc


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON file with network/training sections")
    parser.add_argument("--module-count", dest="module_count", type=int)
    parser.add_argument("--first-module-filters", dest="first_module_filters", type=int)
    parser.add_argument(
        "--drop-final-maxpool", dest="drop_final_maxpool", action="store_const", const=True
    )
    parser.add_argument("--dct-coeff-count", dest="dct_coeff_count", type=int)
    parser.add_argument("--fc-width", dest="fc_width", type=int)
    parser.add_argument("--bottleneck", dest="bottleneck", type=int)
    parser.add_argument(
        "--tanh-bottleneck", dest="tanh_bottleneck", action="store_const", const=True
    )
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--matching-per-batch", dest="matching_per_batch", type=int)
    parser.add_argument("--nonmatching-per-batch", dest="nonmatching_per_batch", type=int)
    parser.add_argument("--max-epochs", dest="max_epochs", type=int)
    parser.add_argument("--patience-epochs", dest="patience_epochs", type=int)
    parser.add_argument("--seed", dest="seed", type=int)
    parser.add_argument("--validation-metric", dest="validation_metric")


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    store = dataset.ingest_brown(args.src)
    out = _resolve_out(args.out)
    _ensure_dir(out.parent)
    dataset.save_store(store, out)
    print(f"ingested {store.count} patches, {len(set(store.point_ids.tolist()))} 3D points")
    print(f"wrote {out}")
    return 0


def cmd_synth(args) -> int:
    spec = dataset.SyntheticSpec(
        base_count=args.bases,
        n_matching=args.matching,
        n_nonmatching=args.nonmatching,
        illumination_jitter=args.illumination,
        shift_range=args.shift,
        noise_std=args.noise,
        seed=args.seed,
    )
    store, pairs = dataset.generate_synthetic(spec)
    store_out = _resolve_out(args.store_out)
    pairs_out = _resolve_out(args.pairs_out)
    _ensure_dir(store_out.parent)
    _ensure_dir(pairs_out.parent)
    dataset.save_store(store, store_out)
    dataset.save_pairs_csv(pairs, pairs_out)
    print(f"generated {store.count} patches and {len(pairs)} pairs")
    print(f"wrote {store_out} and {pairs_out}")
    return 0


def _split_samples(store, pairs, val_fraction: float, seed: int):
    samples = [
        training.Sample(store.patches[p.index_a], store.patches[p.index_b], p.label)
        for p in pairs
    ]
    rng = sub_rng(seed, "val-split")
    train_set, val_set = [], []
    for label in (1, 0):
        members = [s for s in samples if s.label == label]
        order = rng.permutation(len(members))
        n_val = max(1, int(round(val_fraction * len(members)))) if members else 0
        for pos in order[:n_val]:
            val_set.append(members[pos])
        for pos in order[n_val:]:
            train_set.append(members[pos])
    return train_set, val_set


def cmd_train(args) -> int:
    net_cfg, train_cfg = _resolve_run_config(args)
    store = dataset.load_store(args.store)
    pairs = dataset.load_pairs_csv(args.pairs)
    out_dir = _ensure_dir(_resolve_out(args.out))

    train_set, val_set = _split_samples(store, pairs, args.val_fraction, train_cfg.seed)
    print(f"network parameters: {network.parameter_count(net_cfg)}")
    print(f"training on {len(train_set)} pairs, validating on {len(val_set)}")

    stats = training.fit_preproc_stats(
        np.concatenate(
            [
                np.stack([s.patch_a for s in train_set]),
                np.stack([s.patch_b for s in train_set]),
            ]
        ),
        net_cfg,
        dataset_id=store.name,
    )
    started = time.time()
    params, history = training.train(train_set, val_set, net_cfg, train_cfg, stats=stats)
    elapsed = time.time() - started

    ad.save_checkpoint(params, out_dir / "checkpoint.pfck")
    training.save_preproc_stats(stats, out_dir / "stats.pfst")
    training.write_history_csv(history, out_dir / "history.csv")
    net_cfg.save_json(out_dir / "network-config.json")
    _echo_config(
        out_dir,
        {
            "command": "train",
            "store": str(args.store),
            "pairs": str(args.pairs),
            "val_fraction": args.val_fraction,
            "network": net_cfg.to_dict(),
            "training": train_cfg.to_dict(),
        },
    )
    last = history.records[-1]
    print(
        f"stopped after epoch {last.epoch} ({history.stop_reason}); "
        f"best epoch {history.best_epoch}, "
        f"validation error {history.best_validation_error():.6f}, "
        f"{elapsed:.1f}s"
    )
    print(f"wrote {out_dir / 'checkpoint.pfck'}")
    return 0


def _load_model(args):
    net_cfg = network.NetworkConfig.load_json(args.network_config)
    params = ad.load_checkpoint(args.checkpoint)
    try:
        network.validate_params(params, net_cfg)
    except FusedescError as exc:
        raise CompatibilityError(f"checkpoint does not fit config: {exc}") from exc
    stats = training.load_preproc_stats(args.stats)
    if net_cfg.dct_coeff_count:
        if stats.dct_stats is None or stats.dct_stats.mean.shape[0] != net_cfg.dct_coeff_count:
            raise CompatibilityError(
                "stats file does not provide the DCT coefficients the config needs"
            )
    return net_cfg, params, stats


def cmd_extract(args) -> int:
    net_cfg, params, stats = _load_model(args)
    store = dataset.load_store(args.store)
    pre = training.preprocess_batch(store.patches, stats)
    descriptors = network.extract_descriptors(pre, params, net_cfg, stats)
    ids = np.arange(store.count, dtype=np.uint64)
    dset = binary.DescriptorSet("real", net_cfg.bottleneck, descriptors, ids)
    if args.binary:
        dset = dset.quantized()
    out = _resolve_out(args.out)
    _ensure_dir(out.parent)
    binary.write_descriptors(dset, out)
    print(f"wrote {dset.count} {dset.kind} descriptors (B={dset.bit_length}) to {out}")
    return 0


def cmd_quantize(args) -> int:
    dset = binary.read_descriptors(args.input)
    out = _resolve_out(args.out)
    _ensure_dir(out.parent)
    binary.write_descriptors(dset.quantized(), out)
    print(f"wrote {dset.count} binary descriptors to {out}")
    return 0


def cmd_match(args) -> int:
    set_a = binary.read_descriptors(args.desc_a)
    set_b = binary.read_descriptors(args.desc_b)
    pairs = dataset.load_pairs_csv(args.pairs)
    distances = binary.match_distances(set_a, set_b, pairs)
    out = _resolve_out(args.out)
    _ensure_dir(out.parent)
    binary.write_distances_csv(distances, out)
    print(f"wrote {distances.shape[0]} distances to {out}")
    return 0


def _scored_pairs(dset, pairs):
    distances = binary.match_distances(dset, dset, pairs)
    return [
        evaluation.ScoredPair(i, p.label, float(d))
        for i, (p, d) in enumerate(zip(pairs, distances))
    ]


def cmd_eval(args) -> int:
    dset = binary.read_descriptors(args.desc)
    pairs = dataset.load_pairs_csv(args.pairs)
    scored = _scored_pairs(dset, pairs)
    report = evaluation.evaluate(
        scored,
        target_tpr=args.tpr,
        config_echo={"kind": dset.kind, "B": dset.bit_length, "setup": args.setup},
    )
    out_dir = _ensure_dir(_resolve_out(args.out))
    evaluation.write_roc_csv(report.points, out_dir / "roc.csv")
    evaluation.write_summary_csv(
        [(args.setup, dset.bit_length, dset.kind, report.fpr_at_tpr95)],
        out_dir / "summary.csv",
    )
    evaluation.write_roc_svg(report.points, out_dir / "roc.svg", title=f"ROC {args.setup}")
    _echo_config(
        out_dir,
        {
            "command": "eval",
            "descriptors": str(args.desc),
            "pairs": str(args.pairs),
            "setup": args.setup,
            "target_tpr": args.tpr,
        },
    )
    print(
        f"{args.setup}: FPR@TPR{args.tpr:.0%} = {report.fpr_at_tpr95:.4f} "
        f"({report.n_matching} matching / {report.n_nonmatching} non-matching pairs)"
    )
    return 0


def cmd_analyze_errors(args) -> int:
    pairs = dataset.load_pairs_csv(args.pairs)
    dist_a = binary.read_distances_csv(args.distances_a)
    dist_b = binary.read_distances_csv(args.distances_b)
    if len(pairs) != dist_a.shape[0] or len(pairs) != dist_b.shape[0]:
        raise CompatibilityError("distance files do not cover the pair list")
    run_a = [evaluation.ScoredPair(i, p.label, float(d)) for i, (p, d) in enumerate(zip(pairs, dist_a))]
    run_b = [evaluation.ScoredPair(i, p.label, float(d)) for i, (p, d) in enumerate(zip(pairs, dist_b))]
    overlap = evaluation.error_overlap(run_a, run_b, args.threshold)
    out_dir = _ensure_dir(_resolve_out(args.out))
    evaluation.write_overlap_csv(overlap, out_dir / "overlap.csv")
    with open(out_dir / "top-errors.csv", "w") as fh:
        fh.write("run,class,rank,pair_id\n")
        for run_name, run in (("a", run_a), ("b", run_b)):
            for cls in ("fp", "fn"):
                for rank, pid in enumerate(evaluation.top_k_errors(run, cls, args.top_k), 1):
                    fh.write(f"{run_name},{cls},{rank},{pid}\n")
    _echo_config(
        out_dir,
        {
            "command": "analyze-errors",
            "distances_a": str(args.distances_a),
            "distances_b": str(args.distances_b),
            "pairs": str(args.pairs),
            "threshold": args.threshold,
            "top_k": args.top_k,
        },
    )
    print(
        f"common false negatives {overlap.common_false_negatives:.1%}, "
        f"common false positives {overlap.common_false_positives:.1%}"
    )
    return 0


# ---------------------------------------------------------------------------
# sweeps


def _sweep_variants(kind: str, base: network.NetworkConfig):
    if kind == "table1":
        for m, drop in ((2, False), (2, True), (3, False), (3, True), (4, False), (4, True)):
            cfg = network.NetworkConfig(**{**base.to_dict(), "module_count": m,
                                           "drop_final_maxpool": drop, "dct_coeff_count": 0})
            yield cfg.label(), cfg
    elif kind == "table2":
        fd = base.dct_coeff_count or 561
        for m, drop in ((3, False), (4, True), (4, False)):
            for coeffs in (0, fd):
                cfg = network.NetworkConfig(**{**base.to_dict(), "module_count": m,
                                               "drop_final_maxpool": drop,
                                               "dct_coeff_count": coeffs})
                yield cfg.label(), cfg
    elif kind == "bitrate":
        for bits in (64, 128, 192, 256):
            cfg = network.NetworkConfig(**{**base.to_dict(), "bottleneck": bits})
            yield cfg.label(), cfg
    else:
        raise CompatibilityError(f"unknown sweep kind {kind!r}")


def cmd_sweep(args) -> int:
    net_cfg, train_cfg = _resolve_run_config(args)
    train_store = dataset.load_store(args.train_store)
    test_store = dataset.load_store(args.test_store)
    train_pairs = dataset.load_pairs_csv(args.train_pairs)
    test_pairs = dataset.load_pairs_csv(args.test_pairs)
    setup = f"{train_store.name}/{test_store.name}"
    out_dir = _ensure_dir(_resolve_out(args.out))

    rows, failures = [], []
    for label, cfg in _sweep_variants(args.kind, net_cfg):
        try:
            train_set, val_set = _split_samples(
                train_store, train_pairs, args.val_fraction, train_cfg.seed
            )
            stats = training.fit_preproc_stats(
                np.concatenate(
                    [
                        np.stack([s.patch_a for s in train_set]),
                        np.stack([s.patch_b for s in train_set]),
                    ]
                ),
                cfg,
                dataset_id=train_store.name,
            )
            params, _ = training.train(train_set, val_set, cfg, train_cfg, stats=stats)
            pre = training.preprocess_batch(test_store.patches, stats)
            descriptors = network.extract_descriptors(pre, params, cfg, stats)
            dset = binary.DescriptorSet(
                "real", cfg.bottleneck, descriptors, np.arange(test_store.count, dtype=np.uint64)
            ).quantized()
            scored = _scored_pairs(dset, test_pairs)
            fpr = evaluation.evaluate(scored).fpr_at_tpr95
            counts = network.feature_counts(cfg)
            rows.append((setup, cfg.bottleneck, label, fpr))
            print(
                f"{label}: FMN={counts.featuremap_count} "
                f"FMR={counts.featuremap_side}x{counts.featuremap_side} "
                f"F_C={counts.conv_features} F_D={cfg.dct_coeff_count} "
                f"fpr@tpr95={fpr:.4f}"
            )
        except (FusedescError, ValueError) as exc:
            failures.append((label, str(exc)))
            print(f"{label}: FAILED ({exc})", file=sys.stderr)
    evaluation.write_summary_csv(rows, out_dir / "summary.csv")
    if failures:
        with open(out_dir / "sweep-errors.txt", "w") as fh:
            for label, message in failures:
                fh.write(f"{label}: {message}\n")
    _echo_config(
        out_dir,
        {
            "command": "sweep",
            "kind": args.kind,
            "train_store": str(args.train_store),
            "train_pairs": str(args.train_pairs),
            "test_store": str(args.test_store),
            "test_pairs": str(args.test_pairs),
            "val_fraction": args.val_fraction,
            "network": net_cfg.to_dict(),
            "training": train_cfg.to_dict(),
        },
    )
    print(f"wrote {out_dir / 'summary.csv'} ({len(rows)} rows, {len(failures)} failures)")
    return 0 if not failures else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusedesc",
        description="Train, extract, quantize, match, and evaluate fused patch descriptors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="pack a mosaic directory into a patch store")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic patch store and pair list")
    p.add_argument("--bases", type=int, default=200)
    p.add_argument("--matching", type=int, default=200)
    p.add_argument("--nonmatching", type=int, default=200)
    p.add_argument("--illumination", type=float, default=0.15)
    p.add_argument("--shift", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--store-out", required=True)
    p.add_argument("--pairs-out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a descriptor network")
    p.add_argument("--store", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-fraction", type=float, default=0.1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="compute descriptors for a patch store")
    p.add_argument("--store", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--network-config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true", help="sign-quantize on the way out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("quantize", help="sign-quantize a real descriptor file")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("match", help="distances for a pair list between two descriptor files")
    p.add_argument("--desc-a", required=True)
    p.add_argument("--desc-b", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="ROC and FPR@TPR for descriptors over labeled pairs")
    p.add_argument("--desc", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--setup", default="run")
    p.add_argument("--tpr", type=float, default=0.95)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a named configuration sweep end to end")
    p.add_argument("--kind", required=True, choices=["table1", "table2", "bitrate"])
    p.add_argument("--train-store", required=True)
    p.add_argument("--train-pairs", required=True)
    p.add_argument("--test-store", required=True)
    p.add_argument("--test-pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-fraction", type=float, default=0.1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze-errors", help="error overlap between two scored runs")
    p.add_argument("--distances-a", required=True)
    p.add_argument("--distances-b", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--threshold", type=float, default=0.325)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_errors)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FusedescError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
