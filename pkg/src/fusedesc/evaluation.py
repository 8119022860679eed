"""ROC sweeps over pair distances and the derived error analyses.

Distances follow the matching-is-small convention. Thresholds are placed at
the observed distance values only (step-function ROC, no interpolation); a
pair counts as a predicted match when its distance is <= the threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError


@dataclass(frozen=True)
class ScoredPair:
    pair_id: int
    label: int  # 1 = matching, 0 = non-matching
    distance: float


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


@dataclass
class OverlapReport:
    """Jaccard overlap of the error sets of two runs, per error class."""

    fn_intersection: int
    fn_union: int
    fp_intersection: int
    fp_union: int

    @property
    def common_false_negatives(self) -> float:
        return self.fn_intersection / self.fn_union if self.fn_union else 0.0

    @property
    def common_false_positives(self) -> float:
        return self.fp_intersection / self.fp_union if self.fp_union else 0.0


@dataclass
class EvalReport:
    points: list[RocPoint]
    fpr_at_tpr95: float
    n_matching: int
    n_nonmatching: int
    config_echo: dict = field(default_factory=dict)


def _split(pairs):
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    dists = np.array([p.distance for p in pairs], dtype=np.float64)
    if not np.all(np.isfinite(dists)):
        raise EvaluationError("non-finite distance in scored pairs")
    pos = dists[labels == 1]
    neg = dists[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise EvaluationError("ROC needs both matching and non-matching pairs")
    return pos, neg


def roc(pairs) -> list[RocPoint]:
    """One point per distinct distance value, in increasing threshold order."""
    pos, neg = _split(pairs)
    thresholds = np.unique(np.concatenate([pos, neg]))
    tpr = np.searchsorted(np.sort(pos), thresholds, side="right") / pos.size
    fpr = np.searchsorted(np.sort(neg), thresholds, side="right") / neg.size
    return [
        RocPoint(float(t), float(tp), float(fp))
        for t, tp, fp in zip(thresholds, tpr, fpr)
    ]


def fpr_at_tpr(points: list[RocPoint], target: float = 0.95) -> float:
    """FPR at the smallest threshold whose TPR reaches ``target``."""
    if not points:
        raise EvaluationError("empty ROC curve")
    for p in points:
        if p.tpr >= target:
            return p.fpr
    raise EvaluationError(f"no threshold reaches TPR {target}")


def evaluate(pairs, target_tpr: float = 0.95, config_echo: dict | None = None) -> EvalReport:
    points = roc(pairs)
    labels = [p.label for p in pairs]
    return EvalReport(
        points=points,
        fpr_at_tpr95=fpr_at_tpr(points, target_tpr),
        n_matching=sum(labels),
        n_nonmatching=len(labels) - sum(labels),
        config_echo=dict(config_echo or {}),
    )


def _error_sets(pairs, threshold: float):
    fn = {p.pair_id for p in pairs if p.label == 1 and p.distance > threshold}
    fp = {p.pair_id for p in pairs if p.label == 0 and p.distance <= threshold}
    return fn, fp


def error_overlap(run_a, run_b, threshold: float) -> OverlapReport:
    """Intersection-over-union of the two runs' error sets at one threshold."""
    key_a = {(p.pair_id, p.label) for p in run_a}
    key_b = {(p.pair_id, p.label) for p in run_b}
    if key_a != key_b:
        raise EvaluationError("runs score different pair sets")
    fn_a, fp_a = _error_sets(run_a, threshold)
    fn_b, fp_b = _error_sets(run_b, threshold)
    return OverlapReport(
        fn_intersection=len(fn_a & fn_b),
        fn_union=len(fn_a | fn_b),
        fp_intersection=len(fp_a & fp_b),
        fp_union=len(fp_a | fp_b),
    )


def top_k_errors(pairs, error_class: str, k: int) -> list[int]:
    """Worst misclassified pair ids: smallest-distance non-matching pairs for
    "fp", largest-distance matching pairs for "fn". Ties break by pair id."""
    if k < 1:
        raise EvaluationError(f"k must be >= 1, got {k}")
    if error_class == "fp":
        candidates = sorted(
            ((p.distance, p.pair_id) for p in pairs if p.label == 0)
        )
    elif error_class == "fn":
        candidates = sorted(
            ((-p.distance, p.pair_id) for p in pairs if p.label == 1)
        )
    else:
        raise EvaluationError(f"error class must be 'fp' or 'fn', got {error_class!r}")
    return [pair_id for _, pair_id in candidates[:k]]


# ---------------------------------------------------------------------------
# report emission


def write_roc_csv(points: list[RocPoint], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "tpr", "fpr"])
        for p in points:
            writer.writerow([repr(p.threshold), repr(p.tpr), repr(p.fpr)])


def write_summary_csv(rows, path):
    """rows: iterables of (setup, B, config, fpr_at_tpr95)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setup", "B", "config", "fpr_at_tpr95"])
        for setup, bits, config, fpr in rows:
            writer.writerow([setup, bits, config, repr(float(fpr))])


def write_overlap_csv(report: OverlapReport, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "intersection", "union", "ratio"])
        writer.writerow(
            ["fn", report.fn_intersection, report.fn_union, repr(report.common_false_negatives)]
        )
        writer.writerow(
            ["fp", report.fp_intersection, report.fp_union, repr(report.common_false_positives)]
        )


def write_roc_svg(points: list[RocPoint], path, title: str = "ROC"):
    """Self-contained SVG of the ROC curve with both axes fixed to [0, 1]."""
    size, margin = 480, 50
    span = size - 2 * margin

    def sx(v):
        return margin + v * span

    def sy(v):
        return size - margin - v * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, y = sx(frac), sy(frac)
        parts.append(
            f'<line x1="{x:.1f}" y1="{sy(0):.1f}" x2="{x:.1f}" y2="{sy(1):.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<line x1="{sx(0):.1f}" y1="{y:.1f}" x2="{sx(1):.1f}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{size - margin + 18:.1f}" font-size="11" '
            f'text-anchor="middle">{frac:.2f}</text>'
        )
        parts.append(
            f'<text x="{margin - 8:.1f}" y="{y + 4:.1f}" font-size="11" '
            f'text-anchor="end">{frac:.2f}</text>'
        )
    coords = [(sx(0.0), sy(0.0))]
    coords += [(sx(p.fpr), sy(p.tpr)) for p in points]
    coords.append((sx(1.0), sy(1.0)))
    polyline = " ".join(f"{x:.2f},{y:.2f}" for x, y in coords)
    parts.append(
        f'<polyline points="{polyline}" fill="none" stroke="#1f5fa8" stroke-width="2"/>'
    )
    parts.append(
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        f'fill="none" stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{size / 2:.1f}" y="{margin - 16:.1f}" font-size="14" '
        f'text-anchor="middle">{title}</text>'
    )
    parts.append(
        f'<text x="{size / 2:.1f}" y="{size - 12:.1f}" font-size="12" '
        f'text-anchor="middle">false positive rate</text>'
    )
    parts.append(
        f'<text x="14" y="{size / 2:.1f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2:.1f})">true positive rate</text>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
