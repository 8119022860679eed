import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusedesc.errors import EvaluationError
from fusedesc.evaluation import (
    EvalReport,
    OverlapReport,
    ScoredPair,
    error_overlap,
    evaluate,
    fpr_at_tpr,
    roc,
    top_k_errors,
    write_overlap_csv,
    write_roc_csv,
    write_roc_svg,
    write_summary_csv,
)

from oracles import enumerate_fpr_at_tpr, enumerate_roc


def _pairs(labels, distances):
    return [ScoredPair(i, l, d) for i, (l, d) in enumerate(zip(labels, distances))]


FOUR_PAIR_CASE = _pairs([1, 1, 0, 0], [0.1, 0.2, 0.15, 0.9])


class TestRoc:
    def test_perfectly_separated_reaches_corner(self):
        pairs = _pairs([1, 1, 0, 0], [0.1, 0.2, 0.7, 0.9])
        points = roc(pairs)
        assert any(p.fpr == 0.0 and p.tpr == 1.0 for p in points)

    def test_four_pair_hand_case(self):
        points = roc(FOUR_PAIR_CASE)
        # smallest threshold with TPR >= 0.95 is 0.2, where FPR = 0.5
        assert fpr_at_tpr(points, 0.95) == 0.5

    def test_all_equal_distances_degenerate(self):
        points = roc(_pairs([1, 0, 1, 0], [0.3, 0.3, 0.3, 0.3]))
        assert len(points) == 1
        assert points[0].tpr == 1.0 and points[0].fpr == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(EvaluationError):
            roc(_pairs([1, 1], [0.1, 0.2]))

    @given(
        st.lists(
            st.tuples(st.integers(0, 1), st.floats(0, 1, allow_nan=False)),
            min_size=2,
            max_size=40,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_monotone_and_matches_enumeration(self, rows):
        labels = [r[0] for r in rows]
        if sum(labels) in (0, len(labels)):
            return
        distances = [r[1] for r in rows]
        points = roc(_pairs(labels, distances))
        tprs = [p.tpr for p in points]
        fprs = [p.fpr for p in points]
        assert tprs == sorted(tprs)
        assert fprs == sorted(fprs)
        expected = enumerate_roc(labels, distances)
        got = [(p.threshold, p.tpr, p.fpr) for p in points]
        assert len(got) == len(expected)
        for g, e in zip(got, expected):
            assert g == pytest.approx(e)


class TestFprAtTpr:
    def test_separable_is_zero(self):
        pairs = _pairs([1, 1, 0, 0], [0.0, 0.1, 0.8, 0.9])
        assert fpr_at_tpr(roc(pairs), 0.95) == 0.0

    def test_four_pair_value(self):
        assert fpr_at_tpr(roc(FOUR_PAIR_CASE), 0.95) == 0.5

    def test_target_one_reads_max_positive_threshold(self):
        pairs = _pairs([1, 1, 0], [0.1, 0.6, 0.3])
        # threshold 0.6 is the first reaching TPR 1.0; one negative below it
        assert fpr_at_tpr(roc(pairs), 1.0) == 1.0

    @given(
        st.lists(
            st.tuples(st.integers(0, 1), st.floats(0, 1, allow_nan=False)),
            min_size=2,
            max_size=12,
        ),
        st.floats(min_value=0.05, max_value=1.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_matches_enumeration_on_small_sets(self, rows, target):
        labels = [r[0] for r in rows]
        if sum(labels) in (0, len(labels)):
            return
        distances = [r[1] for r in rows]
        got = fpr_at_tpr(roc(_pairs(labels, distances)), target)
        assert got == pytest.approx(enumerate_fpr_at_tpr(labels, distances, target))


class TestErrorOverlap:
    def test_identical_runs_full_overlap(self):
        run = _pairs([1, 1, 0, 0], [0.9, 0.1, 0.1, 0.9])
        report = error_overlap(run, run, threshold=0.5)
        assert report.common_false_negatives == 1.0
        assert report.common_false_positives == 1.0

    def test_disjoint_error_sets(self):
        run_a = _pairs([1, 1, 0, 0], [0.9, 0.1, 0.1, 0.9])  # errors: fn {0}, fp {2}
        run_b = _pairs([1, 1, 0, 0], [0.1, 0.9, 0.9, 0.1])  # errors: fn {1}, fp {3}
        report = error_overlap(run_a, run_b, threshold=0.5)
        assert report.common_false_negatives == 0.0
        assert report.common_false_positives == 0.0

    def test_partial_overlap_counts(self):
        run_a = _pairs([1, 1, 1, 0], [0.9, 0.8, 0.1, 0.9])  # fn {0,1}
        run_b = _pairs([1, 1, 1, 0], [0.9, 0.1, 0.8, 0.9])  # fn {0,2}
        report = error_overlap(run_a, run_b, threshold=0.5)
        assert report.fn_intersection == 1
        assert report.fn_union == 3
        assert report.common_false_negatives == pytest.approx(1 / 3)

    def test_mismatched_pair_sets_rejected(self):
        run_a = _pairs([1, 0], [0.1, 0.9])
        run_b = _pairs([0, 1], [0.1, 0.9])
        with pytest.raises(EvaluationError):
            error_overlap(run_a, run_b, 0.5)


class TestTopK:
    def test_k_larger_than_error_count(self):
        pairs = _pairs([0, 0, 1], [0.1, 0.9, 0.5])
        assert top_k_errors(pairs, "fp", 10) == [0, 1]

    def test_k1_picks_smallest_nonmatching_distance(self):
        pairs = _pairs([0, 0], [0.1, 0.9])
        assert top_k_errors(pairs, "fp", 1) == [0]

    def test_fn_picks_largest_matching_distance(self):
        pairs = _pairs([1, 1, 0], [0.2, 0.8, 0.5])
        assert top_k_errors(pairs, "fn", 1) == [1]

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, size=30).tolist()
        distances = rng.random(30).tolist()
        pairs = _pairs(labels, distances)
        baseline = top_k_errors(pairs, "fp", 5)
        for seed in range(5):
            shuffled = list(pairs)
            np.random.default_rng(seed).shuffle(shuffled)
            assert top_k_errors(shuffled, "fp", 5) == baseline

    def test_ties_break_by_pair_id(self):
        pairs = _pairs([0, 0, 0], [0.5, 0.5, 0.5])
        assert top_k_errors(pairs, "fp", 2) == [0, 1]


class TestEmission:
    def test_report_fields(self):
        report = evaluate(FOUR_PAIR_CASE, config_echo={"B": 32})
        assert isinstance(report, EvalReport)
        assert report.fpr_at_tpr95 == 0.5
        assert report.n_matching == 2 and report.n_nonmatching == 2
        assert report.config_echo == {"B": 32}

    def test_csv_and_svg_outputs(self, tmp_path):
        points = roc(FOUR_PAIR_CASE)
        write_roc_csv(points, tmp_path / "roc.csv")
        lines = (tmp_path / "roc.csv").read_text().strip().splitlines()
        assert lines[0] == "threshold,tpr,fpr"
        assert len(lines) == len(points) + 1

        write_summary_csv([("a/b", 128, "3,DCT", 0.09)], tmp_path / "summary.csv")
        assert "a/b,128," in (tmp_path / "summary.csv").read_text()

        report = OverlapReport(2, 4, 1, 5)
        write_overlap_csv(report, tmp_path / "overlap.csv")
        text = (tmp_path / "overlap.csv").read_text()
        assert "fn,2,4,0.5" in text

        write_roc_svg(points, tmp_path / "roc.svg")
        svg = (tmp_path / "roc.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg

    def test_svg_deterministic(self, tmp_path):
        points = roc(FOUR_PAIR_CASE)
        write_roc_svg(points, tmp_path / "a.svg")
        write_roc_svg(points, tmp_path / "b.svg")
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
