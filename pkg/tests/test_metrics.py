import numpy as np
import pytest

from raimkit.errors import MetricError
from raimkit.metrics import (
    accuracy,
    auc_pr,
    auc_roc,
    cohen_kappa,
    confusion_matrix,
    evaluate_binary,
    evaluate_multiclass,
    kappa_stats,
    row_normalized,
)

# ---------------------------------------------------------------------------
# brute-force oracles, kept deliberately independent of the implementations
# ---------------------------------------------------------------------------


def auc_roc_pairs(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def auc_pr_rankwise(scores, labels):
    n_pos = sum(labels)
    thresholds = sorted(set(scores), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    for th in thresholds:
        sel = [y for s, y in zip(scores, labels) if s >= th]
        tp = sum(sel)
        precision = tp / len(sel)
        recall = tp / n_pos
        ap += precision * (recall - prev_recall)
        prev_recall = recall
    return ap


def kappa_direct(pred, true):
    n = len(pred)
    p_o = sum(1 for a, b in zip(pred, true) if a == b) / n
    classes = set(pred) | set(true)
    p_e = sum(
        (sum(1 for a in pred if a == c) / n) * (sum(1 for b in true if b == c) / n)
        for c in classes
    )
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


class TestAucRoc:
    def test_perfect_separation(self):
        assert auc_roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auc_roc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_three_of_four_pairs(self):
        assert auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-15)

    def test_single_class_raises(self):
        with pytest.raises(MetricError):
            auc_roc([0.1, 0.2], [1, 1])

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(0)
        scores = rng.random(25)
        labels = (rng.random(25) < 0.4).astype(int)
        labels[0], labels[1] = 0, 1
        base = auc_roc(scores, labels)
        assert auc_roc(np.exp(3 * scores), labels) == pytest.approx(base, abs=1e-12)

    def test_label_flip_complement(self):
        rng = np.random.default_rng(1)
        scores = rng.permutation(30) / 30.0  # tie-free
        labels = (rng.random(30) < 0.5).astype(int)
        labels[0], labels[1] = 0, 1
        assert auc_roc(scores, labels) + auc_roc(scores, 1 - labels) == pytest.approx(1.0, abs=1e-12)

    def test_matches_pair_oracle_random(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = rng.integers(4, 31)
            scores = np.round(rng.random(n), 2)  # induce ties
            labels = (rng.random(n) < 0.5).astype(int)
            labels[0], labels[1] = 0, 1
            assert auc_roc(scores, labels) == pytest.approx(
                auc_roc_pairs(scores.tolist(), labels.tolist()), abs=1e-12
            )


class TestAucPr:
    def test_perfect_ranking(self):
        assert auc_pr([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_single_positive_ranked_last(self):
        assert auc_pr([0.9, 0.8, 0.7, 0.1], [0, 0, 0, 1]) == pytest.approx(0.25, abs=1e-15)

    def test_no_positives_raises(self):
        with pytest.raises(MetricError):
            auc_pr([0.1, 0.2], [0, 0])

    def test_matches_rankwise_oracle_random(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = rng.integers(3, 31)
            scores = np.round(rng.random(n), 2)
            labels = (rng.random(n) < 0.4).astype(int)
            labels[0] = 1
            assert auc_pr(scores, labels) == pytest.approx(
                auc_pr_rankwise(scores.tolist(), labels.tolist()), abs=1e-12
            )


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy(np.array([0.9, 0.1]), np.array([1, 0])) == 1.0

    def test_all_wrong(self):
        assert accuracy(np.array([0.9, 0.1]), np.array([0, 1])) == 0.0

    def test_boundary_score_classifies_positive(self):
        assert accuracy(np.array([0.5]), np.array([1])) == 1.0

    def test_multiclass_argmax_lowest_index_tie(self):
        probs = np.array([[0.4, 0.4, 0.2]])
        assert accuracy(probs, np.array([0])) == 1.0


class TestKappa:
    def test_identical_vectors(self):
        assert cohen_kappa([1, 2, 3], [1, 2, 3]) == 1.0

    def test_independence_matched_marginals(self):
        assert cohen_kappa([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(0.0, abs=1e-15)

    def test_two_by_two_counts(self):
        # counts [[20, 5], [10, 15]]: p_o = 0.7, p_e = 0.5, kappa = 0.4
        pred = [0] * 20 + [1] * 5 + [0] * 10 + [1] * 15
        true = [0] * 25 + [1] * 25
        assert cohen_kappa(pred, true) == pytest.approx(0.4, abs=1e-15)

    def test_degenerate_marginals(self):
        kappa, flag = kappa_stats([1, 1, 1], [1, 1, 1])
        assert kappa == 1.0 and flag
        kappa, flag = kappa_stats([1, 1], [1, 1])
        assert flag

    def test_matches_direct_oracle_random(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = rng.integers(2, 31)
            pred = rng.integers(0, 4, size=n).tolist()
            true = rng.integers(0, 4, size=n).tolist()
            assert cohen_kappa(pred, true) == pytest.approx(kappa_direct(pred, true), abs=1e-12)


class TestConfusion:
    def test_perfect_is_diagonal(self):
        cm = confusion_matrix([0, 1, 2], [0, 1, 2], n_classes=3)
        assert np.array_equal(cm, np.eye(3, dtype=int))

    def test_empty_is_zero(self):
        assert confusion_matrix([], [], n_classes=4).sum() == 0

    def test_total_equals_sample_count(self):
        rng = np.random.default_rng(5)
        pred = rng.integers(0, 9, size=40)
        true = rng.integers(0, 9, size=40)
        cm = confusion_matrix(pred, true)
        assert cm.sum() == 40
        for c in range(9):
            assert cm[c].sum() == int((true == c).sum())

    def test_row_normalized(self):
        cm = np.array([[2, 2], [0, 0]])
        rn = row_normalized(cm)
        assert np.allclose(rn[0], [0.5, 0.5]) and np.allclose(rn[1], [0.0, 0.0])


class TestReports:
    def test_binary_report_keys(self):
        report = evaluate_binary([0.9, 0.2, 0.7, 0.1], [1, 0, 1, 0])
        d = report.to_dict()
        assert d["task"] == "decomp"
        assert set(d["metrics"]) == {"auc_roc", "auc_pr", "accuracy"}
        assert all(0.0 <= v <= 1.0 for v in d["metrics"].values())

    def test_multiclass_report(self, tmp_path):
        report = evaluate_multiclass([1, 2, 8, 9], [1, 2, 8, 8])
        d = report.to_dict()
        assert d["metrics"]["accuracy"] == 0.75
        assert -1.0 <= d["metrics"]["kappa"] <= 1.0
        assert np.array(d["confusion"]).sum() == 4
        out = tmp_path / "confusion.csv"
        report.write_confusion_csv(out)
        assert out.read_text().startswith("true\\pred")
