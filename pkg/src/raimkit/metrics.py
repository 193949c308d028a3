"""Evaluation metrics for the two prediction tasks.

Binary decompensation scoring uses AUC-ROC (Mann-Whitney with half
credit for ties), AUC-PR (average precision with tied scores processed
as a block) and accuracy at a 0.5 cutoff. The 9-class length-of-stay
task uses Cohen's kappa, accuracy and a confusion matrix. Every metric
has a deliberately dumb brute-force counterpart in the test suite.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError


def auc_roc(scores, labels):
    """Probability a random positive outranks a random negative.

    Computed as the Mann-Whitney statistic: concordant pairs count 1,
    tied scores count 0.5, normalised by n_pos * n_neg.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("auc_roc: needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks within tie groups
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    n_pos, n_neg = len(pos), len(neg)
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_pr(scores, labels):
    """Area under the precision-recall curve by average-precision summation.

    Sweeps thresholds downward; each distinct score value is one block,
    contributing precision-at-block times the recall it adds.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise MetricError("auc_pr: needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0
    seen = 0
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        block_tp = int(y[i : j + 1].sum())
        tp += block_tp
        seen += j - i + 1
        if block_tp:
            ap += (tp / seen) * (block_tp / n_pos)
        i = j + 1
    return ap


def accuracy(predicted, labels, cutoff=0.5):
    """Fraction correct.

    1-D float input is thresholded at ``cutoff`` (scores at the cutoff
    classify as positive); 2-D input is argmax per row with ties going
    to the lowest class index; integer input is compared directly.
    """
    predicted = np.asarray(predicted)
    labels = np.asarray(labels, dtype=np.int64)
    if predicted.ndim == 2:
        classes = predicted.argmax(axis=1)
    elif predicted.dtype.kind == "f":
        classes = (predicted >= cutoff).astype(np.int64)
    else:
        classes = predicted.astype(np.int64)
    if len(classes) == 0:
        raise MetricError("accuracy: empty input")
    return float((classes == labels).mean())


def cohen_kappa(pred, true):
    """Chance-corrected agreement between two class vectors."""
    kappa, _ = kappa_stats(pred, true)
    return kappa


def kappa_stats(pred, true):
    """Return (kappa, degenerate_marginals_flag).

    kappa = (p_o - p_e) / (1 - p_e) with p_e from the product of the
    marginal distributions. When p_e == 1 (both raters constant on one
    class), kappa is 1 for perfect agreement and 0 otherwise, flagged.
    """
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if len(pred) == 0 or len(pred) != len(true):
        raise MetricError("kappa: needs equal-length non-empty class vectors")
    n = len(pred)
    p_o = float((pred == true).mean())
    classes = np.union1d(pred, true)
    p_e = 0.0
    for c in classes:
        p_e += float((pred == c).mean()) * float((true == c).mean())
    if abs(1.0 - p_e) < 1e-15:
        return (1.0 if p_o == 1.0 else 0.0), True
    return (p_o - p_e) / (1.0 - p_e), False


def confusion_matrix(pred, true, n_classes=9):
    """Count matrix indexed counts[true_class][predicted_class]."""
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(true, pred):
        counts[t, p] += 1
    return counts


def row_normalized(counts):
    counts = np.asarray(counts, dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sums > 0, counts / sums, 0.0)
    return out


@dataclass
class EvalReport:
    """Serializable metric bundle for one evaluation run."""

    task: str
    n_samples: int
    metrics: dict = field(default_factory=dict)
    confusion: np.ndarray | None = None
    degenerate_kappa: bool = False

    def to_dict(self):
        out = {
            "task": self.task,
            "n_samples": self.n_samples,
            "metrics": {k: float(v) for k, v in self.metrics.items()},
        }
        if self.confusion is not None:
            out["confusion"] = self.confusion.tolist()
        if self.task == "los":
            out["degenerate_kappa"] = bool(self.degenerate_kappa)
        return out

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def write_confusion_csv(self, path):
        if self.confusion is None:
            raise MetricError("no confusion matrix in this report")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            n = self.confusion.shape[0]
            writer.writerow(["true\\pred"] + [f"class_{c + 1}" for c in range(n)])
            for i, row in enumerate(self.confusion):
                writer.writerow([f"class_{i + 1}"] + [int(v) for v in row])


def evaluate_binary(scores, labels):
    """Decompensation report: AUC-ROC, AUC-PR, accuracy at cutoff 0.5."""
    report = EvalReport(task="decomp", n_samples=len(labels))
    report.metrics["auc_roc"] = auc_roc(scores, labels)
    report.metrics["auc_pr"] = auc_pr(scores, labels)
    report.metrics["accuracy"] = accuracy(np.asarray(scores, dtype=np.float64), labels)
    return report


def evaluate_multiclass(pred_classes, true_classes, n_classes=9):
    """Length-of-stay report: kappa, accuracy, n_classes^2 confusion counts.

    Class labels arrive 1-based and are stored 0-based in the matrix.
    """
    pred0 = np.asarray(pred_classes, dtype=np.int64) - 1
    true0 = np.asarray(true_classes, dtype=np.int64) - 1
    report = EvalReport(task="los", n_samples=len(true0))
    kappa, degenerate = kappa_stats(pred0, true0)
    report.metrics["kappa"] = kappa
    report.metrics["accuracy"] = accuracy(pred0, true0)
    report.confusion = confusion_matrix(pred0, true0, n_classes=n_classes)
    report.degenerate_kappa = degenerate
    return report
