"""Evaluation metrics: balanced accuracy, expected calibration error,
one-vs-one multi-class AUC (Hand-Till), and the two-sided Wilcoxon
signed-rank test for paired comparisons.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def balanced_accuracy(y_true, y_pred) -> float:
    """Mean per-class recall over the classes present in y_true."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("empty label set")
    recalls = []
    for c in np.unique(y_true):
        idx = y_true == c
        recalls.append(np.mean(y_pred[idx] == c))
    return float(np.mean(recalls))


def expected_calibration_error(y_true, probs, n_bins: int = 15) -> float:
    """ECE with equal-width confidence bins on the max predicted probability:
    sum_b (|B_b|/n) * |acc(B_b) - conf(B_b)|. Bin b covers [b/n_bins,
    (b+1)/n_bins); confidence 1.0 falls in the top bin. Ties in the argmax
    prediction break toward the lowest class index."""
    y_true = np.asarray(y_true)
    probs = np.asarray(probs, dtype=np.float64)
    if y_true.size == 0:
        raise ValueError("empty label set")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1 within 1e-6")
    conf = probs.max(axis=1)
    correct = probs.argmax(axis=1) == y_true
    bins = np.clip((conf * n_bins).astype(np.intp), 0, n_bins - 1)
    n = y_true.size
    total = 0.0
    for b in range(n_bins):
        members = bins == b
        count = int(members.sum())
        if count == 0:
            continue
        acc = correct[members].mean()
        avg_conf = conf[members].mean()
        total += (count / n) * abs(acc - avg_conf)
    return float(total)


def mauc_hand_till(y_true, probs) -> float:
    """One-vs-one multi-class AUC: mean over class pairs (i, j) of
    (A(i|j) + A(j|i)) / 2, where A(i|j) ranks p_i over samples of classes
    i and j (midranks for ties). Needs at least two classes present."""
    y_true = np.asarray(y_true)
    probs = np.asarray(probs, dtype=np.float64)
    classes = np.unique(y_true)
    if classes.size < 2:
        raise ValueError("mAUC needs at least two classes present")
    pair_aucs = []
    for a_i, i in enumerate(classes):
        for j in classes[a_i + 1:]:
            pair_aucs.append(0.5 * (_auc_one_vs_one(y_true, probs, int(i), int(j))
                                    + _auc_one_vs_one(y_true, probs, int(j), int(i))))
    return float(np.mean(pair_aucs))


def _auc_one_vs_one(y_true, probs, pos: int, other: int) -> float:
    """A(pos|other): probability that p_pos ranks a pos sample above an
    `other` sample, ties counting half."""
    members = (y_true == pos) | (y_true == other)
    scores = probs[members, pos]
    is_pos = y_true[members] == pos
    n_pos = int(is_pos.sum())
    n_other = int((~is_pos).sum())
    ranks = rankdata(scores)
    s = ranks[is_pos].sum()
    return (s - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_other)


def classification_metrics(y_true, y_pred, probs, n_bins: int = 15) -> dict:
    """BA / ECE / mAUC bundle for one task's predictions."""
    return {
        "ba": balanced_accuracy(y_true, y_pred),
        "ece": expected_calibration_error(y_true, probs, n_bins=n_bins),
        "mauc": mauc_hand_till(y_true, probs),
    }


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    p_value: object  # float, or None when inconclusive
    statistic: object  # W+ (sum of positive-difference ranks)
    n_nonzero: int
    method: str  # "exact", "normal", or "inconclusive"

    @property
    def inconclusive(self) -> bool:
        return self.p_value is None


def wilcoxon_signed_rank(paired_a, paired_b) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are discarded before ranking (midranks for tied
    magnitudes). Fewer than 5 nonzero differences is reported as
    inconclusive rather than as a p-value; 5..25 uses the exact sign-flip
    distribution, larger n the normal approximation with continuity and
    tie corrections.
    """
    a = np.asarray(paired_a, dtype=np.float64)
    b = np.asarray(paired_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n < 5:
        return WilcoxonResult(None, None, n, "inconclusive")
    ranks = rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    if n <= 25:
        p = _exact_two_sided(ranks, w_plus)
        return WilcoxonResult(p, w_plus, n, "exact")
    p = _normal_two_sided(ranks, w_plus, n)
    return WilcoxonResult(p, w_plus, n, "normal")


def _exact_two_sided(ranks, w_plus) -> float:
    # Distribution of W+ over all 2^n equally likely sign assignments,
    # tabulated by dynamic programming on doubled ranks (midranks are
    # half-integers, so 2*rank is integral).
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts += shifted
    denom = 2.0 ** len(ranks)
    w2 = int(np.rint(2.0 * w_plus))
    cdf = counts[: w2 + 1].sum() / denom
    sf = counts[w2:].sum() / denom
    return float(min(1.0, 2.0 * min(cdf, sf)))


def _normal_two_sided(ranks, w_plus, n) -> float:
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction: subtract sum(t^3 - t)/48 over groups of tied magnitudes
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= ((tie_counts ** 3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return 1.0
    delta = w_plus - mean
    delta -= math.copysign(min(0.5, abs(delta)), delta)  # continuity correction
    z = delta / math.sqrt(var)
    return float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))
