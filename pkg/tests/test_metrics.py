"""Metrics against independent brute-force oracles."""

import itertools
import math

import numpy as np
import pytest

from climatlab import metrics


# --- brute-force oracles (loops and pair counting, independent of the
# --- implementations under test) -------------------------------------------

def ba_oracle(y_true, y_pred):
    per_class = []
    for c in sorted(set(y_true.tolist())):
        hits = total = 0
        for t, p in zip(y_true, y_pred):
            if t == c:
                total += 1
                hits += int(p == c)
        per_class.append(hits / total)
    return sum(per_class) / len(per_class)


def ece_oracle(y_true, probs, n_bins):
    n = len(y_true)
    total = 0.0
    for b in range(n_bins):
        lo, hi = b / n_bins, (b + 1) / n_bins
        members = []
        for i in range(n):
            conf = probs[i].max()
            inside = (lo <= conf < hi) or (b == n_bins - 1 and conf == 1.0)
            if inside:
                members.append(i)
        if not members:
            continue
        acc = sum(int(probs[i].argmax() == y_true[i]) for i in members) / len(members)
        conf = sum(probs[i].max() for i in members) / len(members)
        total += len(members) / n * abs(acc - conf)
    return total


def mauc_oracle(y_true, probs):
    classes = sorted(set(y_true.tolist()))
    pair_vals = []
    for i, j in itertools.combinations(classes, 2):
        pair_vals.append(0.5 * (auc_pair_oracle(y_true, probs, i, j)
                                + auc_pair_oracle(y_true, probs, j, i)))
    return sum(pair_vals) / len(pair_vals)


def auc_pair_oracle(y_true, probs, pos, other):
    # count concordant pairs, ties worth half
    pos_scores = [probs[i, pos] for i in range(len(y_true)) if y_true[i] == pos]
    oth_scores = [probs[i, pos] for i in range(len(y_true)) if y_true[i] == other]
    wins = 0.0
    for a in pos_scores:
        for b in oth_scores:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(pos_scores) * len(oth_scores))


def wilcoxon_enum_oracle(a, b):
    # enumerate every sign assignment of the nonzero differences
    diffs = [x - y for x, y in zip(a, b) if x != y]
    n = len(diffs)
    mags = sorted(abs(d) for d in diffs)
    ranks = []
    for d in diffs:
        tied = [i for i, m in enumerate(mags) if m == abs(d)]
        ranks.append(1 + sum(tied) / len(tied))
    w_obs = sum(r for d, r in zip(diffs, ranks) if d > 0)
    count_le = count_ge = 0
    for signs in itertools.product([0, 1], repeat=n):
        w = sum(r for s, r in zip(signs, ranks) if s)
        count_le += int(w <= w_obs + 1e-12)
        count_ge += int(w >= w_obs - 1e-12)
    total = 2 ** n
    return min(1.0, 2.0 * min(count_le / total, count_ge / total))


def random_instance(rng, max_n=100):
    n = int(rng.integers(10, max_n + 1))
    n_c = int(rng.integers(2, 6))
    y = rng.integers(0, n_c, size=n)
    y[:n_c] = np.arange(n_c)  # every class present
    raw = rng.uniform(0.05, 1.0, size=(n, n_c))
    probs = raw / raw.sum(axis=1, keepdims=True)
    # quantize so score ties actually occur
    probs = np.round(probs, 2)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return y, probs


class TestBalancedAccuracy:
    def test_perfect(self):
        y = np.array([0, 1, 2, 2])
        assert metrics.balanced_accuracy(y, y) == 1.0

    def test_two_class_recalls(self):
        # recalls 1.0 and 0.5 -> 0.75
        y_true = np.array([0, 0, 1, 1])
        y_pred = np.array([0, 0, 1, 0])
        assert metrics.balanced_accuracy(y_true, y_pred) == pytest.approx(0.75)

    def test_classes_absent_from_labels_ignored(self):
        y_true = np.array([0, 0, 1])
        y_pred = np.array([0, 2, 1])
        assert metrics.balanced_accuracy(y_true, y_pred) == pytest.approx(0.75)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metrics.balanced_accuracy([], [])


class TestEce:
    def test_worked_example(self):
        probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.4, 0.6], [0.55, 0.45]])
        y = np.array([0, 0, 0, 0])  # correctness pattern (1, 1, 0, 1)
        assert metrics.expected_calibration_error(y, probs, n_bins=2) == pytest.approx(
            0.0375, abs=1e-12
        )

    def test_perfect_confident_predictions(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert metrics.expected_calibration_error(np.array([0, 1]), probs) == 0.0

    def test_unnormalized_rows_rejected(self):
        with pytest.raises(ValueError):
            metrics.expected_calibration_error(np.array([0]), np.array([[0.7, 0.7]]))


class TestMauc:
    def test_perfect_separation(self):
        probs = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]])
        assert metrics.mauc_hand_till(np.array([0, 1, 2]), probs) == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            metrics.mauc_hand_till(np.array([1, 1]), np.array([[0.5, 0.5], [0.5, 0.5]]))


def test_metrics_match_brute_force_oracles():
    rng = np.random.default_rng(202)
    for _ in range(50):
        y, probs = random_instance(rng)
        preds = probs.argmax(axis=1)
        assert abs(metrics.balanced_accuracy(y, preds) - ba_oracle(y, preds)) <= 1e-12
        assert abs(
            metrics.expected_calibration_error(y, probs, n_bins=15)
            - ece_oracle(y, probs, 15)
        ) <= 1e-12
        assert abs(metrics.mauc_hand_till(y, probs) - mauc_oracle(y, probs)) <= 1e-12


class TestWilcoxon:
    def test_identical_samples_inconclusive(self):
        r = metrics.wilcoxon_signed_rank(np.ones(10), np.ones(10))
        assert r.inconclusive and r.method == "inconclusive"

    def test_all_positive_n6_exact(self):
        a = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        b = np.zeros(6)
        r = metrics.wilcoxon_signed_rank(a, b)
        assert r.method == "exact"
        assert r.p_value == pytest.approx(0.03125, abs=1e-15)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=12)
        b = rng.normal(size=12)
        r1 = metrics.wilcoxon_signed_rank(a, b)
        r2 = metrics.wilcoxon_signed_rank(b, a)
        assert r1.p_value == pytest.approx(r2.p_value, abs=1e-12)

    def test_exact_matches_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(5, 11))
            a = np.round(rng.normal(size=n), 1)
            b = np.round(rng.normal(size=n), 1)
            if np.count_nonzero(a - b) < 5:
                continue
            got = metrics.wilcoxon_signed_rank(a, b)
            want = wilcoxon_enum_oracle(a.tolist(), b.tolist())
            assert got.p_value == pytest.approx(want, abs=1e-12)

    def test_normal_approximation_for_large_n(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=60)
        b = a + rng.normal(0.8, 1.0, size=60)
        r = metrics.wilcoxon_signed_rank(a, b)
        assert r.method == "normal"
        assert 0.0 <= r.p_value <= 1.0
        assert r.p_value < 0.01  # strong shift must be detected

    def test_normal_swap_symmetry(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=40)
        b = rng.normal(size=40)
        r1 = metrics.wilcoxon_signed_rank(a, b)
        r2 = metrics.wilcoxon_signed_rank(b, a)
        assert r1.p_value == pytest.approx(r2.p_value, abs=1e-12)
