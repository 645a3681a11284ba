"""CLUB/TCE/CE calculus, the tau constraint, and the masked objective."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from climatlab import autodiff as ad
from climatlab import losses
from climatlab.autodiff import Tensor
from climatlab.losses import TaskBatch


def ce_oracle(logits, c):
    # direct unstable formula, fine at oracle scale
    logits = np.asarray(logits, dtype=np.float64)
    return math.log(np.exp(logits).sum()) - logits[c]


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert losses.cross_entropy([0.0, 0.0], 0) == pytest.approx(math.log(2), abs=1e-12)

    def test_scalar_oracle(self):
        got = losses.cross_entropy([2.0, 0.0, -1.0], 0)
        assert got == pytest.approx(ce_oracle([2.0, 0.0, -1.0], 0), abs=1e-12)
        assert got == pytest.approx(0.16985, abs=5e-6)

    def test_shift_invariance(self):
        logits = np.array([1.3, -0.2, 4.0])
        base = losses.cross_entropy(logits, 1)
        assert abs(losses.cross_entropy(logits + 123.456, 1) - base) <= 1e-12

    def test_out_of_range_class(self):
        with pytest.raises(ValueError, match="out of range"):
            losses.cross_entropy([0.0, 0.0], 2)

    def test_batched(self):
        logits = np.array([[2.0, 0.0, -1.0], [0.0, 0.0, 0.0]])
        got = losses.cross_entropy(logits, np.array([0, 1]))
        np.testing.assert_allclose(got, [ce_oracle(logits[0], 0), math.log(3)], atol=1e-12)


class TestTce:
    def test_tau_one_reduces_to_ce(self):
        logits = np.array([2.0, 0.0, -1.0])
        assert losses.tce(logits, 0, 1.0) == pytest.approx(
            losses.cross_entropy(logits, 0), abs=1e-15
        )

    def test_scaled_oracle(self):
        got = losses.tce([2.0, 0.0, -1.0], 0, 0.7)
        assert got == pytest.approx(ce_oracle([1.4, 0.0, -0.7], 0), abs=1e-12)
        assert got == pytest.approx(0.31412, abs=5e-6)

    def test_small_tau_approaches_log_nc(self):
        got = losses.tce([2.0, 0.0, -1.0], 0, 1e-9)
        assert got == pytest.approx(math.log(3), abs=1e-6)

    def test_nonpositive_tau_rejected(self):
        with pytest.raises(ValueError):
            losses.tce([0.0, 1.0], 0, 0.0)


class TestClub:
    def test_tau_one_equals_ce(self):
        logits = np.array([0.4, -2.0, 1.1])
        assert losses.club(logits, 2, 1.0) == pytest.approx(
            losses.cross_entropy(logits, 2), abs=1e-12
        )

    def test_uniform_logits_collapse_to_log_nc(self):
        for tau in (0.2, 0.6, 1.0):
            assert losses.club([0.0, 0.0, 0.0, 0.0], 1, tau) == pytest.approx(
                math.log(4), abs=1e-12
            )

    def test_scalar_oracle_and_bound(self):
        got = losses.club([2.0, 0.0, -1.0], 0, 0.7)
        want = 0.7 * ce_oracle([2.0, 0.0, -1.0], 0) + 0.3 * math.log(3)
        assert got == pytest.approx(want, abs=1e-12)
        assert got == pytest.approx(0.44848, abs=5e-6)
        assert got >= losses.tce([2.0, 0.0, -1.0], 0, 0.7)

    def test_tau_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError):
            losses.club([0.0, 1.0], 0, 1.5)

    def test_affine_in_tau_with_slope_ce_minus_log_nc(self):
        logits = np.array([1.0, -0.5, 0.3])
        ce = losses.cross_entropy(logits, 1)
        slope = ce - math.log(3)
        v1 = losses.club(logits, 1, 0.3)
        v2 = losses.club(logits, 1, 0.8)
        assert (v2 - v1) / 0.5 == pytest.approx(slope, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(2, 10),
    st.floats(0.001, 1.0),
    st.integers(0, 2**32 - 1),
)
def test_club_upper_bounds_tce(n_c, tau, seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(0.0, 2.0, size=n_c)
    c = int(rng.integers(n_c))
    assert losses.tce(logits, c, tau) <= losses.club(logits, c, tau) + 1e-12


class TestConstrainTau:
    def test_equal_sigmas_give_all_ones(self):
        np.testing.assert_array_equal(losses.constrain_tau(np.ones(5), 0.1), np.ones(5))

    def test_singleton(self):
        np.testing.assert_array_equal(losses.constrain_tau(np.array([2.3]), 0.1), [1.0])

    def test_hand_evaluated(self):
        # rho = (1, 0.5); softmax ratio e^{0.5-1} = e^{-0.5}
        got = losses.constrain_tau(np.array([0.0, 1.0]), eps=1.0)
        np.testing.assert_allclose(got, [1.0, math.exp(-0.5)], atol=1e-12)
        assert got[0] == 1.0

    def test_invariants_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            t = int(rng.integers(0, 9))
            sigma = rng.normal(0.0, 2.0, size=t + 1)
            taus = losses.constrain_tau(sigma, 0.1)
            assert taus.max() == 1.0
            assert np.all(taus > 0.0) and np.all(taus <= 1.0)

    def test_gradient_flows_through_constraint(self):
        sigma = Tensor(np.array([0.3, 1.4, -0.8]), requires_grad=True)
        taus = losses.constrain_tau_t(sigma, 0.1)
        ad.backward(taus.sum())
        assert sigma.grad is not None
        assert np.any(sigma.grad != 0.0)

    def test_matches_finite_differences(self):
        def fn(b):
            return (losses.constrain_tau_t(b["sigma"], 0.1) * Tensor([0.3, -1.0, 2.0, 0.5])).sum()

        bindings = {"sigma": Tensor(np.array([0.5, 1.5, -0.7, 2.0]), requires_grad=True)}
        assert ad.grad_check(fn, bindings) < 1e-7

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            losses.constrain_tau(np.ones(3), 0.0)


class TestGradIdentities:
    def test_random_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n_c = int(rng.integers(2, 8))
            dev = losses.club_grad_identities(
                rng.normal(size=n_c), int(rng.integers(n_c)), float(rng.uniform(0.05, 1.0))
            )
            assert dev < 1e-8

    def test_tau_one_matches_ce_gradient(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=5)
        assert losses.club_grad_identities(logits, 3, 1.0) < 1e-12

    def test_uniform_logits_zero_tau_gradient(self):
        theta = Tensor(np.zeros(4), requires_grad=True)
        tau = Tensor(0.6, requires_grad=True)
        loss = losses.club_rows(theta[None, :], np.array([2]), tau).sum()
        ad.backward(loss)
        assert float(tau.grad) == pytest.approx(0.0, abs=1e-15)


class TestPrognosisLoss:
    def make_batch(self, rng, batch=4, tasks=3, n_c=3, masks=None):
        logits = [Tensor(rng.normal(size=(batch, n_c))) for _ in range(tasks)]
        labels = rng.integers(0, n_c, size=(batch, tasks))
        if masks is None:
            masks = np.ones((batch, tasks), dtype=int)
        return TaskBatch(logits=logits, labels=labels, masks=masks)

    def test_indicator_arithmetic(self):
        # one sample, CLUB values (0.4, 9.9, 0.6) with masks (1, 0, 1) -> 0.5
        club_vals = Tensor(np.array([[0.4, 9.9, 0.6]]))
        batch = TaskBatch(
            logits=[club_vals[:, 0:1], club_vals[:, 1:2], club_vals[:, 2:3]],
            labels=np.zeros((1, 3), dtype=int),
            masks=np.array([[1, 0, 1]]),
        )
        got = losses.masked_task_loss(batch, lambda t, lg, y: lg[:, 0])
        assert float(got.data) == pytest.approx(0.5, abs=1e-15)

    def test_equal_losses_mean(self):
        rng = np.random.default_rng(3)
        logits = Tensor(rng.normal(size=(2, 3)))
        batch = TaskBatch(
            logits=[logits, logits, logits],
            labels=np.tile(np.array([[1], [2]]), (1, 3)),
            masks=np.ones((2, 3), dtype=int),
        )
        tau = np.ones(3)
        per_task = losses.ce_rows(logits, batch.labels[:, 0]).data
        got = losses.prognosis_loss(batch, tau)
        assert float(got.data) == pytest.approx(float(per_task.mean()), abs=1e-12)

    def test_masked_labels_are_bitwise_irrelevant(self):
        rng = np.random.default_rng(4)
        batch = self.make_batch(rng, masks=np.array([[1, 0, 1]] * 4))
        tau = losses.constrain_tau(rng.normal(size=3), 0.1)
        base = losses.prognosis_loss(batch, tau).data.copy()
        mutated = batch.labels.copy()
        mutated[:, 1] = (mutated[:, 1] + 1) % 3
        batch2 = TaskBatch(logits=batch.logits, labels=mutated, masks=batch.masks)
        again = losses.prognosis_loss(batch2, tau).data
        assert np.array_equal(base, again)

    def test_all_masked_sample_rejected(self):
        rng = np.random.default_rng(5)
        masks = np.ones((4, 3), dtype=int)
        masks[2] = 0
        batch = self.make_batch(rng, masks=masks)
        with pytest.raises(ValueError, match="masked"):
            losses.prognosis_loss(batch, np.ones(3))

    def test_out_of_range_placeholders_tolerated_when_masked(self):
        rng = np.random.default_rng(6)
        batch = self.make_batch(rng, masks=np.array([[1, 0, 1]] * 4))
        labels = batch.labels.copy()
        labels[:, 1] = -7  # masked slots may carry arbitrary placeholders
        batch2 = TaskBatch(logits=batch.logits, labels=labels, masks=batch.masks)
        assert np.isfinite(losses.prognosis_loss(batch2, np.ones(3)).data)


class TestConsistencyAndTotal:
    def test_identical_logits_zero(self):
        x = np.array([[1.0, 2.0, 3.0]])
        assert float(losses.consistency_loss(x, x).data) == 0.0

    def test_hand_value(self):
        got = losses.consistency_loss(np.array([[1.0, 2.0, 3.0]]), np.array([[0.0, 2.0, 5.0]]))
        assert float(got.data) == pytest.approx(3.0, abs=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=(2, 5, 3))
        assert float(losses.consistency_loss(a, b).data) == pytest.approx(
            float(losses.consistency_loss(b, a).data), abs=1e-15
        )

    def test_length_mismatch(self):
        with pytest.raises(ad.ShapeError):
            losses.consistency_loss(np.ones((1, 3)), np.ones((1, 4)))

    def test_total_loss_arithmetic(self):
        rng = np.random.default_rng(8)
        logits = [Tensor(rng.normal(size=(3, 3))) for _ in range(2)]
        batch = TaskBatch(
            logits=logits,
            labels=rng.integers(0, 3, size=(3, 2)),
            masks=np.ones((3, 2), dtype=int),
            diag_logits=Tensor(rng.normal(size=(3, 3))),
        )
        tau = np.ones(2)
        prog = float(losses.prognosis_loss(batch, tau).data)
        cons = float(losses.consistency_loss(batch.diag_logits, batch.logits[0]).data)
        assert float(losses.total_loss(batch, tau, 0.0).data) == pytest.approx(prog)
        assert float(losses.total_loss(batch, tau, 1.0).data) == pytest.approx(
            prog + cons, abs=1e-12
        )
        assert float(losses.total_loss(batch, tau, 0.5).data) == pytest.approx(
            prog + 0.5 * cons, abs=1e-12
        )

    def test_lambda_zero_contributes_zero_gradient(self):
        rng = np.random.default_rng(9)
        diag = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        logits = [Tensor(rng.normal(size=(3, 3)), requires_grad=True) for _ in range(2)]
        batch = TaskBatch(
            logits=logits,
            labels=rng.integers(0, 3, size=(3, 2)),
            masks=np.ones((3, 2), dtype=int),
            diag_logits=diag,
        )
        ad.backward(losses.total_loss(batch, np.ones(2), 0.0))
        assert diag.grad is None  # no path at all
        grads_zero = [t.grad.copy() for t in logits]
        ad.backward(losses.prognosis_loss(batch, np.ones(2)))
        for g0, t in zip(grads_zero, logits):
            assert np.array_equal(g0, t.grad)


class TestBaselines:
    def test_focal_gamma_zero_is_ce(self):
        logits = np.array([1.0, -0.3, 0.2])
        got = losses.baseline_losses(logits, 1, "focal", {"gamma": 0.0})
        assert got == pytest.approx(losses.cross_entropy(logits, 1), abs=1e-12)

    def test_focal_confident_correct_is_zero(self):
        # p_c -> 1 saturates in float64; the loss must be exactly 0
        logits = np.array([80.0, 0.0, 0.0])
        assert losses.baseline_losses(logits, 0, "focal", {"gamma": 2.0}) == 0.0

    def test_focal_rows_matches_scalar(self):
        rng = np.random.default_rng(10)
        logits = rng.normal(size=(4, 3))
        labels = rng.integers(0, 3, size=4)
        rows = losses.focal_rows(Tensor(logits), labels, gamma=2.0).data
        for i in range(4):
            want = losses.baseline_losses(logits[i], int(labels[i]), "focal", {"gamma": 2.0})
            assert rows[i] == pytest.approx(want, abs=1e-12)

    def test_mtl_zero_logvars_sum_of_ce(self):
        rng = np.random.default_rng(11)
        logit_list = [rng.normal(size=3), rng.normal(size=4)]
        labels = [1, 3]
        got = losses.baseline_losses(logit_list, labels, "mtl", {"s": np.zeros(2)})
        want = sum(losses.cross_entropy(l, y) for l, y in zip(logit_list, labels))
        assert got == pytest.approx(want, abs=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            losses.baseline_losses([0.0, 1.0], 0, "huber")

    def test_focal_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)

        def fn(b):
            return losses.focal_rows(b["x"], np.array([0, 2, 1]), gamma=2.0).mean()

        bindings = {"x": Tensor(rng.normal(size=(3, 3)), requires_grad=True)}
        assert ad.grad_check(fn, bindings) < 1e-7
