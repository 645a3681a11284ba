"""Tensor/autodiff core: primitive semantics, gradients vs finite differences."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from climatlab import autodiff as ad
from climatlab.autodiff import Tensor


def rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestForwardValues:
    def test_matmul_identity(self):
        a = np.array([[1.5, -2.0], [0.25, 3.0]])
        out = ad.matmul(Tensor(np.eye(2)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_softmax_uniform(self):
        out = ad.softmax(Tensor([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, np.full((1, 3), 1.0 / 3.0), atol=1e-15)

    def test_layernorm_hand_evaluated(self):
        # oracle: (x - mu) / sqrt(var + 1e-5) computed by hand for x = [1,2,3]
        x = np.array([1.0, 2.0, 3.0])
        mu = x.mean()
        var = ((x - mu) ** 2).mean()
        expected = (x - mu) / math.sqrt(var + 1e-5)
        out = ad.layernorm(Tensor(x[None, :]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12)
        np.testing.assert_allclose(out.data[0], [-1.2247, 0.0, 1.2247], atol=5e-5)

    def test_softmax_rows_stochastic(self):
        rng = np.random.default_rng(0)
        out = ad.softmax(Tensor(rng.normal(size=(50, 7)) * 5.0))
        assert np.all(out.data >= 0.0)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)

    def test_forward_deterministic_bitwise(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 5))
        w = rng.normal(size=(5, 5))

        def run():
            t = Tensor(x.copy(), requires_grad=True)
            out = ad.softmax(ad.gelu(ad.matmul(t, Tensor(w.copy())))).sum()
            ad.backward(out)
            return out.data.copy(), t.grad.copy()

        (v1, g1), (v2, g2) = run(), run()
        assert np.array_equal(v1, v2)
        assert np.array_equal(g1, g2)


class TestBackwardValues:
    def test_square_gradient(self):
        x = Tensor(3.0, requires_grad=True)
        ad.backward(x * x)
        assert float(x.grad) == pytest.approx(6.0, abs=1e-12)

    def test_softmax_cross_entropy_gradient(self):
        # analytic oracle: d(-log softmax(x)_c)/dx = p - onehot(c)
        logits = Tensor(np.array([0.0, 0.0]), requires_grad=True)
        p = ad.softmax(logits, axis=0)
        loss = -ad.log(p[0])
        ad.backward(loss)
        np.testing.assert_allclose(logits.grad, [-0.5, 0.5], atol=1e-12)

    def test_broadcast_add_grad_sums_over_broadcast_axes(self):
        rng = np.random.default_rng(1)
        a = rand(rng, 4, 3)
        b = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
        ad.backward((a + b).sum())
        np.testing.assert_array_equal(b.grad, np.full((1, 3), 4.0))

    def test_unreachable_leaf_gets_zero(self):
        x = Tensor(1.0, requires_grad=True)
        y = Tensor(2.0, requires_grad=True)
        ad.backward(x * x)
        assert y.grad is None
        np.testing.assert_array_equal(ad.grad_or_zero(y), 0.0)

    def test_non_scalar_root_rejected(self):
        with pytest.raises(ad.ShapeError):
            ad.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


class TestGradCheck:
    def test_cubic_polynomial(self):
        def fn(b):
            x = b["x"]
            return (x * x * x - 2.0 * x * x + x).sum()

        bindings = {"x": Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)}
        assert ad.grad_check(fn, bindings) < 1e-7

    def test_constant_graph(self):
        def fn(b):
            return (b["x"] * 0.0).sum()

        bindings = {"x": Tensor(np.array([1.0, 2.0]), requires_grad=True)}
        assert ad.grad_check(fn, bindings) == 0.0

    def test_composite_ops(self):
        rng = np.random.default_rng(7)
        bindings = {
            "w": rand(rng, 4, 5),
            "x": rand(rng, 3, 4),
            "g": Tensor(rng.normal(size=5) * 0.1 + 1.0, requires_grad=True),
            "b": rand(rng, 5),
        }

        def fn(bd):
            h = ad.matmul(bd["x"], bd["w"])
            h = ad.layernorm(h, bd["g"], bd["b"])
            h = ad.gelu(h)
            p = ad.softmax(h, axis=-1)
            return (p * p).mean() + ad.absolute(h).sum() * 0.01

        assert ad.grad_check(fn, bindings) < 1e-6

    def test_reductions_and_slicing(self):
        rng = np.random.default_rng(11)
        bindings = {"x": rand(rng, 4, 6)}

        def fn(bd):
            x = bd["x"]
            a = x.max(axis=1).sum()
            b = x[1:3, ::2].mean()
            c = ad.concat([x, ad.transpose(x, axes=(1, 0))[:4]], axis=1).sum()
            d = ad.logsumexp(x, axis=-1).sum()
            return a + b + 0.1 * c + d

        assert ad.grad_check(fn, bindings) < 1e-7

    def test_batched_matmul_broadcast(self):
        rng = np.random.default_rng(13)
        bindings = {"a": rand(rng, 2, 3, 4), "w": rand(rng, 4, 5)}

        def fn(bd):
            return ad.matmul(bd["a"], bd["w"]).sum()

        assert ad.grad_check(fn, bindings) < 1e-8

    def test_pow_const(self):
        rng = np.random.default_rng(17)
        bindings = {"x": Tensor(rng.uniform(0.1, 1.0, size=5), requires_grad=True)}

        def fn(bd):
            return ad.pow_const(bd["x"], 1.7).sum()

        assert ad.grad_check(fn, bindings) < 1e-8

    def test_pow_const_zero_base_subgradient(self):
        x = Tensor(np.array([0.0, 2.0]), requires_grad=True)
        ad.backward(ad.pow_const(x, 2.0).sum())
        np.testing.assert_allclose(x.grad, [0.0, 4.0])

    def test_max_checks_subsampling(self):
        def fn(b):
            return (b["x"] * b["x"]).sum()

        bindings = {"x": Tensor(np.arange(1.0, 101.0), requires_grad=True)}
        err = ad.grad_check(fn, bindings, max_checks=10, rng=np.random.default_rng(0))
        assert err < 1e-6


class TestErrors:
    def test_non_finite_reports_op(self):
        with pytest.raises(ad.NonFiniteError, match="log"):
            ad.log(Tensor(np.array([-1.0])))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_layernorm_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.layernorm(Tensor(np.ones((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(3)))

    def test_finite_checks_toggle(self):
        prev = ad.set_finite_checks(False)
        try:
            out = ad.log(Tensor(np.array([-1.0])))
            assert np.isnan(out.data[0])
        finally:
            ad.set_finite_checks(prev)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
def test_softmax_rows_sum_to_one(values):
    out = ad.softmax(Tensor(np.array([values])))
    assert np.all(out.data >= 0.0)
    assert abs(out.data.sum() - 1.0) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_graphs_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    bindings = {"x": rand(rng, 3, 4), "w": rand(rng, 4, 4)}

    def fn(bd):
        h = ad.matmul(bd["x"], bd["w"])
        s = ad.softmax(h, axis=-1)
        return (s * h).sum() + ad.gelu(h).mean()

    assert ad.grad_check(fn, bindings) < 1e-6
