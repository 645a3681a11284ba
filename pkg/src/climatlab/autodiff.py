"""Dense tensors with reverse-mode automatic differentiation.

Graphs are built define-by-run: every primitive op returns a new Tensor that
remembers its parents and a backward closure. `backward()` walks the tape in
reverse topological order exactly once; `grad_check()` verifies any scalar
graph-building function against central finite differences.

Every primitive validates that its output is finite (NaN/Inf anywhere is an
error state naming the offending op). Evaluation is deterministic: identical
inputs and construction order produce bitwise-identical values and gradients.
"""

import math

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate a primitive's shape rule."""


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf."""


_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op finite validation; returns the previous setting."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return prev


def _checked(data, op):
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    return data


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the operand's shape (sum rule)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _swap_last(a):
    return np.swapaxes(a, -1, -2)


class Tensor:
    """A dense array node in an autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.data.shape}{label}>"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Constant copy of this tensor's value (no gradient path)."""
        return Tensor(self.data.copy())

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    # -- method forms of the unary/reduction primitives ----------------------
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)

    def transpose(self, axes=None):
        return transpose(self, axes=axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op, parents, backward):
    out = Tensor(_checked(data, op), name=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, "add", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, "mul", (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, "div", (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, -g)

    return _make(-a.data, "neg", (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    data = np.matmul(a.data, b.data)

    def backward(g):
        _accum(a, _unbroadcast(np.matmul(g, _swap_last(b.data)), a.data.shape))
        _accum(b, _unbroadcast(np.matmul(_swap_last(a.data), g), b.data.shape))

    return _make(data, "matmul", (a, b), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _make(data, "exp", (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(data, "log", (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), "abs", (a,), backward)


def pow_const(a, exponent: float) -> Tensor:
    """a ** c for a constant exponent; subgradient 0 where the base is 0."""
    a = as_tensor(a)
    c = float(exponent)
    data = np.power(a.data, c)

    def backward(g):
        base = a.data
        gx = np.where(base == 0.0, 0.0, c * np.power(base, c - 1.0))
        _accum(a, g * gx)

    return _make(data, "pow", (a,), backward)


def transpose(a, axes=None) -> Tensor:
    """Swap the last two axes (default) or apply a full axis permutation."""
    a = as_tensor(a)
    if axes is None:
        data = _swap_last(a.data)

        def backward(g):
            _accum(a, _swap_last(g))

    else:
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        data = np.transpose(a.data, axes)

        def backward(g):
            _accum(a, np.transpose(g, inverse))

    return _make(data, "transpose", (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one operand")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(data, "concat", tuple(tensors), backward)


def take(a, key) -> Tensor:
    """Basic slicing/indexing; gradients scatter back into the parent."""
    a = as_tensor(a)
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accum(a, full)

    return _make(data, "slice", (a,), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(data, "sum", (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / count)

    return _make(data, "mean", (a,), backward)


def tmax(a, axis=None, keepdims=False) -> Tensor:
    """Max reduction; ties share the gradient equally (subgradient)."""
    a = as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)

    def backward(g):
        expanded = data if keepdims or axis is None else np.expand_dims(data, axis)
        mask = (a.data == expanded).astype(a.data.dtype)
        counts = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, mask / counts * g)

    return _make(data, "max", (a,), backward)


def softmax(a, axis=-1) -> Tensor:
    """Softmax along an axis, computed with max-subtraction for stability."""
    a = as_tensor(a)
    moved = np.moveaxis(a.data, axis, -1)
    lead_shape = moved.shape
    rows = np.ascontiguousarray(moved.reshape(-1, lead_shape[-1]))
    y2d = kernels.softmax_fwd(rows)
    data = np.moveaxis(y2d.reshape(lead_shape), -1, axis)

    def backward(g):
        g2d = np.ascontiguousarray(np.moveaxis(g, axis, -1).reshape(-1, lead_shape[-1]))
        gx = kernels.softmax_bwd(y2d, g2d)
        _accum(a, np.moveaxis(gx.reshape(lead_shape), -1, axis))

    return _make(data, "softmax", (a,), backward)


def layernorm(a, gain, bias, eps=1e-5) -> Tensor:
    """Layer normalization over the last axis with learnable gain and bias."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    width = a.data.shape[-1]
    if gain.data.shape != (width,) or bias.data.shape != (width,):
        raise ShapeError(
            f"layernorm gain/bias must have shape ({width},), got "
            f"{gain.data.shape} and {bias.data.shape}"
        )
    rows = np.ascontiguousarray(a.data.reshape(-1, width))
    y2d, mu, rstd = kernels.layernorm_fwd(rows, gain.data, bias.data, eps)
    data = y2d.reshape(a.data.shape)

    def backward(g):
        g2d = np.ascontiguousarray(g.reshape(-1, width))
        gx, ggain, gbias = kernels.layernorm_bwd(rows, gain.data, mu, rstd, g2d)
        _accum(a, gx.reshape(a.data.shape))
        _accum(gain, ggain)
        _accum(bias, gbias)

    return _make(data, "layernorm", (a, gain, bias), backward)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU activation."""
    a = as_tensor(a)
    flat = np.ascontiguousarray(a.data.reshape(-1))
    data = kernels.gelu_fwd(flat).reshape(a.data.shape)

    def backward(g):
        gflat = np.ascontiguousarray(g.reshape(-1))
        _accum(a, kernels.gelu_bwd(flat, gflat).reshape(a.data.shape))

    return _make(data, "gelu", (a,), backward)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    """Stable log-sum-exp; the stabilizing max is detached, so the gradient
    is exactly the softmax without a tie kink."""
    a = as_tensor(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    out = log(tsum(exp(a - Tensor(shift)), axis=axis, keepdims=True)) + Tensor(shift)
    if not keepdims:
        out = take(out, _squeeze_key(out.data.ndim, axis))
    return out


def _squeeze_key(ndim, axis):
    axis = axis % ndim
    return tuple(0 if i == axis else slice(None) for i in range(ndim))


# ---------------------------------------------------------------------------
# Backward pass and the finite-difference verification oracle
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from a scalar
    root. Previous gradients on the visited subgraph are cleared first."""
    if root.data.size != 1:
        raise ShapeError("backward root must be a scalar")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_or_zero(t: Tensor):
    """Gradient of a leaf after backward(); zero if the leaf was unreachable."""
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def grad_check(fn, bindings, step=1e-5, max_checks=None, rng=None) -> float:
    """Compare reverse-mode gradients of fn(bindings) against central finite
    differences.

    fn builds and returns a scalar Tensor from the bindings (name -> leaf
    Tensor); the trainable leaves are perturbed in place. Checks every
    trainable scalar, or a deterministic random subset of max_checks of them.
    Returns max |autodiff - fd| / max(1, |fd|).
    """
    out = fn(bindings)
    backward(out)
    names = sorted(k for k, t in bindings.items() if t.requires_grad)
    analytic = {k: grad_or_zero(bindings[k]).reshape(-1).copy() for k in names}

    coords = [(k, i) for k in names for i in range(bindings[k].data.size)]
    if max_checks is not None and len(coords) > max_checks:
        rng = rng if rng is not None else np.random.default_rng(0)
        picked = rng.choice(len(coords), size=max_checks, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    for name, i in coords:
        flat = bindings[name].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(fn(bindings).data)
        flat[i] = orig - step
        f_minus = float(fn(bindings).data)
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NonFiniteError("non-finite finite-difference evaluation")
        fd = (f_plus - f_minus) / (2.0 * step)
        rel = abs(analytic[name][i] - fd) / max(1.0, abs(fd))
        worst = max(worst, rel)
    return worst
