"""Minimal reverse-mode automatic differentiation over numpy arrays.

Everything in this package computes forward values in float64, no matter how
parameters are persisted (checkpoints keep float32); gradients are accumulated
in float64 as well.  The graph is built dynamically: an operation that touches
at least one tensor with ``requires_grad`` records a closure that scatters the
output gradient back to its inputs, and ``Tensor.backward`` replays those
closures once in reverse topological order.  Operations on constants record
nothing, so evaluation-only forward passes carry no graph.

Only the operations needed by the networks and losses of this package are
implemented.  Elementwise arithmetic follows numpy broadcasting; reductions
take an optional axis (int or tuple).
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

# When set (see record_branch_masks), piecewise ops append their active-branch
# masks here, so finite-difference checks can detect kink crossings.
_BRANCH_TRACE: list[Array] | None = None


@contextmanager
def record_branch_masks(sink: list[Array]):
    """Collect the branch masks of every relu/clamp evaluated in the block.

    A central finite difference is a valid derivative estimate only while no
    piecewise operation switches branches inside the probe interval; comparing
    the recorded masks of the two perturbed evaluations tells the caller
    whether the probe crossed a kink.
    """
    global _BRANCH_TRACE
    previous = _BRANCH_TRACE
    _BRANCH_TRACE = sink
    try:
        yield sink
    finally:
        _BRANCH_TRACE = previous


class Tensor:
    """A numpy array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Array | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient "
                                 "needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        _accumulate(self, np.asarray(grad, dtype=np.float64))
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward()

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar; every op lives as a module-level function below.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(value) -> Tensor:
    """Wrap arrays/scalars as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order (root first), iterative to spare the stack."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def _accumulate(tensor: Tensor, grad: Array) -> None:
    if tensor.grad is None:
        tensor.grad = grad.copy() if grad.base is not None else grad
    else:
        tensor.grad = tensor.grad + grad


def _node(data: Array, parents: Sequence[Tensor],
          backward: Callable[[Tensor], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = lambda: backward(out)
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the originating shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(out.grad, b.data.shape))

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-out.grad, b.data.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-out.grad * a.data / (b.data * b.data),
                                        b.data.shape))

    return _node(a.data / b.data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    a = as_tensor(a)
    exponent = float(exponent)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, out.grad * exponent * np.power(a.data, exponent - 1.0))

    return _node(np.power(a.data, exponent), (a,), backward)


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, out.grad * 2.0 * a.data)

    return _node(a.data * a.data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    value = np.exp(a.data)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, out.grad * value)

    return _node(value, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, out.grad / a.data)

    return _node(np.log(a.data), (a,), backward)


def sqrt(a) -> Tensor:
    """Square root; the gradient at exactly 0 is taken as 0 (subgradient)."""
    a = as_tensor(a)
    value = np.sqrt(a.data)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            grad = np.where(a.data > 0.0, out.grad * 0.5 / np.where(value > 0.0, value, 1.0), 0.0)
            _accumulate(a, grad)

    return _node(value, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    if _BRANCH_TRACE is not None:
        _BRANCH_TRACE.append(mask)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, out.grad * mask)

    return _node(np.maximum(a.data, 0.0), (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    value = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, out.grad * value * (1.0 - value))

    return _node(value, (a,), backward)


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); zero gradient where the floor is active (and at ties)."""
    a = as_tensor(a)
    floor = float(floor)
    mask = a.data > floor
    if _BRANCH_TRACE is not None:
        _BRANCH_TRACE.append(mask)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, out.grad * mask)

    return _node(np.maximum(a.data, floor), (a,), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, out.grad.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, out.grad.transpose(inverse))

    return _node(a.data.transpose(axes), (a,), backward)


def take(a, index) -> Tensor:
    """Basic (slice) indexing with gradient scatter into the source."""
    a = as_tensor(a)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            grad = np.zeros_like(a.data)
            grad[index] += out.grad
            _accumulate(a, grad)

    return _node(a.data[index], (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def _expand_reduced(grad: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(grad, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        expanded = list(grad.shape)
        for ax in sorted(axes):
            expanded.insert(ax, 1)
        grad = grad.reshape(expanded)
    return np.broadcast_to(grad, shape)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, _expand_reduced(out.grad, a.data.shape, axis, keepdims))

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            _accumulate(a, _expand_reduced(out.grad, a.data.shape, axis, keepdims) / count)

    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product, 2-D or batched 3-D (numpy matmul semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 dimensions")

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            grad = np.matmul(out.grad, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            grad = np.matmul(np.swapaxes(a.data, -1, -2), out.grad)
            _accumulate(b, _unbroadcast(grad, b.data.shape))

    return _node(np.matmul(a.data, b.data), (a, b), backward)


# ---------------------------------------------------------------------------
# neural-network specific operations


def conv2d(x, weight, bias, stride: int = 1, padding: int = 1) -> Tensor:
    """2-D convolution (cross-correlation) via im2col and one GEMM.

    ``x`` is (N, C, H, W), ``weight`` (Cout, C, KH, KW), ``bias`` (Cout,).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xd, wd, bd = x.data, weight.data, bias.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d input must be rank 4, got shape {xd.shape}")
    n, c, h, w = xd.shape
    cout, cin, kh, kw = wd.shape
    if cin != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {cin}")
    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xd
    hp, wp = xp.shape[2], xp.shape[3]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]          # (n, c, oh, ow, kh, kw)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wmat = wd.reshape(cout, c * kh * kw)
    out_flat = cols @ wmat.T + bd
    out_data = np.ascontiguousarray(
        out_flat.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))

    def backward(out: Tensor) -> None:
        grad_flat = out.grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
        if weight.requires_grad:
            _accumulate(weight, (grad_flat.T @ cols).reshape(wd.shape))
        if bias.requires_grad:
            _accumulate(bias, grad_flat.sum(axis=0))
        if x.requires_grad:
            gcols = grad_flat @ wmat
            g6 = gcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros((n, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride,
                        j:j + stride * ow:stride] += g6[:, :, i, j]
            if padding:
                gxp = gxp[:, :, padding:hp - padding, padding:wp - padding]
            _accumulate(x, gxp)

    return _node(out_data, (x, weight, bias), backward)


def softmax(a, axis: int = 1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            inner = (out.grad * value).sum(axis=axis, keepdims=True)
            _accumulate(a, value * (out.grad - inner))

    return _node(value, (a,), backward)


def pick(a, indices) -> Tensor:
    """Row-wise gather: out[i] = a[i, indices[i]]."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    if idx.ndim != 1 or a.data.ndim != 2:
        raise ValueError("pick expects a 2-D tensor and 1-D indices")
    rows = np.arange(a.data.shape[0])

    def backward(out: Tensor) -> None:
        if a.requires_grad:
            grad = np.zeros_like(a.data)
            np.add.at(grad, (rows, idx), out.grad)
            _accumulate(a, grad)

    return _node(a.data[rows, idx], (a,), backward)
