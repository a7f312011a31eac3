"""Dense float64 tensors with reverse-mode automatic differentiation.

Deliberately small: row-major contiguous storage, explicit shape checks,
and a hard error on any non-finite value so numerical bugs surface at the
op that produced them instead of three layers later.  Elementwise ops
accept operands of identical shape, a scalar, or a trailing-suffix shape
(the classic bias / positional-embedding broadcast); anything fancier is
rejected on purpose.

Backward rules live in closures attached to each output tensor.  Calling
``backward`` on a scalar walks the graph once in reverse topological
order, so running it twice on the same graph without zeroing accumulates
exactly twice the gradient.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericsError, ShapeError, UsageError

Array = np.ndarray

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        return arr  # ascontiguousarray would promote 0-d to shape (1,)
    return np.ascontiguousarray(arr)


def _check_finite(arr: Array, where: str) -> None:
    # one-pass reduction: any NaN/Inf in arr makes the sum non-finite
    with np.errstate(over="ignore", invalid="ignore"):
        total = arr.sum()
    if not np.isfinite(total):
        if np.all(np.isfinite(arr)):
            return  # sum overflowed on legitimately huge finite values
        raise NumericsError(f"non-finite values produced by {where}")


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(values)
        _check_finite(self.data, name or "tensor construction")
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # ---- basic introspection -------------------------------------------------

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
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def to_numpy(self) -> Array:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})\n{self.data!r}"

    # ---- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data: Array, parents: tuple[Tensor, ...], bw, name: str) -> Tensor:
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, name=name)
    if requires:
        out._parents = parents
        out._backward = bw
    return out


# ---- broadcast helpers (strict: equal, scalar, or trailing suffix) ------------


def _broadcast_ok(a_shape: tuple, b_shape: tuple) -> bool:
    if a_shape == b_shape:
        return True
    if int(np.prod(a_shape, dtype=np.int64)) == 1 or \
            int(np.prod(b_shape, dtype=np.int64)) == 1:
        return True
    small, big = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    return big[len(big) - len(small):] == small


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are neither equal, "
                         f"scalar, nor a trailing suffix of each other")


def _reduce_to(grad: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    if int(np.prod(shape, dtype=np.int64)) == 1:
        return grad.sum().reshape(shape)
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "add")
    out_data = a.data + b.data

    def bw(g):
        return [(a, _reduce_to(g, a.shape)), (b, _reduce_to(g, b.shape))]

    return _make(out_data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "sub")
    out_data = a.data - b.data

    def bw(g):
        return [(a, _reduce_to(g, a.shape)), (b, _reduce_to(-g, b.shape))]

    return _make(out_data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "mul")
    out_data = a.data * b.data

    def bw(g):
        return [(a, _reduce_to(g * b.data, a.shape)), (b, _reduce_to(g * a.data, b.shape))]

    return _make(out_data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "div")
    out_data = a.data / b.data

    def bw(g):
        ga = _reduce_to(g / b.data, a.shape)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b.shape)
        return [(a, ga), (b, gb)]

    return _make(out_data, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _wrap(a)

    def bw(g):
        return [(a, -g)]

    return _make(-a.data, (a,), bw, "neg")


# ---- matmul --------------------------------------------------------------------


def _reduce_batch(grad: Array, shape: tuple) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis in range(grad.ndim - 2):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions not broadcastable: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bw(g):
        ga = _reduce_batch(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _reduce_batch(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return [(a, ga), (b, gb)]

    return _make(out_data, (a, b), bw, "matmul")


# ---- shape manipulation ---------------------------------------------------------


def reshape(a, shape: tuple) -> Tensor:
    a = _wrap(a)
    shape = tuple(int(s) for s in shape)
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")

    def bw(g):
        return [(a, g.reshape(a.shape))]

    return _make(out_data, (a,), bw, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(int(i) for i in np.argsort(axes))
    out_data = np.ascontiguousarray(a.data.transpose(axes))

    def bw(g):
        return [(a, g.transpose(inverse))]

    return _make(out_data, (a,), bw, "transpose")


def _validate_index(a: Tensor, idx):
    if isinstance(idx, np.ndarray):
        if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
            raise UsageError("getitem: array indices must be 1-D integer arrays")
        return idx.astype(np.intp)
    if isinstance(idx, (int, np.integer, slice)):
        return idx
    if isinstance(idx, tuple) and all(isinstance(i, (int, np.integer, slice)) for i in idx):
        return idx
    raise UsageError(f"getitem: unsupported index {idx!r}")


def getitem(a, idx) -> Tensor:
    a = _wrap(a)
    idx = _validate_index(a, idx)
    out_data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        if isinstance(idx, np.ndarray):
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return [(a, full)]

    return _make(out_data, (a,), bw, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise UsageError("concat: need at least one tensor")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bw(g):
        grads = []
        offset = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            grads.append((t, g[tuple(sl)]))
            offset += size
        return grads

    return _make(out_data, tuple(tensors), bw, "concat")


# ---- reductions ------------------------------------------------------------------


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return [(a, np.broadcast_to(g.reshape((1,) * a.ndim), a.shape))]
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return [(a, np.broadcast_to(g_exp, a.shape))]

    return _make(out_data, (a,), bw, "sum")


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.shape[axis]

    def bw(g):
        scaled = g / count
        if axis is None:
            return [(a, np.broadcast_to(scaled.reshape((1,) * a.ndim), a.shape))]
        g_exp = scaled if keepdims else np.expand_dims(scaled, axis)
        return [(a, np.broadcast_to(g_exp, a.shape))]

    return _make(out_data, (a,), bw, "mean")


# ---- elementwise nonlinearities ----------------------------------------------------


def maximum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"maximum: shapes {a.shape} and {b.shape} differ")
    out_data = np.maximum(a.data, b.data)
    # subgradient: ties route to the first operand
    mask = a.data >= b.data

    def bw(g):
        return [(a, g * mask), (b, g * ~mask)]

    return _make(out_data, (a, b), bw, "maximum")


def minimum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"minimum: shapes {a.shape} and {b.shape} differ")
    out_data = np.minimum(a.data, b.data)
    mask = a.data <= b.data

    def bw(g):
        return [(a, g * mask), (b, g * ~mask)]

    return _make(out_data, (a, b), bw, "minimum")


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0

    def bw(g):
        return [(a, g * mask)]

    return _make(a.data * mask, (a,), bw, "relu")


def absolute(a) -> Tensor:
    a = _wrap(a)
    sign = np.sign(a.data)  # sign(0) == 0: L1 subgradient at the kink is 0

    def bw(g):
        return [(a, g * sign)]

    return _make(np.abs(a.data), (a,), bw, "abs")


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def bw(g):
        return [(a, g * out_data * (1.0 - out_data))]

    return _make(out_data, (a,), bw, "sigmoid")


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return [(a, out_data * (g - dot))]

    return _make(out_data, (a,), bw, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the elementwise affine."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    dim = x.shape[-1]
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({dim},), "
                         f"got {gain.shape} and {bias.shape}")
    if eps <= 0:
        raise UsageError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead) if lead else (g * xhat)
        g_bias = g.sum(axis=lead) if lead else g
        dxhat = g * gain.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return [(x, dx), (gain, g_gain), (bias, g_bias)]

    return _make(out_data, (x, gain, bias), bw, "layer_norm")


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    x = _wrap(x)
    if not 0.0 <= p < 1.0:
        raise UsageError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout: training-mode call needs an explicit rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def bw(g):
        return [(x, g * mask)]

    return _make(x.data * mask, (x,), bw, "dropout")


# ---- losses --------------------------------------------------------------------------


def l1_loss(pred, target, reduction: str = "mean") -> Tensor:
    pred, target = _wrap(pred), _wrap(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    if reduction not in ("mean", "sum"):
        raise UsageError(f"l1_loss: unknown reduction {reduction!r}")
    diff = pred.data - target.data
    sign = np.sign(diff)
    scale = 1.0 / diff.size if reduction == "mean" else 1.0
    out_data = np.abs(diff).sum() * scale

    def bw(g):
        s = sign * (g * scale)
        return [(pred, s), (target, -s)]

    return _make(out_data, (pred, target), bw, "l1_loss")


def cross_entropy(logits, targets, class_weights: Array | None = None) -> Tensor:
    """Softmax cross entropy with integer targets, weighted-mean reduction.

    With per-class weights, the reduction is sum(w_t * nll) / sum(w_t),
    so down-weighting a class shrinks both its numerator term and the
    denominator, matching the usual weighted-CE convention.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    n, c = logits.shape
    if n == 0:
        raise UsageError("cross_entropy: empty batch")
    if targets.min() < 0 or targets.max() >= c:
        raise UsageError("cross_entropy: target class out of range")
    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1)) + m[:, 0]
    nll = lse - logits.data[np.arange(n), targets]
    if class_weights is None:
        w = np.ones(n)
    else:
        class_weights = np.asarray(class_weights, dtype=np.float64)
        if class_weights.shape != (c,):
            raise ShapeError(f"cross_entropy: class_weights must have shape ({c},)")
        w = class_weights[targets]
    w_total = w.sum()
    out_data = (w * nll).sum() / w_total

    def bw(g):
        probs = np.exp(shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True)))
        probs[np.arange(n), targets] -= 1.0
        return [(logits, probs * (w / w_total)[:, None] * float(g))]

    return _make(out_data, (logits,), bw, "cross_entropy")


def sigmoid_bce(logits, targets) -> Tensor:
    """Elementwise binary cross entropy on logits (numerically stable)."""
    logits, targets = _wrap(logits), _wrap(targets)
    if logits.shape != targets.shape:
        raise ShapeError(f"sigmoid_bce: shapes {logits.shape} and {targets.shape} differ")
    x, t = logits.data, targets.data
    out_data = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)

    def bw(g):
        return [(logits, g * (sig - t)), (targets, g * (-x))]

    return _make(out_data, (logits, targets), bw, "sigmoid_bce")


# ---- backward engine -------------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited = {id(root)}
    stack: list[tuple[Tensor, object]] = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        child = next(it, None)
        if child is None:
            order.append(node)
            stack.pop()
        elif id(child) not in visited:
            visited.add(id(child))
            stack.append((child, iter(child._parents)))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from ``loss``.

    Gradients accumulate additively; call ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("backward: loss does not require grad (graph disabled?)")
    order = _toposort(loss)
    flows: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf: materialize and accumulate the gradient buffer
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        # interior node: keep the flowing gradient visible but avoid
        # allocating a persistent buffer per op
        node.grad = g if node.grad is None else node.grad + g
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            _check_finite(pg, f"backward of {node.name or 'op'}")
            key = id(parent)
            if key in flows:
                flows[key] = flows[key] + pg
            else:
                flows[key] = pg
