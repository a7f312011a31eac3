"""Parameter containers and the layer primitives the model composes.

Modules register parameters through plain attribute assignment; the walk
over ``__dict__`` is insertion-ordered, which makes parameter naming and
checkpoint layout deterministic for a fixed construction order.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, UsageError


class Parameter(Tensor):
    """A tensor that always tracks gradients and owns a grad buffer."""

    __slots__ = ()

    def __init__(self, values, name: str = ""):
        super().__init__(values, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    if fan_in is None or fan_out is None:
        if len(shape) != 2:
            raise UsageError("xavier_uniform: pass fan_in/fan_out for non-2D shapes")
        fan_in, fan_out = shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal module tree: parameter collection plus a train/eval flag."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for attr, value in self.__dict__.items():
            if isinstance(value, Module):
                yield attr, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{attr}.{i}", item

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out: list[tuple[str, Parameter]] = []
        seen: set[int] = set()
        self._collect_parameters(prefix, out, seen)
        return out

    def _collect_parameters(self, prefix: str, out, seen) -> None:
        for attr, value in self.__dict__.items():
            name = f"{prefix}.{attr}" if prefix else attr
            if isinstance(value, Parameter):
                if id(value) in seen:
                    raise UsageError(f"parameter {name} registered twice")
                seen.add(id(value))
                value.name = name
                out.append((name, value))
            elif isinstance(value, Module):
                value._collect_parameters(name, out, seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item._collect_parameters(f"{name}.{i}", out, seen)
                    elif isinstance(item, Parameter):
                        sub = f"{name}.{i}"
                        if id(item) in seen:
                            raise UsageError(f"parameter {sub} registered twice")
                        seen.add(id(item))
                        item.name = sub
                        out.append((sub, item))

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        problems = []
        for name in params:
            if name not in state:
                problems.append(f"missing parameter {name}")
        for name in state:
            if name not in params:
                problems.append(f"unexpected parameter {name}")
        for name, arr in state.items():
            if name in params and params[name].shape != arr.shape:
                problems.append(f"shape mismatch for {name}: "
                                f"model {params[name].shape} vs checkpoint {arr.shape}")
        if problems:
            raise ConfigError("state dict incompatible:\n  " + "\n  ".join(problems))
        for name, arr in state.items():
            params[name].data[...] = arr


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        return ag.dropout(x, self.p, rng, self.training)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, dropout_p: float, rng: np.random.Generator):
        super().__init__()
        self.lin1 = Linear(dim, hidden, rng)
        self.lin2 = Linear(hidden, dim, rng)
        self.drop = Dropout(dropout_p)

    def forward(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        return self.lin2(self.drop(ag.relu(self.lin1(x)), rng))


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None
              ) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the last two axes.

    q: [..., Nq, d], k/v: [..., Nk, d].  ``mask`` is boolean [Nq, Nk] with
    True meaning "may attend"; masked scores get a large negative finite
    value so the non-finite guard stays intact.
    """
    d = q.shape[-1]
    scores = ag.matmul(q, ag.transpose(k, _swap_last(k.ndim))) * (1.0 / math.sqrt(d))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[-2], k.shape[-2]):
            raise UsageError(f"attention: mask shape {mask.shape} does not match "
                             f"({q.shape[-2]}, {k.shape[-2]})")
        if not mask.any(axis=-1).all():
            raise UsageError("attention: every query needs at least one unmasked key")
        scores = scores + np.where(mask, 0.0, -1e30)
    weights = ag.softmax(scores, axis=-1)
    return ag.matmul(weights, v), weights


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class MultiHeadAttention(Module):
    """Projected multi-head attention returning per-head weights."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def forward(self, q_in: Tensor, k_in: Tensor, v_in: Tensor,
                mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        squeeze = q_in.ndim == 2
        if squeeze:
            q_in = q_in.reshape(1, *q_in.shape)
            k_in = k_in.reshape(1, *k_in.shape)
            v_in = v_in.reshape(1, *v_in.shape)
        b, nq, dim = q_in.shape
        nk = k_in.shape[1]
        h, hd = self.heads, self.head_dim

        def split(x: Tensor, n: int) -> Tensor:
            return x.reshape(b, n, h, hd).transpose(0, 2, 1, 3)

        qh = split(self.wq(q_in), nq)
        kh = split(self.wk(k_in), nk)
        vh = split(self.wv(v_in), nk)
        ctx, weights = attention(qh, kh, vh, mask)
        out = self.wo(ctx.transpose(0, 2, 1, 3).reshape(b, nq, dim))
        if squeeze:
            out = out.reshape(nq, dim)
            weights = weights.reshape(h, nq, nk)
        return out, weights
