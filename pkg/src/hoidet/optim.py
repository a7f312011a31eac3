"""Decoupled-weight-decay Adam and gradient clipping."""

from __future__ import annotations

import numpy as np

from .autograd import _check_finite
from .errors import UsageError
from .nn import Parameter


def clip_grad_norm_(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = total ** 0.5
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


class AdamW:
    """AdamW with per-group learning rates.

    groups: list of dicts {"name": str, "params": [(name, Parameter)], "lr": float}.
    Decay is decoupled: p *= (1 - lr*wd) before the moment update.
    """

    def __init__(self, groups: list[dict], betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.groups = groups
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        seen: set[str] = set()
        for group in groups:
            for name, p in group["params"]:
                if name in seen:
                    raise UsageError(f"parameter {name} appears in more than one group")
                seen.add(name)
                self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for group in self.groups:
            for _, p in group["params"]:
                p.zero_grad()

    def set_lr(self, group_name: str, lr: float) -> None:
        for group in self.groups:
            if group["name"] == group_name:
                group["lr"] = lr
                return
        raise UsageError(f"no parameter group named {group_name!r}")

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for group in self.groups:
            lr = group["lr"]
            for name, p in group["params"]:
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                if self.weight_decay:
                    p.data *= 1.0 - lr * self.weight_decay
                m = self._m[name]
                v = self._v[name]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * (g * g)
                p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                _check_finite(p.data, f"adamw update of {name}")

    # checkpoint support -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self._m:
            out[f"opt.m.{name}"] = self._m[name].copy()
            out[f"opt.v.{name}"] = self._v[name].copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for name in self._m:
            m = arrays.get(f"opt.m.{name}")
            v = arrays.get(f"opt.v.{name}")
            if m is None or v is None:
                raise UsageError(f"optimizer state missing moments for {name}")
            if m.shape != self._m[name].shape or v.shape != self._v[name].shape:
                raise UsageError(f"optimizer state shape mismatch for {name}")
            self._m[name][...] = m
            self._v[name][...] = v
        self.t = int(t)
