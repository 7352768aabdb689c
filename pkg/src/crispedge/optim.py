"""Parameter containers, Adam with decoupled weight decay, and the step schedule."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, Mapping, Tuple

import numpy as np

from .tensor import Tensor


class ParamSet(Mapping):
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self, items: Iterable[Tuple[str, Tensor]] = ()) -> None:
        self._items: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, tensor in items:
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._items:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._items[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def count(self) -> int:
        return int(sum(t.size for t in self._items.values()))


@dataclass
class AdamState:
    lr: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: ParamSet, **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: ParamSet, state: AdamState) -> None:
    """One Adam update in place.

    Weight decay is decoupled: ``p -= lr * weight_decay * p`` is applied to the
    weights directly, separate from the moment estimates.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"parameters without gradients: {', '.join(missing[:5])}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        p.data -= state.lr * update


def step_lr(base_lr: float, epoch: int, step_size: int = 5, gamma: float = 0.1) -> float:
    """Learning rate for a 0-based ``epoch`` under step decay."""
    return base_lr * gamma ** (epoch // step_size)
