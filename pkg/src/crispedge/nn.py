"""Small module system: parameter discovery, train/eval mode, checkpointing."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np

from . import functional as F
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .optim import ParamSet
from .tensor import Tensor, matmul, reshape


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Module:
    """Base class; parameters are attributes holding ``Tensor(requires_grad=True)``.

    Child modules may be attributes or live in plain lists. Buffers
    (non-trainable state such as running statistics) go in ``self.buffers``.
    Traversal follows attribute insertion order, so names are deterministic.
    """

    training: bool = True

    def __init__(self) -> None:
        self.buffers: Dict[str, np.ndarray] = {}

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name == "buffers":
                continue
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif value.requires_grad:
                yield full, value

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, arr in self.buffers.items():
            yield f"{prefix}{name}", arr
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def parameters(self) -> ParamSet:
        return ParamSet(self.named_parameters())

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({f"{name}@buffer": arr for name, arr in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = [k for k in expected if k not in state]
        unexpected = [k for k in state if k not in expected]
        if missing or unexpected:
            raise CheckpointError(
                f"checkpoint does not match model: missing {missing[:3]}, unexpected {unexpected[:3]}"
            )
        for name, arr in expected.items():
            if arr.shape != state[name].shape:
                raise CheckpointError(f"{name}: shape {state[name].shape} != model {arr.shape}")
            arr[...] = state[name]

    def save(self, path: Union[str, Path]) -> None:
        save_arrays(path, self.state_dict())

    def load(self, path: Union[str, Path]) -> None:
        self.load_state_dict(load_arrays(path))


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        cin: int,
        cout: int,
        kernel: int = 3,
        stride: int = 1,
        padding: Optional[int] = None,
        dilation: int = 1,
        groups: int = 1,
        bias: bool = True,
    ) -> None:
        super().__init__()
        self.stride, self.dilation, self.groups = stride, dilation, groups
        self.padding = dilation * (kernel // 2) if padding is None else padding
        fan_in = (cin // groups) * kernel * kernel
        self.weight = Tensor(he_normal(rng, (cout, cin // groups, kernel, kernel), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__()
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.momentum, self.eps = momentum, eps
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(
            x, self.gamma, self.beta, self.training,
            self.buffers["running_mean"], self.buffers["running_var"],
            self.momentum, self.eps,
        )


class Linear(Module):
    def __init__(self, rng: np.random.Generator, fin: int, fout: int) -> None:
        super().__init__()
        self.weight = Tensor(rng.normal(0.0, np.sqrt(1.0 / fin), size=(fout, fin)), requires_grad=True)
        self.bias = Tensor(np.zeros(fout), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return F.fully_connected(x, self.weight, self.bias)


class CondConv2d(Module):
    """Convolution whose kernel is a per-sample mixture of ``experts`` kernels.

    Routing weights are ``sigmoid(Linear(global_avg_pool(x)))``, one per
    expert and sample, so each batch item gets its own effective kernel.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        cin: int,
        cout: int,
        kernel: int = 3,
        experts: int = 4,
        dilation: int = 1,
    ) -> None:
        super().__init__()
        if experts < 1:
            raise ValueError("CondConv needs at least one expert")
        self.cin, self.cout, self.kernel, self.num_experts = cin, cout, kernel, experts
        self.dilation = dilation
        self.padding = dilation * (kernel // 2)
        fan_in = cin * kernel * kernel
        self.experts = Tensor(he_normal(rng, (experts, cout, cin, kernel, kernel), fan_in), requires_grad=True)
        self.router = Linear(rng, cin, experts)

    def routing(self, x: Tensor) -> Tensor:
        return F.sigmoid(self.router(F.flatten(F.global_avg_pool(x))))

    def mixed_kernels(self, routing: Tensor) -> Tensor:
        e = self.num_experts
        flat = reshape(self.experts, (e, -1))
        mixed = matmul(routing, flat)
        return reshape(mixed, (routing.shape[0], self.cout, self.cin, self.kernel, self.kernel))

    def forward(self, x: Tensor, routing: Optional[Tensor] = None) -> Tensor:
        if routing is None:
            routing = self.routing(x)
        return F.conv2d(x, self.mixed_kernels(routing), None, 1, self.padding, self.dilation)
