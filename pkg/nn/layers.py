"""
Parameter containers and the primitive layers the model is assembled from
"""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from nn import functional as F
from nn.tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """Trainable leaf tensor. ``decay`` marks whether AdamW applies weight decay to it."""

    def __init__(self, data, decay: bool = True):
        super().__init__(data, requires_grad=True)
        self.decay = decay


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Module:
    """
    Base class for layers.
    Parameters, buffers and sub-modules are discovered from instance attributes in assignment order,
    which keeps parameter names stable for serialization.
    """

    def __init__(self):
        self.training = True
        self._buffers: Dict[str, np.ndarray] = OrderedDict()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith('_') or name == 'training':
                continue
            if isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{name}.{index}", item
            elif isinstance(value, (Module, Parameter)):
                yield name, value

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(prefix=f"{full}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = '') -> Iterator[Tuple[str, 'Module']]:
        yield prefix.rstrip('.'), self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(prefix=f"{prefix}{name}.")

    def named_buffers(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield f"{prefix}{name}", value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{name}.")

    def train(self, mode: bool = True) -> 'Module':
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> 'Module':
        """Cast every parameter and buffer, e.g. to float64 for gradient checking."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        for _, module in self.named_modules():
            for name, value in module._buffers.items():
                module._buffers[name] = value.astype(dtype)
        return self

    def state_dict(self) -> 'OrderedDict[str, np.ndarray]':
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        for name, p in params.items():
            p.data = np.array(state[name], dtype=p.data.dtype)
            p.grad = np.zeros_like(p.data)
        for full_name, _ in list(self.named_buffers()):
            module_path, _, buffer_name = full_name.rpartition('.')
            owner = self._resolve(module_path)
            owner._buffers[buffer_name] = np.array(state[full_name], dtype=owner._buffers[buffer_name].dtype)

    def _resolve(self, path: str) -> 'Module':
        modules = dict(self.named_modules())
        return modules[path]


class Linear(Module):
    """y = x W^T + b over the trailing axis"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (out_features, in_features)))
        self.bias = Parameter(_uniform(rng, bound, (out_features,)), decay=False) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0):
        super().__init__()
        self.stride = stride
        self.padding = padding
        bound = 1.0 / math.sqrt(in_channels * kernel_size * kernel_size)
        self.weight = Parameter(_uniform(rng, bound, (out_channels, in_channels, kernel_size, kernel_size)))
        self.bias = Parameter(_uniform(rng, bound, (out_channels,)), decay=False)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dtype = get_default_dtype()
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=dtype), decay=False)
        self.bias = Parameter(np.zeros(channels, dtype=dtype), decay=False)
        self.register_buffer('running_mean', np.zeros(channels, dtype=dtype))
        self.register_buffer('running_var', np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm2d(
            x, self.weight, self.bias,
            self._buffers['running_mean'], self._buffers['running_var'],
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        dtype = get_default_dtype()
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=dtype), decay=False)
        self.bias = Parameter(np.zeros(channels, dtype=dtype), decay=False)

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, eps=self.eps)


class DepthwiseConv1d(Module):
    """Causal per-channel convolution over the sequence axis of [B,D,L]"""

    def __init__(self, channels: int, kernel_size: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(kernel_size)
        self.weight = Parameter(_uniform(rng, bound, (channels, kernel_size)))
        self.bias = Parameter(_uniform(rng, bound, (channels,)), decay=False)

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv1d(x, self.weight, self.bias)


def count_parameters(module: Module) -> int:
    return int(sum(p.data.size for p in module.parameters()))


def module_parameter_counts(module: Module, depth: int = 1) -> 'OrderedDict[str, int]':
    """Trainable scalar counts grouped by the first ``depth`` components of the parameter name."""
    counts: 'OrderedDict[str, int]' = OrderedDict()
    for name, p in module.named_parameters():
        key = '.'.join(name.split('.')[:depth])
        counts[key] = counts.get(key, 0) + int(p.data.size)
    return counts