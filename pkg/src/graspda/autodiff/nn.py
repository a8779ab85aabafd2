"""Small parameter containers built on the ops."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .tensor import Tensor


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Base class: parameters are discovered from attributes, in insertion order."""

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        for name, t in params.items():
            if name not in arrays:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            if arrays[name].shape != t.shape:
                raise ValueError(f"parameter {name!r}: shape {arrays[name].shape} != {t.shape}")
            t.data = np.array(arrays[name], dtype=np.float64)

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, pad_mode: str = "zeros"):
        fan_in = c_in * k * k
        self.weight = parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, k, k)))
        self.bias = parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = padding
        self.pad_mode = pad_mode

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.pad_mode)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 2.0):
        self.weight = parameter(rng.normal(0.0, np.sqrt(gain / n_in), (n_in, n_out)))
        self.bias = parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.matmul(x, self.weight) + self.bias
