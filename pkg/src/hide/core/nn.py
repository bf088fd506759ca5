"""Module/Parameter containers and standard layers.

Parameters are registered by attribute assignment; dotted names are
assigned once the root module calls ``finalize_names`` so that every
parameter appears exactly once, under a unique path, in checkpoints
and optimizer state.
"""

from __future__ import annotations

from typing import Iterator, Optional, Tuple

import numpy as np

from ..errors import HideError, ShapeError
from . import ops
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """Trainable tensor with a unique dotted name inside its model."""

    __slots__ = ("name",)

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True)
        self.name = name


class Module:
    """Tree of submodules and parameters with dotted-name traversal."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, p in self._params.items():
            yield (f"{prefix}{key}", p)
        for key, m in self._modules.items():
            yield from m.named_parameters(prefix=f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def finalize_names(self) -> None:
        seen = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise HideError(f"duplicate parameter name {name!r}")
            seen.add(name)
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(arrays):
            missing = sorted(set(own) - set(arrays))
            extra = sorted(set(arrays) - set(own))
            raise HideError(f"state mismatch; missing={missing[:4]} extra={extra[:4]}")
        for name, p in own.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ShapeError(f"parameter {name!r}: stored shape {arr.shape} != model {p.shape}")
            p.data = np.asarray(arr, dtype=p.dtype)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        idx = len(self._items)
        self._items.append(module)
        self._modules[str(idx)] = module
        return module

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out, dtype=get_default_dtype())) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = Parameter(np.zeros(c_out, dtype=get_default_dtype())) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(kaiming_uniform(rng, (c_in, c_out, k, k), c_in * k * k))
        self.bias = Parameter(np.zeros(c_out, dtype=get_default_dtype())) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias,
                                    stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        dt = get_default_dtype()
        self.gain = Parameter(np.ones(c, dtype=dt))
        self.shift = Parameter(np.zeros(c, dtype=dt))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.gain, self.shift, eps=self.eps)
