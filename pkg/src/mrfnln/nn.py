"""Layer containers: parameter discovery, init, and conv layer wrappers.

Weights use He fan-in initialization (normal, std = sqrt(2/fan_in)) and zero
biases, except where a caller zero-initializes a head explicitly.
"""

from __future__ import annotations

from typing import Iterator, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


class Module:
    """Minimal container; children are discovered from instance attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            yield from _walk(name, value)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        # also drop stale grad buffers so "did backward touch this model"
        # stays answerable after freezing
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True
        return self

    def astype(self, dtype) -> "Module":
        """Cast all parameters in place (used to build f64 twins for checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        mine = dict(self.named_parameters())
        missing = sorted(set(mine) - set(state))
        extra = sorted(set(state) - set(mine))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} extra={extra}")
        for name, p in mine.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}"
                )
            p.data = arr.copy()


def _walk(name: str, value):
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    """Conv layer; padding defaults to the same-size value for odd kernels."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng,
                 stride: int = 1, dilation: int = 1, padding: Optional[int] = None,
                 bias: bool = True, dtype=np.float32):
        if kernel not in (1, 3, 4):
            raise ConfigError(f"unsupported kernel size {kernel}")
        if dilation not in (1, 2) or stride not in (1, 2):
            raise ConfigError(f"unsupported stride/dilation {stride}/{dilation}")
        if padding is None:
            padding = dilation * (kernel - 1) // 2
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.weight = Tensor(
            he_normal(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel,
                      dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        dilation=self.dilation, padding=self.padding)

    def zero_init(self) -> "Conv2d":
        self.weight.data = np.zeros_like(self.weight.data)
        return self


class ConvTranspose2d(Module):
    """Stride-2 transposed conv used for decoder up-sampling (4x4, pad 1)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng,
                 stride: int = 2, padding: int = 1, bias: bool = True,
                 dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(
            he_normal(rng, (in_ch, out_ch, kernel, kernel), in_ch * kernel * kernel,
                      dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, stride=self.stride,
                                  padding=self.padding)
