"""Tiny parameter-container base class.

Modules are plain objects whose Tensor attributes (and Tensors inside lists
or child modules) are the learnable parameters. Attribute insertion order
fixes the manifest order, which keeps serialization deterministic.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(f"{prefix}{name}", value)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def to_dtype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def _walk(name: str, value) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def param(rng: np.random.Generator, shape: tuple, dtype, scale: float | None = None) -> Tensor:
    """Gaussian-initialized parameter; scale defaults to 1/sqrt(fan_in)."""
    if scale is None:
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        scale = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=True)


def zeros_param(shape: tuple, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape: tuple, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Conv2d(Module):
    """Convolution layer owning its weight and optional bias."""

    def __init__(self, rng, cin: int, cout: int, k: int, *, stride: int = 1,
                 padding: int = 0, dilation: int = 1, groups: int = 1,
                 bias: bool = True, zero_init: bool = False, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        self.groups = groups
        shape = (cout, cin // groups, k, k)
        self.weight = zeros_param(shape, dtype) if zero_init else param(rng, shape, dtype)
        self.bias = zeros_param((cout,), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        from .ops import conv2d

        return conv2d(x, self.weight, self.bias, stride=self.stride,
                      padding=self.padding, dilation=self.dilation, groups=self.groups)


class Linear(Module):
    def __init__(self, rng, din: int, dout: int, *, bias: bool = True,
                 zero_init: bool = False, dtype=np.float32):
        shape = (dout, din)
        self.weight = zeros_param(shape, dtype) if zero_init else param(rng, shape, dtype)
        self.bias = zeros_param((dout,), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        from .ops import linear

        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    """Channel LayerNorm for B,C,H,W features (eps fixed at 1e-6)."""

    def __init__(self, channels: int, dtype=np.float32):
        self.gamma = ones_param((channels,), dtype)
        self.beta = zeros_param((channels,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        from .ops import layernorm

        return layernorm(x, self.gamma, self.beta)
