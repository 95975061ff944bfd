"""Thin parameter-holding layers over the tensor ops.

Naming convention for parameters: weights end in ``.w`` (weight decay
applies), biases in ``.b`` and layer-norm affines in ``.gamma``/``.beta``
(no decay).
"""
from __future__ import annotations

import numpy as np

from . import tensor as T


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d:
    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int, padding: int,
                 rng: np.random.Generator, dtype=np.float32, zero_init: bool = False):
        self.stride = stride
        self.padding = padding
        fan_in = in_ch * k * k
        if zero_init:
            w = np.zeros((out_ch, in_ch, k, k), dtype=dtype)
        else:
            w = he_normal(rng, (out_ch, in_ch, k, k), fan_in, dtype)
        self.w = T.Tensor(w, requires_grad=True)
        self.b = T.Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32, zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            w = he_normal(rng, (d_in, d_out), d_in, dtype)
        self.w = T.Tensor(w, requires_grad=True)
        self.b = T.Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.linear(x, self.w, self.b)

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5):
        self.eps = eps
        self.gamma = T.Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.beta = T.Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


def decays(name: str) -> bool:
    """Weight decay applies to weights only, not biases or norm affines."""
    return name.endswith(".w")
