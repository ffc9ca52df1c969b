"""Parameter registry, initialization, and thin layer wrappers over the ops.

Parameters are created in a fixed construction order and registered under
hierarchical names ("encoder/stem/w", ...), so checkpoints can address every
array by name and two models built from the same config and seed are
identical.
"""

from __future__ import annotations

import numpy as np

from .convops import ConvSpec, conv2d
from .errors import ConfigError
from .tensor import Tensor, activation, dense


class ParamRegistry:
    """Ordered name -> Tensor map of trainable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name '{name}'")
        if not tensor.requires_grad:
            raise ConfigError(f"parameter '{name}' must require grad")
        self._params[name] = tensor
        return tensor

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def get(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self):
        return len(self._params)

    def __contains__(self, name):
        return name in self._params


def param_count(registry: ParamRegistry) -> int:
    return sum(int(t.data.size) for t in registry.tensors())


def zero_grads(registry: ParamRegistry) -> None:
    for _, p in registry.items():
        p.grad = None


def init_params(shape, fan_in: int, fan_out: int, rng: np.random.Generator, dtype) -> Tensor:
    """Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Conv2dLayer:
    """Convolution + optional bias + optional activation."""

    def __init__(self, registry, name, c_in, c_out, kernel, rng, dtype,
                 stride=1, dilation=1, groups=1, padding="same", act=None, bias=True):
        kh, kw = kernel if isinstance(kernel, tuple) else (kernel, kernel)
        self.spec = ConvSpec(kh, kw, stride=stride, dilation=dilation, groups=groups, padding=padding)
        fan_in = (c_in // groups) * kh * kw
        fan_out = (c_out // groups) * kh * kw
        self.weight = registry.register(
            f"{name}/w", init_params((c_out, c_in // groups, kh, kw), fan_in, fan_out, rng, dtype))
        self.bias = registry.register(f"{name}/b", zeros_param((c_out,), dtype)) if bias else None
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight, self.bias, self.spec)
        return activation(out, self.act) if self.act else out


class SeparableConv2dLayer:
    """Depthwise conv (no bias) followed by a 1x1 pointwise conv with bias.

    Stride and dilation apply to the depthwise stage; the pointwise stage is
    always a stride-1 1x1 conv.
    """

    def __init__(self, registry, name, c_in, c_out, kernel, rng, dtype,
                 stride=1, dilation=1, act="relu"):
        kh, kw = kernel if isinstance(kernel, tuple) else (kernel, kernel)
        self.dw_spec = ConvSpec(kh, kw, stride=stride, dilation=dilation, groups=c_in, padding="same")
        self.pw_spec = ConvSpec(1, 1)
        self.dw = registry.register(
            f"{name}/dw", init_params((c_in, 1, kh, kw), kh * kw, kh * kw, rng, dtype))
        self.pw = registry.register(
            f"{name}/pw", init_params((c_out, c_in, 1, 1), c_in, c_out, rng, dtype))
        self.bias = registry.register(f"{name}/b", zeros_param((c_out,), dtype))
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        h = conv2d(x, self.dw, None, self.dw_spec)
        out = conv2d(h, self.pw, self.bias, self.pw_spec)
        return activation(out, self.act) if self.act else out


class DenseLayer:
    def __init__(self, registry, name, in_features, out_features, rng, dtype, act=None):
        self.weight = registry.register(
            f"{name}/w", init_params((out_features, in_features), in_features, out_features, rng, dtype))
        self.bias = registry.register(f"{name}/b", zeros_param((out_features,), dtype))
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        out = dense(x, self.weight, self.bias)
        return activation(out, self.act) if self.act else out
