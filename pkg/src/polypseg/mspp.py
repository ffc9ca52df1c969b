"""Multi-scale pyramid bottleneck with per-branch attention.

Nine parallel branches over the encoder's high-level map:

  1. 5x5 separable conv          2. 3x3 separable conv
  3. 1x1 conv (the skip source)  4-6. 3x3 separable convs, dilation 4/8/12
  7. 5x1 then 1x5 separable      8. global average pool -> 1x1 -> upsample
  9. global max pool -> 1x1 -> upsample

Branch 3's output is added elementwise to branches 1, 2 and 4-7 before
attention; branches 8 and 9 stay unfused. Every branch then passes through
its own attention block, the nine maps are concatenated and a 1x1 projection
mixes them down. All branches preserve the input's spatial size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convops import global_pool
from .errors import ConfigError, DimensionError
from .layers import Conv2dLayer, SeparableConv2dLayer
from .paab import Paab
from .tensor import Tensor, add, concat, mul


@dataclass(frozen=True)
class MsppConfig:
    in_channels: int
    branch_channels: int = 64
    out_channels: int = 128
    dilations: tuple = (4, 8, 12)
    attention: bool = True
    reduction: int = 8

    def __post_init__(self):
        if self.in_channels < 1 or self.branch_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if len(self.dilations) != 3 or any(d < 1 for d in self.dilations):
            raise ConfigError(f"need three dilation rates >= 1, got {self.dilations}")


class Mspp:
    BRANCH_COUNT = 9

    def __init__(self, registry, name: str, config: MsppConfig,
                 rng: np.random.Generator, dtype):
        self.config = config
        cin, cb = config.in_channels, config.branch_channels
        self.b1 = SeparableConv2dLayer(registry, f"{name}/b1", cin, cb, 5, rng, dtype)
        self.b2 = SeparableConv2dLayer(registry, f"{name}/b2", cin, cb, 3, rng, dtype)
        self.b3 = Conv2dLayer(registry, f"{name}/b3", cin, cb, 1, rng, dtype, act="relu")
        self.b_dil = [
            SeparableConv2dLayer(registry, f"{name}/b{i + 4}", cin, cb, 3, rng, dtype, dilation=d)
            for i, d in enumerate(config.dilations)
        ]
        self.b7a = SeparableConv2dLayer(registry, f"{name}/b7a", cin, cb, (5, 1), rng, dtype)
        self.b7b = SeparableConv2dLayer(registry, f"{name}/b7b", cb, cb, (1, 5), rng, dtype)
        self.b8 = Conv2dLayer(registry, f"{name}/b8", cin, cb, 1, rng, dtype, act="relu")
        self.b9 = Conv2dLayer(registry, f"{name}/b9", cin, cb, 1, rng, dtype, act="relu")
        if config.attention:
            self.attn = [
                Paab(registry, f"{name}/attn{i + 1}", cb, rng, dtype, reduction=config.reduction)
                for i in range(self.BRANCH_COUNT)
            ]
        else:
            self.attn = None
        self.project = Conv2dLayer(
            registry, f"{name}/project", self.BRANCH_COUNT * cb, config.out_channels,
            1, rng, dtype, act="relu")

    def branch_outputs(self, x: Tensor) -> list[Tensor]:
        """The nine per-branch maps after skip fusion and attention."""
        if x.data.ndim != 4 or x.data.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"bottleneck built for {self.config.in_channels} channels, "
                f"got input shape {x.data.shape}")
        h, w = x.data.shape[2], x.data.shape[3]
        skip = self.b3(x)
        # Bilinear upsampling of a 1x1 map is a constant fill, so a broadcast
        # multiply reproduces it exactly (and keeps rectangular maps working).
        ones = Tensor(np.ones((1, 1, h, w), dtype=x.data.dtype))
        pooled_avg = mul(self.b8(global_pool(x, "avg")), ones)
        pooled_max = mul(self.b9(global_pool(x, "max")), ones)
        branches = [
            add(self.b1(x), skip),
            add(self.b2(x), skip),
            skip,
            add(self.b_dil[0](x), skip),
            add(self.b_dil[1](x), skip),
            add(self.b_dil[2](x), skip),
            add(self.b7b(self.b7a(x)), skip),
            pooled_avg,
            pooled_max,
        ]
        if self.attn is not None:
            branches = [attn(b) for attn, b in zip(self.attn, branches)]
        return branches

    def __call__(self, x: Tensor) -> Tensor:
        return self.project(concat(self.branch_outputs(x), axis=1))
