"""Encoder-decoder segmentation network.

Encoder: a strided 3x3 stem then three strided separable convs, giving a
low-level tap at 1/4 resolution and a high-level map at 1/16. The bottleneck
between encoder and decoder depends on the variant:

  full          multi-scale pyramid with per-branch attention
  no_paab       same pyramid, attention blocks removed
  no_mspp       a single 1x1 conv bridge
  baseline_aspp classic pyramid: 1x1, three dilated 3x3 convs (6/12/18),
                image-level pooling, then a 1x1 projection

Decoder: upsample the bottleneck output 4x, concatenate with the projected
low-level tap, mix with a 1x1 conv, refine with two 3x3 convs wrapped in an
additive identity skip, upsample 4x, and finish with a sigmoid head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convops import global_pool, upsample_bilinear
from .errors import ConfigError, DimensionError
from .layers import Conv2dLayer, ParamRegistry, SeparableConv2dLayer, param_count
from .mspp import Mspp, MsppConfig
from .tensor import Tensor, add, concat, mul

VARIANTS = ("full", "no_mspp", "no_paab", "baseline_aspp")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "full"
    input_size: int = 256
    in_channels: int = 3
    encoder_channels: tuple = (16, 32, 64, 128)
    branch_channels: int = 64
    bottleneck_channels: int = 128
    low_level_channels: int = 48
    decoder_channels: int = 128
    dilations: tuple = (4, 8, 12)
    reduction: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_size % 16 != 0 or self.input_size < 32:
            raise ConfigError(
                f"input_size must be a multiple of 16 and >= 32, got {self.input_size}")
        if len(self.encoder_channels) != 4:
            raise ConfigError("encoder_channels must have four stages")


class Encoder:
    def __init__(self, registry, config: ModelConfig, rng, dtype):
        c0, c1, c2, c3 = config.encoder_channels
        self.stem = Conv2dLayer(registry, "encoder/stem", config.in_channels, c0, 3,
                                rng, dtype, stride=2, act="relu")
        self.stage2 = SeparableConv2dLayer(registry, "encoder/stage2", c0, c1, 3,
                                           rng, dtype, stride=2)
        self.stage3 = SeparableConv2dLayer(registry, "encoder/stage3", c1, c2, 3,
                                           rng, dtype, stride=2)
        self.stage4 = SeparableConv2dLayer(registry, "encoder/stage4", c2, c3, 3,
                                           rng, dtype, stride=2)

    def __call__(self, image: Tensor):
        """Returns (low, high): the 1/4-resolution tap and the 1/16 map."""
        low = self.stage2(self.stem(image))
        high = self.stage4(self.stage3(low))
        return low, high


class _BaselineAspp:
    """Plain pyramid bottleneck: 1x1, dilated 3x3 convs at 6/12/18, image pool."""

    def __init__(self, registry, name, cin, cb, cout, rng, dtype):
        self.c1 = Conv2dLayer(registry, f"{name}/c1", cin, cb, 1, rng, dtype, act="relu")
        self.d6 = Conv2dLayer(registry, f"{name}/d6", cin, cb, 3, rng, dtype, dilation=6, act="relu")
        self.d12 = Conv2dLayer(registry, f"{name}/d12", cin, cb, 3, rng, dtype, dilation=12, act="relu")
        self.d18 = Conv2dLayer(registry, f"{name}/d18", cin, cb, 3, rng, dtype, dilation=18, act="relu")
        self.pool_conv = Conv2dLayer(registry, f"{name}/pool", cin, cb, 1, rng, dtype, act="relu")
        self.project = Conv2dLayer(registry, f"{name}/project", 5 * cb, cout, 1, rng, dtype, act="relu")

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.data.shape[2], x.data.shape[3]
        ones = Tensor(np.ones((1, 1, h, w), dtype=x.data.dtype))
        pooled = mul(self.pool_conv(global_pool(x, "avg")), ones)
        return self.project(concat(
            [self.c1(x), self.d6(x), self.d12(x), self.d18(x), pooled], axis=1))


class Decoder:
    def __init__(self, registry, config: ModelConfig, rng, dtype):
        low_in = config.encoder_channels[1]
        dc = config.decoder_channels
        self.low_proj = Conv2dLayer(registry, "decoder/low_proj", low_in,
                                    config.low_level_channels, 1, rng, dtype, act="relu")
        self.fuse = Conv2dLayer(registry, "decoder/fuse",
                                config.bottleneck_channels + config.low_level_channels,
                                dc, 1, rng, dtype, act="relu")
        self.refine1 = Conv2dLayer(registry, "decoder/refine1", dc, dc, 3, rng, dtype, act="relu")
        self.refine2 = Conv2dLayer(registry, "decoder/refine2", dc, dc, 3, rng, dtype, act="relu")
        self.head = Conv2dLayer(registry, "decoder/head", dc, 1, 3, rng, dtype, act="sigmoid")

    def __call__(self, high: Tensor, low: Tensor) -> Tensor:
        if high.data.shape[2] * 4 != low.data.shape[2] or high.data.shape[3] * 4 != low.data.shape[3]:
            raise DimensionError(
                f"decoder expects the low-level tap at 4x the bottleneck size, "
                f"got {low.data.shape} vs {high.data.shape}")
        x = upsample_bilinear(high, 4)
        x = self.fuse(concat([x, self.low_proj(low)], axis=1))
        refined = self.refine2(self.refine1(x))
        x = add(x, refined)  # identity skip around the refinement pair
        x = upsample_bilinear(x, 4)
        return self.head(x)


class Model:
    """Owns the registry and the three sections; forward maps images to
    per-pixel foreground probabilities at input resolution."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ConfigError(f"model dtype must be float32 or float64, got {self.dtype}")
        self.registry = ParamRegistry()
        rng = np.random.default_rng(config.seed)
        self.encoder = Encoder(self.registry, config, rng, self.dtype)
        cin = config.encoder_channels[3]
        if config.variant in ("full", "no_paab"):
            mcfg = MsppConfig(
                in_channels=cin,
                branch_channels=config.branch_channels,
                out_channels=config.bottleneck_channels,
                dilations=config.dilations,
                attention=(config.variant == "full"),
                reduction=config.reduction,
            )
            self.bottleneck = Mspp(self.registry, "bottleneck", mcfg, rng, self.dtype)
        elif config.variant == "no_mspp":
            self.bottleneck = Conv2dLayer(
                self.registry, "bottleneck/bridge", cin, config.bottleneck_channels,
                1, rng, self.dtype, act="relu")
        else:
            self.bottleneck = _BaselineAspp(
                self.registry, "bottleneck", cin, config.branch_channels,
                config.bottleneck_channels, rng, self.dtype)
        self.decoder = Decoder(self.registry, config, rng, self.dtype)

    def forward(self, image: Tensor) -> Tensor:
        if image.data.ndim != 4 or image.data.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"expected (N, {self.config.in_channels}, H, W) input, "
                f"got shape {image.data.shape}")
        h, w = image.data.shape[2], image.data.shape[3]
        if h % 16 != 0 or w % 16 != 0:
            raise ConfigError(f"input spatial dims must be multiples of 16, got {h}x{w}")
        if image.data.dtype != self.dtype:
            raise ConfigError(
                f"model is {self.dtype.name}, input is {image.data.dtype.name}")
        low, high = self.encoder(image)
        return self.decoder(self.bottleneck(high), low)

    __call__ = forward

    @property
    def param_count(self) -> int:
        return param_count(self.registry)


def model_init(config: ModelConfig, dtype=np.float32) -> Model:
    return Model(config, dtype=dtype)
