"""Dual attention block: parallel spatial and channel gates over a feature map.

The spatial gate pools across channels (average and max), runs the 2-channel
map through three depthwise sigmoid convolutions with 3x3, 5x5 and 7x7
kernels, and merges the six resulting channels with a sigmoid-activated 1x1
convolution into a single-channel map. The channel gate concatenates global
average and max pooled descriptors into a 2C vector and squeezes it through a
two-layer bottleneck MLP ending in a sigmoid. The block output is
F * spatial + F * channel, both products broadcast.
"""

from __future__ import annotations

import numpy as np

from .convops import channel_pool, global_pool
from .errors import DimensionError
from .layers import Conv2dLayer, DenseLayer
from .tensor import Tensor, add, concat, mul, reshape


def paab_refine(features: Tensor, spatial_map: Tensor, channel_map: Tensor) -> Tensor:
    """F * Ms + F * Mc with broadcasting; distributive by construction."""
    return add(mul(features, spatial_map), mul(features, channel_map))


class Paab:
    def __init__(self, registry, name: str, channels: int, rng: np.random.Generator,
                 dtype, reduction: int = 8):
        self.channels = channels
        self.spatial_convs = [
            Conv2dLayer(registry, f"{name}/sp{k}", 2, 2, k, rng, dtype,
                        groups=2, act="sigmoid")
            for k in (3, 5, 7)
        ]
        self.merge = Conv2dLayer(registry, f"{name}/merge", 6, 1, 1, rng, dtype, act="sigmoid")
        hidden = max(1, channels // reduction)
        self.fc1 = DenseLayer(registry, f"{name}/fc1", 2 * channels, hidden, rng, dtype, act="relu")
        self.fc2 = DenseLayer(registry, f"{name}/fc2", hidden, channels, rng, dtype, act="sigmoid")

    def _check(self, features: Tensor) -> None:
        if features.data.ndim != 4 or features.data.shape[1] != self.channels:
            raise DimensionError(
                f"attention block built for {self.channels} channels, "
                f"got input shape {features.data.shape}"
            )

    def spatial_map(self, features: Tensor) -> Tensor:
        """(N, C, H, W) -> (N, 1, H, W) gate in (0, 1)."""
        self._check(features)
        pooled = concat(
            [channel_pool(features, "avg"), channel_pool(features, "max")], axis=1)
        multi = concat([conv(pooled) for conv in self.spatial_convs], axis=1)
        return self.merge(multi)

    def channel_map(self, features: Tensor) -> Tensor:
        """(N, C, H, W) -> (N, C, 1, 1) gate in (0, 1)."""
        self._check(features)
        n = features.data.shape[0]
        gap = reshape(global_pool(features, "avg"), (n, self.channels))
        gmp = reshape(global_pool(features, "max"), (n, self.channels))
        squeezed = self.fc2(self.fc1(concat([gap, gmp], axis=1)))
        return reshape(squeezed, (n, self.channels, 1, 1))

    def __call__(self, features: Tensor) -> Tensor:
        return paab_refine(features, self.spatial_map(features), self.channel_map(features))
