"""Synthetic blob-on-gradient samples.

Each sample is a smooth two-tone background gradient plus uniform pixel
noise, with one to three rotated ellipse blobs raised above the background:
full intensity offset over the blob interior, fading to zero through a
cosine shoulder over the outer fraction of each radius. The mask is the
union of the ellipse interiors. Everything is drawn from one generator
seeded per sample, so a given (seed, config) pair always produces the same
arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Blob tint applied on top of the background, strongest in red so the three
# channels carry different amounts of signal.
_BLOB_TINT = np.array([1.0, 0.6, 0.5])

# Fraction of each radius occupied by the cosine falloff at the rim; the
# interior plateau keeps the full offset so blob edges stay detectable.
_EDGE_FRACTION = 0.3

_MIN_COVERAGE = 0.01
_MAX_COVERAGE = 0.40


@dataclass(frozen=True)
class SynthConfig:
    # noise/offset picked so a desk-scale training run can separate blob
    # fringes from speckle within its epoch budget; the cosine shoulder
    # still carries the rim below the noise floor at the mask boundary.
    size: int = 64
    blob_count: tuple = (1, 3)
    radius_frac: tuple = (0.1, 0.35)
    noise: float = 0.07
    offset: float = 0.40

    def __post_init__(self):
        if self.size < 16:
            raise ConfigError(f"size must be >= 16, got {self.size}")
        lo, hi = self.blob_count
        if not 1 <= lo <= hi:
            raise ConfigError(f"blob_count range must satisfy 1 <= lo <= hi, got {self.blob_count}")
        r0, r1 = self.radius_frac
        if not 0.0 < r0 <= r1 < 0.5:
            raise ConfigError(f"radius_frac must satisfy 0 < lo <= hi < 0.5, got {self.radius_frac}")
        if self.noise < 0 or not 0.0 < self.offset <= 1.0:
            raise ConfigError("noise must be >= 0 and offset in (0, 1]")


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray   # (1, H, W) float32, values 0 or 1
    sample_id: str
    seed: int
    augmentation_trail: list = field(default_factory=list)


def _draw_blobs(rng: np.random.Generator, config: SynthConfig, yy, xx):
    """One attempt at a blob set; returns (mask, ramp) as float64 arrays."""
    count = int(rng.integers(config.blob_count[0], config.blob_count[1] + 1))
    size = config.size
    ramp = np.zeros((size, size))
    inside = np.zeros((size, size), dtype=bool)
    for _ in range(count):
        cy, cx = rng.uniform(0.25, 0.75, size=2) * size
        ry, rx = rng.uniform(*config.radius_frac, size=2) * size
        theta = rng.uniform(0.0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        e = (u / rx) ** 2 + (v / ry) ** 2
        inside |= e <= 1.0
        t = np.sqrt(np.minimum(e, 1.0))
        shoulder = np.clip((t - (1.0 - _EDGE_FRACTION)) / _EDGE_FRACTION, 0.0, 1.0)
        ramp = np.maximum(ramp, 0.5 * (1.0 + np.cos(np.pi * shoulder)))
    return inside, ramp


def generate_sample(seed: int, config: SynthConfig = SynthConfig(),
                    sample_id: str | None = None) -> Sample:
    rng = np.random.default_rng(seed)
    size = config.size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    base = rng.uniform(0.25, 0.55, size=3)
    slope_x = rng.uniform(-0.2, 0.2, size=3)
    slope_y = rng.uniform(-0.2, 0.2, size=3)
    background = (
        base[:, None, None]
        + slope_x[:, None, None] * (xx / size)[None]
        + slope_y[:, None, None] * (yy / size)[None]
    )
    noise = rng.uniform(-config.noise, config.noise, size=(3, size, size))

    # Redraw blob sets until coverage lands in [1%, 40%]; the ranges make
    # acceptance likely, so the cap is just a guard against a pathological
    # config.
    for _ in range(1000):
        inside, ramp = _draw_blobs(rng, config, yy, xx)
        coverage = inside.mean()
        if _MIN_COVERAGE <= coverage <= _MAX_COVERAGE:
            break
    else:
        raise ConfigError(
            f"could not draw a blob set with coverage in "
            f"[{_MIN_COVERAGE}, {_MAX_COVERAGE}] for config {config}")

    image = background + config.offset * _BLOB_TINT[:, None, None] * ramp[None] + noise
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    mask = inside[None].astype(np.float32)
    return Sample(
        image=image,
        mask=mask,
        sample_id=sample_id if sample_id is not None else f"s{seed:08d}",
        seed=seed,
    )
