"""Dataset plumbing: resizing, split assignment, and the on-disk layout.

A dataset directory holds images/<id>.ppm, masks/<id>.pgm and a manifest.tsv
with one "id<TAB>seed<TAB>split" row per sample, written in a stable order.
"""

from __future__ import annotations

import os

import numpy as np

from .convops import resize_bilinear_array
from .errors import ConfigError, FormatError, ValidationError
from .pnm import read_pgm, read_ppm, write_pgm, write_ppm
from .synth import Sample

SPLITS = ("train", "val", "test")


def resize_normalize(image: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize to (target, target) and map to float32 in [0, 1].
    uint8 input is divided by 255; float input must already be in [0, 1]."""
    if target % 16 != 0 or target < 32:
        raise ConfigError(f"target size must be a multiple of 16 and >= 32, got {target}")
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValidationError(f"expected (C, H, W) image, got shape {image.shape}")
    if image.dtype == np.uint8:
        image = image.astype(np.float32) / 255.0
    elif image.min() < 0.0 or image.max() > 1.0:
        raise ValidationError("float image values must lie in [0, 1]")
    return resize_bilinear_array(image.astype(np.float32), target, target)


def resize_mask(mask: np.ndarray, target: int) -> np.ndarray:
    """Nearest-neighbor resize that keeps the mask strictly binary."""
    if target % 16 != 0 or target < 32:
        raise ConfigError(f"target size must be a multiple of 16 and >= 32, got {target}")
    mask = np.asarray(mask)
    if mask.ndim != 3 or mask.shape[0] != 1:
        raise ValidationError(f"expected (1, H, W) mask, got shape {mask.shape}")
    h, w = mask.shape[1], mask.shape[2]
    if (h, w) == (target, target):
        return mask.astype(np.float32)
    rows = np.clip(np.rint((np.arange(target) + 0.5) * h / target - 0.5).astype(int), 0, h - 1)
    cols = np.clip(np.rint((np.arange(target) + 0.5) * w / target - 0.5).astype(int), 0, w - 1)
    return mask[:, rows[:, None], cols[None, :]].astype(np.float32)


def split_dataset(items, seed: int, ratios=(0.8, 0.1, 0.1)):
    """Shuffle deterministically and cut into (train, val, test). Val and test
    sizes are floored; the remainder goes to train."""
    items = list(items)
    if len(items) < 3:
        raise ConfigError(f"need at least 3 samples to split, got {len(items)}")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three non-negatives summing to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(items))
    n_val = int(len(items) * ratios[1])
    n_test = int(len(items) * ratios[2])
    n_train = len(items) - n_val - n_test
    shuffled = [items[i] for i in order]
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


def save_dataset(root, split_samples: dict) -> None:
    """split_samples: {"train": [...], "val": [...], "test": [...]}."""
    for split in split_samples:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
    img_dir = os.path.join(root, "images")
    mask_dir = os.path.join(root, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    seen = set()
    rows = []
    for split in SPLITS:
        for sample in split_samples.get(split, []):
            if sample.sample_id in seen:
                raise ConfigError(f"duplicate sample id {sample.sample_id!r}")
            seen.add(sample.sample_id)
            write_ppm(os.path.join(img_dir, f"{sample.sample_id}.ppm"), sample.image)
            write_pgm(os.path.join(mask_dir, f"{sample.sample_id}.pgm"), sample.mask)
            rows.append(f"{sample.sample_id}\t{sample.seed}\t{split}\n")
    with open(os.path.join(root, "manifest.tsv"), "w") as fh:
        fh.writelines(rows)


def load_dataset(root) -> dict:
    """Read a dataset directory back into {"train": [...], "val": [...],
    "test": [...]}, preserving manifest order."""
    manifest = os.path.join(root, "manifest.tsv")
    if not os.path.isfile(manifest):
        raise ValidationError(f"no manifest.tsv under {root}")
    out = {split: [] for split in SPLITS}
    offset = 0
    with open(manifest, "rb") as fh:
        lines = fh.readlines()
    for line_no, raw in enumerate(lines, start=1):
        line = raw.decode("utf-8").rstrip("\n")
        if line:
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    f"manifest line {line_no} must have 3 tab-separated fields",
                    offset=offset)
            sample_id, seed_text, split = parts
            if split not in SPLITS:
                raise FormatError(
                    f"manifest line {line_no} has unknown split {split!r}", offset=offset)
            try:
                seed = int(seed_text)
            except ValueError:
                raise FormatError(
                    f"manifest line {line_no} has non-integer seed {seed_text!r}",
                    offset=offset) from None
            img_path = os.path.join(root, "images", f"{sample_id}.ppm")
            mask_path = os.path.join(root, "masks", f"{sample_id}.pgm")
            for path in (img_path, mask_path):
                if not os.path.isfile(path):
                    raise ValidationError(f"manifest references missing file {path}")
            mask = read_pgm(mask_path)
            if not np.all((mask == 0.0) | (mask == 1.0)):
                raise ValidationError(f"mask {mask_path} is not binary")
            out[split].append(Sample(
                image=read_ppm(img_path), mask=mask, sample_id=sample_id, seed=seed))
        offset += len(raw)
    return out
