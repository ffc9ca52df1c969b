"""Synthetic generation, augmentation, splitting, and dataset round-trips."""

import numpy as np
import numpy.testing as npt
import pytest

from polypseg.augment import AUGMENT_OPS, augment
from polypseg.data import (
    load_dataset,
    resize_mask,
    resize_normalize,
    save_dataset,
    split_dataset,
)
from polypseg.errors import ConfigError, FormatError, ValidationError
from polypseg.synth import Sample, SynthConfig, generate_sample


class TestSynth:
    def test_deterministic_per_seed(self):
        a = generate_sample(7)
        b = generate_sample(7)
        npt.assert_array_equal(a.image, b.image)
        npt.assert_array_equal(a.mask, b.mask)
        c = generate_sample(8)
        assert not np.array_equal(a.image, c.image)

    def test_types_and_ranges(self):
        s = generate_sample(1)
        assert s.image.dtype == np.float32 and s.mask.dtype == np.float32
        assert s.image.shape == (3, 64, 64) and s.mask.shape == (1, 64, 64)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert set(np.unique(s.mask)) <= {0.0, 1.0}

    def test_coverage_band_over_many_seeds(self):
        for seed in range(300):
            mask = generate_sample(seed).mask
            coverage = mask.mean()
            assert 0.01 <= coverage <= 0.40, (seed, coverage)

    def test_blobs_are_brighter_than_background(self):
        s = generate_sample(3)
        fg = s.image[:, s.mask[0] == 1].mean()
        bg = s.image[:, s.mask[0] == 0].mean()
        assert fg > bg

    def test_config_knobs(self):
        cfg = SynthConfig(size=32, blob_count=(2, 2), radius_frac=(0.15, 0.2))
        s = generate_sample(0, cfg)
        assert s.image.shape == (3, 32, 32)
        with pytest.raises(ConfigError):
            SynthConfig(size=8)
        with pytest.raises(ConfigError):
            SynthConfig(blob_count=(0, 2))
        with pytest.raises(ConfigError):
            SynthConfig(radius_frac=(0.4, 0.6))


class TestAugment:
    def test_flips_are_involutions(self):
        s = generate_sample(11)
        rng = np.random.default_rng(0)
        for op in ("hflip", "vflip"):
            twice = augment(augment(s, op, rng), op, rng)
            npt.assert_array_equal(twice.image, s.image)
            npt.assert_array_equal(twice.mask, s.mask)

    def test_rot90_four_times_is_identity(self):
        s = generate_sample(12)
        rng = np.random.default_rng(0)
        out = s
        for _ in range(4):
            out = augment(out, "rot90", rng)
        npt.assert_array_equal(out.image, s.image)
        assert out.augmentation_trail == ["rot90"] * 4

    def test_flip_preserves_mask_area_exactly(self):
        s = generate_sample(13)
        rng = np.random.default_rng(0)
        for op in ("hflip", "vflip", "rot90"):
            out = augment(s, op, rng)
            assert out.mask.sum() == s.mask.sum()

    def test_warps_keep_masks_binary_and_values_bounded(self):
        s = generate_sample(14)
        for op in ("shift_scale_rotate", "grid_distortion", "elastic"):
            out = augment(s, op, np.random.default_rng(5))
            assert set(np.unique(out.mask)) <= {0.0, 1.0}, op
            assert out.image.min() >= s.image.min() - 1e-6
            assert out.image.max() <= s.image.max() + 1e-6
            assert out.augmentation_trail == [op]

    def test_warps_deterministic_given_rng(self):
        s = generate_sample(15)
        a = augment(s, "elastic", np.random.default_rng(3))
        b = augment(s, "elastic", np.random.default_rng(3))
        npt.assert_array_equal(a.image, b.image)

    def test_zero_magnitude_warps_are_identity(self):
        s = generate_sample(16)
        rng = np.random.default_rng(0)
        e = augment(s, "elastic", rng, magnitude=0.0)
        npt.assert_array_equal(e.image, s.image)
        g = augment(s, "grid_distortion", rng, max_jitter=0.0)
        npt.assert_array_equal(g.image, s.image)

    def test_unknown_op_rejected(self):
        with pytest.raises(ConfigError):
            augment(generate_sample(0), "mixup", np.random.default_rng(0))


class TestSplit:
    def test_exact_80_10_10(self):
        train, val, test = split_dataset(list(range(200)), seed=42)
        assert (len(train), len(val), len(test)) == (160, 20, 20)

    def test_remainder_goes_to_train(self):
        train, val, test = split_dataset(list(range(203)), seed=0)
        assert (len(train), len(val), len(test)) == (163, 20, 20)

    def test_partition_is_disjoint_and_complete(self):
        items = list(range(57))
        train, val, test = split_dataset(items, seed=1)
        assert sorted(train + val + test) == items

    def test_deterministic_and_seed_sensitive(self):
        a = split_dataset(list(range(50)), seed=2)
        b = split_dataset(list(range(50)), seed=2)
        c = split_dataset(list(range(50)), seed=3)
        assert a == b
        assert a != c

    def test_too_few_samples_rejected(self):
        with pytest.raises(ConfigError):
            split_dataset([1, 2], seed=0)

    def test_bad_ratios_rejected(self):
        with pytest.raises(ConfigError):
            split_dataset(list(range(10)), seed=0, ratios=(0.5, 0.2, 0.2))


class TestResize:
    def test_same_size_is_unchanged(self):
        img = np.random.default_rng(0).uniform(size=(3, 64, 64)).astype(np.float32)
        npt.assert_array_equal(resize_normalize(img, 64), img)

    def test_uint8_is_normalized(self):
        img = np.full((3, 64, 64), 255, dtype=np.uint8)
        out = resize_normalize(img, 64)
        npt.assert_array_equal(out, 1.0)
        assert out.dtype == np.float32

    def test_resize_changes_shape(self):
        img = np.random.default_rng(1).uniform(size=(3, 64, 64)).astype(np.float32)
        out = resize_normalize(img, 32)
        assert out.shape == (3, 32, 32)

    def test_target_must_be_divisible_by_16(self):
        img = np.zeros((3, 64, 64), dtype=np.float32)
        with pytest.raises(ConfigError):
            resize_normalize(img, 60)

    def test_out_of_range_float_rejected(self):
        with pytest.raises(ValidationError):
            resize_normalize(np.full((3, 64, 64), 1.5), 64)

    def test_mask_resize_stays_binary(self):
        mask = generate_sample(5).mask
        out = resize_mask(mask, 32)
        assert out.shape == (1, 32, 32)
        assert set(np.unique(out)) <= {0.0, 1.0}
        npt.assert_array_equal(resize_mask(mask, 64), mask)


class TestDatasetIO:
    def make_splits(self, n=6):
        samples = [generate_sample(seed, sample_id=f"s{seed:04d}") for seed in range(n)]
        train, val, test = split_dataset(samples, seed=9)
        return {"train": train, "val": val, "test": test}

    def test_roundtrip(self, tmp_path):
        splits = self.make_splits()
        save_dataset(tmp_path, splits)
        loaded = load_dataset(tmp_path)
        for split in ("train", "val", "test"):
            assert [s.sample_id for s in loaded[split]] == [s.sample_id for s in splits[split]]
            assert [s.seed for s in loaded[split]] == [s.seed for s in splits[split]]
            for orig, back in zip(splits[split], loaded[split]):
                npt.assert_array_equal(back.mask, orig.mask)
                npt.assert_allclose(back.image, orig.image, atol=0.5 / 255 + 1e-6)

    def test_missing_file_rejected(self, tmp_path):
        splits = self.make_splits()
        save_dataset(tmp_path, splits)
        victim = splits["train"][0].sample_id
        (tmp_path / "images" / f"{victim}.ppm").unlink()
        with pytest.raises(ValidationError, match="missing"):
            load_dataset(tmp_path)

    def test_malformed_manifest_rejected(self, tmp_path):
        splits = self.make_splits()
        save_dataset(tmp_path, splits)
        manifest = tmp_path / "manifest.tsv"
        manifest.write_bytes(b"onlyonefield\n")
        with pytest.raises(FormatError):
            load_dataset(tmp_path)
        manifest.write_bytes(b"id\tnotanumber\ttrain\n")
        with pytest.raises(FormatError):
            load_dataset(tmp_path)
        manifest.write_bytes(b"id\t3\tholdout\n")
        with pytest.raises(FormatError, match="split"):
            load_dataset(tmp_path)

    def test_no_manifest_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_dataset(tmp_path)

    def test_duplicate_ids_rejected(self, tmp_path):
        s = generate_sample(0, sample_id="dup")
        with pytest.raises(ConfigError):
            save_dataset(tmp_path, {"train": [s, s]})
