"""Synthetic generation determinism and the on-disk dataset format."""

import json

import numpy as np
import pytest
from PIL import Image as PILImage

from pixelpick.core import IGNORE_LABEL
from pixelpick.datasets import (
    Dataset,
    SyntheticSpec,
    default_palette,
    generate_synthetic,
    load_dataset,
    save_dataset,
)


class TestGenerate:
    def test_deterministic(self):
        spec = SyntheticSpec(num_images=3, height=24, width=24, seed=11)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        for ia, ib in zip(a.images, b.images):
            assert np.array_equal(ia.pixels, ib.pixels)
        for ma, mb in zip(a.masks, b.masks):
            assert np.array_equal(ma.classes, mb.classes)

    def test_distinct_seeds_differ(self):
        a = generate_synthetic(SyntheticSpec(num_images=2, height=16, width=16, seed=1))
        b = generate_synthetic(SyntheticSpec(num_images=2, height=16, width=16, seed=2))
        assert not np.array_equal(a.images[0].pixels, b.images[0].pixels)

    def test_masks_valid_and_dims_match(self):
        ds = generate_synthetic(SyntheticSpec(num_images=5, height=20, width=28, num_classes=5, seed=3))
        for img, mask in zip(ds.images, ds.masks):
            assert (img.height, img.width) == (mask.height, mask.width) == (20, 28)
            assert mask.classes.min() >= 0
            assert mask.classes.max() < 5

    def test_class_presence_rate(self):
        # Oracle: generate 100 default images and count per-class presence.
        ds = generate_synthetic(SyntheticSpec(num_images=100, seed=0))
        presence = np.zeros(4, dtype=int)
        for mask in ds.masks:
            for c in range(4):
                if (mask.classes == c).any():
                    presence[c] += 1
        assert (presence >= 80).all(), presence

    def test_every_class_appears_somewhere(self):
        ds = generate_synthetic(SyntheticSpec(num_images=10, seed=5))
        seen = set()
        for mask in ds.masks:
            seen.update(np.unique(mask.classes).tolist())
        assert seen == {0, 1, 2, 3}

    def test_palette_default_unique(self):
        pal = default_palette(12)
        assert len(pal) == 12
        assert len(set(pal)) == 12


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        spec = SyntheticSpec(num_images=4, height=16, width=16, num_classes=3, seed=9)
        ds = generate_synthetic(spec)
        save_dataset(ds, tmp_path / "ds", spec=spec)
        loaded = load_dataset(tmp_path / "ds")
        assert loaded.class_names == ds.class_names
        assert loaded.palette == ds.palette
        assert loaded.ids() == ds.ids()
        for a, b in zip(ds.images, loaded.images):
            np.testing.assert_array_equal(a.pixels, b.pixels)
        for a, b in zip(ds.masks, loaded.masks):
            np.testing.assert_array_equal(a.classes, b.classes)

    def test_manifest_written(self, tmp_path):
        spec = SyntheticSpec(num_images=2, height=16, width=16, seed=0)
        save_dataset(generate_synthetic(spec), tmp_path / "ds", spec=spec)
        manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        assert manifest["num_images"] == 2
        assert manifest["height"] == 16
        assert manifest["spec"]["seed"] == 0

    def test_missing_mask_names_image(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(num_images=2, height=16, width=16, seed=1))
        save_dataset(ds, tmp_path / "ds")
        (tmp_path / "ds" / "masks" / "img_0001.png").unlink()
        with pytest.raises(FileNotFoundError, match="img_0001"):
            load_dataset(tmp_path / "ds")

    def test_mask_value_out_of_range_rejected(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(num_images=1, height=16, width=16, num_classes=3, seed=1))
        save_dataset(ds, tmp_path / "ds")
        bad = np.full((16, 16), 9, dtype=np.uint8)
        PILImage.fromarray(bad, mode="L").save(tmp_path / "ds" / "masks" / "img_0000.png")
        with pytest.raises(ValueError, match="class value 9"):
            load_dataset(tmp_path / "ds")

    def test_ignore_value_accepted(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(num_images=1, height=16, width=16, num_classes=3, seed=1))
        save_dataset(ds, tmp_path / "ds")
        arr = np.zeros((16, 16), dtype=np.uint8)
        arr[0, :] = IGNORE_LABEL
        PILImage.fromarray(arr, mode="L").save(tmp_path / "ds" / "masks" / "img_0000.png")
        loaded = load_dataset(tmp_path / "ds")
        assert (loaded.masks[0].classes[0] == IGNORE_LABEL).all()

    def test_dimension_mismatch_rejected(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(num_images=1, height=16, width=16, num_classes=3, seed=1))
        save_dataset(ds, tmp_path / "ds")
        small = np.zeros((8, 8), dtype=np.uint8)
        PILImage.fromarray(small, mode="L").save(tmp_path / "ds" / "masks" / "img_0000.png")
        with pytest.raises(ValueError, match="mask"):
            load_dataset(tmp_path / "ds")

    def test_corrupt_image_diagnostic(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(num_images=1, height=16, width=16, seed=1))
        save_dataset(ds, tmp_path / "ds")
        (tmp_path / "ds" / "images" / "img_0000.png").write_bytes(b"not a png at all")
        with pytest.raises(ValueError, match="img_0000.png"):
            load_dataset(tmp_path / "ds")


class TestNoiseFreeConstruction:
    def test_mask_matches_painted_rectangle(self):
        # With zero noise a rectangle of class 1 on background is exact: the
        # mask says 1 inside the painted region and 0 outside.
        spec = SyntheticSpec(
            num_images=1,
            height=32,
            width=32,
            num_classes=2,
            shapes_per_image=(1, 1),
            noise_std=0.0,
            seed=4,
        )
        ds = generate_synthetic(spec)
        mask = ds.masks[0].classes
        img = ds.images[0].pixels
        assert set(np.unique(mask)) == {0, 1}
        pal = np.asarray(default_palette(2), dtype=np.float64) / 255.0
        # All painted pixels carry the (brightness-jittered) class-1 color:
        # constant within the shape and far from the background palette.
        inside = img[mask == 1]
        assert inside.std(axis=0).max() < 1e-6
        assert np.abs(inside.mean(axis=0) - pal[0]).max() > 0.1

    def test_dataset_validation(self):
        ds = generate_synthetic(SyntheticSpec(num_images=2, height=16, width=16, seed=0))
        with pytest.raises(ValueError, match="mask"):
            Dataset(
                images=ds.images,
                masks=ds.masks[:1],
                class_names=ds.class_names,
                palette=ds.palette,
            )
