import json
import os
import tempfile
import unittest

os.environ.setdefault("SDL_VIDEODRIVER", "dummy")

import numpy as np

from lnca.config import CorruptionConfig, TrainConfig
from lnca.dataset import (
    MANIFEST_NAME, build_dataset, load_dataset, load_folder, read_manifest, split_indices, toy_images,
    write_dataset,
)
from lnca.errors import DatasetError
from lnca.images import save_image, to_uint8


class SplitTests(unittest.TestCase):
    def test_split_sizes_and_cover(self):
        splits = split_indices(10, 0.2, 0.2, seed=4)
        self.assertEqual({k: v.size for k, v in splits.items()}, {"train": 6, "val": 2, "test": 2})
        joined = np.concatenate([splits["train"], splits["val"], splits["test"]])
        self.assertEqual(sorted(joined.tolist()), list(range(10)))

    def test_split_is_seeded(self):
        a = split_indices(20, 0.2, 0.2, seed=1)
        b = split_indices(20, 0.2, 0.2, seed=1)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_needs_two_training_images(self):
        with self.assertRaises(DatasetError):
            split_indices(2, 0.5, 0.0, seed=0)

    def test_empty_dataset(self):
        with self.assertRaises(DatasetError):
            build_dataset(np.zeros((0, 4, 4, 3)), [], TrainConfig())


class ToyImageTests(unittest.TestCase):
    def test_shape_range_and_determinism(self):
        a = toy_images(5, size=16, seed=2)
        self.assertEqual(a.shape, (5, 16, 16, 3))
        self.assertEqual(a.dtype, np.float32)
        self.assertGreaterEqual(a.min(), 0.0)
        self.assertLessEqual(a.max(), 1.0)
        np.testing.assert_array_equal(a, toy_images(5, size=16, seed=2))
        self.assertFalse(np.array_equal(a, toy_images(5, size=16, seed=3)))

    def test_images_differ_from_each_other(self):
        a = toy_images(4, size=16)
        for i in range(1, 4):
            self.assertFalse(np.array_equal(a[0], a[i]))


class OnDiskDatasetTests(unittest.TestCase):
    def _dataset(self):
        images = toy_images(6, size=8, seed=0)
        names = [f"img_{i}.ppm" for i in range(6)]
        train = TrainConfig(test_fraction=0.2, validation_fraction=0.25)
        return build_dataset(images, names, train), train

    def test_write_then_load(self):
        dataset, train = self._dataset()
        corruption = CorruptionConfig(severity=0.1)
        with tempfile.TemporaryDirectory() as tmp:
            records = write_dataset(tmp, dataset, corruption, seed=9)
            self.assertEqual(len(records), 6)
            self.assertEqual(sorted(os.listdir(os.path.join(tmp, "clean"))), sorted(dataset.names))
            self.assertEqual(len(os.listdir(os.path.join(tmp, "corrupted"))), 6)
            self.assertEqual([r["seed"] for r in records], list(range(9, 15)))
            self.assertTrue(all(r["schema_version"] == 1 for r in records))

            loaded = load_dataset(tmp, (8, 8), corruption, train)
            self.assertEqual(loaded.names, dataset.names)
            for name in ("train", "val", "test"):
                np.testing.assert_array_equal(loaded.splits[name], dataset.splits[name])
            expected = to_uint8(dataset.images).astype(np.float32) / 255.0
            np.testing.assert_allclose(loaded.images, expected, atol=1e-7)

    def test_manifest_lines_are_json(self):
        dataset, _ = self._dataset()
        with tempfile.TemporaryDirectory() as tmp:
            write_dataset(tmp, dataset, CorruptionConfig(), seed=0)
            with open(os.path.join(tmp, MANIFEST_NAME), "r", encoding="utf-8") as f:
                lines = f.read().splitlines()
            self.assertEqual(len(lines), 6)
            rec = json.loads(lines[0])
            self.assertEqual(rec["corruption_kind"], "gaussian_noise")
            self.assertTrue(rec["path"].startswith("corrupted/"))

    def test_bad_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, MANIFEST_NAME)
            with open(path, "w", encoding="utf-8") as f:
                f.write("{not json\n")
            with self.assertRaises(DatasetError):
                read_manifest(path)
            with open(path, "w", encoding="utf-8") as f:
                f.write(json.dumps({"clean": "clean/a.png", "split": "train", "schema_version": 9}) + "\n")
            with self.assertRaises(DatasetError):
                read_manifest(path)
            with open(path, "w", encoding="utf-8") as f:
                f.write(json.dumps({"clean": "clean/a.png", "split": "holdout"}) + "\n")
            with self.assertRaises(DatasetError):
                read_manifest(path)

    def test_plain_folder_is_resized(self):
        with tempfile.TemporaryDirectory() as tmp:
            for i, image in enumerate(toy_images(3, size=16)):
                save_image(os.path.join(tmp, f"p{i}.ppm"), image)
            with open(os.path.join(tmp, "notes.txt"), "w", encoding="utf-8") as f:
                f.write("ignored")
            images, names = load_folder(tmp, (8, 8), CorruptionConfig())
            self.assertEqual(images.shape, (3, 8, 8, 3))
            self.assertEqual(names, ["p0.png", "p1.png", "p2.png"])

    def test_tiles_large_images_when_configured(self):
        with tempfile.TemporaryDirectory() as tmp:
            big = np.zeros((16, 16, 3), dtype=np.float32)
            big[:8, :8] = 1.0
            save_image(os.path.join(tmp, "big.ppm"), big)
            corruption = CorruptionConfig(tile_grid=(2, 2))
            images, names = load_folder(tmp, (8, 8), corruption)
            self.assertEqual(images.shape, (2, 8, 8, 3))
            self.assertEqual(names, ["big_t00.png", "big_t01.png"])

    def test_missing_or_empty_folder(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(DatasetError):
                load_folder(tmp, (8, 8), CorruptionConfig())
            with self.assertRaises(DatasetError):
                load_folder(os.path.join(tmp, "nope"), (8, 8), CorruptionConfig())


if __name__ == "__main__":
    unittest.main()
