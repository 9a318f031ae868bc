from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .config import CorruptionConfig, TrainConfig
from .constants import SCHEMA_VERSION
from .corruption import CorruptionSpec, corrupt, tile_shrink_clean
from .errors import DatasetError
from .images import list_images, load_image, resize_bilinear, save_image

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    """Clean images (N, H, W, 3) in [0, 1] plus a fixed train/val/test assignment."""
    images: np.ndarray
    names: list[str]
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def split(self, name: str) -> np.ndarray:
        return self.images[self.splits.get(name, np.zeros(0, dtype=int))]

    def split_names(self, name: str) -> list[str]:
        return [self.names[i] for i in self.splits.get(name, [])]

    def __len__(self) -> int:
        return self.images.shape[0]


def split_indices(n: int, test_fraction: float, validation_fraction: float, seed: int) -> dict[str, np.ndarray]:
    """Seeded test split first, then a validation split carved out of the remaining training part."""
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    rest = order[n_test:]
    n_val = int(round(rest.size * validation_fraction))
    splits = {"train": np.sort(rest[n_val:]), "val": np.sort(rest[:n_val]), "test": np.sort(order[:n_test])}
    if splits["train"].size < 2:
        raise DatasetError(f"only {splits['train'].size} training image(s) after splitting {n}; need at least 2")
    return splits


# ──────────────────────────────────────────────────────────────────────────────
# Sources
# ──────────────────────────────────────────────────────────────────────────────

def toy_images(count: int = 16, size: int = 32, seed: int = 0) -> np.ndarray:
    """Procedural RGB images: a colour gradient with a few flat rectangles and a disc."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(1, size - 1)
    out = np.empty((count, size, size, 3), dtype=np.float32)
    for n in range(count):
        c0, c1 = rng.uniform(0.1, 0.9, size=(2, 3))
        angle = rng.uniform(0.0, 2 * np.pi)
        t = (np.cos(angle) * xx + np.sin(angle) * yy + 1.0) / 2.0
        img = c0 * (1 - t[..., None]) + c1 * t[..., None]
        for _ in range(rng.integers(1, 4)):
            y0, x0 = rng.integers(0, size - 4, size=2)
            h, w = rng.integers(3, size // 2, size=2)
            img[y0:y0 + h, x0:x0 + w] = rng.uniform(0.0, 1.0, size=3)
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        radius = rng.uniform(0.1, 0.25)
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2
        img[disc] = rng.uniform(0.0, 1.0, size=3)
        out[n] = np.clip(img, 0.0, 1.0)
    return out


def load_folder(folder: str, input_hw: tuple[int, int], corruption: CorruptionConfig) -> tuple[np.ndarray, list[str]]:
    """
    Every image in `folder` brought to `input_hw`: tile-shrink-clean for large
    images when a tile grid is configured, a bilinear resize otherwise.
    """
    paths = list_images(folder)
    if not paths:
        raise DatasetError(f"no images found in {folder}")
    images, names = [], []
    n, m = corruption.tile_grid
    for path in paths:
        image = load_image(path)
        stem = os.path.splitext(os.path.basename(path))[0]
        h, w = image.shape[:2]
        if n and m and h >= n * input_hw[0] and w >= m * input_hw[1]:
            tiles = tile_shrink_clean(image, (n, m), input_hw, corruption.dedup_threshold)
            log.debug("%s: %d of %d tiles kept", stem, tiles.shape[0], n * m)
            for k, tile in enumerate(tiles):
                images.append(tile)
                names.append(f"{stem}_t{k:02d}.png")
            continue
        images.append(resize_bilinear(image, input_hw))
        names.append(f"{stem}.png")
    return np.stack(images).astype(np.float32), names


def build_dataset(images: np.ndarray, names: list[str], train: TrainConfig) -> Dataset:
    if images.shape[0] == 0:
        raise DatasetError("dataset is empty")
    splits = split_indices(images.shape[0], train.test_fraction, train.validation_fraction, train.seed)
    return Dataset(images=images, names=names, splits=splits)


# ──────────────────────────────────────────────────────────────────────────────
# On-disk dataset: clean/ + corrupted/ + manifest.jsonl
# ──────────────────────────────────────────────────────────────────────────────

def write_dataset(out_dir: str, dataset: Dataset, corruption: CorruptionConfig, seed: int) -> list[dict]:
    """Write clean/corrupted pairs at the fixed severity and a JSON-lines manifest."""
    clean_dir = os.path.join(out_dir, "clean")
    bad_dir = os.path.join(out_dir, "corrupted")
    os.makedirs(clean_dir, exist_ok=True)
    os.makedirs(bad_dir, exist_ok=True)

    split_of = {int(i): name for name in SPLITS for i in dataset.splits.get(name, [])}
    records = []
    for i, name in enumerate(dataset.names):
        spec = CorruptionSpec(corruption.kind, corruption.severity, seed + i)
        corrupted = corrupt(dataset.images[i:i + 1], spec)[0]
        save_image(os.path.join(clean_dir, name), dataset.images[i])
        save_image(os.path.join(bad_dir, name), corrupted)
        records.append({
            "path": f"corrupted/{name}",
            "clean": f"clean/{name}",
            "split": split_of.get(i, "train"),
            "corruption_kind": spec.kind,
            "severity": spec.severity,
            "seed": spec.seed,
            "schema_version": SCHEMA_VERSION,
        })

    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    log.info("wrote %d image pairs to %s", len(records), out_dir)
    return records


def read_manifest(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{lineno}: bad manifest line ({e.msg})") from e
            if rec.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
                raise DatasetError(f"{path}:{lineno}: unsupported schema_version {rec.get('schema_version')}")
            if rec.get("split") not in SPLITS or "clean" not in rec:
                raise DatasetError(f"{path}:{lineno}: manifest record needs 'clean' and a valid 'split'")
            records.append(rec)
    return records


def load_dataset(folder: str, input_hw: tuple[int, int], corruption: CorruptionConfig,
                 train: TrainConfig) -> Dataset:
    """
    A make-dataset output folder (split assignment taken from its manifest) or
    any plain folder of images (split by seed).
    """
    manifest = os.path.join(folder, MANIFEST_NAME)
    if not os.path.exists(manifest):
        images, names = load_folder(folder, input_hw, corruption)
        return build_dataset(images, names, train)

    records = read_manifest(manifest)
    if not records:
        raise DatasetError(f"{manifest} lists no images")
    images = np.stack([resize_bilinear(load_image(os.path.join(folder, r["clean"])), input_hw) for r in records])
    names = [os.path.basename(r["clean"]) for r in records]
    splits = {s: np.array([i for i, r in enumerate(records) if r["split"] == s], dtype=int) for s in SPLITS}
    if splits["train"].size < 2:
        raise DatasetError(f"{manifest} assigns fewer than 2 images to the training split")
    return Dataset(images=images.astype(np.float32), names=names, splits=splits)
