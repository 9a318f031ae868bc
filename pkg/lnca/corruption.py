from __future__ import annotations

"""
corruption.py
─────────────
Synthetic degradations and the sample bookkeeping built on them.

  gaussian_noise : one N(0, severity²) sample per pixel, shared by every
                   channel of that pixel (a tone shift), then clipped to [0, 1]
  motion_blur    : a normalised straight-line kernel of `severity` pixels at
                   a seeded angle, the same kernel for every image and channel

Every function here is a pure function of its inputs and its CorruptionSpec seed.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ShapeError
from .images import resize_bilinear

NOISE = "gaussian_noise"
BLUR = "motion_blur"
CORRUPTION_KINDS = (NOISE, BLUR)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: float
    seed: int
    angle: float | None = None  # blur direction in radians; drawn from the seed when unset

    def __post_init__(self) -> None:
        if self.kind not in CORRUPTION_KINDS:
            raise InvalidArgument(f"unknown corruption kind {self.kind!r}")
        if self.severity < 0:
            raise InvalidArgument(f"corruption severity must be >= 0, got {self.severity}")


@dataclass
class TripletBatch:
    anchor: np.ndarray    # clean ground truth
    positive: np.ndarray  # corrupted anchor
    negative: np.ndarray  # anchor batch under a derangement
    mask: np.ndarray      # True where anchor and positive differ

    def __post_init__(self) -> None:
        shapes = {self.anchor.shape, self.positive.shape, self.negative.shape, self.mask.shape}
        if len(shapes) != 1:
            raise ShapeError(f"triplet members disagree in shape: {sorted(shapes)}")


def _check_batch(images: np.ndarray) -> None:
    if images.ndim != 4:
        raise ShapeError(f"expected a BHWC image batch, got shape {images.shape}")


# ──────────────────────────────────────────────────────────────────────────────
# Corruptions
# ──────────────────────────────────────────────────────────────────────────────

def corrupt_noise(clean: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    _check_batch(clean)
    if spec.severity == 0:
        return clean.copy()
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(clean.shape[:-1] + (1,)) * spec.severity
    return np.clip(clean + noise, 0.0, 1.0).astype(clean.dtype)


def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Square kernel holding a nearest-pixel rasterised line of `length` samples, summing to 1."""
    if length <= 1:
        return np.ones((1, 1))
    size = length if length % 2 else length + 1
    c = size // 2
    t = np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, length)
    cols = np.floor(c + t * math.cos(angle) + 0.5).astype(int)
    rows = np.floor(c - t * math.sin(angle) + 0.5).astype(int)
    kernel = np.zeros((size, size))
    np.add.at(kernel, (np.clip(rows, 0, size - 1), np.clip(cols, 0, size - 1)), 1.0)
    return kernel / kernel.sum()


def corrupt_blur(clean: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    _check_batch(clean)
    length = int(round(spec.severity))
    h, w = clean.shape[1:3]
    if length > min(h, w):
        raise InvalidArgument(f"blur length {length} exceeds image size {h}x{w}")
    if length <= 1:
        return clean.copy()
    angle = spec.angle if spec.angle is not None else np.random.default_rng(spec.seed).uniform(0.0, math.pi)
    kernel = motion_blur_kernel(length, angle)
    r = kernel.shape[0] // 2
    padded = np.pad(clean.astype(np.float64), ((0, 0), (r, r), (r, r), (0, 0)), mode="edge")
    out = np.zeros(clean.shape, dtype=np.float64)
    for i, j in zip(*np.nonzero(kernel)):
        out += kernel[i, j] * padded[:, i:i + h, j:j + w, :]
    return np.clip(out, 0.0, 1.0).astype(clean.dtype)


def corrupt(clean: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    if spec.kind == NOISE:
        return corrupt_noise(clean, spec)
    return corrupt_blur(clean, spec)


# ──────────────────────────────────────────────────────────────────────────────
# Negatives and triplets
# ──────────────────────────────────────────────────────────────────────────────

def derangement(n: int, seed: int) -> np.ndarray:
    """Uniform permutation of range(n) with no fixed point (rejection sampling)."""
    if n < 2:
        raise InvalidArgument(f"no derangement exists for {n} element(s)")
    rng = np.random.default_rng(seed)
    identity = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == identity):
            return perm


def derange(batch: np.ndarray, seed: int) -> np.ndarray:
    return batch[derangement(batch.shape[0], seed)]


def corruption_mask(anchor: np.ndarray, positive: np.ndarray) -> np.ndarray:
    return (anchor - positive) != 0


def make_triplets(clean: np.ndarray, spec: CorruptionSpec) -> TripletBatch:
    _check_batch(clean)
    positive = corrupt(clean, spec)
    return TripletBatch(
        anchor=clean,
        positive=positive,
        negative=derange(clean, spec.seed),
        mask=corruption_mask(clean, positive),
    )


# ──────────────────────────────────────────────────────────────────────────────
# Preprocessing and schedules
# ──────────────────────────────────────────────────────────────────────────────

def tile_shrink_clean(image: np.ndarray, tile_grid: tuple[int, int], out_size: tuple[int, int] = (32, 32),
                      dedup_threshold: float = 1e-3) -> np.ndarray:
    """
    Cut one large image into an n×m patchwork, shrink every tile to `out_size`
    and drop tiles whose MSE to an already kept tile is below `dedup_threshold`.
    Returns (K, out_h, out_w, C).
    """
    if image.ndim == 4:
        if image.shape[0] != 1:
            raise ShapeError("tile_shrink_clean takes a single image")
        image = image[0]
    n, m = tile_grid
    if n < 1 or m < 1:
        raise InvalidArgument(f"degenerate tile grid {tile_grid}")
    h, w = image.shape[:2]
    if h < n * out_size[0] or w < m * out_size[1]:
        raise ShapeError(f"image {h}x{w} is smaller than a {n}x{m} grid of {out_size} tiles")

    th, tw = h // n, w // m
    kept: list[np.ndarray] = []
    for i in range(n):
        for j in range(m):
            tile = resize_bilinear(image[i * th:(i + 1) * th, j * tw:(j + 1) * tw], out_size)
            if all(float(np.mean((tile - k) ** 2)) >= dedup_threshold for k in kept):
                kept.append(tile)
    return np.stack(kept)


def curriculum_severity(epoch: int, total_epochs: int, min_sev: float, max_sev: float) -> float:
    """Linear ramp from min_sev at epoch 0 to max_sev at the last epoch."""
    if total_epochs < 1 or not 0 <= epoch < total_epochs:
        raise InvalidArgument(f"epoch {epoch} is outside 0..{total_epochs - 1}")
    if min_sev > max_sev:
        raise InvalidArgument(f"min severity {min_sev} exceeds max severity {max_sev}")
    if total_epochs == 1:
        return max_sev
    return min_sev + (max_sev - min_sev) * epoch / (total_epochs - 1)
