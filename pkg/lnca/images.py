from __future__ import annotations

"""
Image file I/O. Arrays are (H, W, C) float32 in [0, 1].

PNG/JPG/BMP go through pygame's image module; PPM/PGM debug images are read
and written directly.
"""

import os

os.environ.setdefault("PYGAME_HIDE_SUPPORT_PROMPT", "1")
os.environ.setdefault("SDL_VIDEODRIVER", "dummy")

import numpy as np
import pygame

from .constants import IMAGE_EXTENSIONS
from .errors import DatasetError, ShapeError

_PNM_EXTENSIONS = (".ppm", ".pgm")
# ITU-R BT.601 luma weights for grey PGM output
_LUMA = np.array([0.299, 0.587, 0.114])


def list_images(folder: str) -> list[str]:
    """Image files directly inside `folder`, sorted by name."""
    if not os.path.isdir(folder):
        raise DatasetError(f"image folder not found: {folder}")
    names = sorted(n for n in os.listdir(folder) if n.lower().endswith(IMAGE_EXTENSIONS))
    return [os.path.join(folder, n) for n in names]


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def load_image(path: str) -> np.ndarray:
    if path.lower().endswith(_PNM_EXTENSIONS):
        raw = read_pnm(path)
    else:
        try:
            surf = pygame.image.load(path)
        except (pygame.error, FileNotFoundError) as e:
            raise DatasetError(f"cannot read image {path}: {e}") from e
        # surfarray is indexed (x, y)
        raw = pygame.surfarray.array3d(surf).transpose(1, 0, 2)
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    return raw.astype(np.float32) / 255.0


def save_image(path: str, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ShapeError(f"expected an (H, W, 1|3) image, got shape {image.shape}")
    lower = path.lower()
    if lower.endswith(".pgm"):
        gray = image[:, :, 0] if image.shape[2] == 1 else image @ _LUMA
        write_pnm(path, to_uint8(gray))
        return
    pixels = to_uint8(image)
    if lower.endswith(".ppm"):
        write_pnm(path, np.repeat(pixels, 3, axis=2) if pixels.shape[2] == 1 else pixels)
        return
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    surf = pygame.surfarray.make_surface(np.ascontiguousarray(pixels.transpose(1, 0, 2)))
    pygame.image.save(surf, path)


def write_pnm(path: str, pixels: np.ndarray) -> None:
    """Binary PGM for (H, W) uint8, binary PPM for (H, W, 3) uint8."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ShapeError(f"PNM needs (H, W) or (H, W, 3) pixels, got {pixels.shape}")
    h, w = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels).tobytes())


def _pnm_header(blob: bytes, path: str) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            end = blob.find(b"\n", pos)
            if end < 0:
                raise DatasetError(f"malformed PNM {path}: unterminated header comment")
            pos = end + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"malformed PNM {path}: truncated header")
        tokens.append(blob[start:pos])
    # single whitespace before the raster
    return tokens, pos + 1


def read_pnm(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DatasetError(f"cannot read image {path}: {e}") from e

    tokens, pos = _pnm_header(blob, path)
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise DatasetError(f"malformed PNM {path}: non-numeric header field") from e
    if magic not in (b"P5", b"P6") or not 0 < maxval <= 255:
        raise DatasetError(f"unsupported PNM variant in {path} (only 8-bit P5/P6)")
    if w < 1 or h < 1:
        raise DatasetError(f"malformed PNM {path}: image size {w}x{h}")
    channels = 3 if magic == b"P6" else 1
    count = w * h * channels
    if len(blob) - pos < count:
        raise DatasetError(f"malformed PNM {path}: raster has {max(len(blob) - pos, 0)} of {count} bytes")
    raster = np.frombuffer(blob, dtype=np.uint8, count=count, offset=pos)
    shape = (h, w, 3) if channels == 3 else (h, w)
    pixels = raster.reshape(shape)
    if maxval != 255:
        pixels = np.rint(pixels.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return pixels


def resize_bilinear(image: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W, C) image with half-pixel centres and edge clamping."""
    h, w = image.shape[:2]
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return image.copy()

    def axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis(h, oh)
    x0, x1, wx = axis(w, ow)
    src = image.astype(np.float64)
    top = src[y0][:, x0] * (1 - wx)[None, :, None] + src[y0][:, x1] * wx[None, :, None]
    bottom = src[y1][:, x0] * (1 - wx)[None, :, None] + src[y1][:, x1] * wx[None, :, None]
    out = top * (1 - wy)[:, None, None] + bottom * wy[:, None, None]
    return out.astype(image.dtype)
