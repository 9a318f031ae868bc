from __future__ import annotations

"""
autoencoder.py
──────────────
Encoder/decoder pair around the latent lattice.

  encoder : stem block ─┬─ 1×1 projection ───────────────────────── skip  (H × W)
                        └─ stride-2 blocks × stages ─ sigmoid block ─ latent (H/2^s × W/2^s)
  decoder : latent ─ entry block ─ transposed stride-2 blocks × stages ─ (+ skip) ─ sigmoid block ─ image

Every block is conv(3×3) → batch norm → swish, except the output blocks
(bottleneck and image), which are conv(3×3, bias) → sigmoid.
"""

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .config import AEConfig
from .errors import ShapeError
from .nn import BatchNorm, Conv, Module
from .tensor import Tensor, as_tensor


class AdjustedConvBlock(Module):
    def __init__(self, cin: int, filters: int, stride: int = 1, transposed: bool = False,
                 is_output_layer: bool = False, rng: np.random.Generator | None = None):
        # no conv bias in front of batch norm: the norm's shift takes that role
        self.conv = Conv(cin, filters, 3, stride=stride, bias=is_output_layer, transposed=transposed, rng=rng)
        self.norm = None if is_output_layer else BatchNorm(filters)
        self.is_output_layer = is_output_layer

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        if self.is_output_layer:
            return F.activation(y, "sigmoid")
        return F.activation(self.norm(y), "swish")


@dataclass
class EncodeOutput:
    latent: Tensor
    skip: Tensor


def _stage_width(cfg: AEConfig, i: int) -> int:
    return cfg.base_filters * 2 ** i


class Encoder(Module):
    def __init__(self, cfg: AEConfig, rng: np.random.Generator):
        self.cfg = cfg
        channels = cfg.input_shape[2]
        self.stem = AdjustedConvBlock(channels, cfg.base_filters, rng=rng)
        self.skip_proj = Conv(cfg.base_filters, cfg.skip_channels, 1, rng=rng)
        self.down = [
            AdjustedConvBlock(_stage_width(cfg, i), _stage_width(cfg, i + 1), stride=2, rng=rng)
            for i in range(cfg.downsample_stages)
        ]
        self.bottleneck = AdjustedConvBlock(_stage_width(cfg, cfg.downsample_stages), cfg.latent_channels,
                                            is_output_layer=True, rng=rng)

    def forward(self, x: Tensor) -> EncodeOutput:
        if x.ndim != 4 or x.shape[1:] != tuple(self.cfg.input_shape):
            raise ShapeError(f"encoder expects (B, {', '.join(map(str, self.cfg.input_shape))}), got {x.shape}")
        h = self.stem(x)
        skip = self.skip_proj(h)
        for block in self.down:
            h = block(h)
        return EncodeOutput(latent=self.bottleneck(h), skip=skip)


class Decoder(Module):
    def __init__(self, cfg: AEConfig, rng: np.random.Generator):
        self.cfg = cfg
        stages = cfg.downsample_stages

        def width(i: int) -> int:
            return _stage_width(cfg, i) if i > 0 else cfg.skip_channels

        self.entry = AdjustedConvBlock(cfg.latent_channels, width(stages), rng=rng)
        self.up = [
            AdjustedConvBlock(width(i + 1), width(i), stride=2, transposed=True, rng=rng)
            for i in reversed(range(stages))
        ]
        self.out = AdjustedConvBlock(cfg.skip_channels, cfg.input_shape[2], is_output_layer=True, rng=rng)

    def forward(self, latent: Tensor, skip: Tensor) -> Tensor:
        if latent.ndim != 4 or latent.shape[1:] != self.cfg.latent_shape:
            raise ShapeError(f"decoder expects latent (B, {', '.join(map(str, self.cfg.latent_shape))}), got {latent.shape}")
        h = self.entry(latent)
        for block in self.up:
            h = block(h)
        if skip.shape != h.shape:
            raise ShapeError(f"skip shape {skip.shape} does not match decoder stage {h.shape}")
        return self.out(h + skip)


class Autoencoder(Module):
    def __init__(self, cfg: AEConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)

    def encode(self, images: Tensor | np.ndarray) -> EncodeOutput:
        return self.encoder(as_tensor(images))

    def decode(self, latent: Tensor, skip: Tensor) -> Tensor:
        return self.decoder(latent, skip)

    def forward_bypass(self, images: Tensor | np.ndarray) -> Tensor:
        """Encode then decode with the cellular automaton switched out."""
        enc = self.encode(images)
        return self.decode(enc.latent, enc.skip)

    def forward(self, images: Tensor | np.ndarray) -> Tensor:
        return self.forward_bypass(images)
