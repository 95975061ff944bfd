"""Shared convolutional feature extractor feeding the RPN and proposal encoder.

A small from-scratch stack of stride-2 conv+relu blocks; the feature stride
is 2 ** num_blocks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d


@dataclass
class BackboneConfig:
    channels: tuple[int, ...] = (16, 32, 64)

    @property
    def num_blocks(self) -> int:
        return len(self.channels)

    @property
    def feature_stride(self) -> int:
        return 2 ** self.num_blocks

    @property
    def out_channels(self) -> int:
        return self.channels[-1]


@dataclass
class FeatureMap:
    tensor: T.Tensor  # [C_f, W_f, W_f]
    feature_stride: int

    @property
    def spatial_size(self) -> int:
        return self.tensor.shape[-1]


class Backbone:
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.blocks = []
        in_ch = 3
        for ch in cfg.channels:
            self.blocks.append(Conv2d(in_ch, ch, k=3, stride=2, padding=1, rng=rng, dtype=dtype))
            in_ch = ch

    def __call__(self, image: T.Tensor) -> FeatureMap:
        """Run the block stack over a [3, S, S] image scaled to [0, 1]."""
        if image.data.ndim != 3 or image.shape[0] != 3:
            raise T.ShapeError(f"backbone: expected [3, S, S] image, got {image.shape}")
        s = image.shape[1]
        if s % self.cfg.feature_stride != 0:
            raise ValueError(
                f"image size {s} not divisible by feature stride {self.cfg.feature_stride}")
        x = T.reshape(image, (1, 3, s, s))
        for block in self.blocks:
            x = T.relu(block(x))
        wf = s // self.cfg.feature_stride
        fm = T.reshape(x, (self.cfg.out_channels, wf, wf))
        return FeatureMap(tensor=fm, feature_stride=self.cfg.feature_stride)

    def params(self, prefix: str = "backbone") -> dict[str, T.Tensor]:
        out: dict[str, T.Tensor] = {}
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"{prefix}.block{i}"))
        return out


def image_to_tensor(image: np.ndarray, dtype=np.float32) -> T.Tensor:
    """uint8 [H, W, 3] raster to a [3, H, W] tensor scaled to [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected [H, W, 3] image, got shape {arr.shape}")
    return T.Tensor(arr.transpose(2, 0, 1).astype(dtype) / 255.0)
