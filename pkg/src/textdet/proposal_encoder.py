"""Region features: ROI max pooling over the backbone feature map and the
conv + two-FC encoder producing unit-norm proposal embeddings."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import FeatureMap
from .nn import Conv2d, Linear


class DegenerateRegionError(ValueError):
    """A proposal box maps to a zero-area feature region."""


@dataclass
class ProposalEncoderConfig:
    roi_output: int = 2     # pooled spatial size S_R
    conv_channels: int = 128
    embed_dim: int = 64


def roi_pool(fm: FeatureMap, box: np.ndarray, roi_output: int) -> T.Tensor:
    """Crop the feature cells spanned by a pixel-space corner box (floor the
    start, ceil the end, at least one cell per side) and max-pool the crop to
    ``roi_output`` square. Gradients flow back into the feature map."""
    x1, y1, x2, y2 = (float(v) for v in np.asarray(box, dtype=np.float64))
    if x2 <= x1 or y2 <= y1:
        raise DegenerateRegionError(f"zero-area region {box}")
    s = fm.feature_stride
    n = fm.spatial_size
    c0 = int(np.clip(math.floor(x1 / s), 0, n - 1))
    r0 = int(np.clip(math.floor(y1 / s), 0, n - 1))
    c1 = int(np.clip(math.ceil(x2 / s), c0 + 1, n))
    r1 = int(np.clip(math.ceil(y2 / s), r0 + 1, n))
    crop = T.crop2d(fm.tensor, r0, r1, c0, c1)
    return T.adaptive_max_pool2d(crop, roi_output, roi_output)


class ProposalEncoder:
    """conv3x3 -> relu -> flatten -> fc -> relu -> fc -> l2 normalize."""

    def __init__(self, in_channels: int, cfg: ProposalEncoderConfig,
                 rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.conv = Conv2d(in_channels, cfg.conv_channels, k=3, stride=1, padding=1,
                           rng=rng, dtype=dtype)
        flat = cfg.conv_channels * cfg.roi_output * cfg.roi_output
        self.fc1 = Linear(flat, cfg.embed_dim, rng=rng, dtype=dtype)
        self.fc2 = Linear(cfg.embed_dim, cfg.embed_dim, rng=rng, dtype=dtype)
        # project the output map's rows off the all-ones direction: the relu
        # layer feeding fc2 is non-negative, so an uncentered map would give
        # every embedding a large shared component and post-normalization
        # spread between regions would start tiny
        w = self.fc2.w.data.astype(np.float64)
        ones = np.full(w.shape[0], 1.0 / np.sqrt(w.shape[0]))
        self.fc2.w.data = (w - np.outer(ones, ones @ w)).astype(dtype)

    def __call__(self, roi: T.Tensor) -> T.Tensor:
        """[C_f, S_R, S_R] pooled region to a [1, d_r] unit-norm embedding."""
        c, h, w = roi.shape
        if (h, w) != (self.cfg.roi_output, self.cfg.roi_output):
            raise T.ShapeError(f"encoder expects {self.cfg.roi_output}x{self.cfg.roi_output} "
                               f"regions, got {h}x{w}")
        x = T.reshape(roi, (1, c, h, w))
        x = T.relu(self.conv(x))
        x = T.reshape(x, (1, self.cfg.conv_channels * h * w))
        x = T.relu(self.fc1(x))
        x = self.fc2(x)
        return T.l2_normalize(x)

    def params(self, prefix: str = "prop") -> dict[str, T.Tensor]:
        out = self.conv.params(f"{prefix}.conv")
        out.update(self.fc1.params(f"{prefix}.fc1"))
        out.update(self.fc2.params(f"{prefix}.fc2"))
        return out
