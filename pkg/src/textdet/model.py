"""Model assembly: configuration presets and the full detector holding the
backbone, RPN head, proposal encoder, text encoder and alignment head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .alignment import AlignmentHead
from .backbone import Backbone, BackboneConfig
from .geometry import AnchorGrid, build_anchor_grid
from .proposal_encoder import ProposalEncoder, ProposalEncoderConfig, roi_pool
from .rpn import RpnHead, RpnLossConfig
from .text_encoder import TextEncoder, TextEncoderConfig, Vocabulary


@dataclass
class ModelConfig:
    image_size: int = 128
    anchor_size: float = 16.0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    proposal: ProposalEncoderConfig = field(default_factory=ProposalEncoderConfig)
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    rpn_hidden: int = 256
    align_hidden: int = 64
    rpn_loss: RpnLossConfig = field(default_factory=RpnLossConfig)
    # proposal extraction defaults
    conf_threshold: float = 0.5
    nms_iou: float = 0.5
    max_proposals: int = 100

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone"] = BackboneConfig(channels=tuple(d["backbone"]["channels"]))
        d["proposal"] = ProposalEncoderConfig(**d["proposal"])
        d["text"] = TextEncoderConfig(**d["text"])
        d["rpn_loss"] = RpnLossConfig(**d["rpn_loss"])
        return cls(**d)


MODEL_PRESETS: dict[str, ModelConfig] = {
    # desk regions span ~2-3 feature cells; a 6x6 pooled grid oversamples the
    # crop so the shape silhouette survives pooling (a 2x2 pool of so few
    # cells erases it and only color remains learnable)
    "desk": ModelConfig(image_size=128, anchor_size=16.0,
                        backbone=BackboneConfig(channels=(16, 32, 64)),
                        proposal=ProposalEncoderConfig(roi_output=6)),
    "paper": ModelConfig(image_size=512, anchor_size=64.0,
                         backbone=BackboneConfig(channels=(16, 32, 64, 128, 256))),
}


def model_preset(name: str) -> ModelConfig:
    if name not in MODEL_PRESETS:
        raise ValueError(f"unknown model preset {name!r} (choose from {sorted(MODEL_PRESETS)})")
    cfg = MODEL_PRESETS[name]
    return ModelConfig.from_json(cfg.to_json())  # deep copy via the serialized form


class TextDetModel:
    """The complete detector. Construction order is fixed so a given seed
    always produces identical initial parameters."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary | None = None,
                 seed: int = 0, dtype=np.float32):
        if cfg.image_size % cfg.backbone.feature_stride != 0:
            raise ValueError(f"image size {cfg.image_size} not divisible by "
                             f"feature stride {cfg.backbone.feature_stride}")
        self.cfg = cfg
        self.vocab = vocab if vocab is not None else Vocabulary.default()
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(cfg.backbone, rng=rng, dtype=dtype)
        self.rpn = RpnHead(cfg.backbone.out_channels, rng=rng, hidden=cfg.rpn_hidden, dtype=dtype)
        self.proposal_encoder = ProposalEncoder(cfg.backbone.out_channels, cfg.proposal,
                                                rng=rng, dtype=dtype)
        self.text_encoder = TextEncoder(self.vocab, cfg.text, rng=rng, dtype=dtype)
        self.align_head = AlignmentHead(cfg.proposal.embed_dim, cfg.text.embed_dim,
                                        cfg.align_hidden, rng=rng, dtype=dtype)
        self.grid: AnchorGrid = build_anchor_grid(cfg.image_size,
                                                  cfg.backbone.feature_stride,
                                                  cfg.anchor_size)

    def named_parameters(self) -> dict[str, T.Tensor]:
        out = self.backbone.params("backbone")
        out.update(self.rpn.params("rpn"))
        out.update(self.proposal_encoder.params("prop"))
        out.update(self.text_encoder.params("text"))
        out.update(self.align_head.params("align"))
        return out

    def embed_proposals(self, fm, boxes) -> T.Tensor:
        """ROI-pool and encode each corner box; rows of the [P, d_r] result
        keep the order of ``boxes``."""
        s_r = self.cfg.proposal.roi_output
        rows = [self.proposal_encoder(roi_pool(fm, b, s_r)) for b in boxes]
        if len(rows) == 1:
            return rows[0]
        return T.reshape(T.stack(rows), (len(rows), self.cfg.proposal.embed_dim))
