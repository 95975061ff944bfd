"""Proposal-text alignment head, its cross-entropy loss, and final scoring:
score = confidence * alignment, thresholded and truncated to the top k."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear


@dataclass
class InferenceConfig:
    score_threshold: float = 0.5
    top_k: int = 20

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(f"score threshold {self.score_threshold} outside [0, 1]")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")


@dataclass
class AlignedDetection:
    box: np.ndarray  # [x1, y1, x2, y2]
    confidence: float
    alignment: float
    score: float


class AlignmentHead:
    """sigmoid(relu([f_r; f_t] W1 + b1) W2 + b2).

    W2 and both biases start at zero so every pair scores 0.5 before any
    training step.
    """

    def __init__(self, d_r: int, d_t: int, d_j: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.fc1 = Linear(d_r + d_t, d_j, rng=rng, dtype=dtype)
        self.fc2 = Linear(d_j, 1, rng=rng, dtype=dtype, zero_init=True)

    def __call__(self, proposal_emb: T.Tensor, text_emb: T.Tensor) -> T.Tensor:
        """[P, d_r] proposal rows against one [1, d_t] text row -> [P, 1]."""
        p = proposal_emb.shape[0]
        z = T.concat_lastdim(proposal_emb, T.repeat_rows(text_emb, p))
        return T.sigmoid(self.fc2(T.relu(self.fc1(z))))

    def params(self, prefix: str = "align") -> dict[str, T.Tensor]:
        out = self.fc1.params(f"{prefix}.fc1")
        out.update(self.fc2.params(f"{prefix}.fc2"))
        return out


def align_loss(pred: T.Tensor, labels: np.ndarray) -> T.Tensor:
    """Mean binary cross-entropy of alignment scores against 0/1 labels."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.size == 0:
        raise ValueError("align_loss: empty batch")
    flat = T.reshape(pred, (labels.size,))
    return T.mean_all(T.bce_elements(flat, labels))


def score(confidence: float, alignment: float) -> float:
    return confidence * alignment


def select_topk(detections: list[AlignedDetection], cfg: InferenceConfig) -> list[AlignedDetection]:
    """Drop scores at or below the threshold, order by score descending
    (ties keep the earlier detection), keep at most ``top_k``."""
    passing = [d for d in detections if d.score > cfg.score_threshold]
    passing.sort(key=lambda d: -d.score)
    return passing[:cfg.top_k]
