"""Region proposal network: objectness/regression heads, anchor labeling,
balanced sampling, the multi-task loss, and proposal extraction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import FeatureMap
from .geometry import (AnchorGrid, box_cxcywh_to_xyxy, box_xyxy_to_cxcywh,
                       clip_box, decode_box, encode_box, iou_matrix, nms)
from .nn import Conv2d

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


@dataclass
class RpnPrediction:
    objectness: T.Tensor  # [A] probabilities
    regression: T.Tensor  # [A, 4]


@dataclass
class AnchorLabels:
    """Per-anchor labels: 1 positive, 0 negative, -1 ignore. Positive anchors
    carry their matched ground-truth index and encoded regression target."""

    label: np.ndarray       # [A] int8
    matched_gt: np.ndarray  # [A] int64, -1 where not positive
    target: np.ndarray      # [A, 4] float64, zeros where not positive


@dataclass
class RpnLossConfig:
    lam: float = 1.0
    iou_pos: float = 0.6
    iou_neg: float = 0.1


@dataclass
class Proposal:
    box: np.ndarray  # [x1, y1, x2, y2], clipped to the image
    confidence: float
    source_anchor: int


class RpnHead:
    """Shared 3x3 conv (256 channels) with sibling 1x1 objectness and
    regression convs; outputs flattened row-major over (row, col)."""

    def __init__(self, in_channels: int, rng: np.random.Generator,
                 hidden: int = 256, dtype=np.float32):
        self.conv = Conv2d(in_channels, hidden, k=3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.obj = Conv2d(hidden, 1, k=1, stride=1, padding=0, rng=rng, dtype=dtype)
        self.reg = Conv2d(hidden, 4, k=1, stride=1, padding=0, rng=rng, dtype=dtype)

    def __call__(self, fm: FeatureMap, grid: AnchorGrid) -> RpnPrediction:
        if fm.spatial_size != grid.grid_size:
            raise T.ShapeError(
                f"feature map {fm.spatial_size}x{fm.spatial_size} does not match "
                f"anchor grid {grid.grid_size}x{grid.grid_size}")
        c, h, w = fm.tensor.shape
        x = T.reshape(fm.tensor, (1, c, h, w))
        shared = T.relu(self.conv(x))
        obj = T.sigmoid(T.reshape(self.obj(shared), (h * w,)))
        reg = T.reshape(T.permute(T.reshape(self.reg(shared), (4, h * w)), (1, 0)), (h * w, 4))
        return RpnPrediction(objectness=obj, regression=reg)

    def params(self, prefix: str = "rpn") -> dict[str, T.Tensor]:
        out = self.conv.params(f"{prefix}.conv")
        out.update(self.obj.params(f"{prefix}.obj"))
        out.update(self.reg.params(f"{prefix}.reg"))
        return out


def assign_anchor_labels(grid: AnchorGrid, gt_boxes: np.ndarray,
                         cfg: RpnLossConfig) -> AnchorLabels:
    """Label anchors against ground-truth corner-format boxes.

    Positive: argmax-IoU anchor of some GT (provided that IoU > 0), or max
    IoU over GTs above ``iou_pos``. Negative: max IoU below ``iou_neg``.
    Everything else is ignored. Positive anchors match their own argmax GT.
    """
    a = len(grid)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    label = np.full(a, IGNORE, dtype=np.int8)
    matched = np.full(a, -1, dtype=np.int64)
    target = np.zeros((a, 4), dtype=np.float64)
    if gt_boxes.shape[0] == 0:
        label[:] = NEGATIVE
        return AnchorLabels(label, matched, target)

    m = iou_matrix(grid.anchors_xyxy, gt_boxes)  # [A, G]
    best_iou = m.max(axis=1)
    best_gt = m.argmax(axis=1)

    label[best_iou < cfg.iou_neg] = NEGATIVE
    label[best_iou > cfg.iou_pos] = POSITIVE
    # argmax fallback: the best anchor(s) of each GT stay positive even when
    # below the threshold, as long as they overlap at all
    for g in range(gt_boxes.shape[0]):
        col_max = m[:, g].max()
        if col_max > 0:
            label[m[:, g] == col_max] = POSITIVE

    pos = np.flatnonzero(label == POSITIVE)
    matched[pos] = best_gt[pos]
    if pos.size:
        gt_c = box_xyxy_to_cxcywh(gt_boxes[best_gt[pos]])
        target[pos] = encode_box(gt_c, grid.anchors[pos])
    return AnchorLabels(label, matched, target)


def sample_minibatch(labels: AnchorLabels, seed: int) -> np.ndarray:
    """All positives plus an equal number of uniformly drawn negatives
    (without replacement), capped by availability. Deterministic per seed."""
    pos = np.flatnonzero(labels.label == POSITIVE)
    neg = np.flatnonzero(labels.label == NEGATIVE)
    k = min(pos.size, neg.size)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(neg, size=k, replace=False) if k else np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate([pos, chosen])).astype(np.int64)


def rpn_loss(pred: RpnPrediction, labels: AnchorLabels, sample_idx: np.ndarray,
             cfg: RpnLossConfig) -> T.Tensor:
    """Mean binary cross-entropy over the sampled anchors plus lambda times
    the mean (over positives) smooth-L1 regression error of the positives."""
    if sample_idx.size == 0:
        raise ValueError("rpn_loss: empty anchor sample")
    a = pred.objectness.shape[0]
    p = T.reshape(T.gather_rows(T.reshape(pred.objectness, (a, 1)), sample_idx), (sample_idx.size,))
    p_star = (labels.label[sample_idx] == POSITIVE).astype(np.float64)
    cls = T.scale(T.sum_all(T.bce_elements(p, p_star)), 1.0 / sample_idx.size)

    pos_idx = sample_idx[labels.label[sample_idx] == POSITIVE]
    if pos_idx.size == 0:
        return cls
    t_pred = T.gather_rows(pred.regression, pos_idx)
    t_star = T.constant(labels.target[pos_idx], like=t_pred)
    reg = T.scale(T.sum_all(T.smooth_l1(T.sub(t_pred, t_star))), 1.0 / pos_idx.size)
    return T.add(cls, T.scale(reg, cfg.lam))


def extract_proposals(pred: RpnPrediction, grid: AnchorGrid, image_size: int,
                      conf_threshold: float = 0.5, nms_iou: float = 0.5,
                      max_proposals: int = 100) -> list[Proposal]:
    """Decode, clip, confidence-filter, NMS and truncate; confidence-descending."""
    conf = np.asarray(pred.objectness.data, dtype=np.float64)
    reg = np.asarray(pred.regression.data, dtype=np.float64)
    boxes = box_cxcywh_to_xyxy(decode_box(reg, grid.anchors))
    boxes = clip_box(boxes, image_size)
    keep = np.flatnonzero(conf >= conf_threshold)
    if keep.size == 0:
        return []
    kept = nms(boxes[keep], conf[keep], nms_iou)[:max_proposals]
    return [Proposal(box=boxes[keep[i]], confidence=float(conf[keep[i]]),
                     source_anchor=int(keep[i])) for i in kept]
