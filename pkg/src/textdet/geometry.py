"""Axis-aligned box arithmetic: IoU, anchor parameterization, grids, NMS.

Boxes are numpy arrays. Corner format rows are ``[x1, y1, x2, y2]`` with
``x1 <= x2`` and ``y1 <= y2``; center format rows are ``[cx, cy, w, h]``.
Pixel coordinates, origin top-left.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def box_cxcywh_to_xyxy(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def box_xyxy_to_cxcywh(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    x1, y1, x2, y2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], axis=-1)


def iou(a, b) -> float:
    """Intersection-over-union of two corner-format boxes; 0 when the union
    has zero area."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        inter = 0.0
    else:
        inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between [N, 4] and [M, 4] corner-format boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def encode_box(gt: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Regression coefficients (tx, ty, tw, th) of a center-format ground
    truth relative to a center-format anchor."""
    gt = np.asarray(gt, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if np.any(gt[..., 2:] <= 0):
        raise ValueError("encode_box: ground-truth width/height must be positive")
    tx = (gt[..., 0] - anchor[..., 0]) / anchor[..., 2]
    ty = (gt[..., 1] - anchor[..., 1]) / anchor[..., 3]
    tw = np.log(gt[..., 2] / anchor[..., 2])
    th = np.log(gt[..., 3] / anchor[..., 3])
    return np.stack([tx, ty, tw, th], axis=-1)


def decode_box(t: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_box`; returns a center-format box."""
    t = np.asarray(t, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    cx = t[..., 0] * anchor[..., 2] + anchor[..., 0]
    cy = t[..., 1] * anchor[..., 3] + anchor[..., 1]
    w = anchor[..., 2] * np.exp(t[..., 2])
    h = anchor[..., 3] * np.exp(t[..., 3])
    return np.stack([cx, cy, w, h], axis=-1)


@dataclass
class AnchorGrid:
    """One square anchor per feature-map cell, row-major over (row, col)."""

    anchors: np.ndarray  # [A, 4] center format
    feature_stride: int
    anchor_size: float
    grid_size: int

    def __len__(self) -> int:
        return self.anchors.shape[0]

    @property
    def anchors_xyxy(self) -> np.ndarray:
        return box_cxcywh_to_xyxy(self.anchors)


def build_anchor_grid(image_size: int, feature_stride: int, anchor_size: float) -> AnchorGrid:
    if image_size % feature_stride != 0:
        raise ValueError(f"image size {image_size} not divisible by feature stride {feature_stride}")
    g = image_size // feature_stride
    cols, rows = np.meshgrid(np.arange(g), np.arange(g))
    cx = (cols.ravel() + 0.5) * feature_stride
    cy = (rows.ravel() + 0.5) * feature_stride
    wh = np.full(g * g, float(anchor_size))
    anchors = np.stack([cx, cy, wh, wh], axis=-1)
    return AnchorGrid(anchors=anchors, feature_stride=feature_stride,
                      anchor_size=float(anchor_size), grid_size=g)


def clip_box(b: np.ndarray, image_size: float) -> np.ndarray:
    return np.clip(np.asarray(b, dtype=np.float64), 0.0, float(image_size))


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> list[int]:
    """Greedy non-maximum suppression.

    Returns kept indices sorted by score descending; score ties keep the
    lower original index first. A kept box suppresses every remaining box
    whose IoU with it exceeds ``iou_threshold``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if boxes.shape[0] != scores.shape[0]:
        raise ValueError("nms: boxes and scores must have equal length")
    order = np.argsort(-scores, kind="stable")
    kept: list[int] = []
    suppressed = np.zeros(len(order), dtype=bool)
    for pos, i in enumerate(order):
        if suppressed[pos]:
            continue
        kept.append(int(i))
        for pos2 in range(pos + 1, len(order)):
            if suppressed[pos2]:
                continue
            if iou(boxes[i], boxes[order[pos2]]) > iou_threshold:
                suppressed[pos2] = True
    return kept
