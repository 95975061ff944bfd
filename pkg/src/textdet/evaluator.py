"""Test-set evaluation: greedy IoU matching, macro precision/recall, pooled
mean IoU, alignment accuracy, and per-group IoU histograms.

Two groups are reported: every RPN proposal against every ground-truth
object, and score-filtered detections against only the query-aligned
objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .geometry import iou_matrix
from .inference import detect
from .model import TextDetModel
from .shapegen import DatasetManifest, load_example


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    matched_ious: list[float] = field(default_factory=list)

    @property
    def precision(self) -> float:
        if self.tp + self.fp == 0:
            return 1.0 if self.fn == 0 else 0.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        if self.tp + self.fn == 0:
            return 1.0
        return self.tp / (self.tp + self.fn)


def match_detections(pred_boxes: np.ndarray, pred_scores: np.ndarray,
                     gt_boxes: np.ndarray, iou_threshold: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching: predictions in score-descending order each
    claim their best still-unmatched GT when that IoU meets the threshold."""
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    pred_scores = np.asarray(pred_scores, dtype=np.float64).ravel()
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    m = iou_matrix(pred_boxes, gt_boxes)
    free = np.ones(gt_boxes.shape[0], dtype=bool)
    tp = fp = 0
    ious: list[float] = []
    for i in np.argsort(-pred_scores, kind="stable"):
        row = np.where(free, m[i], -1.0)
        g = int(row.argmax()) if row.size else -1
        if g >= 0 and row[g] >= iou_threshold:
            free[g] = False
            tp += 1
            ious.append(float(row[g]))
        else:
            fp += 1
    return MatchResult(tp=tp, fp=fp, fn=int(free.sum()), matched_ious=ious)


def detection_metrics(results: list[MatchResult]) -> tuple[float, float, float]:
    """Macro (per-image) precision and recall, pooled mean IoU over matches."""
    if not results:
        raise ValueError("detection_metrics: no images")
    precision = float(np.mean([r.precision for r in results]))
    recall = float(np.mean([r.recall for r in results]))
    pooled = [v for r in results for v in r.matched_ious]
    mean_iou = float(np.mean(pooled)) if pooled else 0.0
    return precision, recall, mean_iou


def alignment_accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.size == 0 or scores.size != labels.size:
        raise ValueError("alignment_accuracy: empty or mismatched inputs")
    return float(np.mean((scores > threshold) == labels))


def iou_histogram(ious, bins: int = 20) -> dict:
    counts, edges = np.histogram(np.asarray(ious, dtype=np.float64),
                                 bins=bins, range=(0.0, 1.0))
    return {"bin_edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def write_histogram_csv(hist: dict, path) -> None:
    edges, counts = hist["bin_edges"], hist["counts"]
    with open(path, "w", encoding="utf-8") as f:
        f.write("bin_low,bin_high,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            f.write(f"{lo:.6f},{hi:.6f},{c}\n")


@dataclass
class MetricsReport:
    mean_precision: float
    mean_recall: float
    mean_iou: float
    alignment_accuracy: float | None
    per_image: list[dict]
    histogram: dict

    def to_json(self) -> dict:
        return {
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "mean_iou": self.mean_iou,
            "alignment_accuracy": self.alignment_accuracy,
            "per_image": self.per_image,
            "histogram": self.histogram,
        }


def _report(results: list[MatchResult], accuracy: float | None) -> MetricsReport:
    precision, recall, mean_iou = detection_metrics(results)
    per_image = [{"tp": r.tp, "fp": r.fp, "fn": r.fn,
                  "precision": r.precision, "recall": r.recall} for r in results]
    pooled = [v for r in results for v in r.matched_ious]
    return MetricsReport(precision, recall, mean_iou, accuracy, per_image,
                         iou_histogram(pooled))


def evaluate_testset(model: TextDetModel, manifest: DatasetManifest,
                     score_threshold: float = 0.5,
                     match_iou: float = 0.5) -> tuple[MetricsReport, MetricsReport]:
    """Returns (all-proposals report, aligned report). Alignment accuracy is
    attached to the first: it covers proposals whose best-IoU object (at or
    above ``match_iou``) supplies the label."""
    records = manifest.split("test")
    if not records:
        raise ValueError("manifest has an empty test split")

    all_results: list[MatchResult] = []
    aligned_results: list[MatchResult] = []
    acc_scores: list[float] = []
    acc_labels: list[bool] = []
    with T.no_grad():
        for rec in records:
            ex = load_example(manifest, rec)
            dets = detect(model, ex.image, ex.query.text)
            gt = np.stack([o.box for o in ex.objects]) if ex.objects else np.zeros((0, 4))
            boxes = np.array([d.box for d in dets]).reshape(-1, 4)
            conf = np.array([d.confidence for d in dets])
            all_results.append(match_detections(boxes, conf, gt, match_iou))

            gt_aligned = gt[np.asarray(ex.aligned, dtype=bool)] if len(ex.objects) else gt
            keep = [i for i, d in enumerate(dets) if d.score > score_threshold]
            aligned_results.append(match_detections(
                boxes[keep], np.array([dets[i].score for i in keep]), gt_aligned, match_iou))

            if dets and len(ex.objects):
                m = iou_matrix(boxes, gt)
                best = m.argmax(axis=1)
                for i, d in enumerate(dets):
                    if m[i, best[i]] >= match_iou:
                        acc_scores.append(d.alignment)
                        acc_labels.append(ex.aligned[int(best[i])])

    accuracy = alignment_accuracy(acc_scores, acc_labels) if acc_scores else None
    return _report(all_results, accuracy), _report(aligned_results, None)
