"""Single-image inference: proposals, alignment scoring against the query,
thresholded top-k selection, and box overlay rendering."""
from __future__ import annotations

import time

import numpy as np
from PIL import Image, ImageDraw

from . import tensor as T
from .alignment import AlignedDetection, InferenceConfig, select_topk
from .backbone import image_to_tensor
from .model import TextDetModel
from .rpn import extract_proposals


class ImageSizeError(ValueError):
    """Input raster does not match the model's configured image size."""


def detect(model: TextDetModel, image: np.ndarray, query: str) -> list[AlignedDetection]:
    """Score every surviving proposal against the query; no threshold or
    top-k applied. Zero-area proposals (boxes clipped away entirely) cannot
    be embedded and are dropped. Confidence-descending order."""
    image = np.asarray(image)
    s = model.cfg.image_size
    if image.shape[:2] != (s, s):
        raise ImageSizeError(f"model expects {s}x{s} input, got "
                             f"{image.shape[1]}x{image.shape[0]} (no resizing is done)")
    with T.no_grad():
        fm = model.backbone(image_to_tensor(image, dtype=model.dtype))
        pred = model.rpn(fm, model.grid)
        proposals = extract_proposals(pred, model.grid, s,
                                      conf_threshold=model.cfg.conf_threshold,
                                      nms_iou=model.cfg.nms_iou,
                                      max_proposals=model.cfg.max_proposals)
        proposals = [p for p in proposals
                     if p.box[2] > p.box[0] and p.box[3] > p.box[1]]
        if not proposals:
            return []
        emb = model.embed_proposals(fm, [p.box for p in proposals])
        text_emb = model.text_encoder.encode_text(query)
        align = model.align_head(emb, text_emb).data.reshape(-1)
    out = []
    for p, a in zip(proposals, align):
        a = float(a)
        out.append(AlignedDetection(box=p.box, confidence=p.confidence,
                                    alignment=a, score=p.confidence * a))
    return out


def detections_to_json(detections: list[AlignedDetection]) -> list[dict]:
    return [{"box": [float(v) for v in d.box], "confidence": d.confidence,
             "alignment": d.alignment, "score": d.score} for d in detections]


def infer(model: TextDetModel, image: np.ndarray, query: str,
          cfg: InferenceConfig | None = None) -> dict:
    """Full pipeline for one (image, query) pair; the response layout matches
    the HTTP service."""
    cfg = cfg or InferenceConfig()
    start = time.perf_counter()
    detections = select_topk(detect(model, image, query), cfg)
    elapsed = (time.perf_counter() - start) * 1000.0
    return {
        "detections": detections_to_json(detections),
        "image_size": model.cfg.image_size,
        "timing_ms": round(elapsed, 3),
    }


def draw_detections(image: np.ndarray, detections: list[dict] | list[AlignedDetection],
                    path) -> None:
    """Write a copy of the image with 2 px box outlines and score labels."""
    img = Image.fromarray(np.asarray(image)).convert("RGB")
    drw = ImageDraw.Draw(img)
    for d in detections:
        if isinstance(d, AlignedDetection):
            box, sc = d.box, d.score
        else:
            box, sc = d["box"], d["score"]
        x1, y1, x2, y2 = (float(v) for v in box)
        drw.rectangle([x1, y1, x2, y2], outline=(255, 255, 255), width=2)
        drw.text((x1 + 2, max(0.0, y1 - 10)), f"{sc:.3f}", fill=(255, 255, 255))
    img.save(path)
