"""Synthetic scene generator: colored shapes on black, queries, alignment flags.

Dataset layout on disk:
    <root>/images/<split>/<index>.png
    <root>/manifest.jsonl    one JSON object per line:
        {"image": ..., "split": ..., "objects": [{"kind", "color", "box"}],
         "query": ..., "aligned": [...]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import iou

SHAPE_KINDS = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue")
COLOR_RGB = {"red": (255, 0, 0), "green": (0, 255, 0), "blue": (0, 0, 255)}

# query grammar: [article] [color] shape-word
ARTICLES = ("the", "all")
SHAPE_WORDS = {"circle": "circle", "square": "square", "triangle": "triangle", None: "shape"}


class GenerationError(RuntimeError):
    """Raised when a scene or its query cannot be generated under the config."""


@dataclass
class ShapeObject:
    kind: str
    color: str
    box: np.ndarray  # [x1, y1, x2, y2], tight

    def to_json(self) -> dict:
        return {"kind": self.kind, "color": self.color, "box": [float(v) for v in self.box]}

    @classmethod
    def from_json(cls, d: dict) -> "ShapeObject":
        return cls(kind=d["kind"], color=d["color"], box=np.asarray(d["box"], dtype=np.float64))


@dataclass
class Query:
    text: str
    color_filter: str | None = None
    shape_filter: str | None = None


@dataclass
class SceneExample:
    image: np.ndarray | None  # H x W x 3 uint8, None until loaded
    objects: list[ShapeObject]
    query: Query
    aligned: list[bool]
    image_path: str | None = None


@dataclass
class GenConfig:
    image_size: int = 128
    side_range: tuple[int, int] = (12, 24)  # 0.75-1.5x the anchor size
    max_gt_iou: float = 0.3
    min_objects: int = 10
    max_objects: int = 20
    place_attempts: int = 1000
    query_attempts: int = 20


GEN_PRESETS = {
    "desk": GenConfig(image_size=128, side_range=(12, 24)),
    "paper": GenConfig(image_size=512, side_range=(48, 96)),
}

SPLIT_PRESETS = {"desk": (1500, 250, 250), "paper": (4000, 500, 500)}


def parse_query(text: str) -> Query:
    """Recover (color_filter, shape_filter) from a grammar-produced string."""
    color = None
    shape = None
    for tok in text.lower().split():
        if tok in ARTICLES:
            continue
        if tok in COLORS:
            color = tok
            continue
        word = tok[:-1] if tok.endswith("s") else tok
        if word == "shape":
            continue
        if word in SHAPE_KINDS:
            shape = word
            continue
        raise ValueError(f"token {tok!r} is not part of the query grammar")
    return Query(text=text, color_filter=color, shape_filter=shape)


def _sample_query(rng: np.random.Generator) -> Query:
    article = [None, "the", "all"][rng.integers(3)]
    color = [None, "red", "green", "blue"][rng.integers(4)]
    shape = [None, "circle", "square", "triangle"][rng.integers(4)]
    plural = bool(rng.integers(2))
    word = SHAPE_WORDS[shape] + ("s" if plural else "")
    parts = [p for p in (article, color, word) if p]
    return Query(text=" ".join(parts), color_filter=color, shape_filter=shape)


def generate_query(seed: int) -> Query:
    return _sample_query(np.random.default_rng(seed))


def label_alignment(objects: list[ShapeObject], query: Query) -> list[bool]:
    return [
        (query.color_filter is None or o.color == query.color_filter)
        and (query.shape_filter is None or o.kind == query.shape_filter)
        for o in objects
    ]


def _place_objects(rng: np.random.Generator, cfg: GenConfig) -> list[ShapeObject]:
    target = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objects: list[ShapeObject] = []
    lo, hi = cfg.side_range
    for _ in range(target):
        kind = SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))]
        color = COLORS[rng.integers(len(COLORS))]
        placed = False
        for _ in range(cfg.place_attempts):
            side = int(rng.integers(lo, hi + 1))
            x1 = int(rng.integers(0, cfg.image_size - side + 1))
            y1 = int(rng.integers(0, cfg.image_size - side + 1))
            box = np.array([x1, y1, x1 + side, y1 + side], dtype=np.float64)
            if all(iou(box, o.box) <= cfg.max_gt_iou for o in objects):
                objects.append(ShapeObject(kind=kind, color=color, box=box))
                placed = True
                break
        if not placed:
            continue  # shape dropped; count checked below
    if len(objects) < cfg.min_objects:
        raise GenerationError(
            f"placed only {len(objects)} of the minimum {cfg.min_objects} objects")
    return objects


def render_scene(objects: list[ShapeObject], image_size: int) -> np.ndarray:
    img = Image.new("RGB", (image_size, image_size), (0, 0, 0))
    draw = ImageDraw.Draw(img)
    for o in objects:
        x1, y1, x2, y2 = (int(v) for v in o.box)
        rgb = COLOR_RGB[o.color]
        if o.kind == "square":
            draw.rectangle([x1, y1, x2 - 1, y2 - 1], fill=rgb)
        elif o.kind == "circle":
            draw.ellipse([x1, y1, x2 - 1, y2 - 1], fill=rgb)
        else:  # upright isosceles triangle inscribed in the box
            apex = ((x1 + x2 - 1) / 2.0, y1)
            draw.polygon([apex, (x1, y2 - 1), (x2 - 1, y2 - 1)], fill=rgb)
    return np.asarray(img)


def generate_example(seed: int, cfg: GenConfig) -> SceneExample:
    """Deterministically generate one scene; resamples the query until at
    least one object is aligned with it."""
    rng = np.random.default_rng(seed)
    objects = _place_objects(rng, cfg)
    query = None
    aligned: list[bool] = []
    for _ in range(cfg.query_attempts):
        candidate = _sample_query(rng)
        flags = label_alignment(objects, candidate)
        if any(flags):
            query, aligned = candidate, flags
            break
    if query is None:
        raise GenerationError(f"no query matched any object after {cfg.query_attempts} attempts")
    image = render_scene(objects, cfg.image_size)
    return SceneExample(image=image, objects=objects, query=query, aligned=aligned)


@dataclass
class DatasetManifest:
    root: Path
    records: list[dict] = field(default_factory=list)

    def split(self, name: str) -> list[dict]:
        return [r for r in self.records if r["split"] == name]

    @property
    def path(self) -> Path:
        return self.root / "manifest.jsonl"


def generate_dataset(root_seed: int, counts: tuple[int, int, int], cfg: GenConfig,
                     out_dir: str | Path) -> DatasetManifest:
    """Generate train/val/test splits under ``out_dir`` and write the manifest.

    Per-example seeds are ``root_seed + global_index`` so regeneration with
    the same root seed is byte-identical.
    """
    root = Path(out_dir)
    manifest = DatasetManifest(root=root)
    global_idx = 0
    for split, count in zip(("train", "val", "test"), counts):
        img_dir = root / "images" / split
        img_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            ex = generate_example(root_seed + global_idx, cfg)
            global_idx += 1
            rel = f"images/{split}/{i}.png"
            try:
                Image.fromarray(ex.image).save(root / rel)
            except OSError as e:
                raise OSError(f"failed to write {root / rel}: {e}") from e
            manifest.records.append({
                "image": rel,
                "split": split,
                "objects": [o.to_json() for o in ex.objects],
                "query": ex.query.text,
                "aligned": list(ex.aligned),
            })
    try:
        with open(manifest.path, "w", encoding="utf-8") as f:
            for rec in manifest.records:
                f.write(json.dumps(rec) + "\n")
    except OSError as e:
        raise OSError(f"failed to write {manifest.path}: {e}") from e
    return manifest


def load_manifest(root: str | Path) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.jsonl"
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return DatasetManifest(root=root, records=records)


def load_example(manifest: DatasetManifest, record: dict, with_image: bool = True) -> SceneExample:
    image = None
    if with_image:
        img_path = manifest.root / record["image"]
        if not img_path.is_file():
            raise FileNotFoundError(f"image file missing: {img_path}")
        image = np.asarray(Image.open(img_path).convert("RGB"))
    return SceneExample(
        image=image,
        objects=[ShapeObject.from_json(o) for o in record["objects"]],
        query=parse_query(record["query"]),
        aligned=[bool(a) for a in record["aligned"]],
        image_path=record["image"],
    )
