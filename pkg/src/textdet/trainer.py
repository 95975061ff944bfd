"""Joint training of the RPN and alignment head: SGD with momentum and
step-decayed learning rate, per-epoch loss logging, and checkpointing."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from decimal import Decimal
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .alignment import align_loss
from .backbone import image_to_tensor
from .model import ModelConfig, TextDetModel, model_preset
from .nn import decays
from .rpn import NEGATIVE, POSITIVE, assign_anchor_labels, rpn_loss, sample_minibatch
from .shapegen import DatasetManifest, SceneExample, load_example
from .text_encoder import Vocabulary

CHECKPOINT_MAGIC = b"TDCK1\n"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic, truncated file, or undecodable header."""


class CheckpointVersionError(CheckpointError):
    """Header version not supported by this code."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor's shape disagrees with the model configuration."""


class TrainingDivergedError(RuntimeError):
    """A non-finite loss appeared; reports the offending epoch and batch."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-5
    lr_step: int = 3
    lr_gamma: float = 0.9
    seed: int = 0
    preset: str = "paper"


TRAIN_PRESETS = {
    "paper": TrainConfig(batch_size=32, preset="paper"),
    # the small model needs a much hotter base rate than the paper scale:
    # the alignment head starts from a zero output layer and only begins
    # separating shape kinds after several epochs, so the budget left for
    # that phase decides final accuracy
    "desk": TrainConfig(batch_size=16, lr=6e-2, preset="desk"),
}


def train_preset(name: str, seed: int = 0) -> TrainConfig:
    if name not in TRAIN_PRESETS:
        raise ValueError(f"unknown train preset {name!r} (choose from {sorted(TRAIN_PRESETS)})")
    cfg = TrainConfig(**asdict(TRAIN_PRESETS[name]))
    cfg.seed = seed
    return cfg


@dataclass
class LossLogRow:
    epoch: int  # 1-based in the log
    train_rpn: float
    train_align: float
    val_rpn: float
    val_align: float


def write_losslog(rows: list[LossLogRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,train_rpn,train_align,val_rpn,val_align\n")
        for r in rows:
            f.write(f"{r.epoch},{r.train_rpn:.6f},{r.train_align:.6f},"
                    f"{r.val_rpn:.6f},{r.val_align:.6f}\n")


def read_losslog(path: str | Path) -> list[LossLogRow]:
    rows = []
    with open(path, encoding="utf-8") as f:
        next(f)  # header
        for line in f:
            e, tr, ta, vr, va = line.strip().split(",")
            rows.append(LossLogRow(int(e), float(tr), float(ta), float(vr), float(va)))
    return rows


def derive_seed(*parts: int) -> int:
    """Stable per-(run, stream, epoch, example) RNG seed."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def step_lr(epoch: int, base_lr: float, step: int, gamma: float) -> float:
    # Decimal keeps scheduled rates on their decimal definitions; binary
    # base_lr * gamma**k drifts an ulp (1e-2 * 0.9 != 9e-3).
    k = epoch // step
    return float(Decimal(repr(base_lr)) * Decimal(repr(gamma)) ** k)


def sgd_update(params: dict[str, T.Tensor], velocity: dict[str, np.ndarray],
               lr: float, momentum: float, weight_decay: float,
               grad_scale: float = 1.0) -> None:
    """g = scaled grad (+ decay for weights); v = momentum v + g; w -= lr v.

    Parameters whose grad is unset this step are left untouched.
    """
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad * grad_scale
        if weight_decay and decays(name):
            g = g + weight_decay * p.data
        v = velocity[name]
        v *= momentum
        v += g
        p.data -= (lr * v).astype(p.dtype, copy=False)


@dataclass
class StepResult:
    rpn_loss: float
    align_loss: float | None  # None when the example had no positive anchors
    skipped: bool = False     # no usable anchors at all


def train_step(model: TextDetModel, example: SceneExample, sample_seed: int,
               backward: bool = True) -> StepResult:
    """One example's joint forward (and optional backward) pass.

    Alignment trains on the positive anchors' own boxes, labeled by each
    anchor's matched object's alignment flag. With zero positive anchors the
    step is classification-only over all negatives; with no usable anchors
    at all it is skipped.
    """
    fm = model.backbone(image_to_tensor(example.image, dtype=model.dtype))
    pred = model.rpn(fm, model.grid)
    gt = np.stack([o.box for o in example.objects]) if example.objects else np.zeros((0, 4))
    labels = assign_anchor_labels(model.grid, gt, model.cfg.rpn_loss)
    sample = sample_minibatch(labels, sample_seed)
    if sample.size == 0:
        negatives = np.flatnonzero(labels.label == NEGATIVE)
        if negatives.size == 0:
            return StepResult(rpn_loss=0.0, align_loss=None, skipped=True)
        sample = negatives
    rloss = rpn_loss(pred, labels, sample, model.cfg.rpn_loss)

    pos = sample[labels.label[sample] == POSITIVE]
    aloss = None
    total = rloss
    if pos.size:
        anchor_boxes = model.grid.anchors_xyxy[pos]
        emb = model.embed_proposals(fm, anchor_boxes)
        text_emb = model.text_encoder.encode_text(example.query.text)
        scores = model.align_head(emb, text_emb)
        flags = np.array([example.aligned[g] for g in labels.matched_gt[pos]], dtype=np.float64)
        aloss = align_loss(scores, flags)
        total = T.add(rloss, aloss)
    if backward:
        T.backward(total)
    return StepResult(rpn_loss=float(rloss.data),
                      align_loss=None if aloss is None else float(aloss.data))


def _epoch_losses(results: list[StepResult]) -> tuple[float, float]:
    rpn_vals = [r.rpn_loss for r in results if not r.skipped]
    align_vals = [r.align_loss for r in results if r.align_loss is not None]
    rpn_mean = float(np.mean(rpn_vals)) if rpn_vals else float("nan")
    align_mean = float(np.mean(align_vals)) if align_vals else float("nan")
    return rpn_mean, align_mean


def train(manifest: DatasetManifest, cfg: TrainConfig, ckpt_path: str | Path,
          model_cfg: ModelConfig | None = None, losslog_path: str | Path | None = None,
          log: Callable[[str], None] | None = None) -> tuple[TextDetModel, list[LossLogRow]]:
    """Run the full optimization loop; checkpoints and the loss log are
    rewritten after every epoch. Deterministic for a fixed seed."""
    train_records = manifest.split("train")
    val_records = manifest.split("val")
    if not train_records or not val_records:
        raise ValueError("manifest must contain non-empty train and val splits")
    if model_cfg is None:
        model_cfg = model_preset(cfg.preset)
    if losslog_path is None:
        losslog_path = Path(str(ckpt_path) + ".losslog.csv")

    model = TextDetModel(model_cfg, seed=cfg.seed)
    params = model.named_parameters()
    velocity = {name: np.zeros_like(p.data) for name, p in params.items()}
    cache: dict[int, SceneExample] = {}

    def fetch(records, i) -> SceneExample:
        key = id(records[i])
        if key not in cache:
            cache[key] = load_example(manifest, records[i])
        return cache[key]

    rows: list[LossLogRow] = []
    for epoch in range(cfg.epochs):
        lr = step_lr(epoch, cfg.lr, cfg.lr_step, cfg.lr_gamma)
        order = np.random.default_rng(derive_seed(cfg.seed, 2, epoch)).permutation(len(train_records))
        train_results: list[StepResult] = []
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            T.zero_grads(params.values())
            contributed = 0
            for i in batch:
                res = train_step(model, fetch(train_records, int(i)),
                                 derive_seed(cfg.seed, 0, epoch, int(i)))
                train_results.append(res)
                if res.skipped:
                    continue
                total = res.rpn_loss + (res.align_loss or 0.0)
                if not np.isfinite(total):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch + 1}, batch {b0 // cfg.batch_size + 1}")
                contributed += 1
            if contributed:
                sgd_update(params, velocity, lr, cfg.momentum, cfg.weight_decay,
                           grad_scale=1.0 / contributed)

        with T.no_grad():
            val_results = [
                train_step(model, fetch(val_records, i),
                           derive_seed(cfg.seed, 1, epoch, i), backward=False)
                for i in range(len(val_records))
            ]
        tr_r, tr_a = _epoch_losses(train_results)
        va_r, va_a = _epoch_losses(val_results)
        rows.append(LossLogRow(epoch + 1, tr_r, tr_a, va_r, va_a))
        write_losslog(rows, losslog_path)
        save_checkpoint(ckpt_path, model, metadata={
            "epoch": epoch + 1,
            "seed": cfg.seed,
            "train_config": asdict(cfg),
            "losses": {"train_rpn": tr_r, "train_align": tr_a,
                       "val_rpn": va_r, "val_align": va_a},
        })
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs} lr {lr:.5f} "
                f"train rpn {tr_r:.4f} align {tr_a:.4f} val rpn {va_r:.4f} align {va_a:.4f}")
    return model, rows


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32-LE header length, UTF-8 JSON header, then a
# contiguous little-endian float32 blob addressed by the header's directory

def save_checkpoint(path: str | Path, model: TextDetModel, metadata: dict | None = None) -> None:
    blob = bytearray()
    directory: dict[str, dict] = {}
    for name, p in model.named_parameters().items():
        raw = np.ascontiguousarray(p.data.astype("<f4", copy=False)).tobytes()
        directory[name] = {"dtype": "float32", "shape": list(p.shape),
                           "offset": len(blob), "length": len(raw)}
        blob += raw
    header = json.dumps({
        "version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_json(),
        "vocabulary": list(model.vocab.tokens),
        "tensors": directory,
        "metadata": metadata or {},
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(bytes(blob))


def load_checkpoint(path: str | Path,
                    expected_config: ModelConfig | None = None) -> tuple[TextDetModel, dict]:
    """Rebuild the model from the embedded configuration (or validate against
    ``expected_config``) and restore every tensor bit-exactly."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointFormatError(f"{path} is not a checkpoint (bad magic)")
    hlen = struct.unpack_from("<I", raw, len(CHECKPOINT_MAGIC))[0]
    hstart = len(CHECKPOINT_MAGIC) + 4
    if hstart + hlen > len(raw):
        raise CheckpointFormatError(f"{path} is truncated inside the header")
    try:
        header = json.loads(raw[hstart:hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path} has an undecodable header: {e}") from e
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path} has version {header.get('version')!r}, expected {CHECKPOINT_VERSION}")

    cfg = expected_config or ModelConfig.from_json(header["model_config"])
    vocab = Vocabulary(tokens=tuple(header["vocabulary"]))
    model = TextDetModel(cfg, vocab=vocab, seed=0)
    blob_start = hstart + hlen
    directory = header["tensors"]
    for name, p in model.named_parameters().items():
        entry = directory.get(name)
        if entry is None:
            raise CheckpointFormatError(f"{path} is missing tensor {name!r}")
        if tuple(entry["shape"]) != p.shape:
            raise CheckpointShapeError(
                f"tensor {name!r} has shape {tuple(entry['shape'])}, model expects {p.shape}")
        lo = blob_start + entry["offset"]
        hi = lo + entry["length"]
        if hi > len(raw) or entry["length"] != p.data.size * 4:
            raise CheckpointFormatError(f"{path} is truncated inside tensor {name!r}")
        p.data[...] = np.frombuffer(raw[lo:hi], dtype="<f4").reshape(p.shape)
    return model, header.get("metadata", {})
