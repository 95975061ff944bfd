"""Command-line surface: dataset generation, training, evaluation,
single-image inference, and the HTTP service."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="textdet",
                                description="text-conditioned object detection toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic shapes dataset")
    g.add_argument("--preset", choices=("paper", "desk"), required=True)
    g.add_argument("--out", required=True, metavar="DIR")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--counts", metavar="TR,VA,TE",
                   help="split sizes, defaults to the preset's")

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--data", required=True, metavar="DIR")
    t.add_argument("--preset", choices=("paper", "desk"), required=True)
    t.add_argument("--out", required=True, metavar="CKPT")
    t.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("--data", required=True, metavar="DIR")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True, metavar="PATH",
                   help="JSON report path; histograms (CSV + PNG) land beside it")

    i = sub.add_parser("infer", help="run one image + query through a checkpoint")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--query", required=True)
    i.add_argument("--threshold", type=float, default=0.5)
    i.add_argument("--top-k", type=int, default=20)
    i.add_argument("--draw", metavar="OUT.png", help="write the image with box overlays")

    s = sub.add_parser("serve", help="serve the inference HTTP API")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", metavar="DIR", help="dataset root for /examples")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--static", metavar="DIR", help="also serve a directory of UI assets")
    return p


def _cmd_gen_data(args) -> int:
    from .shapegen import GEN_PRESETS, SPLIT_PRESETS, generate_dataset

    counts = SPLIT_PRESETS[args.preset]
    if args.counts:
        parts = args.counts.split(",")
        if len(parts) != 3:
            raise ValueError(f"--counts expects TR,VA,TE, got {args.counts!r}")
        counts = tuple(int(v) for v in parts)
    manifest = generate_dataset(args.seed, counts, GEN_PRESETS[args.preset], args.out)
    print(f"wrote {len(manifest.records)} examples under {manifest.root}")
    return 0


def _cmd_train(args) -> int:
    from .plots import loss_curves
    from .shapegen import load_manifest
    from .trainer import train, train_preset

    manifest = load_manifest(args.data)
    cfg = train_preset(args.preset, seed=args.seed)
    _, rows = train(manifest, cfg, args.out, log=print)
    loss_curves(rows, str(args.out) + ".losses.png")
    print(f"checkpoint: {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluator import evaluate_testset, write_histogram_csv
    from .plots import iou_histogram_figure
    from .shapegen import load_manifest
    from .trainer import load_checkpoint

    manifest = load_manifest(args.data)
    model, _ = load_checkpoint(args.ckpt)
    report_all, report_aligned = evaluate_testset(model, manifest)

    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump({"all_proposals": report_all.to_json(),
                   "aligned": report_aligned.to_json()}, f, indent=2)
    stem = report_path.with_suffix("")
    for tag, rep in (("all", report_all), ("aligned", report_aligned)):
        write_histogram_csv(rep.histogram, f"{stem}_hist_{tag}.csv")
        iou_histogram_figure(rep.histogram, f"matched IoU ({tag})", f"{stem}_hist_{tag}.png")

    for name, rep in (("all proposals", report_all), ("aligned", report_aligned)):
        print(f"{name}: precision {rep.mean_precision:.3f} recall {rep.mean_recall:.3f} "
              f"mean IoU {rep.mean_iou:.3f}")
    acc = report_all.alignment_accuracy
    print(f"alignment accuracy: {'n/a' if acc is None else f'{acc:.3f}'}")
    print(f"report: {report_path}")
    return 0


def _cmd_infer(args) -> int:
    import numpy as np
    from PIL import Image

    from .alignment import InferenceConfig
    from .inference import draw_detections, infer
    from .trainer import load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    image = np.asarray(Image.open(args.image).convert("RGB"))
    cfg = InferenceConfig(score_threshold=args.threshold, top_k=args.top_k)
    response = infer(model, image, args.query, cfg)
    print(json.dumps(response))
    if args.draw:
        draw_detections(image, response["detections"], args.draw)
    return 0


def _cmd_serve(args) -> int:
    from .service import serve
    from .shapegen import load_manifest
    from .trainer import load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.data) if args.data else None
    static_dir = Path(args.static) if args.static else None
    serve(model, manifest, host=args.host, port=args.port, static_dir=static_dir)
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:  # single-line diagnostics, non-zero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
