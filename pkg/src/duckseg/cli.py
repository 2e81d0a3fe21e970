"""Command-line entry point: ``duckseg <command> ...``.

Commands: gen, eval-seg, eval-det, train, distill, pipeline. Every command
that writes files also writes ``manifest.json`` with the resolved config,
seed, toolkit version and sha256 digests of its outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .gridmath import make_rng
from .metrics import ConfusionCounts, MetricsReport, confusion_counts, detection_report, report_from_counts
from .report import render_report
from .synthpipe.pipeline import run_pipeline
from .synthpipe.scenes import Sample, SceneConfig, boxes_from_mask, gen_scene
from .synthpipe.segnet import SegNet
from .synthpipe.training import TrainConfig, distill, evaluate, init_rng, train

log = logging.getLogger("duckseg")

WIDTHS = {"teacher": (16, 32), "student": (4, 8)}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _scene_config(overrides: dict) -> SceneConfig:
    known = {f.name for f in fields(SceneConfig)}
    bad = set(overrides) - known
    if bad:
        raise UsageError(f"unknown scene config keys: {sorted(bad)}")
    vals = {k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v)
            for k, v in overrides.items()}
    return replace(SceneConfig(), **vals)


def _train_config(args, overrides: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    bad = set(overrides) - known
    if bad:
        raise UsageError(f"unknown train config keys: {sorted(bad)}")
    cfg = TrainConfig.from_dict({**TrainConfig().to_dict(), **overrides})
    flag_map = {"loss": "loss", "optimizer": "optimizer", "lr": "lr", "epochs": "epochs",
                "batch": "batch_size", "seed": "seed", "lam": "distill_weight",
                "temperature": "temperature"}
    upd = {dst: getattr(args, src) for src, dst in flag_map.items()
           if getattr(args, src, None) is not None}
    return replace(cfg, **upd)


def _stems(directory: Path, suffix: str):
    return sorted(p.stem for p in directory.glob(f"*{suffix}"))


def load_dataset(root) -> tuple[list[str], list[Sample]]:
    root = Path(root)
    names = _stems(root / "images", ".pgm")
    if not names:
        raise FileNotFoundError(f"no images under {root / 'images'}")
    samples = []
    for n in names:
        image = io.load_image(root / "images" / f"{n}.pgm")
        mask_path = root / "masks" / f"{n}.pgm"
        mask = io.load_mask(mask_path) if mask_path.exists() else np.zeros(image.shape[1:], dtype=np.int64)
        box_path = root / "boxes" / f"{n}.json"
        boxes = io.load_boxes(box_path)[1] if box_path.exists() else boxes_from_mask(mask)
        samples.append(Sample(image, mask, boxes))
    return names, samples


def _mask_files(path: Path):
    if path.is_dir():
        return {p.name: p for p in sorted(path.glob("*.pgm"))}
    return {path.name: path}


def _box_files(path: Path):
    if path.is_dir():
        return {p.name: p for p in sorted(path.glob("*.json"))}
    return {path.name: path}


def _write_report(out: Path, name: str, rows, kind: str, extra: dict | None = None):
    doc = render_report(rows, kind)
    files = []
    (out / f"{name}.json").write_text(doc.to_json(), encoding="utf-8")
    (out / f"{name}.txt").write_text(doc.to_text(), encoding="utf-8")
    files += [out / f"{name}.json", out / f"{name}.txt"]
    if extra is not None:
        (out / f"{name}_detail.json").write_text(json.dumps(extra, indent=2) + "\n", encoding="utf-8")
        files.append(out / f"{name}_detail.json")
    return doc, files


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args, conf):
    scene = _scene_config(conf.get("scene", {}))
    if args.imbalanced:
        scene = replace(scene, max_fg_fraction=0.05)
    if args.clean:
        scene = replace(scene, noise=0.0)
    out = Path(args.out)
    for sub in ("images", "masks", "boxes"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = make_rng(args.seed)
    files = []
    for i in range(args.count):
        s = gen_scene(scene, rng)
        name = f"scene_{i:04d}"
        io.save_image(out / "images" / f"{name}.pgm", s.image)
        io.save_mask(out / "masks" / f"{name}.pgm", s.mask)
        io.save_boxes(out / "boxes" / f"{name}.json", name, s.boxes)
        files += [out / "images" / f"{name}.pgm", out / "masks" / f"{name}.pgm", out / "boxes" / f"{name}.json"]
    config = {"scene": asdict(scene), "count": args.count}
    io.write_manifest(out, "gen", config, args.seed, files)
    print(f"wrote {args.count} scenes to {out}")


def cmd_eval_seg(args, conf):
    preds = _mask_files(Path(args.pred))
    truths = _mask_files(Path(args.truth))
    if Path(args.pred).is_file() and Path(args.truth).is_file():
        pairs = [(Path(args.pred), Path(args.truth))]
    else:
        missing = sorted(set(truths) - set(preds))
        if missing:
            raise FileNotFoundError(f"no prediction for {missing[0]} (and {len(missing) - 1} more)")
        pairs = [(preds[n], truths[n]) for n in sorted(truths)]
    if not pairs:
        raise FileNotFoundError("no masks to evaluate")
    # pooled confusion counts: micro over images, macro over classes
    total = ConfusionCounts.zeros(args.num_classes)
    for p, t in pairs:
        total = total + confusion_counts(io.load_mask(p), io.load_mask(t), args.num_classes)
    rep = report_from_counts(total)
    rows = [(args.name, rep)]
    doc = render_report(rows, "seg")
    print(doc.to_text(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _, files = _write_report(out, "report", rows, "seg", rep.to_dict())
        io.write_manifest(out, "eval-seg", {"num_classes": args.num_classes, "pred": str(args.pred),
                                            "truth": str(args.truth)}, None, files)


def cmd_eval_det(args, conf):
    preds = _box_files(Path(args.pred))
    truths = _box_files(Path(args.truth))
    if Path(args.pred).is_file() and Path(args.truth).is_file():
        names = [None]
        load = {None: (Path(args.pred), Path(args.truth))}
    else:
        names = sorted(truths)
        load = {n: (preds.get(n), truths[n]) for n in names}
    pi, ti = [], []
    for n in names:
        p, t = load[n]
        pi.append(io.load_boxes(p)[1] if p is not None else [])
        ti.append(io.load_boxes(t)[1])
    rep = detection_report(pi, ti, args.iou_threshold)
    rows = [(args.name, rep)]
    doc = render_report(rows, "det")
    print(doc.to_text(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _, files = _write_report(out, "report", rows, "det", rep.to_dict())
        io.write_manifest(out, "eval-det", {"iou_threshold": args.iou_threshold, "pred": str(args.pred),
                                            "truth": str(args.truth)}, None, files)


def _finish_training(out: Path, command: str, net, trail, cfg: TrainConfig, extra_config: dict):
    out.mkdir(parents=True, exist_ok=True)
    io.save_model(out / "model.bin", net, cfg.seed)
    (out / "trail.json").write_text(json.dumps(trail, indent=2) + "\n", encoding="utf-8")
    files = [out / "model.bin", out / "trail.json"]
    if trail:
        last = trail[-1]
        rep = MetricsReport(miou=last["miou"], mdice=last["mdice"], me=last["me"])
        _, more = _write_report(out, "report", [(command, rep)], "seg")
        files += more
        print(f"final test mIoU {last['miou']:.4f}  mDice {last['mdice']:.4f}  ME {last['me']:.4f}")
    io.write_manifest(out, command, {"train": cfg.to_dict(), **extra_config}, cfg.seed, files)


def cmd_train(args, conf):
    cfg = _train_config(args, conf.get("train", {}))
    _, data = load_dataset(args.data)
    net = SegNet.init(WIDTHS[args.width], init_rng(cfg.seed), num_classes=args.num_classes,
                      dropout_rate=args.dropout)
    net, trail = train(net, data, cfg)
    _finish_training(Path(args.out), "train", net, trail, cfg,
                     {"width": args.width, "dropout": args.dropout, "data": str(args.data)})


def cmd_distill(args, conf):
    cfg = _train_config(args, conf.get("train", {}))
    _, data = load_dataset(args.data)
    teacher = io.load_model(args.teacher)
    student = SegNet.init(WIDTHS[args.width], init_rng(cfg.seed), num_classes=teacher.num_classes,
                          dropout_rate=args.dropout)
    net, trail = distill(teacher, student, data, cfg)
    _finish_training(Path(args.out), "distill", net, trail, cfg,
                     {"width": args.width, "dropout": args.dropout, "data": str(args.data),
                      "teacher": io.file_digest(args.teacher)})


def cmd_pipeline(args, conf):
    net = io.load_model(args.model)
    names, data = load_dataset(args.data)
    out = Path(args.out)
    (out / "boxes").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    files = []
    pred_boxes, total = [], ConfusionCounts.zeros(net.num_classes)
    for name, s in zip(names, data):
        boxes, mask = run_pipeline(s.image, net, args.threshold, mode=args.mode)
        io.save_boxes(out / "boxes" / f"{name}.json", name, boxes)
        io.save_mask(out / "masks" / f"{name}.pgm", mask)
        files += [out / "boxes" / f"{name}.json", out / "masks" / f"{name}.pgm"]
        pred_boxes.append(boxes)
        total = total + confusion_counts(mask, s.mask, net.num_classes)
    if (Path(args.data) / "masks").is_dir():
        seg = report_from_counts(total)
        whole = evaluate(net, data)
        det = detection_report(pred_boxes, [s.boxes for s in data], 0.5)
        _, f1 = _write_report(out, "seg_report", [("pipeline", seg), ("whole-image", whole)], "seg")
        _, f2 = _write_report(out, "det_report", [("detector", det)], "det")
        files += f1 + f2
        print(render_report([("pipeline", seg), ("whole-image", whole)], "seg").to_text(), end="")
        print(render_report([("detector", det)], "det").to_text(), end="")
    io.write_manifest(out, "pipeline", {"threshold": args.threshold, "mode": args.mode,
                                        "model": io.file_digest(args.model), "data": str(args.data)},
                      None, files)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _train_flags(p):
    p.add_argument("--data", required=True, help="dataset directory written by `gen`")
    p.add_argument("--out", required=True)
    p.add_argument("--loss", choices=["ce", "focal", "dice", "lovasz"])
    p.add_argument("--optimizer", choices=["sgd", "adamw"])
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--width", choices=sorted(WIDTHS), default="teacher")
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--num-classes", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duckseg", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with 'scene' and/or 'train' overrides")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen", help="generate a synthetic scene dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--imbalanced", action="store_true", help="cap foreground at 5%% of pixels")
    p.add_argument("--clean", action="store_true", help="no pixel noise")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("eval-seg", help="segmentation metrics over mask files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--name", default="pred")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("eval-det", help="detection metrics over box files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--name", default="pred")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_det)

    p = sub.add_parser("train", help="train a segmentation network")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="distill a trained teacher into a student")
    _train_flags(p)
    p.add_argument("--teacher", required=True, help="model file from `train`")
    p.set_defaults(width="student", func=cmd_distill)

    p = sub.add_parser("pipeline", help="detect then segment every image of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.3)
    p.add_argument("--mode", choices=["crop", "full"], default="crop")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        conf = _load_config(args.config)
        args.func(args, conf)
    except UsageError as e:
        print(f"duckseg: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"duckseg {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
