"""Shipped reference experiments at desk scale.

``python -m duckseg.synthpipe.experiments [losses|distill]`` prints
the final test mIoU of each arm. The same functions back the acceptance
tests, so the printed numbers are the regression values.
"""
from __future__ import annotations

import argparse
import json
from dataclasses import dataclass, replace

from ..gridmath import make_rng
from ..metrics import ConfusionCounts, confusion_counts, detection_report, report_from_counts
from .pipeline import run_pipeline
from .scenes import IMBALANCED, SceneConfig, gen_scene
from .segnet import SegNet
from .training import TrainConfig, distill, evaluate, init_rng, train

REFERENCE_SEED = 0


@dataclass(frozen=True)
class Reference:
    scene: SceneConfig = IMBALANCED
    num_scenes: int = 100
    train: TrainConfig = TrainConfig(epochs=30, lr=0.003, seed=REFERENCE_SEED)
    teacher_widths: tuple = (16, 32)
    student_widths: tuple = (4, 8)
    # task loss of both student arms; the teacher is the Lovász arm
    student_loss: str = "ce"


REFERENCE = Reference()


def reference_data(ref: Reference = REFERENCE):
    rng = make_rng(ref.train.seed)
    return [gen_scene(ref.scene, rng) for _ in range(ref.num_scenes)]


def _final(trail):
    return trail[-1]["miou"]


def loss_ablation(ref: Reference = REFERENCE, losses=("lovasz", "ce"), data=None):
    """Teacher-width net trained once per loss from the same init; returns
    ``{loss: (net, trail)}``."""
    data = reference_data(ref) if data is None else data
    init = SegNet.init(ref.teacher_widths, init_rng(ref.train.seed))
    return {name: train(init, data, replace(ref.train, loss=name)) for name in losses}


def distillation(ref: Reference = REFERENCE, teacher: SegNet | None = None, data=None, weight: float = 1.0):
    """Plain vs CWD-distilled student; returns ``{"teacher", "plain", "distilled"}``
    each as ``(net, trail)``. The teacher is the Lovász run of :func:`loss_ablation`
    unless given."""
    data = reference_data(ref) if data is None else data
    out = {}
    if teacher is None:
        out["teacher"] = loss_ablation(ref, ("lovasz",), data)["lovasz"]
        teacher = out["teacher"][0]
    student = SegNet.init(ref.student_widths, init_rng(ref.train.seed))
    cfg = replace(ref.train, loss=ref.student_loss)
    out["plain"] = train(student, data, cfg)
    out["distilled"] = distill(teacher, student, data, replace(cfg, distill_weight=weight))
    return out


def pipeline_eval(net: SegNet, samples, threshold: float = 0.3, mode: str = "crop"):
    """Detection report of the blob stage plus pipeline and whole-image
    segmentation reports over ``samples``."""
    total = ConfusionCounts.zeros(net.num_classes)
    preds = []
    for s in samples:
        boxes, mask = run_pipeline(s.image, net, threshold, mode=mode)
        preds.append(boxes)
        total = total + confusion_counts(mask, s.mask, net.num_classes)
    det = detection_report(preds, [s.boxes for s in samples], 0.5)
    return {"detection": det, "pipeline": report_from_counts(total), "whole": evaluate(net, samples)}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="python -m duckseg.synthpipe.experiments")
    p.add_argument("which", choices=("losses", "distill"), nargs="?", default="losses")
    args = p.parse_args(argv)
    if args.which == "losses":
        res = {k: round(_final(t), 4) for k, (_, t) in loss_ablation().items()}
    else:
        res = {k: round(_final(t), 4) for k, (_, t) in distillation().items()}
    print(json.dumps(res))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
