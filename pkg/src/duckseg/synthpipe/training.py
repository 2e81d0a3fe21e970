"""Training and distillation loops.

Both loops share one implementation so that distillation with weight 0 is
bit-identical to plain training at the same seed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..distill import cwd_loss
from ..gridmath import log_softmax_axis, make_rng, softmax_axis, split_rng
from ..losses import LossResult, get_loss
from ..metrics import ConfusionCounts, confusion_counts, report_from_counts
from .optim import OptimHyper, init_state, optimizer_step
from .scenes import AugmentConfig, Sample, augment
from .segnet import SegNet, predict_mask, segnet_backward, segnet_forward

log = logging.getLogger(__name__)

# Full-scale settings as published (detection / segmentation), kept for reference.
PUBLISHED_DETECTION = {"batch_size": 64, "epochs": 100, "lr": 0.01, "optimizer": "sgd", "split": 0.8}
PUBLISHED_SEGMENTATION = {"batch_size": 2, "epochs": 10000, "lr": 0.0001, "optimizer": "adamw", "split": 0.8}


@dataclass
class TrainConfig:
    batch_size: int = 2
    epochs: int = 30
    lr: float = 0.003
    optimizer: str = "adamw"
    split: float = 0.8  # train fraction, 4:1
    seed: int = 0
    loss: str = "lovasz"
    distill_weight: float = 1.0
    temperature: float = 1.0
    weight_decay: float = 0.01
    schedule: str = "cosine"  # "cosine" decays lr to 0 over all steps; "constant"
    # what cwd_loss compares: per-pixel log-softmax of the logits, or the raw logits
    distill_on: str = "log_probs"
    augment: bool = False
    augment_cfg: AugmentConfig = field(default_factory=AugmentConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment_cfg"] = asdict(self.augment_cfg)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "augment_cfg" in d and isinstance(d["augment_cfg"], dict):
            a = d["augment_cfg"]
            d["augment_cfg"] = AugmentConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in a.items()})
        return cls(**d)


def init_rng(seed: int) -> np.random.Generator:
    """Stream for parameter initialisation, disjoint from the training streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1 << 20,))))


def lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.schedule == "constant":
        return cfg.lr
    if cfg.schedule != "cosine":
        raise ValueError(f"unknown schedule {cfg.schedule!r}")
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / total_steps))


def split_data(data: Sequence[Sample], ratio: float):
    n = len(data)
    n_train = int(round(n * ratio))
    train, test = list(data[:n_train]), list(data[n_train:])
    if not train or not test:
        raise ValueError(f"split of {n} samples at {ratio} leaves an empty train or test set")
    return train, test


def evaluate(net: SegNet, samples: Sequence[Sample], num_classes: Optional[int] = None):
    """Report from confusion counts pooled over ``samples``."""
    c = num_classes or net.num_classes
    total = ConfusionCounts.zeros(c)
    for s in samples:
        total = total + confusion_counts(predict_mask(net, s.image), s.mask, c)
    return report_from_counts(total)


def _distill_term(t_logits, logits, cfg: TrainConfig):
    """CWD value and gradient with respect to the student logits.

    Raw logits carry a free per-pixel offset that the task loss never pins
    down, and the spatial softmax inside cwd_loss is not invariant to it; the
    per-pixel log-softmax removes that offset.
    """
    if cfg.distill_on == "logits":
        return cwd_loss(t_logits, logits, cfg.temperature)
    if cfg.distill_on != "log_probs":
        raise ValueError(f"unknown distill_on {cfg.distill_on!r}")
    kd = cwd_loss(log_softmax_axis(t_logits, 0), log_softmax_axis(logits, 0), cfg.temperature)
    p = softmax_axis(logits, 0)
    return LossResult(kd.value, kd.grad - p * kd.grad.sum(axis=0, keepdims=True))


def _fit(net: SegNet, data, cfg: TrainConfig, teacher: Optional[SegNet] = None):
    if not data:
        raise ValueError("no training data")
    train_set, test_set = split_data(data, cfg.split)
    net = net.copy()
    trail = []
    if cfg.epochs == 0:
        return net, trail
    task_loss = get_loss(cfg.loss)
    shuffle_rng, dropout_rng, aug_rng = split_rng(make_rng(cfg.seed), 3)
    steps_per_epoch = -(-len(train_set) // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    step = 0
    state = init_state(cfg.optimizer, net.params)
    use_teacher = teacher is not None and cfg.distill_weight != 0.0
    # the teacher is frozen and runs in inference mode, so its logits are fixed
    t_cache = {}
    if cfg.augment:
        test_set = [augment(s, None, training=False, cfg=cfg.augment_cfg) for s in test_set]

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_set))
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads = net.zeros_like()
            for i in batch:
                s = train_set[i]
                if cfg.augment:
                    s = augment(s, aug_rng, training=True, cfg=cfg.augment_cfg)
                logits, cache = segnet_forward(net, s.image, dropout_rng, training=True)
                res = task_loss(logits, s.mask)
                g = res.grad
                value = res.value
                if use_teacher:
                    if cfg.augment:
                        t_logits, _ = segnet_forward(teacher, s.image, training=False)
                    else:
                        if i not in t_cache:
                            t_cache[i] = segnet_forward(teacher, s.image, training=False)[0]
                        t_logits = t_cache[i]
                    kd = _distill_term(t_logits, logits, cfg)
                    g = g + cfg.distill_weight * kd.grad
                    value += cfg.distill_weight * kd.value
                running += value
                pg = segnet_backward(net, cache, g)
                for k in grads:
                    grads[k] += pg[k]
            for k in grads:
                grads[k] /= len(batch)
            hyper = OptimHyper(lr=lr_at(cfg, step, total_steps), weight_decay=cfg.weight_decay)
            net.params, state = optimizer_step(cfg.optimizer, net.params, grads, state, hyper)
            step += 1
        rep = evaluate(net, test_set)
        row = {"epoch": epoch + 1, "train_loss": running / len(train_set),
               "miou": rep.miou, "mdice": rep.mdice, "me": rep.me}
        log.info("epoch %d loss %.4f mIoU %.4f", row["epoch"], row["train_loss"], row["miou"])
        trail.append(row)
    return net, trail


def train(net: SegNet, data: Sequence[Sample], cfg: TrainConfig):
    """Train a copy of ``net``; returns ``(net, trail)`` with one test-set row per epoch."""
    return _fit(net, data, cfg)


def distill(teacher: SegNet, student: SegNet, data: Sequence[Sample], cfg: TrainConfig):
    """Train ``student`` on task loss + ``distill_weight`` * CWD against a frozen teacher's logits."""
    if teacher.num_classes != student.num_classes:
        raise ValueError("teacher and student must predict the same classes")
    return _fit(student, data, cfg, teacher=teacher)
