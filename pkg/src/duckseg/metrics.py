"""Segmentation and detection metrics.

Segmentation scores come from one-vs-rest confusion counts per class.
Ratios whose denominator is zero follow the Jaccard convention: the class is
absent from both prediction and truth, so it scores 1 (and ME scores 0).

Detection AP is the plain, un-interpolated sum over the ranked list of
precision at k times the recall increment at k.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gridmath import ShapeError

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.tp)

    @property
    def total(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0])

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionCounts":
        z = np.zeros(num_classes, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy(), z.copy())


def confusion_counts(pred, truth, num_classes: int) -> ConfusionCounts:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    for name, m in (("pred", pred), ("truth", truth)):
        if m.size and (m.min() < 0 or m.max() >= num_classes):
            raise ValueError(f"{name} labels must lie in [0, {num_classes})")
    cm = np.bincount(
        truth.ravel().astype(np.int64) * num_classes + pred.ravel().astype(np.int64),
        minlength=num_classes * num_classes,
    ).reshape(num_classes, num_classes)
    tp = np.diag(cm).copy()
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num, den, empty_value):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.empty_like(num)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    out[~nz] = empty_value[~nz]
    return out


def precision_recall_f1(c: ConfusionCounts):
    """Per-class precision, recall and F1 arrays."""
    absent = (c.tp + c.fp + c.fn) == 0
    fallback = np.where(absent, 1.0, 0.0)
    p = _ratio(c.tp, c.tp + c.fp, fallback)
    r = _ratio(c.tp, c.tp + c.fn, fallback)
    f1 = _ratio(2 * p * r, p + r, np.zeros_like(p))
    return p, r, f1


def iou_dice(c: ConfusionCounts):
    ones = np.ones(c.num_classes)
    iou = _ratio(c.tp, c.tp + c.fp + c.fn, ones)
    dice = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, ones)
    return iou, dice


def misclassification_error(c: ConfusionCounts) -> float:
    """Foreground/background ME from class-0 counts.

    Background pixels agreeing are class 0's tp; foreground pixels agreeing
    (any nonzero class on both sides) are class 0's tn.
    """
    total = c.total
    if total == 0:
        return 0.0
    return 1.0 - float(c.tp[0] + c.tn[0]) / total


@dataclass
class MetricsReport:
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)
    f1: list = field(default_factory=list)
    iou: list = field(default_factory=list)
    dice: list = field(default_factory=list)
    me: Optional[float] = None
    miou: Optional[float] = None
    mdice: Optional[float] = None
    map_50: Optional[float] = None
    map_50_95: Optional[float] = None

    @property
    def mean_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def mean_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.f1))

    def to_dict(self) -> dict:
        return asdict(self)


def report_from_counts(c: ConfusionCounts) -> MetricsReport:
    p, r, f1 = precision_recall_f1(c)
    iou, dice = iou_dice(c)
    return MetricsReport(
        precision=p.tolist(),
        recall=r.tolist(),
        f1=f1.tolist(),
        iou=iou.tolist(),
        dice=dice.tolist(),
        me=misclassification_error(c),
        miou=float(np.mean(iou)),
        mdice=float(np.mean(dice)),
    )


def segmentation_report(pred, truth, num_classes: int) -> MetricsReport:
    return report_from_counts(confusion_counts(pred, truth, num_classes))


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float
    class_id: int = 0
    score: Optional[float] = None

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got {self.w}x{self.h}")

    def to_dict(self) -> dict:
        d = {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "class": self.class_id}
        if self.score is not None:
            d["score"] = self.score
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(d["x"], d["y"], d["w"], d["h"], d.get("class", 0), d.get("score"))


def box_iou(b1: Box, b2: Box) -> float:
    iw = min(b1.x + b1.w, b2.x + b2.w) - max(b1.x, b2.x)
    ih = min(b1.y + b1.h, b2.y + b2.h) - max(b1.y, b2.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (b1.w * b1.h + b2.w * b2.h - inter)


def _rank(preds: Sequence[Box]) -> list[int]:
    # stable: equal scores keep input order
    return sorted(range(len(preds)), key=lambda i: -(preds[i].score or 0.0))


def match_detections(preds: Sequence[Box], truths: Sequence[Box], iou_threshold: float = 0.5):
    """Greedy matching of score-ranked predictions to unmatched truths.

    Returns ``[(score, is_tp), ...]`` in rank order. Callers partition boxes
    by class beforehand.
    """
    used = [False] * len(truths)
    out = []
    for i in _rank(preds):
        p = preds[i]
        best, best_iou = -1, iou_threshold
        for j, t in enumerate(truths):
            if used[j]:
                continue
            v = box_iou(p, t)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            used[best] = True
        out.append((p.score if p.score is not None else 0.0, best >= 0))
    return out


def average_precision(ranked, n_truth: int) -> float:
    """``sum_k P(k) * (r(k) - r(k-1))`` over a list already in rank order."""
    if n_truth == 0:
        return 1.0 if len(ranked) == 0 else 0.0
    # every recall step is 1/n_truth, so divide once at the end (keeps AP <= 1)
    acc = 0.0
    tp = 0
    for k, (_, is_tp) in enumerate(ranked, start=1):
        if is_tp:
            tp += 1
            acc += tp / k
    return acc / n_truth


def _merge_ranked(lists):
    merged = [item for lst in lists for item in lst]
    order = sorted(range(len(merged)), key=lambda i: -merged[i][0])
    return [merged[i] for i in order]


def _as_images(boxes):
    if len(boxes) and isinstance(boxes[0], Box):
        return [list(boxes)]
    return [list(b) for b in boxes]


def class_ap(preds, truths, class_id: int, iou_threshold: float) -> float:
    """AP of one class over a set of images (per-image matching, global ranking)."""
    pi = _as_images(preds)
    ti = _as_images(truths)
    ranked_lists = []
    n_truth = 0
    for p, t in zip(pi, ti):
        pc = [b for b in p if b.class_id == class_id]
        tc = [b for b in t if b.class_id == class_id]
        n_truth += len(tc)
        ranked_lists.append(match_detections(pc, tc, iou_threshold))
    return average_precision(_merge_ranked(ranked_lists), n_truth)


def _classes(pi, ti, classes):
    if classes is not None:
        return list(classes)
    return sorted({b.class_id for img in ti for b in img} | {b.class_id for img in pi for b in img})


def mean_ap(preds, truths, thresholds: Sequence[float] = IOU_THRESHOLDS, classes=None):
    """mAP at each IoU threshold and the mean across thresholds.

    ``preds``/``truths`` are either one image's box list or a list of
    per-image box lists, aligned by index.
    """
    pi = _as_images(preds)
    ti = _as_images(truths)
    if len(pi) != len(ti):
        raise ValueError("prediction and truth image counts differ")
    cls = _classes(pi, ti, classes)
    per = {}
    for thr in thresholds:
        if not cls:
            per[thr] = 1.0
            continue
        per[thr] = float(np.mean([class_ap(pi, ti, c, thr) for c in cls]))
    return per, float(np.mean(list(per.values())))


def detection_report(preds, truths, iou_threshold: float = 0.5, classes=None) -> MetricsReport:
    """Per-class precision/recall/F1 at one IoU threshold, plus mAP@0.5 and mAP@0.5:0.95."""
    pi = _as_images(preds)
    ti = _as_images(truths)
    cls = _classes(pi, ti, classes)
    prec, rec, f1 = [], [], []
    for c in cls:
        tp = n_pred = n_truth = 0
        for p, t in zip(pi, ti):
            pc = [b for b in p if b.class_id == c]
            tc = [b for b in t if b.class_id == c]
            n_pred += len(pc)
            n_truth += len(tc)
            tp += sum(hit for _, hit in match_detections(pc, tc, iou_threshold))
        cc = ConfusionCounts(np.array([tp]), np.array([n_pred - tp]), np.array([n_truth - tp]), np.array([0]))
        p, r, f = precision_recall_f1(cc)
        prec.append(float(p[0]))
        rec.append(float(r[0]))
        f1.append(float(f[0]))
    per, rng_mean = mean_ap(pi, ti, IOU_THRESHOLDS, cls)
    return MetricsReport(precision=prec, recall=rec, f1=f1, map_50=per[0.5], map_50_95=rng_mean)
