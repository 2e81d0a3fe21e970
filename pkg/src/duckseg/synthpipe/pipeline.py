"""Detect, then segment each detection, then paste into a full-frame mask."""
from __future__ import annotations

import numpy as np

from .detect import detect_blobs
from .segnet import STRIDE, SegNet, predict_mask


def _padded_crop(img, top, left, bottom, right):
    """Crop ``[top:bottom, left:right]`` and pad bottom/right up to a multiple
    of the network stride with the crop's median intensity."""
    crop = img[top:bottom, left:right]
    h, w = crop.shape
    ph = -h % STRIDE
    pw = -w % STRIDE
    if ph or pw:
        crop = np.pad(crop, ((0, ph), (0, pw)), constant_values=float(np.median(crop)))
    return crop


def run_pipeline(image, net: SegNet, intensity_threshold: float = 0.3, class_edges=(0.6,),
                 margin: int = 4, mode: str = "crop"):
    """Returns ``(boxes, mask)``.

    ``mode="crop"`` segments each box (grown by ``margin`` pixels of context)
    separately; ``mode="full"`` segments the whole frame once. Either way only
    labels inside detected boxes are written, boxes in descending score order
    so later boxes overwrite earlier ones where they overlap.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[0]
    h, w = img.shape
    boxes = detect_blobs(img, intensity_threshold, class_edges)
    mask = np.zeros((h, w), dtype=np.int64)
    if not boxes:
        return boxes, mask
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    if mode == "full":
        full = predict_mask(net, img[None])
    elif mode != "crop":
        raise ValueError(f"unknown mode {mode!r}")
    for i in order:
        b = boxes[i]
        x0, y0, x1, y1 = b.x, b.y, b.x + b.w, b.y + b.h
        if mode == "full":
            mask[y0:y1, x0:x1] = full[y0:y1, x0:x1]
            continue
        top, left = max(0, y0 - margin), max(0, x0 - margin)
        bottom, right = min(h, y1 + margin), min(w, x1 + margin)
        pred = predict_mask(net, _padded_crop(img, top, left, bottom, right)[None])
        mask[y0:y1, x0:x1] = pred[y0 - top : y1 - top, x0 - left : x1 - left]
    return boxes, mask
