"""Thresholded connected-component detector standing in for the detection stage."""
from __future__ import annotations

import numpy as np

from .. import _kernels
from ..metrics import Box

MIN_PIXELS = 4


def detect_blobs(image, intensity_threshold: float = 0.3, class_edges=(0.6,)) -> list[Box]:
    """Boxes around bright 4-connected components.

    Components under 4 pixels are dropped. The score is the component's mean
    intensity; the class is ``1 + number of class_edges below that mean``.
    Boxes come back in raster order of each component's first pixel.
    """
    if not 0.0 < intensity_threshold < 1.0:
        raise ValueError("intensity_threshold must be in (0, 1)")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[0]
    labels, n = _kernels.label_components(img > intensity_threshold)
    if n == 0:
        return []
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n + 1)
    sums = np.bincount(flat, weights=img.ravel(), minlength=n + 1)
    boxes = []
    for k in range(1, n + 1):
        if counts[k] < MIN_PIXELS:
            continue
        rows, cols = np.nonzero(labels == k)
        mean = float(sums[k] / counts[k])
        cls = 1 + int(np.searchsorted(np.asarray(class_edges), mean, side="right"))
        boxes.append(Box(int(cols.min()), int(rows.min()), int(cols.max() - cols.min() + 1),
                         int(rows.max() - rows.min() + 1), cls, mean))
    return boxes
