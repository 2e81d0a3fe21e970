"""Synthetic duck scenes and the training-time preprocessing chain."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .. import _kernels
from ..gridmath import ConvSpec, conv2d
from ..metrics import Box

SHARPEN_KERNEL = np.array([[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    num_classes: int = 3  # background, Shelduck, Ruddy Shelduck
    ducks: tuple = (1, 3)  # inclusive range of ducks per scene
    center_mean: tuple = (32.0, 32.0)  # (row, col)
    center_std: tuple = (12.0, 12.0)
    axes: tuple = (3, 6)  # inclusive range of ellipse semi-axes, pixels
    background: float = 0.2
    # peak intensity band per foreground class
    class_bands: tuple = ((0.45, 0.6), (0.7, 0.85))
    # intensity drop from blob centre to rim
    shading: float = 0.1
    noise: float = 0.05
    max_fg_fraction: Optional[float] = None
    min_gap: int = 2
    max_tries: int = 200

    def __post_init__(self):
        if self.num_classes != len(self.class_bands) + 1:
            raise ValueError("need one intensity band per foreground class")
        if self.ducks[0] < 0 or self.ducks[1] < self.ducks[0]:
            raise ValueError(f"bad ducks range {self.ducks}")
        if self.axes[0] < 1 or self.axes[1] < self.axes[0]:
            raise ValueError(f"bad axes range {self.axes}")
        # a blob of minimal size must fit strictly inside the frame
        need = 2 * self.axes[0] + 1
        if self.ducks[1] > 0 and (need > self.height - 2 or need > self.width - 2):
            raise ValueError("image too small for any in-bounds blob")


IMBALANCED = SceneConfig(max_fg_fraction=0.05)


@dataclass
class Sample:
    image: np.ndarray  # (1, H, W) in [0, 1]
    mask: np.ndarray  # (H, W) int64 class indices
    boxes: list = field(default_factory=list)

    def copy(self) -> "Sample":
        return Sample(self.image.copy(), self.mask.copy(), list(self.boxes))


def _ellipse(cy, cx, ry, rx, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return r2 <= 1.0, r2


def _tight_box(region: np.ndarray, class_id: int) -> Box:
    rows = np.flatnonzero(region.any(axis=1))
    cols = np.flatnonzero(region.any(axis=0))
    return Box(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1), int(class_id))


def _dilate(region: np.ndarray, r: int) -> np.ndarray:
    out = region.copy()
    h, w = region.shape
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ys = slice(max(dy, 0), h + min(dy, 0))
            yd = slice(max(-dy, 0), h + min(-dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            xd = slice(max(-dx, 0), w + min(-dx, 0))
            out[yd, xd] |= region[ys, xs]
    return out


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so PGM round trips are lossless."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def gen_scene(cfg: SceneConfig, rng: np.random.Generator) -> Sample:
    h, w = cfg.height, cfg.width
    n = int(rng.integers(cfg.ducks[0], cfg.ducks[1] + 1))
    mask = np.zeros((h, w), dtype=np.int64)
    image = np.full((h, w), cfg.background)
    occupied = np.zeros((h, w), dtype=bool)
    blobs = []
    fg_cap = None if cfg.max_fg_fraction is None else cfg.max_fg_fraction * h * w
    for _ in range(n):
        cls = int(rng.integers(1, cfg.num_classes))
        lo, hi = cfg.class_bands[cls - 1]
        peak = float(rng.uniform(lo, hi))
        for _try in range(cfg.max_tries):
            cy = int(round(rng.normal(cfg.center_mean[0], cfg.center_std[0])))
            cx = int(round(rng.normal(cfg.center_mean[1], cfg.center_std[1])))
            ry = int(rng.integers(cfg.axes[0], cfg.axes[1] + 1))
            rx = int(rng.integers(cfg.axes[0], cfg.axes[1] + 1))
            # box strictly inside the frame: never touching row/col 0 or the last
            if cy - ry < 1 or cx - rx < 1 or cy + ry > h - 2 or cx + rx > w - 2:
                continue
            region, r2 = _ellipse(cy, cx, ry, rx, h, w)
            if (_dilate(region, cfg.min_gap) & occupied).any():
                continue
            if fg_cap is not None and occupied.sum() + region.sum() > fg_cap:
                continue
            occupied |= region
            mask[region] = cls
            image[region] = peak - cfg.shading * r2[region]
            blobs.append((region, cls, (cy, cx)))
            break
    if cfg.noise > 0:
        image = image + rng.normal(0.0, cfg.noise, size=(h, w))
    image = quantize(image)
    boxes = [_tight_box(region, cls) for region, cls, _ in sorted(blobs, key=lambda b: int(np.argmax(b[0])))]
    return Sample(image[None], mask, boxes)


def blob_centers(cfg: SceneConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    """Centres (row, col) of every blob over ``count`` generated scenes."""
    out = []
    for _ in range(count):
        s = gen_scene(cfg, rng)
        for b in s.boxes:
            out.append((b.y + (b.h - 1) / 2.0, b.x + (b.w - 1) / 2.0))
    return np.array(out).reshape(-1, 2)


def boxes_from_mask(mask: np.ndarray) -> list[Box]:
    """Tight box per 4-connected foreground component, raster order.

    A component's class is its most frequent label.
    """
    labels, n = _kernels.label_components(np.asarray(mask) > 0)
    boxes = []
    for k in range(1, n + 1):
        region = labels == k
        cls = int(np.bincount(mask[region]).argmax())
        boxes.append(_tight_box(region, cls))
    return boxes


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def sharpen(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    out = conv2d(img, SHARPEN_KERNEL[None, None], ConvSpec(1, 1))
    out = np.clip(out, 0.0, 1.0)
    return out[0] if squeeze else out


def _src_coords(n_out, n_in):
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize_image(image: np.ndarray, hw) -> np.ndarray:
    """Bilinear resize of a ``(C,H,W)`` image, half-pixel centres, edge clamp."""
    c, h, w = image.shape
    oh, ow = hw
    if (oh, ow) == (h, w):
        return image.copy()
    ys = np.clip(_src_coords(oh, h), 0, h - 1)
    xs = np.clip(_src_coords(ow, w), 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = image[:, y0][:, :, x0]
    b = image[:, y0][:, :, x1]
    cc = image[:, y1][:, :, x0]
    d = image[:, y1][:, :, x1]
    top = a * (1 - fx) + b * fx
    bot = cc * (1 - fx) + d * fx
    return top * (1 - fy) + bot * fy


def resize_mask(mask: np.ndarray, hw) -> np.ndarray:
    h, w = mask.shape
    oh, ow = hw
    ys = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(int), h - 1)
    xs = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(int), w - 1)
    return mask[ys][:, xs]


def resize(sample: Sample, hw) -> Sample:
    mask = resize_mask(sample.mask, hw)
    return Sample(quantize(resize_image(sample.image, hw)), mask, boxes_from_mask(mask))


def crop(sample: Sample, top: int, left: int, hw) -> Sample:
    ch, cw = hw
    _, h, w = sample.image.shape
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    if top < 0 or left < 0 or top + ch > h or left + cw > w:
        raise ValueError("crop window outside image")
    mask = sample.mask[top : top + ch, left : left + cw].copy()
    if (ch, cw) == (h, w):
        return Sample(sample.image.copy(), mask, list(sample.boxes))
    return Sample(sample.image[:, top : top + ch, left : left + cw].copy(), mask, boxes_from_mask(mask))


def hflip(sample: Sample) -> Sample:
    w = sample.mask.shape[1]
    boxes = [replace(b, x=w - b.x - b.w) for b in sample.boxes]
    return Sample(sample.image[:, :, ::-1].copy(), sample.mask[:, ::-1].copy(), boxes)


@dataclass(frozen=True)
class AugmentConfig:
    # desk-scale stand-ins for "unify to 2048x512, random 512x512 crop"
    resize_hw: Optional[tuple] = (64, 128)
    crop_hw: tuple = (64, 64)
    flip_p: float = 0.5
    sharpen_p: float = 0.1


def augment(sample: Sample, rng: np.random.Generator, training: bool = True, cfg: AugmentConfig = AugmentConfig()) -> Sample:
    """resize -> random crop -> horizontal flip (p) -> sharpen (p) when training;
    resize only otherwise. Four random draws are made on every training call."""
    s = resize(sample, cfg.resize_hw) if cfg.resize_hw is not None else sample.copy()
    if not training:
        return s
    _, h, w = s.image.shape
    ch, cw = cfg.crop_hw
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    do_flip = rng.random() < cfg.flip_p
    do_sharpen = rng.random() < cfg.sharpen_p
    s = crop(s, top, left, (ch, cw))
    if do_flip:
        s = hflip(s)
    if do_sharpen:
        s = Sample(sharpen(s.image), s.mask, s.boxes)
    return s
