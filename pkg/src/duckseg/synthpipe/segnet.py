"""Tiny encoder/decoder segmentation network with a hand-written backward pass.

Topology::

    conv3x3/2 -> relu -> conv3x3/2 -> relu          (encoder, total stride 4)
    transposed conv k/4 -> relu -> dropout -> 1x1   (decoder back to H x W)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..gridmath import (
    ConvSpec,
    ShapeError,
    conv2d,
    conv2d_backward,
    dropout,
    dropout_backward,
    transposed_conv2d,
    transposed_conv2d_backward,
)

ENC_SPEC = ConvSpec(stride=2, padding=1)
STRIDE = 4

PARAM_ORDER = ("w1", "b1", "w2", "b2", "wt", "bt", "wc", "bc")


@dataclass
class SegNet:
    widths: tuple
    num_classes: int = 3
    dropout_rate: float = 0.1
    decoder_kernel: int = 4
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, widths=(16, 32), rng=None, num_classes=3, dropout_rate=0.1, decoder_kernel=4, in_channels=1):
        c1, c2 = widths
        k = decoder_kernel
        if k < STRIDE or (k - STRIDE) % 2:
            raise ValueError("decoder kernel must be >= 4 and differ from 4 by an even number")

        def he(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        params = {
            "w1": he((c1, in_channels, 3, 3), in_channels * 9),
            "b1": np.zeros(c1),
            "w2": he((c2, c1, 3, 3), c1 * 9),
            "b2": np.zeros(c2),
            # transposed kernel layout (C_in, C_out, k, k); each output pixel
            # sees c2 * (k/4)^2 taps
            "wt": he((c2, c1, k, k), c2 * (k // STRIDE) ** 2),
            "bt": np.zeros(c1),
            "wc": he((num_classes, c1, 1, 1), c1),
            "bc": np.zeros(num_classes),
        }
        return cls(tuple(widths), num_classes, dropout_rate, k, params)

    @classmethod
    def teacher(cls, rng, **kw):
        return cls.init((16, 32), rng, **kw)

    @classmethod
    def student(cls, rng, **kw):
        return cls.init((4, 8), rng, **kw)

    @property
    def decoder_spec(self) -> ConvSpec:
        return ConvSpec(STRIDE, (self.decoder_kernel - STRIDE) // 2)

    def copy(self) -> "SegNet":
        return SegNet(self.widths, self.num_classes, self.dropout_rate, self.decoder_kernel,
                      {k: v.copy() for k, v in self.params.items()})

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for k in PARAM_ORDER:
            n = self.params[k].size
            self.params[k] = np.asarray(vec[i : i + n], dtype=np.float64).reshape(self.params[k].shape).copy()
            i += n


def flatten_grads(grads: dict) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in PARAM_ORDER])


def _relu(z):
    return np.maximum(z, 0.0)


def segnet_forward(net: SegNet, image, rng=None, training: bool = False):
    """Logits ``(C, H, W)`` plus the cache :func:`segnet_backward` needs."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    h, w = x.shape[1:]
    if h % STRIDE or w % STRIDE:
        raise ShapeError(f"input extents {h}x{w} must be divisible by {STRIDE}")
    p = net.params
    z1 = conv2d(x, p["w1"], ENC_SPEC) + p["b1"][:, None, None]
    a1 = _relu(z1)
    z2 = conv2d(a1, p["w2"], ENC_SPEC) + p["b2"][:, None, None]
    a2 = _relu(z2)
    z3 = transposed_conv2d(a2, p["wt"], net.decoder_spec, method="scatter") + p["bt"][:, None, None]
    a3 = _relu(z3)
    d, keep = dropout(a3, net.dropout_rate, rng, training)
    logits = np.tensordot(p["wc"][:, :, 0, 0], d, axes=([1], [0])) + p["bc"][:, None, None]
    # inference applies no dropout, so the backward pass must not rescale either
    rate = net.dropout_rate if training else 0.0
    cache = {"x": x, "z1": z1, "a1": a1, "z2": z2, "a2": a2, "z3": z3, "d": d, "keep": keep, "rate": rate,
             "shapes": {k: v.shape for k, v in p.items()}}
    return logits, cache


def segnet_backward(net: SegNet, cache: dict, loss_grad) -> dict:
    """Parameter gradients given ``dLoss/dlogits``."""
    p = net.params
    if cache.get("shapes") != {k: v.shape for k, v in p.items()}:
        raise ShapeError("cache was produced by a network with different parameter shapes")
    g = np.asarray(loss_grad, dtype=np.float64)
    expected = (net.num_classes,) + cache["x"].shape[1:]
    if g.shape != expected:
        raise ShapeError(f"loss gradient {g.shape} does not match logits {expected}")

    grads = {}
    grads["bc"] = g.sum(axis=(1, 2))
    grads["wc"] = np.tensordot(g, cache["d"], axes=([1, 2], [1, 2]))[:, :, None, None]
    gd = np.tensordot(p["wc"][:, :, 0, 0], g, axes=([0], [0]))
    gz3 = dropout_backward(gd, cache["keep"], cache["rate"]) * (cache["z3"] > 0)
    grads["bt"] = gz3.sum(axis=(1, 2))
    ga2, grads["wt"] = transposed_conv2d_backward(cache["a2"], p["wt"], net.decoder_spec, gz3)
    gz2 = ga2 * (cache["z2"] > 0)
    grads["b2"] = gz2.sum(axis=(1, 2))
    ga1, grads["w2"] = conv2d_backward(cache["a1"], p["w2"], ENC_SPEC, gz2)
    gz1 = ga1 * (cache["z1"] > 0)
    grads["b1"] = gz1.sum(axis=(1, 2))
    _, grads["w1"] = conv2d_backward(cache["x"], p["w1"], ENC_SPEC, gz1)
    return grads


def predict_mask(net: SegNet, image) -> np.ndarray:
    logits, _ = segnet_forward(net, image, training=False)
    return np.argmax(logits, axis=0).astype(np.int64)
