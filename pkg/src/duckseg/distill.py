"""Distillation losses: temperature-softened KD and channel-wise distillation.

Gradients are taken with respect to the student only; teacher activations
are treated as constants.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gridmath import ShapeError, as_grid, log_softmax_axis, softmax_axis
from .losses import LossResult


@dataclass
class ChannelAdapter:
    """1x1 convolution mapping student channels onto teacher channels."""

    kernel: np.ndarray  # (C_teacher, C_student, 1, 1)

    @classmethod
    def init(cls, c_teacher: int, c_student: int, rng: Optional[np.random.Generator] = None, scale: float = 0.1):
        if c_teacher == c_student:
            return cls(np.eye(c_teacher)[:, :, None, None].copy())
        if rng is None:
            raise ValueError("a random generator is needed when channel counts differ")
        k = rng.normal(0.0, scale, size=(c_teacher, c_student, 1, 1))
        return cls(k - k.mean())

    @property
    def matrix(self) -> np.ndarray:
        return self.kernel[:, :, 0, 0]


def soften_logits(logits, temperature: float, axis: int = 0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return softmax_axis(logits, axis=axis, temperature=temperature)


def kd_loss(student_logits, teacher_logits, temperature: float = 1.0) -> LossResult:
    """``T^2 * KL(soft(teacher) || soft(student))`` averaged over positions.

    Class axis is axis 0; every other axis indexes positions.
    """
    s = as_grid(student_logits)
    t = as_grid(teacher_logits)
    if s.shape != t.shape:
        raise ShapeError(f"student {s.shape} and teacher {t.shape} differ")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    npos = s.size // s.shape[0]
    log_qs = log_softmax_axis(s, 0, temperature)
    log_qt = log_softmax_axis(t, 0, temperature)
    qt = np.exp(log_qt)
    value = temperature**2 * float(np.sum(qt * (log_qt - log_qs))) / npos
    grad = temperature * (np.exp(log_qs) - qt) / npos
    return LossResult(max(value, 0.0), grad)


def channel_softmax(maps, temperature: float = 1.0) -> np.ndarray:
    """Softmax over the spatial positions of each channel of a ``(C,H,W)`` map."""
    y = as_grid(maps)
    if y.ndim != 3:
        raise ShapeError(f"expected (C,H,W), got {y.shape}")
    c = y.shape[0]
    return softmax_axis(y.reshape(c, -1), axis=1, temperature=temperature).reshape(y.shape)


def adapt_channels(student_maps, adapter: ChannelAdapter) -> np.ndarray:
    y = as_grid(student_maps)
    m = adapter.matrix
    if y.ndim != 3 or m.shape[1] != y.shape[0]:
        raise ShapeError(f"adapter expects {m.shape[1]} channels, got map {y.shape}")
    return np.tensordot(m, y, axes=([1], [0]))


def cwd_loss(teacher, student, temperature: float = 1.0, adapter: Optional[ChannelAdapter] = None) -> LossResult:
    """Channel-wise distillation loss.

    ``(T^2 / C) * sum_c KL(phi(teacher_c) || phi(student_c))`` where ``phi``
    is the spatial softmax at temperature ``T``. With an adapter the student
    map is first projected to the teacher's channel count; ``aux_grad`` then
    holds the adapter kernel gradient.
    """
    t = as_grid(teacher)
    s_raw = as_grid(student)
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if t.ndim != 3 or s_raw.ndim != 3:
        raise ShapeError("teacher and student must be (C,H,W)")
    if t.shape[1:] != s_raw.shape[1:]:
        raise ShapeError(f"spatial extents differ: {t.shape[1:]} vs {s_raw.shape[1:]}")
    if adapter is not None:
        s = adapt_channels(s_raw, adapter)
    elif s_raw.shape[0] != t.shape[0]:
        raise ShapeError(f"teacher has {t.shape[0]} channels, student {s_raw.shape[0]}; supply an adapter")
    else:
        s = s_raw
    c = t.shape[0]
    tf = t.reshape(c, -1)
    sf = s.reshape(c, -1)
    log_pt = log_softmax_axis(tf, 1, temperature)
    log_ps = log_softmax_axis(sf, 1, temperature)
    pt = np.exp(log_pt)
    value = temperature**2 / c * float(np.sum(pt * (log_pt - log_ps)))
    g = (temperature / c) * (np.exp(log_ps) - pt)
    g = g.reshape(s.shape)
    aux = None
    if adapter is not None:
        m = adapter.matrix
        aux = np.tensordot(g, s_raw, axes=([1, 2], [1, 2]))[:, :, None, None]
        g = np.tensordot(m, g, axes=([0], [0]))
    return LossResult(max(value, 0.0), g, aux)
