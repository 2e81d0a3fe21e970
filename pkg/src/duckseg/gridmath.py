"""Dense-array primitives: convolution, transposed convolution, softmax,
dropout, seeded randomness and a finite-difference gradient checker.

Grids are plain ``numpy.ndarray`` objects of dtype float64 with up to four
axes. Convolutions follow the cross-correlation convention (no kernel flip);
the flip appears only inside the zero-insertion path of
:func:`transposed_conv2d`, which keeps ``conv2d`` and ``transposed_conv2d``
exact adjoints of each other.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Raised when array extents are incompatible with an operation."""


@dataclass(frozen=True)
class ConvSpec:
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical streams for identical seeds on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child streams (SeedSequence spawning)."""
    return list(rng.spawn(n))


def as_grid(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim < 1 or a.ndim > 4:
        raise ShapeError(f"grids have 1-4 axes, got {a.ndim}")
    return a


def conv_output_extent(n: int, k: int, spec: ConvSpec) -> int:
    return (n + 2 * spec.padding - k) // spec.stride + 1


def conv2d(x, kernel, spec: ConvSpec = ConvSpec()) -> np.ndarray:
    """Zero-padded strided cross-correlation.

    ``x`` is ``(C_in, H, W)``, ``kernel`` is ``(C_out, C_in, kh, kw)``; the
    result is ``(C_out, H', W')`` with ``H' = floor((H + 2p - kh)/s) + 1``.
    """
    x = as_grid(x)
    kernel = as_grid(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"expected (C,H,W) input and 4-axis kernel, got {x.shape} and {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise ShapeError(f"kernel expects {kernel.shape[1]} input channels, input has {x.shape[0]}")
    kh, kw = kernel.shape[2:]
    if kh > x.shape[1] + 2 * spec.padding or kw > x.shape[2] + 2 * spec.padding:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {x.shape[1:]}")
    return _kernels.conv_forward(x, kernel, spec.stride, spec.padding)


def transposed_output_extent(n: int, k: int, spec: ConvSpec) -> int:
    return (n - 1) * spec.stride + k - 2 * spec.padding


def insert_zeros(x: np.ndarray, stride: int) -> np.ndarray:
    """Place ``stride - 1`` zeros between neighbouring elements of each map."""
    c, h, w = x.shape
    out = np.zeros((c, (h - 1) * stride + 1, (w - 1) * stride + 1))
    out[:, ::stride, ::stride] = x
    return out


def transposed_conv2d(x, kernel, spec: ConvSpec = ConvSpec(), method: str = "zero_insert") -> np.ndarray:
    """Fractionally-strided convolution.

    ``x`` is ``(C_in, h, w)``, ``kernel`` is ``(C_in, C_out, kh, kw)``. Output
    extents are ``(h - 1)*s + kh - 2p``.

    ``method="zero_insert"`` dilates the input with zeros and runs a stride-1
    convolution with the flipped, channel-swapped kernel and padding
    ``kh - 1 - p``. ``method="scatter"`` accumulates each input element times
    the kernel directly into the output; it computes the same map without the
    multiply-by-zero work and is what the decoder layers use.
    """
    x = as_grid(x)
    kernel = as_grid(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"expected (C,h,w) input and 4-axis kernel, got {x.shape} and {kernel.shape}")
    if kernel.shape[0] != x.shape[0]:
        raise ShapeError(f"kernel expects {kernel.shape[0]} input channels, input has {x.shape[0]}")
    kh, kw = kernel.shape[2:]
    oh = transposed_output_extent(x.shape[1], kh, spec)
    ow = transposed_output_extent(x.shape[2], kw, spec)
    if oh < 1 or ow < 1:
        raise ShapeError(f"transposed convolution output extent {oh}x{ow} < 1")

    if method == "scatter":
        return _kernels.tconv_scatter(x, kernel, spec.stride, spec.padding)
    if method != "zero_insert":
        raise ValueError(f"unknown method {method!r}")

    dilated = insert_zeros(x, spec.stride)
    flipped = kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    q = kh - 1 - spec.padding
    if q >= 0:
        return conv2d(dilated, flipped, ConvSpec(1, q))
    # padding beyond kh-1 crops the full-size result
    out = conv2d(dilated, flipped, ConvSpec(1, 0))
    return out[:, -q : out.shape[1] + q, -q : out.shape[2] + q]


def conv2d_backward(x, kernel, spec: ConvSpec, grad_out):
    """Gradients of :func:`conv2d` with respect to input and kernel."""
    kh, kw = kernel.shape[2:]
    gk = _kernels.conv_grad_weight(x, grad_out, spec.stride, spec.padding, kh, kw)
    # the input gradient scatters grad_out back through the kernel; the
    # padded border is dropped and rows the stride never reached stay zero
    full = _kernels.tconv_scatter(grad_out, kernel, spec.stride, 0)
    h, w = x.shape[1:]
    p = spec.padding
    gx = np.zeros((full.shape[0], h, w))
    part = full[:, p : p + h, p : p + w]
    gx[:, : part.shape[1], : part.shape[2]] = part
    return gx, gk


def transposed_conv2d_backward(x, kernel, spec: ConvSpec, grad_out):
    """Gradients of :func:`transposed_conv2d` with respect to input and kernel."""
    kh, kw = kernel.shape[2:]
    # the transposed convolution is the adjoint of conv2d with the same kernel
    # read as (C_out_conv, C_in_conv) = (C_in, C_out)
    gx = _kernels.conv_forward(grad_out, kernel, spec.stride, spec.padding)
    gk = _kernels.conv_grad_weight(grad_out, x, spec.stride, spec.padding, kh, kw)
    return gx, gk


def softmax_axis(x, axis: int = 0, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = as_grid(x) / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_axis(x, axis: int = 0, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = as_grid(x) / temperature
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def dropout(x, rate: float, rng: Optional[np.random.Generator], training: bool = True):
    """Inverted dropout. Returns ``(out, keep_mask)``; the mask is 0/1."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_grid(x)
    if not training or rate == 0.0:
        return x.copy(), np.ones_like(x)
    keep = (rng.random(x.shape) >= rate).astype(np.float64)
    return x * keep / (1.0 - rate), keep


def dropout_backward(grad, keep: np.ndarray, rate: float) -> np.ndarray:
    if rate == 0.0:
        return grad * keep
    return grad * keep / (1.0 - rate)


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    analytic_grad,
    x,
    h: float = 1e-5,
    coords: Optional[Iterable[int]] = None,
) -> float:
    """Max relative error between ``analytic_grad`` and central differences.

    Error per coordinate is ``|fd - an| / max(1, |fd|, |an|)``. ``coords``
    restricts the check to the given flat indices.
    """
    x = np.array(x, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    flat = x.ravel()
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        fd = (fp - fm) / (2.0 * h)
        err = abs(fd - g[i]) / max(1.0, abs(fd), abs(g[i]))
        worst = max(worst, err)
    return worst
