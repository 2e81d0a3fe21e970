import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duckseg import _kernels
from duckseg.gridmath import (
    ConvSpec,
    ShapeError,
    conv2d,
    conv2d_backward,
    dropout,
    dropout_backward,
    finite_diff_check,
    insert_zeros,
    log_softmax_axis,
    make_rng,
    softmax_axis,
    split_rng,
    transposed_conv2d,
    transposed_conv2d_backward,
)

from .oracles import conv_matrix, conv_oracle


# --- conv2d -----------------------------------------------------------------

def test_conv_identity_kernel():
    x = make_rng(0).random((1, 3, 3))
    np.testing.assert_array_equal(conv2d(x, np.ones((1, 1, 1, 1))), x)


def test_conv_zero_input():
    k = make_rng(1).normal(size=(2, 1, 3, 3))
    out = conv2d(np.zeros((1, 5, 5)), k, ConvSpec(1, 1))
    assert out.shape == (2, 5, 5)
    assert not out.any()


def test_conv_stride2_matches_explicit_sum():
    rng = make_rng(2)
    x = rng.random((1, 4, 4))
    k = rng.random((1, 1, 2, 2))
    out = conv2d(x, k, ConvSpec(2, 0))
    ref = conv_oracle(x, k, 2, 0)
    assert out.shape == (1, 2, 2)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-15)


@pytest.mark.parametrize("s,p,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (3, 2, 5), (2, 0, 4)])
def test_conv_matches_oracle_on_integers(s, p, k):
    rng = make_rng(10 + s * 7 + p)
    x = rng.integers(-4, 5, size=(2, 9, 8)).astype(float)
    w = rng.integers(-3, 4, size=(3, 2, k, k)).astype(float)
    np.testing.assert_array_equal(conv2d(x, w, ConvSpec(s, p)), conv_oracle(x, w, s, p))


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ShapeError):
        conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 2, 2)))


def test_conv_kernel_too_large_rejected():
    with pytest.raises(ShapeError):
        conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)))


def test_convspec_validation():
    with pytest.raises(ValueError):
        ConvSpec(0, 0)
    with pytest.raises(ValueError):
        ConvSpec(1, -1)


# --- transposed convolution --------------------------------------------------

def test_tconv_single_element_broadcast():
    k = make_rng(3).random((1, 1, 2, 2))
    out = transposed_conv2d(np.full((1, 1, 1), 2.5), k)
    np.testing.assert_allclose(out[0], 2.5 * k[0, 0], rtol=0, atol=1e-15)


@pytest.mark.parametrize("s,p,k,h", [(1, 0, 2, 3), (2, 0, 2, 3), (2, 1, 3, 4), (4, 0, 4, 5), (3, 3, 2, 4)])
def test_tconv_zero_input_shape(s, p, k, h):
    spec = ConvSpec(s, p)
    expected = (h - 1) * s + k - 2 * p
    if expected < 1:
        with pytest.raises(ShapeError):
            transposed_conv2d(np.zeros((1, h, h)), np.ones((1, 2, k, k)), spec)
        return
    out = transposed_conv2d(np.zeros((1, h, h)), np.ones((1, 2, k, k)), spec)
    assert out.shape == (2, expected, expected)
    assert not out.any()


def test_tconv_stride2_matches_matrix_transpose():
    rng = make_rng(4)
    x = rng.integers(-5, 6, size=(1, 3, 3)).astype(float)
    k = rng.integers(-5, 6, size=(1, 1, 2, 2)).astype(float)
    spec = ConvSpec(2, 0)
    out = transposed_conv2d(x, k, spec)
    m = conv_matrix(k, (1, 6, 6), 2, 0)
    np.testing.assert_array_equal(out.ravel(), m.T @ x.ravel())


def test_insert_zeros_layout():
    x = np.arange(4.0).reshape(1, 2, 2)
    np.testing.assert_array_equal(insert_zeros(x, 3)[0], [[0, 0, 0, 1], [0] * 4, [0] * 4, [2, 0, 0, 3]])


def test_scatter_method_equals_zero_insert():
    rng = make_rng(5)
    for s, p, k in [(1, 0, 3), (2, 1, 3), (4, 0, 4), (3, 2, 5), (2, 3, 2)]:
        x = rng.normal(size=(3, 4, 5))
        w = rng.normal(size=(3, 2, k, k))
        a = transposed_conv2d(x, w, ConvSpec(s, p))
        b = transposed_conv2d(x, w, ConvSpec(s, p), method="scatter")
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_tconv_unknown_method():
    with pytest.raises(ValueError):
        transposed_conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 2, 2)), method="fft")


@pytest.mark.parametrize("s,p,k", [(1, 0, 3), (2, 1, 3), (3, 2, 5), (4, 0, 4)])
def test_adjoint_identity(s, p, k):
    rng = make_rng(6 + s)
    # extents the stride tiles exactly, so both maps cover every pixel
    h, w = (5 - 1) * s + k - 2 * p, (6 - 1) * s + k - 2 * p
    x = rng.normal(size=(2, h, w))
    kern = rng.normal(size=(3, 2, k, k))
    y = rng.normal(size=(3, 5, 6))
    lhs = np.vdot(conv2d(x, kern, ConvSpec(s, p)), y)
    rhs = np.vdot(x, transposed_conv2d(y, kern, ConvSpec(s, p)))
    assert abs(lhs - rhs) < 1e-9


# --- backward passes ---------------------------------------------------------

@pytest.mark.parametrize("s,p,k", [(1, 1, 3), (2, 1, 3), (3, 2, 5), (2, 0, 2)])
def test_conv_backward_finite_diff(s, p, k):
    rng = make_rng(20 + s + p)
    x = rng.normal(size=(2, 7, 6))
    w = rng.normal(size=(3, 2, k, k))
    spec = ConvSpec(s, p)
    gy = rng.normal(size=conv2d(x, w, spec).shape)
    gx, gk = conv2d_backward(x, w, spec, gy)
    assert finite_diff_check(lambda v: float(np.vdot(conv2d(v, w, spec), gy)), gx, x) < 1e-8
    assert finite_diff_check(lambda v: float(np.vdot(conv2d(x, v, spec), gy)), gk, w) < 1e-8


@pytest.mark.parametrize("s,p,k", [(1, 0, 3), (2, 1, 3), (4, 0, 4)])
def test_tconv_backward_finite_diff(s, p, k):
    rng = make_rng(30 + s)
    x = rng.normal(size=(2, 4, 3))
    w = rng.normal(size=(2, 3, k, k))
    spec = ConvSpec(s, p)
    gy = rng.normal(size=transposed_conv2d(x, w, spec).shape)
    gx, gk = transposed_conv2d_backward(x, w, spec, gy)
    assert finite_diff_check(lambda v: float(np.vdot(transposed_conv2d(v, w, spec), gy)), gx, x) < 1e-8
    assert finite_diff_check(lambda v: float(np.vdot(transposed_conv2d(x, v, spec), gy)), gk, w) < 1e-8


# --- both kernel backends ----------------------------------------------------

BACKENDS = [("np", _kernels.conv_forward_np, _kernels.conv_grad_weight_np, _kernels.tconv_scatter_np,
             _kernels.label_components_np)]
if _kernels.HAVE_NUMBA:
    BACKENDS.append(("nb", _kernels.conv_forward_nb, _kernels.conv_grad_weight_nb, _kernels.tconv_scatter_nb,
                     _kernels.label_components_nb))


@pytest.mark.parametrize("name,fwd,gw,scat,lab", BACKENDS, ids=[b[0] for b in BACKENDS])
def test_backend_kernels(name, fwd, gw, scat, lab):
    rng = make_rng(40)
    x = rng.integers(-3, 4, size=(2, 9, 7)).astype(float)
    w = rng.integers(-3, 4, size=(3, 2, 3, 3)).astype(float)
    np.testing.assert_array_equal(fwd(x, w, 2, 1), conv_oracle(x, w, 2, 1))
    gy = rng.integers(-3, 4, size=(3, 5, 4)).astype(float)
    ref_gw = _kernels.conv_grad_weight_np(x, gy, 2, 1, 3, 3)
    np.testing.assert_array_equal(gw(x, gy, 2, 1, 3, 3), ref_gw)
    k = rng.integers(-3, 4, size=(2, 3, 4, 4)).astype(float)
    m = conv_matrix(k, (3, 12, 12), 4, 0)
    np.testing.assert_array_equal(scat(x[:, :3, :3], k, 4, 0).ravel(), m.T @ x[:, :3, :3].ravel())
    b = rng.random((12, 12)) > 0.55
    labels, n = lab(b)
    ref_labels, ref_n = _kernels.label_components_np(b)
    assert n == ref_n
    np.testing.assert_array_equal(labels, ref_labels)


def test_label_components_raster_order():
    b = np.array([[0, 1, 0, 1], [0, 1, 0, 0], [1, 0, 0, 1]], dtype=bool)
    labels, n = _kernels.label_components(b)
    assert n == 4
    np.testing.assert_array_equal(labels, [[0, 1, 0, 2], [0, 1, 0, 0], [3, 0, 0, 4]])


# --- softmax -----------------------------------------------------------------

def test_softmax_constant_slice_uniform():
    out = softmax_axis(np.full((5, 2), 3.7), axis=0, temperature=0.3)
    np.testing.assert_allclose(out, 0.2, rtol=0, atol=1e-15)


def test_softmax_hand_value():
    np.testing.assert_allclose(softmax_axis(np.array([0.0, np.log(3.0)])), [0.25, 0.75], rtol=0, atol=1e-15)


def test_softmax_high_temperature_uniform():
    x = make_rng(7).normal(size=6) * 10
    np.testing.assert_allclose(softmax_axis(x, temperature=1e6), 1 / 6, rtol=0, atol=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=12), st.floats(0.05, 50))
def test_softmax_is_distribution(vals, t):
    p = softmax_axis(np.array(vals), temperature=t)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12


def test_log_softmax_consistent():
    x = make_rng(8).normal(size=(3, 4)) * 5
    np.testing.assert_allclose(np.exp(log_softmax_axis(x, 0, 2.0)), softmax_axis(x, 0, 2.0), rtol=1e-13)


def test_softmax_rejects_bad_temperature():
    with pytest.raises(ValueError):
        softmax_axis(np.zeros(3), temperature=0.0)


# --- dropout -----------------------------------------------------------------

def test_dropout_rate_zero_identity():
    x = make_rng(9).normal(size=(2, 3))
    out, mask = dropout(x, 0.0, make_rng(0), training=True)
    np.testing.assert_array_equal(out, x)
    assert mask.all()


def test_dropout_inference_identity():
    x = make_rng(9).normal(size=(2, 3))
    out, _ = dropout(x, 0.7, None, training=False)
    np.testing.assert_array_equal(out, x)


def test_dropout_monte_carlo():
    x = 1.0 + make_rng(10).random(10_000)
    out, mask = dropout(x, 0.5, make_rng(11), training=True)
    assert abs((1 - mask.mean()) - 0.5) < 0.02
    assert abs(out.mean() / x.mean() - 1.0) < 0.02


def test_dropout_backward_uses_mask():
    x = make_rng(12).normal(size=50)
    out, mask = dropout(x, 0.3, make_rng(13))
    g = dropout_backward(np.ones_like(x), mask, 0.3)
    np.testing.assert_allclose(out, x * g)


def test_dropout_rate_rejected():
    with pytest.raises(ValueError):
        dropout(np.zeros(3), 1.0, make_rng(0))


# --- rng and finite differences -------------------------------------------

def test_rng_deterministic_and_split():
    assert np.array_equal(make_rng(5).random(8), make_rng(5).random(8))
    a, b = split_rng(make_rng(5), 2)
    a2, _ = split_rng(make_rng(5), 2)
    assert not np.array_equal(a.random(4), b.random(4))
    assert np.array_equal(a2.random(4), split_rng(make_rng(5), 2)[0].random(4))


def test_finite_diff_quadratic():
    x = make_rng(14).normal(size=(3, 4))
    assert finite_diff_check(lambda v: float(np.sum(v**2)), 2 * x, x, h=1e-4) < 1e-8


def test_finite_diff_constant():
    x = make_rng(15).normal(size=5)
    assert finite_diff_check(lambda v: 3.0, np.zeros(5), x) == 0.0


def test_finite_diff_detects_wrong_gradient():
    x = np.ones(3)
    assert finite_diff_check(lambda v: float(np.sum(v**2)), np.zeros(3), x) > 0.5


def test_finite_diff_leaves_input_untouched():
    x = make_rng(16).normal(size=4)
    before = x.copy()
    finite_diff_check(lambda v: float(np.sum(v**3)), 3 * x**2, x)
    np.testing.assert_array_equal(x, before)


@pytest.mark.parametrize("s,p", list(itertools.product([1, 2], [0, 1])))
def test_conv_deterministic(s, p):
    rng = make_rng(17)
    x, w = rng.normal(size=(1, 6, 6)), rng.normal(size=(2, 1, 3, 3))
    assert np.array_equal(conv2d(x, w, ConvSpec(s, p)), conv2d(x, w, ConvSpec(s, p)))
