"""Autodiff kernel: gradients against finite differences, forward oracles
against closed forms, and the tape/optimizer contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

import gradcases
from reactgen.errors import ContractError
from reactgen.rng import stream
from reactgen.tensor import (AdamW, Linear, Tensor, check_finite_loss, conv1d,
                             gelu, layer_norm, matmul, no_grad, relu, silu,
                             smooth_l1, softmax_rows, take, using_dtype,
                             warmup_lr, where)


@pytest.mark.parametrize("name,case", gradcases.OP_CASES)
def test_op_gradients(name, case):
    assert case() < 1e-4


@pytest.mark.parametrize("name,case", gradcases.COMPOSITE_CASES)
def test_composite_gradients(name, case):
    assert case() < 1e-3


# ---------------------------------------------------------------------------
# Forward oracles.

def test_softmax_rows_matches_closed_form():
    r = stream(3, "softmax")
    x = r.normal(size=(4, 7))
    got = softmax_rows(Tensor(x)).data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    np.testing.assert_allclose(got, e / e.sum(axis=-1, keepdims=True), atol=1e-12)
    np.testing.assert_allclose(got.sum(axis=-1), 1.0, atol=1e-12)


def test_layer_norm_normalizes_last_axis():
    r = stream(4, "ln")
    x = Tensor(r.normal(2.0, 3.0, size=(5, 9)))
    d = 9
    out = layer_norm(x, Tensor(np.ones(d)), Tensor(np.zeros(d))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)  # eps-limited


def test_gelu_matches_erf_formula():
    x = np.linspace(-4, 4, 41)
    got = gelu(Tensor(x)).data
    want = 0.5 * x * (1.0 + special.erf(x / np.sqrt(2.0)))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_silu_and_relu_pointwise():
    x = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(silu(Tensor(x)).data, x / (1.0 + np.exp(-x)),
                               atol=1e-12)
    np.testing.assert_allclose(relu(Tensor(x)).data, np.maximum(x, 0.0))


def test_smooth_l1_branches():
    pred = Tensor(np.array([0.0, 0.0, 0.0]))
    target = Tensor(np.array([0.5, -2.0, 1.0]))
    out = smooth_l1(pred, target, beta=1.0).data
    np.testing.assert_allclose(out, [0.125, 1.5, 0.5])


def test_conv1d_matches_correlate_oracle():
    r = stream(5, "conv-oracle")
    x = r.normal(size=(3, 11))
    k = r.normal(size=(2, 3, 4))
    got = conv1d(Tensor(x), Tensor(k), stride=1, padding=0).data
    n_out = 11 - 4 + 1
    want = np.zeros((2, n_out))
    for co in range(2):
        for ci in range(3):
            want[co] += np.correlate(x[ci], k[co, ci], mode="valid")
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_conv1d_stride_padding_geometry():
    x = Tensor(np.zeros((1, 2, 10)))
    k = Tensor(np.zeros((4, 2, 3)))
    assert conv1d(x, k, stride=2, padding=1).shape == (1, 4, 5)
    assert conv1d(x, k, stride=1, padding=0).shape == (1, 4, 8)


def test_matmul_batched_matches_numpy():
    r = stream(6, "mm")
    a = r.normal(size=(2, 3, 4, 5))
    b = r.normal(size=(2, 3, 5, 6))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b,
                               atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_broadcast_grad_shapes(n, m, k):
    """Gradients always come back in the leaf's own shape, whatever the
    broadcast pattern was."""
    r = stream(n * 100 + m * 10 + k, "bcast")
    a = Tensor(r.normal(size=(n, 1, k)), requires_grad=True)
    b = Tensor(r.normal(size=(m, 1)), requires_grad=True)
    ((a * b) + b).sum().backward()
    assert a.grad.shape == a.data.shape
    assert b.grad.shape == b.data.shape


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_shift_invariance(row):
    x = np.array([row])
    a = softmax_rows(Tensor(x)).data
    b = softmax_rows(Tensor(x + 123.456)).data
    np.testing.assert_allclose(a, b, atol=1e-10)


# ---------------------------------------------------------------------------
# Tape and optimizer behavior.

def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x * 3.0  # x used twice
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_no_grad_blocks_recording():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert y._parents == () and not y.requires_grad
    y.backward()  # replays an empty tape
    assert x.grad is None


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 1.0).backward()


def test_where_routes_gradients_exclusively():
    a = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    b = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    cond = np.array([True, False])
    where(cond, a, b).sum().backward()
    np.testing.assert_allclose(a.grad, [1.0, 0.0])
    np.testing.assert_allclose(b.grad, [0.0, 1.0])


def test_take_pair_indexing_matches_fancy():
    r = stream(9, "take")
    x = r.normal(size=(5, 4))
    rows, cols = np.array([0, 2, 4]), np.array([3, 1, 0])
    got = take(Tensor(x), (rows, cols)).data
    np.testing.assert_allclose(got, x[rows, cols])


def test_adamw_first_step_is_signed_lr():
    """After one step from zero moments the update is -lr * sign(grad)
    (bias correction cancels the moment decay exactly)."""
    w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    w.grad = np.array([0.5, -3.0])
    opt = AdamW([w], lr=0.1, betas=(0.9, 0.999), weight_decay=0.0)
    opt.step()
    np.testing.assert_allclose(w.data, [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)


def test_adamw_decoupled_weight_decay():
    w = Tensor(np.array([4.0]), requires_grad=True)
    w.grad = np.array([0.0])
    opt = AdamW([w], lr=0.5, betas=(0.9, 0.999), weight_decay=0.1)
    opt.step()
    # zero gradient: only the decay term moves the weight
    np.testing.assert_allclose(w.data, [4.0 * (1 - 0.5 * 0.1)], atol=1e-12)


def test_warmup_lr_ramp():
    base = 1e-3
    assert warmup_lr(0, base, 100) == pytest.approx(base / 100)
    assert warmup_lr(99, base, 100) == pytest.approx(base)
    assert warmup_lr(5000, base, 100) == base
    assert warmup_lr(0, base, 0) == base


def test_check_finite_loss_raises_on_nan():
    from reactgen.errors import TrainingError
    check_finite_loss(1.25, step=3)
    with pytest.raises(TrainingError):
        check_finite_loss(float("nan"), step=3)
    with pytest.raises(TrainingError):
        check_finite_loss(float("inf"), step=7)


def test_linear_zero_init_and_shapes():
    r = stream(11, "lin")
    lin = Linear(3, 5, r, zero_init=True)
    assert not lin.weight.data.any()
    x = Tensor(np.ones((2, 3)))
    assert lin(x).shape == (2, 5)


def test_dtype_context_controls_parameters():
    r = stream(12, "dtype")
    with using_dtype("f64"):
        lin = Linear(2, 2, r)
        assert lin.weight.data.dtype == np.float64
    lin32 = Linear(2, 2, r)
    assert lin32.weight.data.dtype == np.float32


def test_matmul_rejects_vectors():
    with pytest.raises(ContractError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))
    with pytest.raises(ContractError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
