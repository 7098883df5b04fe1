"""Neural-net ops on top of the autodiff core: softmax, layer norm, 1D
convolution (im2col + GEMM), activations, smooth-L1."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from reactgen.errors import ContractError
from reactgen.tensor.core import Tensor, _accumulate, _make, _unbroadcast, as_tensor


def softmax_rows(x) -> Tensor:
    """Row-wise softmax over the last axis, stabilized by max subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(x, out_data * (g - dot))

    return _make(out_data, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = xhat * gain.data + bias.data

    def backward(g):
        gg = g * gain.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv_std * (gg - m1 - xhat * m2))
        reduce_axes = tuple(range(g.ndim - gain.ndim))
        _accumulate(gain, _unbroadcast(g * xhat, gain.data.shape) if not reduce_axes
                    else (g * xhat).sum(axis=reduce_axes))
        _accumulate(bias, _unbroadcast(g, bias.data.shape) if not reduce_axes
                    else g.sum(axis=reduce_axes))

    return _make(out_data, (x, gain, bias), backward)


def conv1d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """1D cross-correlation.

    x: (C_in, N) or (B, C_in, N); kernels: (C_out, C_in, w). Symmetric zero
    padding; for causal padding pad the input explicitly and pass padding=0.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or kernels.ndim != 3:
        raise ContractError("conv1d expects x (B,C_in,N) or (C_in,N) and kernels (C_out,C_in,w)")
    batch, c_in, n = xd.shape
    c_out, c_in_k, w = kernels.data.shape
    if c_in != c_in_k:
        raise ContractError(f"conv1d channel mismatch: input {c_in}, kernels {c_in_k}")
    if stride < 1:
        raise ContractError("conv1d stride must be >= 1")
    n_out = (n + 2 * padding - w) // stride + 1
    if n_out < 1:
        raise ContractError(
            f"conv1d output length {n_out} < 1 (N={n}, w={w}, stride={stride}, padding={padding})"
        )

    # im2col in (C_in, w, B, n_out) order so both passes are single GEMMs.
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    xp_t = xp.transpose(1, 0, 2)  # (C_in, B, Np) view
    cols = np.empty((c_in, w, batch, n_out), dtype=xp.dtype)
    for k in range(w):
        cols[:, k] = xp_t[:, :, k : k + stride * n_out : stride]
    cols2 = cols.reshape(c_in * w, batch * n_out)
    w2 = kernels.data.reshape(c_out, c_in * w)
    out2 = w2 @ cols2  # (C_out, B*n_out)
    out_data = out2.reshape(c_out, batch, n_out).transpose(1, 0, 2)
    if bias is not None:
        bias = as_tensor(bias)
        out_data = out_data + bias.data[None, :, None]
    if squeeze:
        out_data = out_data[0]

    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(g):
        gy = g[None] if squeeze else g  # (B, C_out, n_out)
        gy2 = np.ascontiguousarray(gy.transpose(1, 0, 2)).reshape(c_out, batch * n_out)
        _accumulate(kernels, (gy2 @ cols2.T).reshape(c_out, c_in, w))
        gcols = (w2.T @ gy2).reshape(c_in, w, batch, n_out)
        gxp_t = np.zeros((c_in, batch, xp.shape[-1]), dtype=xp.dtype)
        for k in range(w):
            gxp_t[:, :, k : k + stride * n_out : stride] += gcols[:, k]
        gx = gxp_t.transpose(1, 0, 2)
        if padding:
            gx = gx[:, :, padding : padding + n]
        _accumulate(x, gx[0] if squeeze else np.ascontiguousarray(gx))
        if bias is not None:
            _accumulate(bias, gy.sum(axis=(0, 2)))

    return _make(out_data, parents, backward)


def relu(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _make(np.maximum(x.data, 0.0), (x,), backward)


def silu(x) -> Tensor:
    x = as_tensor(x)
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out_data = x.data * sig

    def backward(g):
        _accumulate(x, g * sig * (1.0 + x.data * (1.0 - sig)))

    return _make(out_data, (x,), backward)


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    cdf = 0.5 * (1.0 + erf(x.data * inv_sqrt2))
    out_data = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
        _accumulate(x, g * (cdf + x.data * pdf))

    return _make(out_data, (x,), backward)


_ACTIVATIONS = {"relu": relu, "silu": silu, "gelu": gelu}


def activation(x, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Elementwise smooth-L1: 0.5 d^2 / beta for |d| < beta, else |d| - 0.5 beta."""
    pred, target = as_tensor(pred), as_tensor(target)
    d = pred.data - target.data
    ad = np.abs(d)
    out_data = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)

    def backward(g):
        gd = g * np.where(ad < beta, d / beta, np.sign(d))
        _accumulate(pred, _unbroadcast(gd, pred.data.shape))
        _accumulate(target, _unbroadcast(-gd, target.data.shape))

    return _make(out_data, (pred, target), backward)
