"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from reactgen.errors import ContractError
from reactgen.tensor.core import Tensor, no_grad


def grad_check(fn, inputs, h: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar-valued closure against central
    differences.

    fn is a zero-argument callable that rebuilds the computation from the
    given input Tensors (typically leaves captured in its closure, e.g.
    module parameters). Every probed input must require grad and be float64 —
    build the graph under using_dtype("f64"). Perturbs inputs in place for
    the numeric pass and restores them. Returns the max over all probed
    coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if h <= 0:
        raise ContractError("grad_check step h must be positive")
    tensors = list(inputs)
    for t in tensors:
        if not isinstance(t, Tensor) or not t.requires_grad:
            raise ContractError("grad_check inputs must be Tensors with requires_grad")
        if t.data.dtype != np.float64:
            raise ContractError(
                "grad_check needs float64 inputs; construct them under using_dtype('f64')"
            )

    for t in tensors:
        t.grad = None
    out = fn()
    if out.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    worst = 0.0
    with no_grad():
        for t, ga in zip(tensors, analytic):
            for idx in np.ndindex(t.data.shape):
                orig = t.data[idx]
                t.data[idx] = orig + h
                up = fn().item()
                t.data[idx] = orig - h
                down = fn().item()
                t.data[idx] = orig
                numeric = (up - down) / (2.0 * h)
                err = abs(ga[idx] - numeric) / max(1.0, abs(ga[idx]))
                if err > worst:
                    worst = err
    return worst
