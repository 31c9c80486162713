"""Finite-difference verification of analytic gradients.

The check rebuilds the loss in float64, compares every analytic parameter
gradient against central differences, and reports the worst relative error.
Relative error uses max(|analytic|, |numeric|, 1e-6) as denominator, so
entries below 1e-6 in both are compared absolutely.
"""
from __future__ import annotations

import numpy as np

from .params import ParamSet
from .tensor import backward

DEFAULT_EPSILON = 1e-4


def finite_difference_check(loss_fn, params: ParamSet, epsilon: float = DEFAULT_EPSILON,
                            max_entries_per_param: int = None, rng: np.random.Generator = None):
    """Compare analytic gradients of ``loss_fn(params)`` with central differences.

    loss_fn must build a scalar loss Tensor from the parameter set alone and be
    deterministic (run dropout in inference mode or with a re-seeded stream).
    Returns (max_relative_error, per_parameter dict). When
    max_entries_per_param is given, a random subset of entries per parameter is
    probed instead of all of them.
    """
    if np.dtype(params.dtype) != np.float64:
        raise ValueError("gradient checks require a float64 parameter set")
    if rng is None:
        rng = np.random.default_rng(0)

    params.zero_grads()
    loss = loss_fn(params)
    if loss.data.shape != ():
        raise ValueError("loss_fn must return a scalar")
    backward(loss)
    analytic = {name: params[name].grad.copy() for name in params.names()}

    worst = 0.0
    per_param = {}
    for name in params.names():
        values = params[name].data
        flat = values.reshape(-1)
        n = flat.shape[0]
        if max_entries_per_param is not None and n > max_entries_per_param:
            idx = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idx = np.arange(n)
        grad_flat = analytic[name].reshape(-1)
        param_worst = 0.0
        for i in idx:
            saved = flat[i]
            flat[i] = saved + epsilon
            up = float(loss_fn(params).data)
            flat[i] = saved - epsilon
            down = float(loss_fn(params).data)
            flat[i] = saved
            fd = (up - down) / (2.0 * epsilon)
            a = float(grad_flat[i])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            if err > param_worst:
                param_worst = err
        per_param[name] = param_worst
        if param_worst > worst:
            worst = param_worst
    return worst, per_param
