"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def finite_diff_check(f, x: Tensor, eps: float = 1e-3,
                      max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Compare the analytic gradient of scalar-valued ``f`` at ``x`` against
    central differences.

    Returns max over checked coordinates of
    ``|analytic - numeric| / max(1, |analytic|)``.

    ``max_coords`` limits the check to a random coordinate subset (for large
    composite blocks); ``None`` checks every coordinate.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ValueError("finite_diff_check requires a scalar-valued function")
    backward(out)
    analytic = probe.grad
    if analytic is None:
        analytic = np.zeros_like(probe.data)
    analytic = analytic.ravel()

    n = x.data.size
    if max_coords is not None and max_coords < n:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(n, size=max_coords, replace=False)
    else:
        coords = range(n)

    flat = x.data.ravel()
    max_err = 0.0
    for i in coords:
        orig = flat[i]
        xp = flat.copy()
        xp[i] = orig + eps
        fp = f(Tensor(xp.reshape(x.shape))).item()
        xp[i] = orig - eps
        fm = f(Tensor(xp.reshape(x.shape))).item()
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        max_err = max(max_err, err)
    return max_err


def param_grad_check(f, params, eps: float = 1e-3,
                     max_coords_per_param: int = 8,
                     rng: np.random.Generator | None = None) -> float:
    """Finite-difference check of ``f()`` (a scalar closure over ``params``)
    with respect to a sampled subset of each parameter's coordinates."""
    rng = rng or np.random.default_rng(0)
    out = f()
    if out.data.size != 1:
        raise ValueError("param_grad_check requires a scalar-valued closure")
    for p in params:
        p.grad = None
    backward(out)
    max_err = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        analytic = analytic.ravel()
        flat = p.data.ravel()
        n = flat.size
        k = min(max_coords_per_param, n)
        coords = rng.choice(n, size=k, replace=False) if k < n else range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            max_err = max(max_err, err)
    return max_err
