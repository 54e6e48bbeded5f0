"""The finite-difference checker must accept correct gradients and flag
broken ones."""

import numpy as np
import pytest

from mfst import tensor as T
from mfst.tensor import Tensor, Parameter, _make
from mfst.gradcheck import finite_diff_check, param_grad_check


def test_quadratic_gradient_is_exact(rng):
    x = Tensor(rng.standard_normal(8).astype(np.float32))
    # f = mean(x^2), analytic grad 2x/n matches central differences exactly
    # up to f32 rounding
    assert finite_diff_check(lambda z: T.mean(T.mul(z, z)), x) < 1e-3


def test_requires_scalar_output(rng):
    x = Tensor(rng.standard_normal(4).astype(np.float32))
    with pytest.raises(ValueError):
        finite_diff_check(lambda z: T.mul(z, z), x)


def test_flags_deliberately_wrong_backward(rng):
    def broken_double(x):
        # forward computes 2x but claims the gradient of the identity
        return _make(x.data * 2.0, (x,), lambda g: (g,))

    x = Tensor(rng.standard_normal(6).astype(np.float32))
    err = finite_diff_check(lambda z: T.sum_(broken_double(z)), x)
    assert err > 0.5


def test_max_coords_subsets_the_check(rng):
    x = Tensor(rng.standard_normal(100).astype(np.float32))
    err = finite_diff_check(lambda z: T.mean(T.mul(z, z)), x, max_coords=5,
                            rng=np.random.default_rng(0))
    assert err < 1e-3


def test_param_grad_check_on_closure(rng):
    w = Parameter("w", rng.standard_normal((3, 4)).astype(np.float32))
    b = Parameter("b", rng.standard_normal(3).astype(np.float32))
    x = Tensor(rng.standard_normal((5, 4)).astype(np.float32))
    err = param_grad_check(lambda: T.mean(T.gelu(T.linear(x, w, b))), [w, b])
    assert err < 1e-2
