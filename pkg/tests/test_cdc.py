"""Central-difference convolution: decomposed fast forms against the
defining nested-loop sums, plus closed-form anchor values."""

import numpy as np
import pytest

from mfst.tensor import Tensor, backward
from mfst import tensor as T
from mfst.cdc import (CdcConfig, cdc_conv3d, cdc_st_conv3d, cdc_t_conv3d,
                      naive_cdc_oracle)
from mfst.gradcheck import finite_diff_check


def random_case(rng):
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 3))
    kt, kh, kw = rng.choice([1, 3], size=3)
    shape = (int(rng.integers(1, 3)), cin,
             int(rng.integers(kt, 5)), int(rng.integers(kh, 7)),
             int(rng.integers(kw, 7)))
    x = rng.standard_normal(shape).astype(np.float32)
    w = rng.standard_normal((cout, cin, kt, kh, kw)).astype(np.float32)
    b = rng.standard_normal(cout).astype(np.float32)
    stride = tuple(int(s) for s in rng.integers(1, 3, size=3))
    padding = tuple(int(p) for p in rng.integers(0, 2, size=3))
    return x, w, b, (kt, kh, kw), stride, padding


@pytest.mark.parametrize("mode", ["vanilla", "st", "t"])
def test_all_modes_match_oracle(mode, rng):
    for _ in range(8):
        x, w, b, kernel, stride, padding = random_case(rng)
        cfg = CdcConfig(mode=mode, theta=0.6, kernel=kernel, stride=stride,
                        padding=padding, in_channels=x.shape[1],
                        out_channels=w.shape[0])
        got = cdc_conv3d(Tensor(x), Tensor(w), cfg, Tensor(b)).data
        ref = naive_cdc_oracle(x, w, cfg, b)
        np.testing.assert_allclose(got, ref, atol=1e-5)


@pytest.mark.parametrize("mode", ["st", "t"])
def test_theta_zero_equals_vanilla(mode, rng):
    for _ in range(10):
        x, w, b, kernel, stride, padding = random_case(rng)
        cfg = CdcConfig(mode=mode, theta=0.0, kernel=kernel, stride=stride,
                        padding=padding, in_channels=x.shape[1],
                        out_channels=w.shape[0])
        got = cdc_conv3d(Tensor(x), Tensor(w), cfg, Tensor(b)).data
        ref = T.conv3d(Tensor(x), Tensor(w), Tensor(b), stride=stride,
                       padding=padding).data
        np.testing.assert_allclose(got, ref, atol=1e-6)


def test_closed_form_constant_input():
    # all-ones 3x3x3 input, all-ones kernel, theta = 0.6:
    # vanilla response is 27; the spatio-temporal form blends to
    # 0.4 * 27 = 10.8 and the temporal form subtracts the 18 adjacent-time
    # weights scaled by theta: 27 - 0.6 * 18 = 16.2
    x = Tensor(np.ones((1, 1, 3, 3, 3), np.float32))
    w = Tensor(np.ones((1, 1, 3, 3, 3), np.float32))
    st = CdcConfig(mode="st", theta=0.6)
    tt = CdcConfig(mode="t", theta=0.6)
    assert cdc_st_conv3d(x, w, st).data.ravel()[0] == pytest.approx(10.8, abs=1e-5)
    assert cdc_t_conv3d(x, w, tt).data.ravel()[0] == pytest.approx(16.2, abs=1e-5)


def test_temporal_mode_with_flat_kernel_is_vanilla(rng):
    # a 1xkxk kernel has no adjacent-time taps, so the correction is empty
    x = rng.standard_normal((1, 2, 4, 6, 6)).astype(np.float32)
    w = rng.standard_normal((3, 2, 1, 3, 3)).astype(np.float32)
    cfg = CdcConfig(mode="t", theta=0.8, kernel=(1, 3, 3), in_channels=2,
                    out_channels=3)
    got = cdc_conv3d(Tensor(x), Tensor(w), cfg).data
    ref = T.conv3d(Tensor(x), Tensor(w)).data
    np.testing.assert_array_equal(got, ref)


@pytest.mark.parametrize("mode", ["st", "t"])
def test_cdc_gradcheck_input_and_weight(mode, rng):
    cfg = CdcConfig(mode=mode, theta=0.6, padding=(1, 1, 1),
                    in_channels=1, out_channels=2)
    w = Tensor(rng.standard_normal((2, 1, 3, 3, 3)).astype(np.float32))
    x = Tensor(rng.standard_normal((1, 1, 3, 4, 4)).astype(np.float32))
    assert finite_diff_check(
        lambda z: T.mean(cdc_conv3d(z, w, cfg)), x) < 1e-2
    x0 = Tensor(rng.standard_normal((1, 1, 3, 4, 4)).astype(np.float32))
    assert finite_diff_check(
        lambda wz: T.mean(cdc_conv3d(x0, wz, cfg)), w) < 1e-2


def test_config_validation():
    with pytest.raises(ValueError):
        CdcConfig(mode="nope")
    with pytest.raises(ValueError):
        CdcConfig(theta=1.5)
    with pytest.raises(ValueError):
        CdcConfig(kernel=(2, 3, 3))
    with pytest.raises(ValueError):
        cdc_st_conv3d(Tensor(np.zeros((1, 1, 3, 3, 3), np.float32)),
                      Tensor(np.zeros((1, 1, 3, 3, 3), np.float32)),
                      CdcConfig(mode="t"))
