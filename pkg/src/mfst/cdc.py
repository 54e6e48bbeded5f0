"""Central-difference 3D convolutions.

Three aggregation modes over the same sampled receptive cube:

* ``vanilla``   plain weighted sum,
* ``st``        blends the vanilla response with central differences taken
                over the whole cube: y = theta * sum w (x(p0+pn) - x(p0))
                + (1 - theta) * sum w x(p0+pn),
* ``t``         adds a central-difference correction only from taps in
                adjacent time steps: y = y_vanilla
                - theta * x(p0) * sum_{temporal offset != 0} w(pn).

The shipped forms are decomposed: one standard conv plus a theta-scaled
correction built from the center sample and the kernel sum, so only one
conv pass runs. ``naive_cdc_oracle`` evaluates the defining sums by
nested loops in float64 and exists purely for verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError


@dataclass
class CdcConfig:
    mode: str = "vanilla"            # "vanilla" | "st" | "t"
    theta: float = 0.6
    kernel: tuple = (3, 3, 3)
    stride: tuple = (1, 1, 1)
    padding: tuple = (0, 0, 0)
    in_channels: int = 1
    out_channels: int = 1
    bias: bool = True

    def __post_init__(self):
        if self.mode not in ("vanilla", "st", "t"):
            raise ValueError(f"unknown cdc mode {self.mode!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if any(k % 2 == 0 for k in self.kernel):
            raise ValueError(f"kernel sizes must be odd, got {self.kernel}")
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError("channel counts must be positive")


def cdc_st_conv3d(x: Tensor, w: Tensor, cfg: CdcConfig,
                  bias: Tensor | None = None) -> Tensor:
    """Spatio-temporal CDC, decomposed as
    conv3d(x, w) - theta * x(p0) * sum(w)."""
    if cfg.mode != "st":
        raise ValueError(f"cdc_st_conv3d called with mode {cfg.mode!r}")
    y = T.conv3d(x, w, bias, stride=cfg.stride, padding=cfg.padding)
    if cfg.theta == 0.0:
        return y
    wsum = T.reshape(T.sum_(w, axis=(2, 3, 4)),
                     (w.shape[0], w.shape[1], 1, 1, 1))
    xc = T.center_sample(x, cfg.kernel, cfg.stride, cfg.padding)
    corr = T.conv3d(xc, wsum)
    return T.sub(y, T.scale(corr, cfg.theta))


def cdc_t_conv3d(x: Tensor, w: Tensor, cfg: CdcConfig,
                 bias: Tensor | None = None) -> Tensor:
    """Temporal CDC: the vanilla response plus
    theta * (-x(p0) * sum of weights at nonzero temporal offsets).

    With a temporal kernel extent of 1 the adjacent-time region is empty
    and the op degenerates to vanilla conv."""
    if cfg.mode != "t":
        raise ValueError(f"cdc_t_conv3d called with mode {cfg.mode!r}")
    y = T.conv3d(x, w, bias, stride=cfg.stride, padding=cfg.padding)
    kt = w.shape[2]
    if cfg.theta == 0.0 or kt < 3:
        return y
    ct = kt // 2
    wsum_all = T.sum_(w, axis=(2, 3, 4))
    wsum_center = T.sum_(w[:, :, ct], axis=(2, 3))
    wsum_adj = T.reshape(T.sub(wsum_all, wsum_center),
                         (w.shape[0], w.shape[1], 1, 1, 1))
    xc = T.center_sample(x, cfg.kernel, cfg.stride, cfg.padding)
    corr = T.conv3d(xc, wsum_adj)
    return T.sub(y, T.scale(corr, cfg.theta))


def cdc_conv3d(x: Tensor, w: Tensor, cfg: CdcConfig,
               bias: Tensor | None = None) -> Tensor:
    if cfg.mode == "vanilla":
        return T.conv3d(x, w, bias, stride=cfg.stride, padding=cfg.padding)
    if cfg.mode == "st":
        return cdc_st_conv3d(x, w, cfg, bias)
    return cdc_t_conv3d(x, w, cfg, bias)


def naive_cdc_oracle(x: np.ndarray, w: np.ndarray, cfg: CdcConfig,
                     bias: np.ndarray | None = None) -> np.ndarray:
    """Direct nested-loop evaluation of the defining sums (float64).

    Test-only reference; no algebraic simplification, no autodiff."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    B, cin, Tn, H, W = x.shape
    cout, cin2, kt, kh, kw = w.shape
    if cin != cin2:
        raise ShapeError("oracle: channel mismatch")
    st, sh, sw = cfg.stride
    pt, ph, pw = cfg.padding
    To = (Tn + 2 * pt - kt) // st + 1
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    ct, chh, cww = kt // 2, kh // 2, kw // 2
    theta = float(cfg.theta)
    out = np.zeros((B, cout, To, Ho, Wo))
    for b in range(B):
        for co in range(cout):
            for ot in range(To):
                for oh in range(Ho):
                    for ow in range(Wo):
                        vanilla = 0.0
                        diff = 0.0
                        center = xp[b, :, ot * st + ct, oh * sh + chh, ow * sw + cww]
                        for ci in range(cin):
                            for i in range(kt):
                                for j in range(kh):
                                    for k in range(kw):
                                        wv = w[co, ci, i, j, k]
                                        xv = xp[b, ci, ot * st + i,
                                                oh * sh + j, ow * sw + k]
                                        vanilla += wv * xv
                                        if cfg.mode == "st":
                                            diff += wv * (xv - center[ci])
                                        elif cfg.mode == "t" and i != ct:
                                            diff += wv * (-center[ci])
                        if cfg.mode == "vanilla":
                            out[b, co, ot, oh, ow] = vanilla
                        elif cfg.mode == "st":
                            out[b, co, ot, oh, ow] = (theta * diff
                                                      + (1 - theta) * vanilla)
                        else:
                            out[b, co, ot, oh, ow] = vanilla + theta * diff
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None, None]
    return out
