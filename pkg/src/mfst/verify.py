"""Self-contained invariant suite behind `mfst verify`.

Every check returns a measured error (or count) so the report shows how
close each property is to its tolerance, not just pass/fail.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, backward
from .attention import (AttentionConfig, TransformerLayer, knn_attention,
                        build_positional_table)
from .cdc import CdcConfig, cdc_st_conv3d, cdc_t_conv3d, naive_cdc_oracle
from .checkpoint import (Checkpoint, save_checkpoint, load_checkpoint,
                         pack_rng_state)
from .config import OptimizerConfig, StageConfig
from .data import DatasetSpec, gen_clip, write_dataset, read_dataset
from .gradcheck import finite_diff_check
from .model import WmsTransBlock
from .optim import SgdOptimizer, lr_at
from .tensor import Parameter


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: str


def _rand(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


def check_conv_oracle(rng) -> CheckResult:
    worst = 0.0
    for _ in range(8):
        B, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 3)
        tt, hh, ww = rng.integers(3, 5), rng.integers(3, 8), rng.integers(3, 8)
        kt, kh, kw = 3, rng.choice([1, 3]), rng.choice([1, 3])
        x = _rand(rng, B, cin, tt, hh, ww)
        w = _rand(rng, cout, cin, kt, kh, kw)
        cfg = CdcConfig(mode="vanilla", kernel=(kt, kh, kw), padding=(1, 0, 0))
        y = T.conv3d(Tensor(x), Tensor(w), stride=cfg.stride, padding=cfg.padding)
        ref = naive_cdc_oracle(x, w, cfg)
        worst = max(worst, float(np.abs(y.data - ref).max()))
    return CheckResult("conv3d matches nested-loop oracle", worst <= 1e-5,
                       f"max abs err {worst:.2e}")


def check_cdc_oracle(rng) -> CheckResult:
    worst = 0.0
    for mode, fn in (("st", cdc_st_conv3d), ("t", cdc_t_conv3d)):
        for theta in (0.0, 0.6, 1.0):
            x = _rand(rng, 1, 2, 4, 5, 5)
            w = _rand(rng, 2, 2, 3, 3, 3)
            cfg = CdcConfig(mode=mode, theta=theta, padding=(1, 1, 1))
            y = fn(Tensor(x), Tensor(w), cfg)
            ref = naive_cdc_oracle(x, w, cfg)
            worst = max(worst, float(np.abs(y.data - ref).max()))
    return CheckResult("cdc decomposed forms match oracle", worst <= 1e-5,
                       f"max abs err {worst:.2e}")


def check_cdc_closed_form(rng) -> CheckResult:
    x = Tensor(np.ones((1, 1, 3, 3, 3), np.float32))
    w = Tensor(np.ones((1, 1, 3, 3, 3), np.float32))
    st = cdc_st_conv3d(x, w, CdcConfig(mode="st", theta=0.6)).item()
    t = cdc_t_conv3d(x, w, CdcConfig(mode="t", theta=0.6)).item()
    err = max(abs(st - 10.8), abs(t - 16.2))
    return CheckResult("cdc closed-form values (10.8 / 16.2)", err <= 1e-5,
                       f"got {st:.6f} / {t:.6f}")


def check_theta_zero_identity(rng) -> CheckResult:
    worst = 0.0
    for _ in range(10):
        x = _rand(rng, 1, 2, 4, 6, 6)
        w = _rand(rng, 3, 2, 3, 3, 3)
        vanilla = T.conv3d(Tensor(x), Tensor(w), padding=(1, 1, 1))
        for mode, fn in (("st", cdc_st_conv3d), ("t", cdc_t_conv3d)):
            cfg = CdcConfig(mode=mode, theta=0.0, padding=(1, 1, 1))
            y = fn(Tensor(x), Tensor(w), cfg)
            worst = max(worst, float(np.abs(y.data - vanilla.data).max()))
    return CheckResult("theta=0 equals vanilla conv", worst <= 1e-6,
                       f"max abs err {worst:.2e}")


def check_gradients(rng) -> CheckResult:
    wc = Tensor(_rand(rng, 2, 2, 3, 3, 3))
    wl = Tensor(_rand(rng, 4, 5))
    bl = Tensor(_rand(rng, 4))
    # mean reductions keep |f| small so f32 central differences stay clean
    cases = {
        "conv3d": lambda v: T.mean(T.conv3d(v, wc, padding=(1, 1, 1))),
        "linear": lambda v: T.mean(T.gelu(T.linear(v, wl, bl))),
        "layer_norm": lambda v: T.mean(T.layer_norm(
            v, Tensor(np.ones(5, np.float32)), Tensor(np.zeros(5, np.float32)))),
        "softmax": lambda v: T.mean(T.mul(T.softmax(v), v)),
    }
    worst = 0.0
    shapes = {"conv3d": (1, 2, 4, 5, 5), "linear": (3, 5),
              "layer_norm": (3, 5), "softmax": (3, 5)}
    for name, f in cases.items():
        for _ in range(3):
            x = Tensor(_rand(rng, *shapes[name]))
            worst = max(worst, finite_diff_check(f, x, eps=1e-3))
    return CheckResult("op gradient finite-difference suite", worst <= 1e-2,
                       f"max rel err {worst:.2e}")


def check_attention_identities(rng) -> CheckResult:
    b, h, n, d = 1, 2, 6, 4
    q, k, v = (Tensor(_rand(rng, b, h, n, d)) for _ in range(3))
    full = knn_attention(q, k, v, n)
    full0 = knn_attention(q, k, v, 0)
    err = float(np.abs(full.data - full0.data).max())
    # k = 1: each output row is exactly the argmax key's value row
    scores = np.matmul(q.data, k.data.swapaxes(-1, -2)) / math.sqrt(d)
    sel = scores.argmax(axis=-1)
    top1 = knn_attention(q, k, v, 1)
    expected = np.take_along_axis(v.data, sel[..., None], axis=2)
    err = max(err, float(np.abs(top1.data - expected).max()))
    return CheckResult("knn attention identities (k=n full, k=1 argmax)",
                       err <= 1e-6, f"max abs err {err:.2e}")


def check_permutation_equivariance(rng) -> CheckResult:
    cfg = AttentionConfig(d_model=16, n_heads=4, knn_k=0)
    layer = TransformerLayer("chk", cfg, np.random.default_rng(3))
    x = _rand(rng, 2, 7, 16)
    perm = rng.permutation(7)
    y = layer(Tensor(x)).data
    yp = layer(Tensor(x[:, perm])).data
    err = float(np.abs(y[:, perm] - yp).max())
    return CheckResult("transformer layer permutation equivariance",
                       err <= 1e-5, f"max abs err {err:.2e}")


def check_positional_table(rng) -> CheckResult:
    table = build_positional_table(32, 16)
    pos = np.arange(32, dtype=np.float64)[:, None]
    i2 = np.arange(0, 16, 2, dtype=np.float64)[None, :]
    ref = np.zeros((32, 16))
    ref[:, 0::2] = np.sin(pos / 10000 ** (i2 / 16))
    ref[:, 1::2] = np.cos(pos / 10000 ** (i2 / 16))
    err = float(np.abs(table - ref).max())
    exact = float(np.abs(table[0, 0::2]).max()) == 0.0 and \
        bool((table[0, 1::2] == 1.0).all())
    return CheckResult("positional table vs 64-bit evaluation",
                       err <= 1e-6 and exact, f"max abs err {err:.2e}")


def check_weight_sharing(rng) -> CheckResult:
    counts = []
    for scales in ([1], [1, 2, 4]):
        cfg = StageConfig(channels=16, n_heads=4, temporal_scales=scales,
                          n_temporal_layers=2,
                          branch_widths=[4, 8, 2, 2])
        block = WmsTransBlock("wms", cfg, 16, np.random.default_rng(0))
        counts.append(len({p.name for p in block.params()}))
    return CheckResult("weight-sharing audit (scales [1] vs [1,2,4])",
                       counts[0] == counts[1], f"param counts {counts}")


def check_schedule(rng) -> CheckResult:
    cfg = OptimizerConfig(total_epochs=11, warmup_epochs=3)
    spe = 5
    warm = cfg.warmup_epochs * spe
    at_peak = lr_at(warm - 1, spe, cfg)
    ok = at_peak == cfg.lr_peak
    prev = at_peak
    monotone = True
    for s in range(warm, cfg.total_epochs * spe):
        cur = lr_at(s, spe, cfg)
        monotone &= cur <= prev + 1e-12
        prev = cur
    mid = lr_at(warm + (cfg.total_epochs * spe - warm) // 2, spe, cfg)
    ok = ok and monotone and abs(mid - 0.005) <= 1e-9
    return CheckResult("lr schedule (peak at warmup end, cosine midpoint)",
                       ok, f"peak {at_peak:.4f}, mid {mid:.6f}")


def check_sgd_trace(rng) -> CheckResult:
    p = Parameter("p", np.array([0.0], np.float32))
    opt = SgdOptimizer([p], OptimizerConfig(momentum=0.9, weight_decay=0.0,
                                            total_epochs=10))
    p.grad = np.array([1.0], np.float32)
    opt.step(0.1)
    p1 = float(p.data[0])
    p.grad = np.array([1.0], np.float32)
    opt.step(0.1)
    p2 = float(p.data[0])
    err = max(abs(p1 + 0.1), abs(p2 + 0.29))
    return CheckResult("sgd momentum two-step hand trace", err <= 1e-7,
                       f"p1 {p1:.6f}, p2 {p2:.6f}")


def check_dataset_roundtrip(rng) -> CheckResult:
    spec = DatasetSpec(t=8, h=16, w=16, seed=7)
    clips = [gen_clip(spec, i) for i in range(4)]
    again = [gen_clip(spec, i) for i in range(4)]
    deterministic = all(
        np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth, b.depth)
        for a, b in zip(clips, again))
    with tempfile.TemporaryDirectory() as d:
        write_dataset(clips, f"{d}/x.bin")
        back = read_dataset(f"{d}/x.bin")
    exact = all(
        np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth, b.depth)
        and a.label == b.label and a.clip_id == b.clip_id
        for a, b in zip(clips, back))
    return CheckResult("dataset determinism and file round-trip",
                       deterministic and exact,
                       f"deterministic={deterministic}, roundtrip={exact}")


def check_checkpoint_roundtrip(rng) -> CheckResult:
    ck = Checkpoint(config_json='{"seed": 1}',
                    params={"a.weight": _rand(rng, 3, 4)},
                    velocity={"a.weight": _rand(rng, 3, 4)},
                    epoch=5,
                    rng_words=pack_rng_state(np.random.default_rng(5)))
    with tempfile.TemporaryDirectory() as d:
        save_checkpoint(f"{d}/c.ckpt", ck)
        back = load_checkpoint(f"{d}/c.ckpt")
        save_checkpoint(f"{d}/c2.ckpt", back)
        b1 = open(f"{d}/c.ckpt", "rb").read()
        b2 = open(f"{d}/c2.ckpt", "rb").read()
    ok = (b1 == b2 and np.array_equal(ck.params["a.weight"], back.params["a.weight"])
          and back.epoch == 5 and back.rng_words == ck.rng_words)
    return CheckResult("checkpoint round-trip is byte-stable", ok,
                       f"bytes equal={b1 == b2}")


def check_wrong_backward_detected(rng) -> CheckResult:
    # deliberately wrong gradient: forward x^2, backward pretends d/dx = x
    def bad_square(v: Tensor) -> Tensor:
        from .tensor import _make
        out = _make(v.data * v.data, (v,), lambda g: (g * v.data,))
        return T.sum_(out)

    err = finite_diff_check(bad_square, Tensor(_rand(rng, 4) + 2.0), eps=1e-3)
    return CheckResult("checker flags a deliberately wrong backward",
                       err >= 0.5, f"reported rel err {err:.2e}")


ALL_CHECKS = [
    check_conv_oracle,
    check_cdc_oracle,
    check_cdc_closed_form,
    check_theta_zero_identity,
    check_gradients,
    check_attention_identities,
    check_permutation_equivariance,
    check_positional_table,
    check_weight_sharing,
    check_schedule,
    check_sgd_trace,
    check_dataset_roundtrip,
    check_checkpoint_roundtrip,
    check_wrong_backward_detected,
]


def run_verify(filter_substr: str | None = None, log=print) -> bool:
    rng = np.random.default_rng(2024)
    all_ok = True
    for fn in ALL_CHECKS:
        if filter_substr and filter_substr not in fn.__name__:
            continue
        res = fn(rng)
        all_ok &= res.passed
        status = "PASS" if res.passed else "FAIL"
        log(f"[{status}] {res.name}: {res.measured}")
    return all_ok
