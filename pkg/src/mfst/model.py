"""MFST network assembly.

Pipeline: CDC stem -> N factorized stages -> global average pool -> MLP
head. Each stage is a spatial block (inception-style multi-scale convs +
per-frame transformer over the spatial token grid) followed by a temporal
block (one transformer stack shared across several temporal resolutions),
with a projected shortcut around the stage body.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor, Parameter
from .attention import (AttentionConfig, TransformerLayer, LayerNorm, Linear,
                        build_positional_table, add_positional)
from .cdc import CdcConfig, cdc_conv3d
from .config import ModelConfig, StageConfig, ConfigError


class Conv3dLayer:
    def __init__(self, name: str, cin: int, cout: int, kernel,
                 rng: np.random.Generator, stride=(1, 1, 1), padding=(0, 0, 0),
                 bias: bool = True, init_scale: float = 1.0):
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        fan_in = cin * int(np.prod(self.kernel))
        std = init_scale * math.sqrt(2.0 / fan_in)
        self.w = Parameter(name + ".weight",
                           (rng.standard_normal((cout, cin) + self.kernel) * std
                            ).astype(np.float32))
        self.b = Parameter(name + ".bias", np.zeros(cout, np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def params(self):
        return [self.w] + ([self.b] if self.b is not None else [])


class CdcConvLayer:
    """Conv layer whose aggregation mode (vanilla / st / t) comes from cfg."""

    def __init__(self, name: str, cfg: CdcConfig, rng: np.random.Generator):
        self.cfg = cfg
        fan_in = cfg.in_channels * int(np.prod(cfg.kernel))
        std = math.sqrt(2.0 / fan_in)
        shape = (cfg.out_channels, cfg.in_channels) + tuple(cfg.kernel)
        self.w = Parameter(name + ".weight",
                           (rng.standard_normal(shape) * std).astype(np.float32))
        self.b = (Parameter(name + ".bias", np.zeros(cfg.out_channels, np.float32))
                  if cfg.bias else None)

    def __call__(self, x: Tensor) -> Tensor:
        return cdc_conv3d(x, self.w, self.cfg, self.b)

    def params(self):
        return [self.w] + ([self.b] if self.b is not None else [])


class CdcStem:
    """Five-layer convolutional prefix: conv(3x7x7, stride 1x2x2) -> relu ->
    maxpool(1x2x2) -> conv(3x3x3) -> relu. Both convs use the modality's CDC
    mode; temporal length is preserved, H and W shrink by 4."""

    def __init__(self, name: str, in_channels: int, out_channels: int,
                 mode: str, theta: float, rng: np.random.Generator):
        self.conv1 = CdcConvLayer(
            name + ".conv1",
            CdcConfig(mode=mode, theta=theta, kernel=(3, 7, 7), stride=(1, 2, 2),
                      padding=(1, 3, 3), in_channels=in_channels,
                      out_channels=out_channels), rng)
        self.conv2 = CdcConvLayer(
            name + ".conv2",
            CdcConfig(mode=mode, theta=theta, kernel=(3, 3, 3), stride=(1, 1, 1),
                      padding=(1, 1, 1), in_channels=out_channels,
                      out_channels=out_channels), rng)

    def __call__(self, x: Tensor) -> Tensor:
        y = T.relu(self.conv1(x))
        y = T.maxpool3d(y, (1, 2, 2), (1, 2, 2))
        return T.relu(self.conv2(y))

    def params(self):
        return self.conv1.params() + self.conv2.params()


class MscBlock:
    """Space-centric inception block: four parallel 1xkxk branches
    concatenated on channels, then a 1x2x2 spatial max pool."""

    def __init__(self, name: str, cin: int, widths, rng: np.random.Generator):
        w1, w2, w3, w4 = widths
        mk = lambda n, ci, co, k, p: Conv3dLayer(f"{name}.{n}", ci, co, k, rng,
                                                 padding=p)
        self.b1 = mk("branch1", cin, w1, (1, 1, 1), (0, 0, 0))
        self.b2a = mk("branch2.reduce", cin, w2, (1, 1, 1), (0, 0, 0))
        self.b2b = mk("branch2.conv", w2, w2, (1, 3, 3), (0, 1, 1))
        self.b3a = mk("branch3.reduce", cin, w3, (1, 1, 1), (0, 0, 0))
        self.b3b = mk("branch3.conv1", w3, w3, (1, 3, 3), (0, 1, 1))
        self.b3c = mk("branch3.conv2", w3, w3, (1, 3, 3), (0, 1, 1))
        self.b4 = mk("branch4.project", cin, w4, (1, 1, 1), (0, 0, 0))

    def __call__(self, x: Tensor) -> Tensor:
        y1 = T.relu(self.b1(x))
        y2 = T.relu(self.b2b(T.relu(self.b2a(x))))
        y3 = T.relu(self.b3c(T.relu(self.b3b(T.relu(self.b3a(x))))))
        pooled = T.maxpool3d(x, (1, 3, 3), (1, 1, 1), padding=(0, 1, 1))
        y4 = T.relu(self.b4(pooled))
        y = T.concat([y1, y2, y3, y4], axis=1)
        return T.maxpool3d(y, (1, 2, 2), (1, 2, 2))

    def params(self):
        out = []
        for b in (self.b1, self.b2a, self.b2b, self.b3a, self.b3b, self.b3c, self.b4):
            out.extend(b.params())
        return out


class MscTransBlock:
    """MSC block followed by per-frame spatial transformer layers.

    Output is the token view (B, T, H'W', C'); attention runs over the
    spatial grid of each frame independently.
    """

    def __init__(self, name: str, cin: int, cfg: StageConfig,
                 rng: np.random.Generator):
        self.msc = MscBlock(name + ".msc", cin, cfg.branch_widths, rng)
        attn = AttentionConfig(d_model=cfg.channels, n_heads=cfg.n_heads,
                               knn_k=cfg.knn_k)
        self.layers = [TransformerLayer(f"{name}.sp{i}", attn, rng)
                       for i in range(cfg.n_spatial_layers)]

    def __call__(self, x: Tensor):
        f = self.msc(x)
        b, c, t, h, w = f.shape
        tokens = T.transpose(f, (0, 2, 3, 4, 1))       # B,T,H,W,C
        tokens = T.reshape(tokens, (b * t, h * w, c))
        for layer in self.layers:
            tokens = layer(tokens)
        return T.reshape(tokens, (b, t, h * w, c)), (h, w)

    def params(self):
        out = self.msc.params()
        for layer in self.layers:
            out.extend(layer.params())
        return out


class WmsTransBlock:
    """Weight-shared multi-scale temporal transformer.

    Spatial tokens are mean-pooled per frame into a (B, T, C) sequence,
    positional encodings are added, and the same transformer stack runs on
    the sequence average-pooled to length T/s for every scale s. Each
    scale's output is nearest-repeated back to length T; the scale outputs
    are averaged and broadcast-added onto the spatial tokens.
    """

    def __init__(self, name: str, cfg: StageConfig, max_len: int,
                 rng: np.random.Generator):
        self.scales = list(cfg.temporal_scales)
        attn = AttentionConfig(d_model=cfg.channels, n_heads=cfg.n_heads,
                               knn_k=cfg.knn_k)
        self.layers = [TransformerLayer(f"{name}.tp{i}", attn, rng)
                       for i in range(cfg.n_temporal_layers)]
        self.table = build_positional_table(max_len, cfg.channels)

    def __call__(self, tokens: Tensor) -> Tensor:
        b, t, hw, c = tokens.shape
        if t % max(self.scales):
            raise ConfigError(
                f"temporal length {t} not divisible by scale {max(self.scales)}")
        seq = T.mean(tokens, axis=2)
        seq = add_positional(seq, self.table)
        outs = []
        for s in self.scales:
            z = seq
            if s > 1:
                z = T.mean(T.reshape(z, (b, t // s, s, c)), axis=2)
            for layer in self.layers:
                z = layer(z)
            if s > 1:
                z = T.repeat_axis(z, s, axis=1)
            outs.append(z)
        acc = outs[0]
        for z in outs[1:]:
            acc = T.add(acc, z)
        acc = T.scale(acc, 1.0 / len(outs))
        return T.add_bcast(tokens, T.reshape(acc, (b, t, 1, c)))

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out


class Stage:
    def __init__(self, name: str, cin: int, cfg: StageConfig, max_len: int,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.msc_trans = MscTransBlock(name + ".msc_trans", cin, cfg, rng)
        self.wms_trans = WmsTransBlock(name + ".wms_trans", cfg, max_len, rng)
        # the stage body re-adds frame means and positional terms to every
        # token, which inflates variance; a small out_proj keeps the stage
        # shortcut-dominated at init while the shortcut itself is
        # variance-preserving (no relu follows either projection)
        self.out_proj = Conv3dLayer(name + ".out_proj", cfg.channels,
                                    cfg.channels, (1, 1, 1), rng, init_scale=0.1)
        self.shortcut = None
        if cfg.residual:
            self.shortcut = Conv3dLayer(name + ".shortcut", cin, cfg.channels,
                                        (1, 1, 1), rng, stride=(1, 2, 2),
                                        init_scale=1.0 / math.sqrt(2.0))

    def __call__(self, x: Tensor) -> Tensor:
        tokens, (h, w) = self.msc_trans(x)
        tokens = self.wms_trans(tokens)
        b, t, hw, c = tokens.shape
        grid = T.reshape(tokens, (b, t, h, w, c))
        grid = T.transpose(grid, (0, 4, 1, 2, 3))
        y = self.out_proj(grid)
        if self.shortcut is not None:
            y = T.add(y, self.shortcut(x))
        return y

    def params(self):
        out = (self.msc_trans.params() + self.wms_trans.params()
               + self.out_proj.params())
        if self.shortcut is not None:
            out.extend(self.shortcut.params())
        return out


class MfstModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.stem = CdcStem("stem", cfg.in_channels, cfg.stem_channels,
                            cfg.stem_mode, cfg.theta, rng)
        self.stages = []
        cin = cfg.stem_channels
        for i, scfg in enumerate(cfg.stages):
            self.stages.append(Stage(f"stage{i + 1}", cin, scfg, cfg.input_t, rng))
            cin = scfg.channels
        hidden = cin
        self.fc1 = Linear("head.fc1", cin, hidden, rng)
        self.fc2 = Linear("head.fc2", hidden, cfg.n_classes, rng)
        names = [p.name for p in self.params()]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate parameter names in model")

    def forward(self, clip: Tensor) -> Tensor:
        if clip.ndim != 5 or clip.shape[1] != self.cfg.in_channels:
            raise ConfigError(
                f"expected (B,{self.cfg.in_channels},T,H,W) input for modality "
                f"{self.cfg.modality!r}, got {clip.shape}")
        y = self.stem(clip)
        for stage in self.stages:
            y = stage(y)
        pooled = T.mean(y, axis=(2, 3, 4))
        return self.fc2(T.relu(self.fc1(pooled)))

    __call__ = forward

    def params(self) -> list[Parameter]:
        out = self.stem.params()
        for s in self.stages:
            out.extend(s.params())
        out.extend(self.fc1.params())
        out.extend(self.fc2.params())
        return out

    def named_params(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.params()}

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.named_params()
        if set(own) != set(state):
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            raise ConfigError(
                f"parameter table mismatch (missing={sorted(missing)[:5]}, "
                f"unexpected={sorted(extra)[:5]})")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ConfigError(
                    f"shape mismatch for {name}: {p.data.shape} vs {state[name].shape}")
            p.data = state[name].astype(np.float32).copy()


def stable_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def fuse_modalities(logits_rgb: np.ndarray, logits_dep: np.ndarray) -> np.ndarray:
    """Average the per-stream class probabilities; argmax of the result is
    the fused prediction."""
    if logits_rgb.shape != logits_dep.shape:
        raise ValueError("fused streams must have identical shapes")
    return 0.5 * (stable_softmax_np(logits_rgb) + stable_softmax_np(logits_dep))
