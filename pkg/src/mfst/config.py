"""Run configuration: model topology, optimizer recipe, JSON round-trip."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def default_branch_widths(channels: int) -> list[int]:
    # 4 inception branches at C/4, C/2, C/8, C/8
    w = [channels // 4, channels // 2, channels // 8, channels // 8]
    w[1] += channels - sum(w)
    return w


@dataclass
class StageConfig:
    channels: int
    branch_widths: list[int] | None = None
    n_spatial_layers: int = 4
    n_temporal_layers: int = 2
    temporal_scales: list[int] = field(default_factory=lambda: [1, 2, 4])
    residual: bool = True
    knn_k: int | None = None      # None -> ceil(0.7 n) per call, 0 -> full
    n_heads: int = 8

    def __post_init__(self):
        if self.branch_widths is None:
            self.branch_widths = default_branch_widths(self.channels)
        if sum(self.branch_widths) != self.channels:
            raise ConfigError(
                f"branch widths {self.branch_widths} must sum to channels {self.channels}")
        if len(self.branch_widths) != 4:
            raise ConfigError("expected 4 inception branch widths")
        if min(self.branch_widths) < 1:
            raise ConfigError("branch widths must be positive")
        if self.channels % self.n_heads != 0:
            raise ConfigError(
                f"channels {self.channels} not divisible by n_heads {self.n_heads}")
        s = self.temporal_scales
        if not s or s[0] != 1 or any(a >= b for a, b in zip(s, s[1:])):
            raise ConfigError(
                f"temporal scales must be strictly increasing and start at 1, got {s}")
        if self.n_spatial_layers < 0 or self.n_temporal_layers < 1:
            raise ConfigError("bad transformer layer counts")


@dataclass
class OptimizerConfig:
    lr_peak: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0003
    warmup_epochs: int = 3
    total_epochs: int = 200
    mixup_alpha: float = 0.2
    batch_size: int = 8

    def __post_init__(self):
        if self.lr_peak <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("optimizer hyperparameters must be positive")
        if self.warmup_epochs < 0 or self.total_epochs < 1 or self.batch_size < 1:
            raise ConfigError("bad epoch/batch settings")
        if self.total_epochs <= self.warmup_epochs:
            raise ConfigError("total_epochs must exceed warmup_epochs")


@dataclass
class ModelConfig:
    modality: str = "rgb"            # "rgb" | "depth"
    theta: float = 0.6
    stem_channels: int = 16
    stages: list[StageConfig] = field(
        default_factory=lambda: [StageConfig(c) for c in (32, 64, 96)])
    n_classes: int = 8
    input_t: int = 16
    input_h: int = 64
    input_w: int = 64

    def __post_init__(self):
        if self.modality not in ("rgb", "depth"):
            raise ConfigError(f"modality must be 'rgb' or 'depth', got {self.modality!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must be in [0, 1], got {self.theta}")
        if not self.stages:
            raise ConfigError("at least one stage is required")
        if self.input_h % 4 or self.input_w % 4:
            raise ConfigError("input H and W must be divisible by 4")
        max_scale = max(max(s.temporal_scales) for s in self.stages)
        if self.input_t % max_scale:
            raise ConfigError(
                f"temporal length {self.input_t} not divisible by max scale {max_scale}")
        # each stage halves H and W via the MSC pool
        h, w = self.input_h // 4, self.input_w // 4
        for i, _ in enumerate(self.stages):
            if h % 2 or w % 2:
                raise ConfigError(f"stage {i}: odd spatial dims {h}x{w}")
            h, w = h // 2, w // 2

    @property
    def in_channels(self) -> int:
        return 3 if self.modality == "rgb" else 1

    @property
    def stem_mode(self) -> str:
        return "st" if self.modality == "rgb" else "t"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0


def run_config_to_json(cfg: RunConfig) -> str:
    m = cfg.model
    obj = {
        "modality": m.modality,
        "theta": m.theta,
        "stem_channels": m.stem_channels,
        "stages": [asdict(s) for s in m.stages],
        "n_classes": m.n_classes,
        "input": {"t": m.input_t, "h": m.input_h, "w": m.input_w},
        "optimizer": asdict(cfg.optimizer),
        "seed": cfg.seed,
    }
    return json.dumps(obj, indent=2)


def run_config_from_json(text: str) -> RunConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    try:
        stages = [StageConfig(**s) for s in obj.get("stages", [])] or None
        inp = obj.get("input", {})
        model_kwargs = dict(
            modality=obj.get("modality", "rgb"),
            theta=obj.get("theta", 0.6),
            stem_channels=obj.get("stem_channels", 16),
            n_classes=obj.get("n_classes", 8),
            input_t=inp.get("t", 16),
            input_h=inp.get("h", 64),
            input_w=inp.get("w", 64),
        )
        if stages is not None:
            model_kwargs["stages"] = stages
        model = ModelConfig(**model_kwargs)
        opt = OptimizerConfig(**obj.get("optimizer", {}))
    except TypeError as e:
        raise ConfigError(f"bad config field: {e}") from e
    return RunConfig(model=model, optimizer=opt, seed=int(obj.get("seed", 0)))


def mfst_base(modality: str = "rgb", **kwargs) -> ModelConfig:
    """3-stage toy-geometry configuration."""
    return ModelConfig(modality=modality,
                       stages=[StageConfig(c) for c in (32, 64, 96)], **kwargs)


def mfst_large(modality: str = "rgb", **kwargs) -> ModelConfig:
    """4-stage configuration."""
    return ModelConfig(modality=modality,
                       stages=[StageConfig(c) for c in (32, 64, 96, 128)], **kwargs)
