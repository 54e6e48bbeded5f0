"""Deterministic synthetic RGB-D gesture clips, file I/O, and MixUp.

Each clip shows one soft-edged shape (square, circle, or bar) on a black
background performing one of eight motions; the depth stream shows the
same silhouette with intensity ramping toward or away from the camera
over the clip. Generation is a pure function of (master seed, clip
index), so datasets never need to be stored to be reproduced.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CLASSES = ("translate-left", "translate-right", "translate-up", "translate-down",
           "grow", "shrink", "rotate-cw", "rotate-ccw")

_MAGIC = b"MFSTDATA"
_VERSION = 1


class FormatError(ValueError):
    """Malformed dataset or checkpoint file."""


@dataclass
class DatasetSpec:
    n_classes: int = 8
    t: int = 16
    h: int = 64
    w: int = 64
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_classes != len(CLASSES):
            raise ValueError(f"n_classes must be {len(CLASSES)}")
        if min(self.t, self.h, self.w) < 8:
            raise ValueError("clip geometry too small")


@dataclass
class VideoClip:
    rgb: np.ndarray      # (T, 3, H, W) in [0, 1]
    depth: np.ndarray    # (T, 1, H, W) in [0, 1]
    label: int
    clip_id: int


def _clip_rng(spec: DatasetSpec, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((spec.seed, index)))


@dataclass
class _ClipParams:
    shape: str
    label: int
    cx: float
    cy: float
    size: float
    angle: float
    speed: float
    growth: float
    omega: float
    color: np.ndarray
    depth0: float
    depth_dir: float


def _draw_params(spec: DatasetSpec, index: int) -> _ClipParams:
    rng = _clip_rng(spec, index)
    label = index % spec.n_classes
    name = CLASSES[label]
    # circles are rotation-invariant, so rotation classes avoid them
    shapes = ("square", "bar") if name.startswith("rotate") else ("square", "circle", "bar")
    shape = shapes[rng.integers(len(shapes))]
    margin = 0.35 * spec.w
    cx = rng.uniform(margin, spec.w - margin)
    cy = rng.uniform(margin, spec.h - margin)
    size = rng.uniform(6.0, 10.0)
    angle = rng.uniform(0.0, 2 * np.pi)
    speed = rng.uniform(0.7, 1.1)
    growth = rng.uniform(0.55, 0.75)
    omega = np.deg2rad(rng.uniform(10.0, 16.0))
    color = rng.uniform(0.45, 1.0, size=3).astype(np.float32)
    # depth ramps toward the camera for translate/grow, away otherwise
    toward = name in ("translate-left", "translate-right", "translate-up",
                      "translate-down", "grow")
    depth_dir = 0.35 if toward else -0.35
    depth0 = 0.55 - depth_dir / 2
    return _ClipParams(shape, label, cx, cy, size, angle, speed, growth, omega,
                       color, depth0, depth_dir)


def _frame_state(p: _ClipParams, frame: int, t_total: int):
    """Center, size, and angle of the object at one frame."""
    name = CLASSES[p.label]
    f = frame
    u = frame / max(t_total - 1, 1)
    cx, cy, size, angle = p.cx, p.cy, p.size, p.angle
    if name == "translate-left":
        cx -= p.speed * f
    elif name == "translate-right":
        cx += p.speed * f
    elif name == "translate-up":
        cy -= p.speed * f
    elif name == "translate-down":
        cy += p.speed * f
    elif name == "grow":
        size *= 1.0 + p.growth * u
    elif name == "shrink":
        size /= 1.0 + p.growth * u
    elif name == "rotate-cw":
        angle -= p.omega * f
    elif name == "rotate-ccw":
        angle += p.omega * f
    return cx, cy, size, angle


def _render_mask(p: _ClipParams, cx, cy, size, angle, h, w) -> np.ndarray:
    """Soft silhouette in [0, 1] from a signed distance field."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    ca, sa = np.cos(angle), np.sin(angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    if p.shape == "circle":
        sd = np.hypot(dx, dy) - size
    elif p.shape == "square":
        sd = np.maximum(np.abs(u), np.abs(v)) - size
    else:  # bar, roughly 4:1 aspect
        sd = np.maximum(np.abs(u) - 1.8 * size, np.abs(v) - 0.45 * size)
    return np.clip(0.5 - sd / 1.5, 0.0, 1.0).astype(np.float32)


def object_masks(spec: DatasetSpec, index: int) -> np.ndarray:
    """Pre-noise silhouettes (T, H, W); verification oracle surface."""
    p = _draw_params(spec, index)
    return np.stack([
        _render_mask(p, *_frame_state(p, f, spec.t), spec.h, spec.w)
        for f in range(spec.t)
    ])


def gen_clip(spec: DatasetSpec, index: int) -> VideoClip:
    p = _draw_params(spec, index)
    masks = object_masks(spec, index)
    rgb = masks[:, None, :, :] * p.color[None, :, None, None]
    t_total = spec.t
    depth_vals = p.depth0 + p.depth_dir * np.arange(t_total) / max(t_total - 1, 1)
    depth = masks[:, None, :, :] * depth_vals[:, None, None, None].astype(np.float32)
    noise_rng = np.random.default_rng(np.random.SeedSequence((spec.seed, index, 1)))
    rgb = rgb + noise_rng.normal(0.0, spec.noise_sigma, rgb.shape)
    depth = depth + noise_rng.normal(0.0, spec.noise_sigma, depth.shape)
    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
    depth = np.clip(depth, 0.0, 1.0).astype(np.float32)
    return VideoClip(rgb=rgb, depth=depth, label=p.label, clip_id=index)


def gen_dataset(spec: DatasetSpec, n_clips: int, start_index: int = 0) -> list[VideoClip]:
    return [gen_clip(spec, i) for i in range(start_index, start_index + n_clips)]


# ---------------------------------------------------------------------------
# file format: magic "MFSTDATA", version u32, clip_count u64; per clip
# clip_id u64, label u32, T u32, H u32, W u32, rgb f32[T*3*H*W],
# depth f32[T*1*H*W]; little-endian throughout.
# ---------------------------------------------------------------------------

_MAX_DIM = 1 << 16


def write_dataset(clips: list[VideoClip], path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sIQ", _MAGIC, _VERSION, len(clips)))
        for c in clips:
            t, _, h, w = c.rgb.shape
            if max(t, h, w) >= _MAX_DIM:
                raise FormatError(f"clip dimensions too large: {(t, h, w)}")
            fh.write(struct.pack("<QIIII", c.clip_id, c.label, t, h, w))
            fh.write(np.ascontiguousarray(c.rgb, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(c.depth, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def read_dataset(path) -> list[VideoClip]:
    with open(path, "rb") as fh:
        magic, version, count = struct.unpack("<8sIQ", _read_exact(fh, 20))
        if magic != _MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != _VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        clips = []
        for _ in range(count):
            clip_id, label, t, h, w = struct.unpack("<QIIII", _read_exact(fh, 24))
            if max(t, h, w) >= _MAX_DIM or min(t, h, w) == 0:
                raise FormatError(f"bad clip dimensions {(t, h, w)}")
            rgb = np.frombuffer(_read_exact(fh, t * 3 * h * w * 4), dtype="<f4")
            depth = np.frombuffer(_read_exact(fh, t * h * w * 4), dtype="<f4")
            clips.append(VideoClip(
                rgb=rgb.reshape(t, 3, h, w).copy(),
                depth=depth.reshape(t, 1, h, w).copy(),
                label=int(label), clip_id=int(clip_id)))
        return clips


# ---------------------------------------------------------------------------
# MixUp
# ---------------------------------------------------------------------------

def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    """Beta(alpha, alpha) via the gamma-ratio construction; the method is
    pinned so seeded draws stay reproducible within this implementation."""
    if alpha <= 0:
        raise ValueError(f"mixup alpha must be positive, got {alpha}")
    g1 = rng.standard_gamma(alpha)
    g2 = rng.standard_gamma(alpha)
    if g1 + g2 == 0.0:
        return 0.5
    return float(g1 / (g1 + g2))


def mixup(batch_x: np.ndarray, batch_y: np.ndarray, alpha: float,
          rng: np.random.Generator, lam: float | None = None):
    """Convex combination of each item with a permuted partner.

    ``batch_y`` is one-hot (or soft) label rows; ``lam`` overrides the
    Beta draw (used by tests)."""
    if lam is None:
        lam = sample_beta(alpha, rng)
    perm = rng.permutation(batch_x.shape[0])
    lam32 = np.float32(lam)
    mixed_x = lam32 * batch_x + (1 - lam32) * batch_x[perm]
    mixed_y = lam32 * batch_y + (1 - lam32) * batch_y[perm]
    return mixed_x.astype(np.float32), mixed_y.astype(np.float32)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.size, n_classes), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


def clip_input(clip: VideoClip, modality: str) -> np.ndarray:
    """(C, T, H, W) network input for one clip."""
    vol = clip.rgb if modality == "rgb" else clip.depth
    return np.ascontiguousarray(vol.transpose(1, 0, 2, 3))


def batch_inputs(clips: list[VideoClip], modality: str) -> np.ndarray:
    return np.stack([clip_input(c, modality) for c in clips])
