"""Training and evaluation loops, metrics, confusion-matrix reporting."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor, no_grad
from .checkpoint import Checkpoint, save_checkpoint, pack_rng_state
from .config import RunConfig, run_config_to_json, run_config_from_json, ConfigError
from .data import VideoClip, CLASSES, batch_inputs, mixup, one_hot
from .model import MfstModel, fuse_modalities
from .optim import SgdOptimizer, lr_at


@dataclass
class Metrics:
    accuracy: float
    per_class: np.ndarray            # (n_classes,) accuracy, nan if no samples
    confusion: np.ndarray            # (n_classes, n_classes) counts, rows = truth

    def render_text(self, class_names=CLASSES) -> str:
        n = self.confusion.shape[0]
        width = max(max(len(c) for c in class_names), 5)
        lines = [f"top-1 accuracy: {self.accuracy:.4f}", ""]
        header = " " * (width + 2) + " ".join(f"{i:>5d}" for i in range(n))
        lines.append(header)
        for i in range(n):
            row = " ".join(f"{int(v):>5d}" for v in self.confusion[i])
            lines.append(f"{class_names[i]:>{width}}  {row}")
        lines.append("")
        for i in range(n):
            acc = self.per_class[i]
            txt = "n/a" if np.isnan(acc) else f"{acc:.4f}"
            lines.append(f"{class_names[i]:>{width}}: {txt}")
        return "\n".join(lines)


def metrics_from_predictions(labels: np.ndarray, preds: np.ndarray,
                             n_classes: int) -> Metrics:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(labels, preds):
        confusion[t, p] += 1
    total = confusion.sum()
    accuracy = float(np.trace(confusion)) / total if total else 0.0
    row_sums = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(row_sums > 0,
                             np.diag(confusion) / np.maximum(row_sums, 1), np.nan)
    return Metrics(accuracy=accuracy, per_class=per_class, confusion=confusion)


def cross_entropy(logits: Tensor, target_probs: np.ndarray) -> Tensor:
    """Mean cross-entropy against (possibly soft) target rows."""
    logp = T.log_softmax(logits)
    picked = T.mul(logp, Tensor(target_probs))
    return T.scale(T.sum_(picked), -1.0 / logits.shape[0])


def _batches(n: int, batch_size: int, order=None):
    order = np.arange(n) if order is None else order
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def predict_logits(model: MfstModel, clips: list[VideoClip],
                   batch_size: int = 8) -> np.ndarray:
    out = []
    with no_grad():
        for idx in _batches(len(clips), batch_size):
            xs = batch_inputs([clips[i] for i in idx], model.cfg.modality)
            out.append(model(Tensor(xs)).data)
    return np.concatenate(out, axis=0)


def evaluate(model: MfstModel, clips: list[VideoClip],
             batch_size: int = 8) -> Metrics:
    logits = predict_logits(model, clips, batch_size)
    labels = np.array([c.label for c in clips])
    return metrics_from_predictions(labels, logits.argmax(axis=1),
                                    model.cfg.n_classes)


def evaluate_fused(model_rgb: MfstModel, model_dep: MfstModel,
                   clips: list[VideoClip], batch_size: int = 8) -> Metrics:
    lr = predict_logits(model_rgb, clips, batch_size)
    ld = predict_logits(model_dep, clips, batch_size)
    probs = fuse_modalities(lr, ld)
    labels = np.array([c.label for c in clips])
    return metrics_from_predictions(labels, probs.argmax(axis=1),
                                    model_rgb.cfg.n_classes)


@dataclass
class TrainResult:
    model: MfstModel
    optimizer: SgdOptimizer
    rng: np.random.Generator
    epochs_run: int
    history: list[dict] = field(default_factory=list)

    def checkpoint(self, config: RunConfig) -> Checkpoint:
        return Checkpoint(
            config_json=run_config_to_json(config),
            params={p.name: p.data.copy() for p in self.model.params()},
            velocity={k: v.copy() for k, v in self.optimizer.velocity.items()},
            epoch=self.epochs_run,
            rng_words=pack_rng_state(self.rng))


def train(config: RunConfig, train_clips: list[VideoClip],
          val_clips: list[VideoClip] | None = None,
          out_dir=None, log=print,
          stop_at_train_acc: float | None = None) -> TrainResult:
    """Minibatch SGD with MixUp and soft-label cross-entropy.

    Deterministic under a fixed config seed. Writes ``last.ckpt`` (and
    ``best.ckpt``, by validation accuracy) into ``out_dir`` if given.
    ``stop_at_train_acc`` ends the run early once the epoch's train
    accuracy reaches the threshold.
    """
    mcfg, ocfg = config.model, config.optimizer
    for c in train_clips:
        if c.label >= mcfg.n_classes:
            raise ConfigError(f"clip label {c.label} >= n_classes {mcfg.n_classes}")
        t, _, h, w = c.rgb.shape
        if (t, h, w) != (mcfg.input_t, mcfg.input_h, mcfg.input_w):
            raise ConfigError(
                f"clip geometry {(t, h, w)} does not match config "
                f"{(mcfg.input_t, mcfg.input_h, mcfg.input_w)}")

    model = MfstModel(mcfg, seed=config.seed)
    opt = SgdOptimizer(model.params(), ocfg)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xC0FFEE)))

    n = len(train_clips)
    steps_per_epoch = (n + ocfg.batch_size - 1) // ocfg.batch_size
    step = 0
    best_val = -1.0
    result = TrainResult(model=model, optimizer=opt, rng=rng, epochs_run=0)

    for epoch in range(ocfg.total_epochs):
        t0 = time.time()
        order = rng.permutation(n)
        losses = []
        correct = 0
        for idx in _batches(n, ocfg.batch_size, order):
            batch = [train_clips[i] for i in idx]
            xs = batch_inputs(batch, mcfg.modality)
            labels = np.array([c.label for c in batch])
            ys = one_hot(labels, mcfg.n_classes)
            if ocfg.mixup_alpha > 0:
                xs, ys = mixup(xs, ys, ocfg.mixup_alpha, rng)
            logits = model(Tensor(xs))
            loss = cross_entropy(logits, ys)
            opt.zero_grad()
            T.backward(loss)
            opt.step(lr_at(step, steps_per_epoch, ocfg))
            step += 1
            losses.append(loss.item())
            correct += int((logits.data.argmax(axis=1) == ys.argmax(axis=1)).sum())
        train_acc = correct / n
        entry = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)),
                 "train_acc": train_acc}
        result.epochs_run = epoch + 1

        if val_clips:
            val = evaluate(model, val_clips, ocfg.batch_size)
            entry["val_acc"] = val.accuracy
            if out_dir is not None and val.accuracy > best_val:
                best_val = val.accuracy
                save_checkpoint(f"{out_dir}/best.ckpt", result.checkpoint(config))
        result.history.append(entry)
        if log:
            msg = (f"epoch {entry['epoch']:4d}  loss {entry['train_loss']:.4f}  "
                   f"train acc {train_acc:.3f}")
            if "val_acc" in entry:
                msg += f"  val acc {entry['val_acc']:.3f}"
            log(msg + f"  ({time.time() - t0:.1f}s)")
        if stop_at_train_acc is not None and train_acc >= stop_at_train_acc:
            break

    if out_dir is not None:
        save_checkpoint(f"{out_dir}/last.ckpt", result.checkpoint(config))
        if not val_clips:
            save_checkpoint(f"{out_dir}/best.ckpt", result.checkpoint(config))
    return result


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[MfstModel, RunConfig]:
    config = run_config_from_json(ckpt.config_json)
    model = MfstModel(config.model, seed=config.seed)
    model.load_state(ckpt.params)
    return model, config
