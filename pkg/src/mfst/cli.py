"""Command-line surface: gen-data, train, eval, infer, verify.

Exit codes: 0 success, 1 validation/check failure, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import ConfigError, run_config_from_json
from .data import (CLASSES, DatasetSpec, FormatError, gen_dataset,
                   read_dataset, write_dataset)
from .model import fuse_modalities
from .train import (evaluate, evaluate_fused, model_from_checkpoint,
                    predict_logits, train)
from .verify import run_verify


def _cmd_gen_data(args) -> int:
    spec_obj = json.loads(Path(args.spec).read_text())
    n_clips = int(spec_obj.pop("n_clips"))
    start = int(spec_obj.pop("start_index", 0))
    spec = DatasetSpec(**spec_obj)
    clips = gen_dataset(spec, n_clips, start)
    write_dataset(clips, args.out)
    print(f"wrote {len(clips)} clips ({spec.t}x{spec.h}x{spec.w}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = run_config_from_json(Path(args.config).read_text())
    if args.seed is not None:
        config.seed = args.seed
    clips = read_dataset(args.data)
    val = read_dataset(args.val_data) if args.val_data else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(config, clips, val, out_dir=str(out_dir))
    last = result.history[-1] if result.history else {}
    print(f"done: {result.epochs_run} epochs, "
          f"final train acc {last.get('train_acc', float('nan')):.3f}")
    return 0


def _cmd_eval(args) -> int:
    clips = read_dataset(args.data)
    model, _ = model_from_checkpoint(load_checkpoint(args.ckpt))
    if args.ckpt2:
        model2, _ = model_from_checkpoint(load_checkpoint(args.ckpt2))
        metrics = evaluate_fused(model, model2, clips)
        print(f"fused ({model.cfg.modality} + {model2.cfg.modality}):")
    else:
        metrics = evaluate(model, clips)
        print(f"{model.cfg.modality} modality:")
    text = metrics.render_text()
    print(text)
    if args.confusion:
        Path(args.confusion).write_text(text + "\n")
    return 0


def _cmd_infer(args) -> int:
    clips = read_dataset(args.clip)
    if not clips:
        raise FormatError("clip file contains no clips")
    model, _ = model_from_checkpoint(load_checkpoint(args.ckpt))
    clip = clips[args.index]
    logits = predict_logits(model, [clip])
    probs = fuse_modalities(logits, logits)[0]
    pred = int(probs.argmax())
    print(f"predicted: {CLASSES[pred]} (class {pred})")
    for i, p in enumerate(probs):
        print(f"  {CLASSES[i]:>16}: {p:.4f}")
    if clip.label is not None:
        print(f"labeled: {CLASSES[clip.label]} (class {clip.label})")
    return 0


def _cmd_verify(args) -> int:
    ok = run_verify(args.filter)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfst",
                                description="multi-stage factorized "
                                            "spatio-temporal RGB-D recognizer")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic RGB-D dataset file")
    g.add_argument("--spec", required=True,
                   help="JSON with n_clips and DatasetSpec fields")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a config and dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--val-data", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--ckpt2", default=None, help="second checkpoint for fusion")
    e.add_argument("--data", required=True)
    e.add_argument("--confusion", default=None,
                   help="write the confusion-matrix table to this path")
    e.set_defaults(fn=_cmd_eval)

    i = sub.add_parser("infer", help="classify one clip from a dataset file")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--clip", required=True)
    i.add_argument("--index", type=int, default=0)
    i.set_defaults(fn=_cmd_infer)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.add_argument("--filter", default=None)
    v.set_defaults(fn=_cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, FormatError, json.JSONDecodeError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
