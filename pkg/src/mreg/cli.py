"""``mreg`` command line: gen, train, eval, predict, scores.

Every command reads one JSON run configuration::

    {
      "seed": 0,
      "data_dir": "data/bench",
      "output_dir": "runs/bench",
      "dataset": {"counts": {"train": [80, 80, 80], "val": [20, 20, 20], "test": [40, 40, 40]},
                  "dims": [48, 64, 64]},
      "train": {"epochs": 30, "learning_rate": 0.001}
    }

``MREG_SEED`` overrides ``seed``. Exit codes: 0 ok, 2 config, 3 I/O,
4 divergence, 5 shape mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import fields
from pathlib import Path

import jsonschema
import numpy as np

from . import dataio, evalstat, synthgen
from .trainer import (LOSS_COLUMNS, ShapeMismatchError, TrainConfig, evaluate_split,
                      load_checkpoint, model_from_checkpoint, predict_outputs,
                      save_checkpoint, train, write_history)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_SHAPE = 0, 2, 3, 4, 5

log = logging.getLogger("mreg")

_COUNTS = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 3, "maxItems": 3}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["data_dir", "output_dir"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "data_dir": {"type": "string"},
        "output_dir": {"type": "string"},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "counts": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {s: _COUNTS for s in synthgen.SPLITS},
                },
                "dims": {"type": "array", "items": {"type": "integer"}, "minItems": 3, "maxItems": 3},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {} for k in sorted(_TRAIN_KEYS)},
        },
    },
}


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(path, ablations=()) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        jsonschema.validate(cfg, RUN_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{path}: {exc.message}") from exc
    cfg.setdefault("seed", 0)
    cfg.setdefault("dataset", {})
    cfg.setdefault("train", {})
    if "MREG_SEED" in os.environ:
        try:
            cfg["seed"] = int(os.environ["MREG_SEED"])
        except ValueError as exc:
            raise ConfigError(f"MREG_SEED must be an integer, got {os.environ['MREG_SEED']!r}") from exc
    for item in ablations:
        key, sep, value = item.partition("=")
        if not sep or key not in _TRAIN_KEYS:
            raise ConfigError(f"bad --ablation {item!r}; expected k=v with k one of the training options")
        cfg["train"][key] = _parse_value(value)
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig.from_dict({**cfg["train"], "seed": cfg["seed"]})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training options: {exc}") from exc


def _out_dir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _archive_config(cfg, out: Path) -> None:
    with open(out / "run_config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen(cfg, args) -> int:
    ds = cfg["dataset"]
    counts = ds.get("counts", {"train": [2, 2, 2], "val": [1, 1, 1], "test": [1, 1, 1]})
    dims = tuple(ds.get("dims", (48, 64, 64)))
    tc = train_config(cfg)
    records = synthgen.gen_dataset(counts, cfg["data_dir"], dims=dims, seed=cfg["seed"],
                                   n_clips=tc.n_instances, clip_len=tc.clip_len)
    manifest = Path(cfg["data_dir"]) / "manifest.jsonl"
    tally = Counter((r["split"], r["grade"]) for r in records)
    for split in synthgen.SPLITS:
        row = [tally[(split, g)] for g in synthgen.GRADES]
        print(f"{split:5s} grade0={row[0]} grade1={row[1]} grade2={row[2]} total={sum(row)}")
    digest = hashlib.sha256(manifest.read_bytes()).hexdigest()
    print(f"manifest {manifest} sha256={digest}")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    tc = train_config(cfg)
    out = Path(args.out) if args.out else _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _archive_config(cfg, out)
    result = train(tc, cfg["data_dir"])
    save_checkpoint(result.checkpoint, out / "best.mreg")
    save_checkpoint(result.final, out / "final.mreg")
    write_history(result.history, out / "history.csv", ("epoch", "step", *LOSS_COLUMNS))
    write_history(result.epoch_history, out / "history_epochs.csv",
                  ("epoch", "val_accuracy", "val_binary_accuracy", "train_loss"))
    if result.diverged:
        print(result.divergence_report, file=sys.stderr)
        return EXIT_DIVERGED
    print(f"best val accuracy {result.checkpoint.val_accuracy:.2f} (epoch {result.checkpoint.epoch})")
    return EXIT_OK


def _checkpoint_path(cfg, args) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    return Path(cfg["output_dir"]) / "best.mreg"


def _load_ckpt(cfg, args):
    ckpt = load_checkpoint(_checkpoint_path(cfg, args))
    want = train_config(cfg)
    got = TrainConfig.from_dict(ckpt.config)
    for key in ("dim", "n_patches", "n_instances", "clip_len", "frame_hw", "kernel_width"):
        if getattr(want, key) != getattr(got, key):
            raise ShapeMismatchError(
                f"checkpoint {key}={getattr(got, key)} but config {key}={getattr(want, key)}")
    return ckpt


def cmd_eval(cfg, args) -> int:
    ckpt = _load_ckpt(cfg, args)
    report, _, _, _ = evaluate_split(ckpt, cfg["data_dir"], args.split)
    text = report.to_json()
    out = Path(args.out) if args.out else _out_dir(cfg) / f"metrics_{args.split}.json"
    out.write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_predict(cfg, args) -> int:
    if not args.video:
        raise ConfigError("predict needs --video <frame directory>")
    ckpt = _load_ckpt(cfg, args)
    tc = TrainConfig.from_dict(ckpt.config)
    vdir = Path(args.video)
    files = sorted(vdir.glob("*.ppm"))
    if not files:
        raise FileNotFoundError(f"no .ppm frames in {vdir}")
    frames = np.stack([synthgen.read_ppm(f) for f in files])
    roi = _roi_for(vdir, frames, args.roi)
    clips = dataio.crop_and_resize(frames, roi, tc.frame_hw)
    bag = dataio.make_bag(clips, tc.n_instances, tc.clip_len, vdir.name)
    out = predict_outputs(model_from_checkpoint(ckpt, tc), bag.clips[None], tc, tag=3)[0]
    print(json.dumps({"video": vdir.name, "grade": out.grade_pred,
                      "regression_value": float(out.regression_value), "alpha": out.alpha}))
    return EXIT_OK


def _roi_for(vdir: Path, frames, roi_arg):
    if roi_arg:
        return [int(v) for v in roi_arg.split(",")]
    manifest = vdir.parent / "manifest.jsonl"
    if manifest.exists():
        for rec in synthgen.read_manifest(manifest):
            if rec["dir"] == vdir.name:
                return rec["roi"]
    h, w = frames.shape[1:3]
    return [0, 0, w, h]


def cmd_scores(cfg, args) -> int:
    ckpt = _load_ckpt(cfg, args)
    _, outs, recs, y = evaluate_split(ckpt, cfg["data_dir"], args.split)
    out = Path(args.out) if args.out else _out_dir(cfg) / f"frame_scores_{args.split}.csv"
    n = evalstat.export_frame_scores(((r["id"], o, int(lbl)) for r, o, lbl in zip(recs, outs, y)), out)
    print(f"wrote {n} rows to {out}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "scores": cmd_scores}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mreg", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--ablation", action="append", default=[], metavar="K=V",
                   help="override a training option, e.g. use_amp=false")
    p.add_argument("--split", default="test", choices=synthgen.SPLITS)
    p.add_argument("--out", help="output path (file for eval/scores, directory for train)")
    p.add_argument("--checkpoint", help="checkpoint path (default: <output_dir>/best.mreg)")
    p.add_argument("--video", help="frame directory for predict")
    p.add_argument("--roi", help="x,y,w,h crop for predict (default: manifest entry or full frame)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, args.ablation)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ShapeMismatchError as exc:
        print(f"shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
