"""Command-line interface: ``graphcap synth | train | generate | evaluate``.

Training configuration resolves in precedence order: built-in defaults, then
``--config`` JSON file (keys are TrainConfig field names), then ``LSG_*``
environment variables (keyed on flag names, e.g. ``LSG_BETA``), then explicit
flags.  Every command writes a ``run_manifest.json`` next to its primary
output recording the resolved configuration, paths, seed, and timestamps.

Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from .bundle import load_bundle, load_captions, save_bundle, save_captions, captions_by_video
from .config import ConfigError, TrainConfig
from .metrics import format_report, make_pairs, metric_table
from .model import feature_dims
from .synthetic import synth_corpus
from . import training

ENV_PREFIX = "LSG_"


class UsageError(Exception):
    """Bad invocation (missing inputs, refusing to overwrite, invalid config)."""


# flag name -> TrainConfig field; identity unless renamed
_TRAIN_FLAGS = {
    "k": "num_words",
    "kprime": "num_compare",
    "beta": "adv_weight",
    "ndisc": "critic_iters",
    "penalty": "penalty_weight",
    "batch": "batch_size",
    "lr": "lr_gen",
    "beam": "beam_width",
    "lr_critic_start": "lr_critic_start",
    "lr_critic_end": "lr_critic_end",
    "graph_dim": "graph_dim",
    "hidden_dim": "hidden_dim",
    "embed_dim": "embed_dim",
    "sentence_dim": "sentence_dim",
    "kernel_dim": "kernel_dim",
    "mlb_dim": "mlb_dim",
    "epochs": "epochs",
    "seed": "seed",
    "max_caption_len": "max_caption_len",
    "min_count": "min_count",
    "val_fraction": "val_fraction",
    "grad_clip": "grad_clip",
    "free_running": "free_running",
}

_FIELD_TYPES = {
    "num_words": int, "num_compare": int, "adv_weight": float, "critic_iters": int,
    "penalty_weight": float, "batch_size": int, "lr_gen": float, "beam_width": int,
    "lr_critic_start": float, "lr_critic_end": float, "graph_dim": int, "hidden_dim": int,
    "embed_dim": int, "sentence_dim": int, "kernel_dim": int, "mlb_dim": int,
    "epochs": int, "seed": int, "max_caption_len": int, "min_count": int,
    "val_fraction": float, "grad_clip": float, "free_running": bool,
}


def _parse_env_value(raw, to_type):
    if to_type is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"cannot parse boolean from {raw!r}")
    try:
        return to_type(raw)
    except ValueError as exc:
        raise UsageError(f"cannot parse {raw!r} as {to_type.__name__}") from exc


def resolve_train_config(args):
    """defaults < config file < LSG_* environment < flags"""
    # raw field defaults: derived values (num_compare, kernel_dim) stay None
    # here so they re-derive from whatever num_words/graph_dim resolve to
    values = {f.name: f.default for f in dataclasses.fields(TrainConfig)}

    if args.config is not None:
        config_path = Path(args.config)
        if not config_path.exists():
            raise UsageError(f"config file not found: {config_path}")
        try:
            file_values = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {config_path} is not valid JSON: {exc}") from exc
        unknown = set(file_values) - set(values)
        if unknown:
            raise UsageError(f"unknown keys in config file: {sorted(unknown)}")
        values.update(file_values)

    for flag, field in _TRAIN_FLAGS.items():
        env_key = ENV_PREFIX + flag.upper()
        if env_key in os.environ:
            values[field] = _parse_env_value(os.environ[env_key], _FIELD_TYPES[field])

    for flag, field in _TRAIN_FLAGS.items():
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[field] = flag_value

    if getattr(args, "no_disc", False):
        values["adv_weight"] = 0.0
        values["critic_iters"] = 0

    try:
        return TrainConfig.from_dict(values)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _now():
    return datetime.now(timezone.utc).isoformat()


def _manifest_path(primary_output):
    primary_output = Path(primary_output)
    if primary_output.is_dir():
        return primary_output / "run_manifest.json"
    return primary_output.parent / (primary_output.stem + ".run_manifest.json")


def write_run_manifest(primary_output, command, config, inputs, outputs, seed, started_at):
    payload = {
        "command": command,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seed": seed,
        "started_at": started_at,
        "finished_at": _now(),
    }
    path = _manifest_path(primary_output)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def _require_file(path, what):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args):
    started = _now()
    out = Path(args.out)
    captions_path = out / "captions.jsonl"
    if (out / "manifest.json").exists() and not args.force:
        raise UsageError(f"{out} already holds a bundle (pass --force to overwrite)")
    videos, records = synth_corpus(
        num_scenes=args.scenes,
        banks=(args.objects, args.actions, args.backgrounds),
        seed=args.seed,
        frames=args.frames,
        regions_per_frame=args.regions,
        feature_dim=args.dim,
        noise=args.noise,
        max_objects=args.max_objects,
    )
    save_bundle(videos, out, force=True)
    save_captions(records, captions_path)
    write_run_manifest(
        out, "synth",
        config={
            "scenes": args.scenes, "objects": args.objects, "actions": args.actions,
            "backgrounds": args.backgrounds, "frames": args.frames, "regions": args.regions,
            "dim": args.dim, "noise": args.noise, "max_objects": args.max_objects,
        },
        inputs={}, outputs={"bundle": out, "captions": captions_path},
        seed=args.seed, started_at=started,
    )
    print(f"wrote {len(videos)} scenes and {len(records)} captions to {out}")
    return 0


def cmd_train(args):
    started = _now()
    cfg = resolve_train_config(args)
    data_dir = _require_file(args.data, "data directory")
    captions_path = Path(args.captions) if args.captions else data_dir / "captions.jsonl"
    _require_file(captions_path, "captions file")
    _require_file(data_dir / "manifest.json", "bundle manifest")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / "checkpoint.pt"
    log_path = out / "train_log.jsonl"
    if checkpoint_path.exists() and not args.force and not args.resume:
        raise UsageError(f"{checkpoint_path} already exists (pass --force or --resume)")
    if args.resume and not checkpoint_path.exists():
        raise UsageError(f"--resume given but {checkpoint_path} does not exist")

    videos = load_bundle(data_dir)
    records = load_captions(captions_path)

    def progress(row):
        print(json.dumps(row))

    training.train(
        videos, records, cfg,
        checkpoint_path=checkpoint_path, log_path=log_path,
        resume=checkpoint_path if args.resume else None,
        progress=progress if not args.quiet else None,
    )
    write_run_manifest(
        out, "train", config=cfg.to_dict(),
        inputs={"bundle": data_dir, "captions": captions_path},
        outputs={"checkpoint": checkpoint_path, "log": log_path},
        seed=cfg.seed, started_at=started,
    )
    return 0


def cmd_generate(args):
    started = _now()
    checkpoint_path = _require_file(args.checkpoint, "checkpoint")
    data_dir = _require_file(args.data, "data directory")
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} already exists (pass --force to overwrite)")

    ckpt = training.load_checkpoint(checkpoint_path)
    videos = load_bundle(data_dir)
    dims = tuple(feature_dims(videos))
    if dims != tuple(ckpt.dims):
        raise RuntimeError(
            f"bundle feature dims {dims} do not match checkpoint dims {tuple(ckpt.dims)}"
        )
    beam = args.beam if args.beam is not None else ckpt.config.beam_width
    decoded = training.decode_videos(ckpt, videos, beam=beam)
    save_captions([(v.video_id, decoded[v.video_id]) for v in videos], out)
    write_run_manifest(
        out, "generate", config={"beam": beam, **ckpt.config.to_dict()},
        inputs={"checkpoint": checkpoint_path, "bundle": data_dir},
        outputs={"captions": out}, seed=ckpt.config.seed, started_at=started,
    )
    print(f"wrote {len(videos)} captions to {out}")
    return 0


def cmd_evaluate(args):
    started = _now()
    candidates_path = _require_file(args.candidates, "candidates file")
    references_path = _require_file(args.references, "references file")

    candidate_records = load_captions(candidates_path)
    candidates = {}
    for video_id, caption in candidate_records:
        candidates.setdefault(video_id, caption)  # first caption per video wins
    references = captions_by_video(load_captions(references_path))

    table = metric_table(make_pairs(candidates, references))
    report = format_report({args.split: table})
    print(report)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report + "\n")
    write_run_manifest(
        out, "evaluate", config={"split": args.split},
        inputs={"candidates": candidates_path, "references": references_path},
        outputs={"report": out}, seed=0, started_at=started,
    )
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser():
    parser = argparse.ArgumentParser(prog="graphcap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene bundle + captions")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--objects", type=int, default=20)
    p.add_argument("--actions", type=int, default=10)
    p.add_argument("--backgrounds", type=int, default=5)
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--regions", type=int, default=3)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--max-objects", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a feature bundle + captions")
    p.add_argument("--data", required=True, help="bundle directory")
    p.add_argument("--captions", default=None, help="captions file (default: <data>/captions.jsonl)")
    p.add_argument("--out", required=True, help="output directory for checkpoint + log")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--resume", action="store_true", help="resume from <out>/checkpoint.pt")
    p.add_argument("--force", action="store_true")
    p.add_argument("--no-disc", action="store_true",
                   help="disable the validator: adversarial weight 0, no critic updates")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--k", type=int, default=None, help="visual words per channel")
    p.add_argument("--kprime", type=int, default=None, help="word pairs scored by the validator")
    p.add_argument("--beta", type=float, default=None, help="adversarial loss weight")
    p.add_argument("--ndisc", type=int, default=None, help="critic updates per generator update")
    p.add_argument("--penalty", type=float, default=None, help="gradient penalty coefficient")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-critic-start", type=float, default=None)
    p.add_argument("--lr-critic-end", type=float, default=None)
    p.add_argument("--graph-dim", type=int, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--sentence-dim", type=int, default=None)
    p.add_argument("--kernel-dim", type=int, default=None)
    p.add_argument("--mlb-dim", type=int, default=None)
    p.add_argument("--max-caption-len", type=int, default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--free-running", action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode captions for every video in a bundle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output captions file")
    p.add_argument("--beam", type=int, default=None, help="beam width (default: checkpoint setting)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated captions against references")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out", required=True, help="report output file")
    p.add_argument("--split", default="eval", help="row label in the report")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # CLI boundary: report and signal runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
