"""Command-line interface: ``dvfa <command> [flags]``.

Every flag can also be set in an INI file (``--config`` or the ``DVFA_CONFIG``
environment variable) under a section named after the command, using the
flag's long name with dashes replaced by underscores. Flags win over the file.

Exit codes: 0 success, 2 usage or invalid configuration, 3 data error,
4 model or checkpoint error.

Times in alignment output and subtitles: a word covering frames a..b
(0-based) starts at a * 1000 / fps ms and ends at (b + 1) * 1000 / fps ms.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from . import schemas
from .checkpoint import CheckpointError
from .codec import DEFAULT_FPS, alignment_document, frames_to_ms
from .srt import export_srt
from .synth import CorpusConfig, DataError, gen_corpus, load_corpus
from .trainer import TrainConfig, TrainingError, align, evaluate, load_model, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4
CONFIG_ENV = "DVFA_CONFIG"
LABEL_ORDER = ("substitution", "addition", "deletion-adjacent", "absent")

log = logging.getLogger("dvfa")


class UsageError(ValueError):
    pass


# -- argument parsing ---------------------------------------------------------

def _add_data_flags(p):
    p.add_argument("--out", required=False, help="output corpus directory")
    p.add_argument("--seed", type=int, help="generation seed (default 0)")
    p.add_argument("--force", action="store_true", default=None, help="overwrite a non-empty output directory")
    for f in CorpusConfig.__dataclass_fields__.values():
        p.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), dest=f.name,
                       help=f"corpus setting (default {f.default})")


def _add_train_flags(p):
    p.add_argument("--data", help="corpus directory")
    p.add_argument("--out", help="run directory for checkpoints and metrics.jsonl")
    p.add_argument("--resume", action="store_true", default=None, help="continue from <out>/last.npz")
    choices = {"method": ("dvfa", "ctc"), "preset": ("desk", "paper"), "transcript": ("word", "phoneme"),
               "target": ("position", "word")}
    flag_names = {"transcript": "--mode"}
    for f in TrainConfig.__dataclass_fields__.values():
        flag = flag_names.get(f.name, "--" + f.name.replace("_", "-"))
        p.add_argument(flag, type=type(f.default), dest=f.name, choices=choices.get(f.name),
                       help=f"(default {f.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dvfa", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help=f"INI config file (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_data_flags(sub.add_parser("gen-data", help="write a synthetic corpus"))
    _add_train_flags(sub.add_parser("train", help="train a DVFA or CTC model"))

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--mode", choices=("clean", "anomaly", "phoneme"))
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", help="write the JSON report here instead of stdout")

    for name, text_flag, help_text in (("align", "--transcript", "align a transcript to a feature file"),
                                       ("interpret", "--hypothesis", "label a recognised sentence word by word")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--checkpoint")
        p.add_argument("--features", help=".npy or whitespace-separated text file of shape (T, D_in)")
        p.add_argument("--data", help="corpus directory, used with --utterance instead of --features")
        p.add_argument("--utterance", help="utterance id inside --data")
        p.add_argument(text_flag, dest="text")
        p.add_argument("--threshold", type=float)
        p.add_argument("--fps", type=float)
        p.add_argument("--out", help="write the JSON document here instead of stdout")
        p.add_argument("--srt", help="also write subtitles to this path")

    p = sub.add_parser("export-srt", help="convert an alignment document to SRT")
    p.add_argument("--alignment")
    p.add_argument("--out")
    p.add_argument("--fps", type=float, help="recompute times at this frame rate")
    p.add_argument("--group", type=int, help="words per cue (default 1)")
    p.add_argument("--skip-absent", action="store_true", default=None)
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def apply_config(parser, args, path) -> None:
    """Fill flags left unset from ``[<command>]`` of an INI file."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise UsageError(f"config file not found: {path}")
    if not cp.has_section(args.command):
        return
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    for key, raw in cp[args.command].items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r} in section [{args.command}]")
        if getattr(args, key) is not None:
            continue
        action = actions[key]
        if action.const is True:  # store_true
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            try:
                value = action.type(raw) if action.type else raw
            except ValueError:
                raise UsageError(f"config key {key}: invalid value {raw!r}") from None
            if action.choices and value not in action.choices:
                raise UsageError(f"config key {key}: {value!r} not in {list(action.choices)}")
        setattr(args, key, value)


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _emit(doc: dict, out) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    _require(args, "out")
    fields = {k: getattr(args, k) for k in CorpusConfig.__dataclass_fields__ if getattr(args, k) is not None}
    config = CorpusConfig.from_dict(fields)
    manifest = gen_corpus(config, args.seed or 0, args.out, force=bool(args.force))
    print(f"wrote corpus to {args.out} ({config.n_train} train / {config.n_val} val / {config.n_test} test), "
          f"config_hash {manifest['config_hash'][:12]}")
    return EXIT_OK


def cmd_train(args) -> int:
    _require(args, "data", "out")
    fields = {k: getattr(args, k) for k in TrainConfig.__dataclass_fields__ if getattr(args, k) is not None}
    tcfg = TrainConfig.for_preset(fields.pop("preset", "desk"), **fields)
    result = train(tcfg, args.data, args.out, resume=bool(args.resume))
    print(f"trained {result.epochs_run} epoch(s); best validation MAE {result.best_mae_frames:.3f} frames at epoch "
          f"{result.best_epoch}; checkpoints in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "checkpoint", "data")
    report = evaluate(args.checkpoint, args.data, args.mode or "clean", args.split or "test", args.seed or 0,
                      args.limit)
    doc = report.to_dict()
    schemas.validate(doc, "eval_report")
    _emit(doc, args.out)
    if args.out:
        print(f"MAE {report.mae_ms:.1f} ms ({report.mae_frames:.3f} frames), frame accuracy "
              f"{report.frame_accuracy:.4f}")
    return EXIT_OK


def _load_features(args) -> np.ndarray:
    if args.features:
        path = Path(args.features)
        if not path.exists():
            raise DataError(f"feature file not found: {path}")
        try:
            feats = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=2)
        except ValueError as exc:
            raise DataError(f"cannot read features from {path}: {exc}") from None
        return np.asarray(feats, dtype=np.float32)
    if args.data and args.utterance:
        corpus = load_corpus(args.data)
        for split in ("test", "val", "train"):
            for u in corpus.split(split):
                if u.id == args.utterance:
                    return u.features
        raise DataError(f"utterance {args.utterance!r} not found in {args.data}")
    raise UsageError("give --features, or --data with --utterance")


def word_labels(document: dict) -> dict:
    for w in document["words"]:
        w["label"] = next((k for k in LABEL_ORDER if k in w["flags"]), "trusted")
    return document


def _align_document(args):
    _require(args, "checkpoint", "text")
    model, task, _ = load_model(args.checkpoint)
    feats = _load_features(args)
    words = args.text.split()
    if not words:
        raise UsageError("transcript is empty")
    if feats.ndim != 2 or feats.shape[1] != task.config.d_in:
        raise DataError(f"features have shape {feats.shape}; the model expects (T, {task.config.d_in})")
    if task.method == "dvfa" and len(words) > task.config.s_max:
        raise DataError(f"transcript has {len(words)} words; the model handles at most {task.config.s_max}")
    decoded, presence, records = align(model, task, feats, words, args.threshold or 0.5)
    doc = alignment_document([w.upper() for w in words], decoded, presence, records, args.fps or DEFAULT_FPS)
    return doc


def cmd_align(args) -> int:
    doc = _align_document(args)
    schemas.validate(doc, "alignment")
    _emit(doc, args.out)
    if args.srt:
        Path(args.srt).write_text(export_srt(doc))
    return EXIT_OK


def cmd_interpret(args) -> int:
    doc = word_labels(_align_document(args))
    schemas.validate(doc, "alignment")
    _emit(doc, args.out)
    if args.srt:
        Path(args.srt).write_text(export_srt(doc))
    if args.out:
        for w in doc["words"]:
            print(f"{w['text']:>12s}  {w['start_ms']:8.0f}-{w['end_ms']:<8.0f} {w['label']}")
    return EXIT_OK


def cmd_export_srt(args) -> int:
    _require(args, "alignment", "out")
    path = Path(args.alignment)
    if not path.exists():
        raise DataError(f"alignment file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not JSON: {exc}") from None
    schemas.validate(doc, "alignment")
    if args.fps:
        doc = dict(doc, fps=args.fps, words=[dict(w, start_ms=float(frames_to_ms(w["start_frame"], args.fps)),
                                                  end_ms=float(frames_to_ms(w["end_frame"] + 1, args.fps)))
                                             for w in doc["words"]])
    Path(args.out).write_text(export_srt(doc, args.group or 1, bool(args.skip_absent)))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "align": cmd_align,
            "interpret": cmd_interpret, "export-srt": cmd_export_srt}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = args.config or os.environ.get(CONFIG_ENV)
        if config:
            apply_config(parser, args, config)
        return COMMANDS[args.command](args)
    except (DataError, FileNotFoundError, FileExistsError, jsonschema.ValidationError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else exc
        print(f"dvfa: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except (CheckpointError, TrainingError) as exc:
        print(f"dvfa: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ValueError as exc:
        print(f"dvfa: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
