"""Deterministic training and evaluation for the DVFA model and the CTC baseline.

Every random choice (perturbations, batch order, feature noise) comes from a
generator seeded by ``(seed, purpose, epoch, index)``, so a run is a pure
function of its config and corpus, and resuming from the last checkpoint
continues exactly where an uninterrupted run would be.

Run directory contents: ``metrics.jsonl`` (one record per epoch),
``best.npz`` (lowest validation MAE) and ``last.npz`` (with optimizer state).
"""

from __future__ import annotations

import configparser
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .codec import (DEL, DecodedAlignment, PerturbedTranscript, clean_transcript, decode_alignment, detect_anomalies,
                    inject_anomaly, perturb_transcript, to_class_ids)
from .ctc import CTCModel, ctc_loss, min_frames, segment_words
from .metrics import EvalReport, anomaly_accuracy, summarize
from .model import DVFAModel, ModelConfig, class_mask, preset_config, total_loss
from .optim import AdamW, warmup_cosine
from .synth import DataError, Lexicon, Utterance, load_corpus, viseme_symbol
from .text import Tokenizer, Transcript, pooling_matrix

log = logging.getLogger(__name__)

METHODS = ("dvfa", "ctc")
TRANSCRIPTS = ("word", "phoneme")
SCHEDULES = ("constant", "cosine")
EVAL_MODES = ("clean", "anomaly", "phoneme")
DEFAULT_S_MAX = {"word": 16, "phoneme": 48}

# purpose codes mixed into every seed
_PERTURB, _SHUFFLE, _NOISE, _EVAL_PICK, _EVAL_INJECT = 1, 2, 3, 4, 5


class TrainingError(RuntimeError):
    """Training cannot continue (for example a non-finite loss)."""


@dataclass
class TrainConfig:
    method: str = "dvfa"
    preset: str = "desk"
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    schedule: str = "cosine"
    warmup_steps: int = 200
    lr_floor: float = 0.05
    weight_decay: float = 0.01
    seed: int = 0
    p_add: float = 0.1
    p_del: float = 0.1
    p_sub: float = 0.1
    patience: int = 5
    eval_every: int = 1
    clip_norm: float = 1.0
    transcript: str = "word"
    target: str = "position"
    s_max: int = 0  # 0 picks a default for the transcript mode
    t_max: int = 256
    n_fragments: int = 48
    feature_noise: float = 0.0
    train_limit: int = 0
    val_limit: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.transcript not in TRANSCRIPTS:
            raise ValueError(f"transcript must be one of {TRANSCRIPTS}, got {self.transcript!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0 or self.patience < 1 or self.eval_every < 1:
            raise ValueError("epochs must be >= 0, patience and eval_every >= 1")
        for name in ("p_add", "p_del", "p_sub"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.p_add + self.p_del + self.p_sub > 1.0:
            raise ValueError("p_add + p_del + p_sub must not exceed 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.warmup_steps < 0 or not 0.0 <= self.lr_floor <= 1.0:
            raise ValueError("warmup_steps must be >= 0 and lr_floor in [0, 1]")

    @property
    def positions(self) -> int:
        return self.s_max or DEFAULT_S_MAX[self.transcript]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        types = {f.name: type(f.default) for f in fields(cls)}
        unknown = sorted(set(doc) - set(types))
        if unknown:
            raise ValueError(f"unknown train config field(s): {', '.join(unknown)}")
        return cls(**{k: _coerce(v, types[k], k) for k, v in doc.items()})

    @classmethod
    def from_ini(cls, path, section: str = "train", **overrides) -> "TrainConfig":
        """Read ``[section]`` of an INI file; keyword overrides win over file values."""
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(f"config file not found: {path}")
        doc = dict(parser[section]) if parser.has_section(section) else {}
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(doc)

    @classmethod
    def for_preset(cls, preset: str, **overrides) -> "TrainConfig":
        """Preset-specific optimiser defaults (the paper preset uses lr 1e-4, batch 32)."""
        base = {"paper": {"lr": 1e-4, "batch_size": 32, "schedule": "constant", "warmup_steps": 0}}.get(preset, {})
        return cls(preset=preset, **{**base, **overrides})


def _coerce(value, kind, name):
    if isinstance(value, str) and kind is not str:
        value = value.strip()
        if kind is bool:
            return value.lower() in ("1", "true", "yes", "on")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ValueError(f"config field {name}: cannot read {value!r} as {kind.__name__}") from None


# -- samples and batches -------------------------------------------------------

@dataclass
class Sample:
    id: str
    features: np.ndarray  # (T, D_in)
    words: list[str]
    transcript: Transcript
    labels: np.ndarray  # codec frame labels for this transcript
    presence: np.ndarray
    class_ids: np.ndarray | None  # model class per frame, None if a word is outside the dictionary
    ctc_tokens: list[int] = field(default_factory=list)
    tokens_per_word: list[int] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_words(self) -> int:
        return len(self.words)


class AlignmentTask:
    """Everything that turns an utterance and a transcript into model inputs, and outputs back into alignments."""

    def __init__(self, method: str, config: ModelConfig, tokenizer: Tokenizer, lexicon: Lexicon,
                 dictionary: Sequence[str], transcript: str = "word"):
        self.method = method
        self.config = config
        self.tokenizer = tokenizer
        self.lexicon = lexicon
        self.dictionary = list(dictionary)
        self.transcript = transcript
        self._dict_index = {w: i for i, w in enumerate(self.dictionary)}

    @property
    def perturb_dictionary(self) -> list[str]:
        if self.transcript == "phoneme":
            return [viseme_symbol(v) for v in range(self.lexicon.n_visemes)]
        return self.dictionary

    def view(self, utt: Utterance) -> Utterance:
        return utt.phoneme_view() if self.transcript == "phoneme" else utt

    def encode_text(self, words: Sequence[str]) -> Transcript:
        if self.transcript == "phoneme":
            return self.tokenizer.tokenize_units(words)
        return self.tokenizer.tokenize(list(words))

    def word_classes(self, words: Sequence[str]) -> list[int]:
        """Word-target class per transcript word (-1 when outside the dictionary)."""
        return [self._dict_index[w] + 1 if w in self._dict_index else -1 for w in words]

    def ctc_tokens(self, words: Sequence[str]) -> tuple[list[int], list[int]]:
        unknown = [w for w in words if w not in self.lexicon.visemes]
        if unknown:
            raise DataError(f"word(s) not in lexicon: {', '.join(unknown)}")
        seqs = [self.lexicon.visemes[w] for w in words]
        return [v + 1 for s in seqs for v in s], [len(s) for s in seqs]

    def make_sample(self, utt: Utterance, pt: PerturbedTranscript, features=None) -> Sample:
        """``utt`` is already in transcript view; ``pt`` describes the transcript shown to the model."""
        transcript = self.encode_text(pt.words)
        labels = pt.target.labels
        cfg = self.config
        class_ids = None
        if cfg.target == "position":
            class_ids = to_class_ids(labels, cfg.s_max)
        else:
            cls = self.word_classes(pt.words)
            if min(cls) >= 1:
                class_ids = to_class_ids(labels, cfg.n_dictionary, [c - 1 for c in cls])
        feats = utt.features if features is None else features
        return Sample(utt.id, feats, list(pt.words), transcript, labels, np.asarray(pt.presence, dtype=np.float64),
                      class_ids)

    def make_ctc_sample(self, utt: Utterance) -> Sample:
        tokens, per_word = self.ctc_tokens(utt.words)
        pt = clean_transcript(utt)
        return Sample(utt.id, utt.features, list(utt.words), Transcript(list(utt.words), [], []), pt.target.labels,
                      pt.presence, None, tokens, per_word)

    def check(self, sample: Sample) -> None:
        cfg = self.config
        if sample.n_frames > cfg.t_max:
            raise DataError(f"utterance {sample.id}: {sample.n_frames} frames exceed t_max={cfg.t_max}")
        if self.method == "dvfa" and sample.n_words > cfg.s_max:
            raise DataError(f"utterance {sample.id}: {sample.n_words} words exceed s_max={cfg.s_max}")
        if sample.features.shape[1] != cfg.d_in:
            raise DataError(f"utterance {sample.id}: feature width {sample.features.shape[1]} != d_in={cfg.d_in}")

    def build_model(self):
        if self.method == "ctc":
            return CTCModel(self.config, self.lexicon.n_visemes)
        return DVFAModel(self.config)

    def to_meta(self) -> dict:
        return {"kind": self.method, "model_config": self.config.to_dict(), "tokenizer": self.tokenizer.to_dict(),
                "lexicon": self.lexicon.to_dict(), "dictionary": self.dictionary, "transcript": self.transcript}

    @classmethod
    def from_meta(cls, meta: dict) -> "AlignmentTask":
        try:
            return cls(meta["kind"], ModelConfig.from_dict(meta["model_config"]),
                       Tokenizer.from_dict(meta["tokenizer"]), Lexicon.from_dict(meta["lexicon"]),
                       meta["dictionary"], meta.get("transcript", "word"))
        except KeyError as exc:
            raise CheckpointError(f"checkpoint metadata lacks {exc}") from None


@dataclass
class Batch:
    ids: list[str]
    features: np.ndarray
    frame_valid: np.ndarray
    token_ids: np.ndarray
    token_valid: np.ndarray
    pool: np.ndarray
    word_valid: np.ndarray
    class_mask: np.ndarray
    frame_labels: np.ndarray
    presence: np.ndarray
    n_frames: list[int]
    n_words: list[int]
    ctc_targets: list[list[int]]


def make_batches(samples: Sequence[Sample], batch_size: int, seed: int = 0, epoch: int = 0,
                 shuffle: bool = True) -> list[list[int]]:
    """Index lists of length-bucketed batches.

    Indices are shuffled, cut into pools of eight batches, sorted by frame
    count within each pool and chunked; the batch order is shuffled again.
    Without ``shuffle`` the whole set is simply sorted by length.
    """
    if not samples:
        raise ValueError("cannot batch an empty sample list")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    n = len(samples)
    lengths = [s.n_frames for s in samples]
    rng = np.random.default_rng([seed, _SHUFFLE, epoch])
    order = rng.permutation(n) if shuffle else np.arange(n)
    pool = n if not shuffle else batch_size * 8
    batches = []
    for start in range(0, n, pool):
        chunk = sorted(order[start:start + pool].tolist(), key=lambda i: (lengths[i], i))
        batches += [chunk[k:k + batch_size] for k in range(0, len(chunk), batch_size)]
    if shuffle:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def collate(samples: Sequence[Sample], config: ModelConfig, dtype=np.float32) -> Batch:
    """Pad a list of samples into one batch; the validity masks are true exactly on real positions."""
    b = len(samples)
    t = max(s.n_frames for s in samples)
    s_len = max(s.n_words for s in samples)
    l_tok = max((s.transcript.n_tokens for s in samples), default=0) or 1
    feats = np.zeros((b, t, config.d_in), dtype=dtype)
    frame_valid = np.zeros((b, t), dtype=bool)
    token_ids = np.zeros((b, l_tok), dtype=np.int64)
    token_valid = np.zeros((b, l_tok), dtype=bool)
    pool = np.zeros((b, s_len, l_tok), dtype=dtype)
    word_valid = np.zeros((b, s_len), dtype=bool)
    masks = np.zeros((b, config.n_classes), dtype=bool)
    labels = np.zeros((b, t), dtype=np.int64)
    presence = np.zeros((b, s_len), dtype=dtype)
    for i, s in enumerate(samples):
        feats[i, :s.n_frames] = s.features
        frame_valid[i, :s.n_frames] = True
        if s.transcript.n_tokens:
            token_ids[i, :s.transcript.n_tokens] = s.transcript.token_ids
            token_valid[i, :s.transcript.n_tokens] = True
            pool[i] = pooling_matrix(s.transcript.word_map, s.transcript.n_tokens, s_len, l_tok, dtype)
        word_valid[i, :s.n_words] = True
        masks[i] = class_mask(min(s.n_words, config.s_max), config)
        if s.class_ids is not None:
            labels[i, :s.n_frames] = s.class_ids
        presence[i, :s.n_words] = s.presence
    return Batch([s.id for s in samples], feats, frame_valid, token_ids, token_valid, pool, word_valid, masks,
                 labels, presence, [s.n_frames for s in samples], [s.n_words for s in samples],
                 [s.ctc_tokens for s in samples])


# -- building a task from data ------------------------------------------------------

def build_task(tcfg: TrainConfig, lexicon: Lexicon, train_utts: Sequence[Utterance]) -> AlignmentTask:
    """Tokenizer and dictionary come from the training text only."""
    seen = {w for u in train_utts for w in u.words}
    dictionary = [w for w in lexicon.words if w in seen]
    alphabet = [g for units in lexicon.graphemes for g in units]
    tokenizer = Tokenizer.build([u.words for u in train_utts], n_fragments=tcfg.n_fragments,
                                n_visemes=lexicon.n_visemes, alphabet=alphabet)
    overrides = dict(d_in=lexicon.feature_dim, s_max=tcfg.positions, t_max=tcfg.t_max, n_tokens=len(tokenizer),
                     target=tcfg.target, n_dictionary=len(dictionary) if tcfg.target == "word" else 0,
                     seed=tcfg.seed, dtype=tcfg.dtype)
    return AlignmentTask(tcfg.method, preset_config(tcfg.preset, **overrides), tokenizer, lexicon, dictionary,
                         tcfg.transcript)


def training_samples(task: AlignmentTask, utts: Sequence[Utterance], tcfg: TrainConfig, epoch: int) -> list[Sample]:
    """Per-epoch training view: fresh perturbations and optional feature noise."""
    out = []
    for i, u in enumerate(utts):
        if task.method == "ctc":
            out.append(task.make_ctc_sample(u))
            continue
        v = task.view(u)
        rng = np.random.default_rng([tcfg.seed, _PERTURB, epoch, i])
        pt = perturb_transcript(v, rng, tcfg.p_add, tcfg.p_del, tcfg.p_sub, task.perturb_dictionary,
                                s_max=task.config.s_max)
        feats = None
        if tcfg.feature_noise > 0:
            noise_rng = np.random.default_rng([tcfg.seed, _NOISE, epoch, i])
            feats = (v.features + noise_rng.normal(0.0, tcfg.feature_noise, v.features.shape)).astype(np.float32)
        out.append(task.make_sample(v, pt, feats))
    return out


def _feasible_for_ctc(task: AlignmentTask, utts: Sequence[Utterance]) -> list[Utterance]:
    keep = []
    for u in utts:
        tokens, _ = task.ctc_tokens(u.words)
        if min_frames(tokens) <= u.n_frames:
            keep.append(u)
        else:
            log.warning("skipping %s: too few frames for its CTC target", u.id)
    return keep


# -- forward passes ---------------------------------------------------------------------

def batch_loss(model, task: AlignmentTask, batch: Batch) -> tuple[ad.Tensor, dict]:
    """Mean-per-utterance training loss and its components."""
    b = len(batch.ids)
    if task.method == "ctc":
        lp = model(batch.features, batch.frame_valid)
        loss = ctc_loss(lp, batch.ctc_targets, batch.n_frames) * (1.0 / b)
        return loss, {"loss": float(loss.data)}
    pred = model(batch)
    loss, parts = total_loss(pred, batch.frame_labels, batch.frame_valid, batch.presence, batch.word_valid)
    return loss * (1.0 / b), {k: v / b for k, v in parts.items()}


def predict_samples(model, task: AlignmentTask, samples: Sequence[Sample], batch_size: int = 32):
    """Eval-mode outputs per sample, in input order: (log_probs (T, N), presence (S,) or None)."""
    model.eval()
    out: list = [None] * len(samples)
    with ad.no_grad():
        for idx in make_batches(samples, batch_size, shuffle=False):
            batch = collate([samples[i] for i in idx], task.config, model.dtype)
            if task.method == "ctc":
                lp = model(batch.features, batch.frame_valid).data
                for j, i in enumerate(idx):
                    out[i] = (lp[j, :batch.n_frames[j]], None)
            else:
                pred = model(batch)
                for j, i in enumerate(idx):
                    out[i] = (pred.log_probs.data[j, :batch.n_frames[j]], pred.presence.data[j, :batch.n_words[j]])
    return out


def position_log_probs(task: AlignmentTask, log_probs: np.ndarray, words: Sequence[str]) -> np.ndarray:
    """Columns SIL, 1..S, DEL for one transcript, whatever the target mode."""
    cfg = task.config
    s = len(words)
    if cfg.target == "position":
        return np.concatenate([log_probs[:, :s + 1], log_probs[:, [cfg.deletion_class]]], axis=1)
    floor = np.full((log_probs.shape[0], 1), -1e4)
    cols = [log_probs[:, [0]]]
    for c in task.word_classes(words):
        cols.append(log_probs[:, [c]] if c > 0 else floor)
    cols.append(log_probs[:, [cfg.deletion_class]])
    return np.concatenate(cols, axis=1)


def decode_sample(task: AlignmentTask, sample: Sample, log_probs: np.ndarray) -> DecodedAlignment:
    if task.method == "ctc":
        return segment_words(log_probs, sample.ctc_tokens, sample.tokens_per_word)
    return decode_alignment(position_log_probs(task, log_probs, sample.words), sample.n_words)


def _units_to_words(decoded: DecodedAlignment, units_per_word: Sequence[int]) -> tuple[np.ndarray, list]:
    """Fold a unit-level alignment back onto words (phoneme transcripts)."""
    owner = np.concatenate([[0], np.repeat(np.arange(1, len(units_per_word) + 1), units_per_word)])
    labels = np.where(decoded.labels == DEL, DEL, owner[np.maximum(decoded.labels, 0)])
    bounds, k = [], 0
    for n in units_per_word:
        group = decoded.boundaries[k:k + n]
        bounds.append((group[0][0], group[-1][1]))
        k += n
    return labels, bounds


# -- evaluation --------------------------------------------------------------------

@dataclass
class UtteranceResult:
    id: str
    words: list
    decoded: DecodedAlignment
    presence: np.ndarray | None
    detected: list
    truth: list
    gt_labels: np.ndarray
    gt_bounds: list
    pred_labels: np.ndarray
    pred_bounds: list


def _clean_results(model, task, utts, batch_size) -> list[UtteranceResult]:
    if task.method == "ctc":
        samples = [task.make_ctc_sample(u) for u in utts]
    else:
        samples = [task.make_sample(task.view(u), clean_transcript(task.view(u))) for u in utts]
    outputs = predict_samples(model, task, samples, batch_size)
    results = []
    for u, s, (lp, pres) in zip(utts, samples, outputs):
        dec = decode_sample(task, s, lp)
        if task.transcript == "phoneme" and task.method == "dvfa":
            labels, bounds = _units_to_words(dec, [len(v) for v in u.visemes])
        else:
            labels, bounds = dec.labels, dec.boundaries
        detected = detect_anomalies(dec, pres) if pres is not None else []
        results.append(UtteranceResult(u.id, list(u.words), dec, pres, detected, [], u.labels, list(u.boundaries),
                                       labels, bounds))
    return results


def _anomaly_results(model, task, utts, seed, batch_size) -> dict[str, list[UtteranceResult]]:
    """Two balanced passes: exactly half the utterances carry one added (or one deleted) word."""
    out = {}
    for code, kind in enumerate(("addition", "deletion")):
        pick = np.random.default_rng([seed, _EVAL_PICK, code]).permutation(len(utts))[:len(utts) // 2]
        chosen = set(pick.tolist())
        pts = []
        for i, u in enumerate(utts):
            if i in chosen and (kind == "addition" or u.n_words >= 2):
                rng = np.random.default_rng([seed, _EVAL_INJECT, code, i])
                pts.append(inject_anomaly(u, kind, rng, task.dictionary))
            else:
                pts.append(clean_transcript(u))
        samples = [task.make_sample(u, pt) for u, pt in zip(utts, pts)]
        outputs = predict_samples(model, task, samples, batch_size)
        results = []
        for u, s, pt, (lp, pres) in zip(utts, samples, pts, outputs):
            dec = decode_sample(task, s, lp)
            spoken = [p for p in pt.spoken_positions if p is not None]
            results.append(UtteranceResult(
                u.id, list(pt.words), dec, pres, detect_anomalies(dec, pres), pt.records, pt.target.labels,
                [pt.target.boundaries[p - 1] for p in spoken], dec.labels, [dec.boundaries[p - 1] for p in spoken]))
        out[kind] = results
    return out


def _report(method, mode, results: Sequence[UtteranceResult], anomaly=None, config_hash="", seed=0,
            fps: float = 25.0) -> EvalReport:
    return summarize(method, mode, [r.pred_bounds for r in results], [r.gt_bounds for r in results],
                     [r.pred_labels for r in results], [r.gt_labels for r in results], fps, anomaly,
                     config_hash, seed)


def evaluate_model(model, task: AlignmentTask, utts: Sequence[Utterance], mode: str = "clean", seed: int = 0,
                   batch_size: int = 32, config_hash: str = "", details: bool = False):
    """EvalReport for clean, anomaly or phoneme evaluation of an in-memory model."""
    if mode not in EVAL_MODES:
        raise ValueError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    if not utts:
        raise ValueError("evaluation needs at least one utterance")
    if mode == "phoneme" and task.transcript != "phoneme":
        raise CheckpointError("phoneme evaluation needs a model trained on phoneme transcripts")
    if mode == "anomaly":
        if task.method != "dvfa" or task.transcript != "word":
            raise CheckpointError("anomaly evaluation needs a word-transcript DVFA model")
        passes = _anomaly_results(model, task, utts, seed, batch_size)
        add = anomaly_accuracy([r.detected for r in passes["addition"]], [r.truth for r in passes["addition"]],
                               [len(r.words) for r in passes["addition"]])
        dele = anomaly_accuracy([r.detected for r in passes["deletion"]], [r.truth for r in passes["deletion"]],
                                [len(r.words) for r in passes["deletion"]])
        anomaly = {"addition": add["addition"], "addition_word": add["addition_word"],
                   "deletion": dele["deletion"], "perturbed_fraction": (len(utts) // 2) / len(utts)}
        results = passes["addition"] + passes["deletion"]
        report = _report(task.method, mode, results, anomaly, config_hash, seed)
        return (report, passes) if details else report
    results = _clean_results(model, task, utts, batch_size)
    report = _report(task.method, mode, results, None, config_hash, seed)
    return (report, results) if details else report


# -- training loop --------------------------------------------------------------------

@dataclass
class TrainResult:
    history: list
    best_mae_frames: float
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    best_state: dict
    out_dir: Path | None = None


def _meta(task, tcfg, corpus_hash, **extra) -> dict:
    return dict(task.to_meta(), train_config=tcfg.to_dict(), corpus_hash=corpus_hash, **extra)


def fit(tcfg: TrainConfig, lexicon: Lexicon, train_utts: Sequence[Utterance], val_utts: Sequence[Utterance],
        out_dir=None, corpus_hash: str = "", resume: bool = False, task: AlignmentTask | None = None):
    """Train in memory (and on disk when ``out_dir`` is given). Returns (model, task, TrainResult)."""
    tcfg.validate()
    if not train_utts:
        raise DataError("training split is empty")
    if tcfg.train_limit:
        train_utts = train_utts[:tcfg.train_limit]
    if tcfg.val_limit:
        val_utts = val_utts[:tcfg.val_limit]
    task = task or build_task(tcfg, lexicon, train_utts)
    if task.method == "ctc":
        train_utts = _feasible_for_ctc(task, train_utts)
    model = task.build_model()
    opt = AdamW(model.parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    out = Path(out_dir) if out_dir is not None else None
    history: list = []
    start, best_mae, best_epoch, bad = 0, float("inf"), -1, 0
    best_state = model.state_dict()

    if resume:
        if out is None or not (out / "last.npz").exists():
            raise CheckpointError("nothing to resume: no last.npz in the run directory")
        params, meta, optim_state = load_checkpoint(out / "last.npz")
        saved = dict(meta["train_config"], epochs=tcfg.epochs)
        if saved != tcfg.to_dict():
            raise CheckpointError("resume config differs from the checkpoint's train config")
        model.load_state_dict(params)
        opt.load_state_arrays(optim_state)
        start, best_mae, best_epoch, bad = meta["epoch"] + 1, meta["best_mae"], meta["best_epoch"], meta["bad_epochs"]
        history = meta["history"]
        if (out / "best.npz").exists():
            best_state = load_checkpoint(out / "best.npz")[0]
    elif out is not None:
        out.mkdir(parents=True, exist_ok=True)

    total_steps = tcfg.epochs * math.ceil(len(train_utts) / tcfg.batch_size)
    stopped = bad >= tcfg.patience
    epoch = start - 1
    for epoch in range(start, tcfg.epochs):
        if stopped:
            break
        samples = training_samples(task, train_utts, tcfg, epoch)
        for s in samples:
            task.check(s)
        model.train()
        sums: dict[str, float] = {}
        batches = make_batches(samples, tcfg.batch_size, tcfg.seed, epoch)
        for k, idx in enumerate(batches):
            batch = collate([samples[i] for i in idx], task.config, model.dtype)
            loss, parts = batch_loss(model, task, batch)
            if not np.isfinite(loss.data):
                _dump_nonfinite(out, epoch, k, batch.ids, parts)
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {k}; utterances: {', '.join(batch.ids)}")
            opt.zero_grad()
            loss.backward()
            opt.clip_grad_norm(tcfg.clip_norm)
            opt.state.lr = tcfg.lr * _lr_scale(tcfg, opt.state.step + 1, total_steps)
            opt.step()
            for name, v in parts.items():
                sums[name] = sums.get(name, 0.0) + v * len(idx)
        record = {"epoch": epoch, "train": {k: round(v / len(samples), 6) for k, v in sums.items()}}
        if val_utts and (epoch + 1) % tcfg.eval_every == 0:
            report = evaluate_model(model, task, val_utts, "phoneme" if tcfg.transcript == "phoneme" else "clean",
                                    seed=tcfg.seed, config_hash=corpus_hash)
            record["val"] = report.to_dict()
            if report.mae_frames < best_mae:
                best_mae, best_epoch, bad = report.mae_frames, epoch, 0
                best_state = model.state_dict()
                if out is not None:
                    save_checkpoint(out / "best.npz", best_state, _meta(task, tcfg, corpus_hash, epoch=epoch))
            else:
                bad += 1
        elif not val_utts:
            best_state, best_epoch = model.state_dict(), epoch
        record["best_epoch"] = best_epoch
        history.append(record)
        log.info("epoch %d %s", epoch, json.dumps(record["train"]))
        stopped = bad >= tcfg.patience
        if out is not None:
            if not val_utts:
                save_checkpoint(out / "best.npz", best_state, _meta(task, tcfg, corpus_hash, epoch=epoch))
            save_checkpoint(out / "last.npz", model.state_dict(),
                            _meta(task, tcfg, corpus_hash, epoch=epoch, best_mae=best_mae, best_epoch=best_epoch,
                                  bad_epochs=bad, history=history), opt.state_arrays())
            _write_log(out / "metrics.jsonl", history)
    model.load_state_dict(best_state)
    model.eval()
    result = TrainResult(history, best_mae, best_epoch, epoch + 1, stopped, best_state, out)
    return model, task, result


def _lr_scale(tcfg: TrainConfig, step: int, total_steps: int) -> float:
    if tcfg.schedule == "constant":
        return min(1.0, step / tcfg.warmup_steps) if tcfg.warmup_steps else 1.0
    return warmup_cosine(step, max(total_steps, 1), tcfg.warmup_steps, tcfg.lr_floor)


def _write_log(path: Path, history) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in history))


def _dump_nonfinite(out, epoch, k, ids, parts) -> None:
    if out is None:
        return
    doc = {"epoch": epoch, "batch": k, "ids": list(ids),
           "parts": {key: repr(v) for key, v in parts.items()}}
    (out / "nonfinite_batch.json").write_text(json.dumps(doc, indent=2) + "\n")


def train(tcfg: TrainConfig, corpus_dir, out_dir, resume: bool = False) -> TrainResult:
    """Train from a corpus directory whose manifest hashes must verify."""
    corpus = load_corpus(corpus_dir, verify=True)
    _, _, result = fit(tcfg, corpus.lexicon, corpus.split("train"), corpus.split("val"), out_dir,
                       corpus.manifest["config_hash"], resume)
    return result


# -- checkpoints ----------------------------------------------------------------

def load_model(path):
    """(model, task, meta) from a checkpoint written by :func:`fit`."""
    params, meta, _ = load_checkpoint(path)
    task = AlignmentTask.from_meta(meta)
    model = task.build_model()
    try:
        model.load_state_dict(params)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: parameters do not fit the stored config ({exc})") from None
    model.eval()
    return model, task, meta


def evaluate(checkpoint, corpus_dir, mode: str = "clean", split: str = "test", seed: int = 0,
             limit: int | None = None, batch_size: int = 32) -> EvalReport:
    model, task, _ = load_model(checkpoint)
    corpus = load_corpus(corpus_dir, verify=True)
    if corpus.lexicon.feature_dim != task.config.d_in:
        raise CheckpointError(f"corpus features are {corpus.lexicon.feature_dim}-dim but the model expects "
                              f"{task.config.d_in}")
    utts = corpus.split(split, limit)
    return evaluate_model(model, task, utts, mode, seed, batch_size, corpus.manifest["config_hash"])


def align(model, task: AlignmentTask, features: np.ndarray, words: Sequence[str], threshold: float = 0.5):
    """Align one transcript to one feature matrix: (decoded, presence or None, detected records)."""
    features = np.asarray(features, dtype=np.float32)
    words = [w.upper() for w in words]
    if not words:
        raise ValueError("transcript is empty")
    if features.ndim != 2 or features.shape[1] != task.config.d_in:
        raise ValueError(f"features must be (T, {task.config.d_in}), got {features.shape}")
    if task.method == "dvfa" and len(words) > task.config.s_max:
        raise ValueError(f"transcript has {len(words)} words but the model handles at most {task.config.s_max}")
    if features.shape[0] > task.config.t_max:
        raise ValueError(f"{features.shape[0]} frames exceed t_max={task.config.t_max}")
    if task.method == "ctc":
        tokens, per_word = task.ctc_tokens(words)
        sample = Sample("input", features, words, Transcript(words, [], []), np.zeros(len(features), np.int64),
                        np.ones(len(words)), None, tokens, per_word)
    else:
        transcript = task.encode_text(words)
        sample = Sample("input", features, words, transcript, np.zeros(len(features), np.int64),
                        np.ones(len(words)), None)
    lp, presence = predict_samples(model, task, [sample])[0]
    decoded = decode_sample(task, sample, lp)
    detected = detect_anomalies(decoded, presence, threshold) if presence is not None else []
    return decoded, presence, detected
