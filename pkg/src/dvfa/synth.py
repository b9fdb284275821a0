"""Synthetic talking-face feature corpus with exact ground-truth alignments.

Each word is a sequence of visemes. A viseme is rendered as its prototype
feature vector (a random unit vector) held for 1-4 frames, plus Gaussian
noise; silence has its own prototype. Words are spelled with letters tied to
their visemes, so subword text carries the visual identity of a word while
homophenes (same visemes, different spelling) stay visually ambiguous.

On-disk layout of a corpus directory::

    manifest.json   seed, config, config_hash and sha256 of every data file
    lexicon.json    vocabulary, viseme sequences, spellings and prototypes
    train.jsonl     one header line, then one JSON record per utterance
    val.jsonl
    test.jsonl

Every ``.jsonl`` file starts with ``{"format": "dvfa-corpus", "version": 1,
"split": ..., "count": ...}``; each following line holds ``id``, ``T``,
``S``, ``D_in``, ``words``, ``visemes``, ``viseme_durations``,
``durations``, ``silences`` (inclusive 0-based frame spans), ``labels`` and
``features`` (row-major flat list of T * D_in floats).
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import encode_alignment

CORPUS_FORMAT = "dvfa-corpus"
CORPUS_VERSION = 1
MIN_FRAMES_PER_VISEME = 1
MAX_FRAMES_PER_VISEME = 4
SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Malformed or inconsistent corpus data."""


@dataclass
class Lexicon:
    words: list[str]
    visemes: dict[str, tuple[int, ...]]
    n_visemes: int
    feature_dim: int
    prototypes: np.ndarray  # (n_visemes + 1, feature_dim); last row is silence
    graphemes: list[tuple[str, ...]]  # spelling units available for each viseme

    @property
    def silence_index(self) -> int:
        return self.n_visemes

    def homophene_groups(self) -> list[list[str]]:
        groups: dict[tuple[int, ...], list[str]] = {}
        for w in self.words:
            groups.setdefault(self.visemes[w], []).append(w)
        return [g for g in groups.values() if len(g) > 1]

    def to_dict(self) -> dict:
        return {
            "version": CORPUS_VERSION,
            "words": self.words,
            "visemes": [list(self.visemes[w]) for w in self.words],
            "n_visemes": self.n_visemes,
            "feature_dim": self.feature_dim,
            "prototypes": self.prototypes.tolist(),
            "graphemes": [list(g) for g in self.graphemes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Lexicon":
        words = list(doc["words"])
        return cls(
            words=words,
            visemes={w: tuple(v) for w, v in zip(words, doc["visemes"])},
            n_visemes=int(doc["n_visemes"]),
            feature_dim=int(doc["feature_dim"]),
            prototypes=np.asarray(doc["prototypes"], dtype=np.float32),
            graphemes=[tuple(g) for g in doc["graphemes"]],
        )


def _spelling_units(n_visemes: int) -> list[tuple[str, ...]]:
    letters = list(string.ascii_uppercase)
    digraphs = [a + b for a in letters for b in "AEIOU" if a not in "AEIOU"]
    pool = letters + digraphs
    if 2 * n_visemes > len(pool):
        raise ValueError(f"cannot spell {n_visemes} visemes")
    return [(pool[2 * k], pool[2 * k + 1]) for k in range(n_visemes)]


def _sequence_capacity(n_visemes: int, lo: int, hi: int) -> int:
    return sum(n_visemes * (n_visemes - 1) ** (n - 1) for n in range(lo, hi + 1))


def build_lexicon(seed: int, vocab_size: int = 30, n_visemes: int = 12, min_visemes: int = 2,
                  max_visemes: int = 5, feature_dim: int = 16, homophene_prob: float = 0.05) -> Lexicon:
    """Random vocabulary with viseme sequences and viseme prototypes.

    Each word after the first is, with probability ``homophene_prob``, a
    homophene of an earlier word (same visemes, new spelling); otherwise it
    gets a fresh viseme sequence. Sequences never repeat a viseme back to back.
    """
    if n_visemes < 2:
        raise ValueError("n_visemes must be at least 2")
    if vocab_size < 2:
        raise ValueError("vocab_size must be at least 2")
    if not 1 <= min_visemes <= max_visemes:
        raise ValueError(f"need 1 <= min_visemes <= max_visemes, got {min_visemes}, {max_visemes}")
    if not 0.0 <= homophene_prob < 1.0:
        raise ValueError(f"homophene_prob must lie in [0, 1), got {homophene_prob}")
    if _sequence_capacity(n_visemes, min_visemes, max_visemes) < vocab_size:
        raise ValueError(
            f"{vocab_size} distinct words do not fit in {n_visemes} visemes of length {min_visemes}-{max_visemes}"
        )
    rng = np.random.default_rng(seed)
    units = _spelling_units(n_visemes)
    words: list[str] = []
    visemes: dict[str, tuple[int, ...]] = {}
    used_sequences: set[tuple[int, ...]] = set()

    def spell(seq) -> str | None:
        for _ in range(64):
            w = "".join(units[v][int(rng.integers(2))] for v in seq)
            if w not in visemes:
                return w
        return None

    while len(words) < vocab_size:
        word = None
        if words and rng.random() < homophene_prob:
            seq = visemes[words[int(rng.integers(len(words)))]]
            word = spell(seq)
        if word is None:
            for _ in range(10_000):
                n = int(rng.integers(min_visemes, max_visemes + 1))
                seq = [int(rng.integers(n_visemes))]
                while len(seq) < n:
                    v = int(rng.integers(n_visemes - 1))
                    seq.append(v if v < seq[-1] else v + 1)
                seq = tuple(seq)
                if seq not in used_sequences:
                    break
            else:
                raise ValueError("could not draw enough distinct viseme sequences")
            word = spell(seq)
            if word is None:
                continue
        used_sequences.add(seq)
        visemes[word] = seq
        words.append(word)

    protos = rng.normal(size=(n_visemes + 1, feature_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return Lexicon(words, visemes, n_visemes, feature_dim, protos.astype(np.float32), units)


def homophene_rate(lexicon: Lexicon) -> float:
    """Fraction of words (after the first) whose visemes repeat an earlier word's."""
    seen: set = set()
    repeats = 0
    for w in lexicon.words:
        seq = lexicon.visemes[w]
        repeats += seq in seen
        seen.add(seq)
    return repeats / (len(lexicon.words) - 1)


@dataclass
class Utterance:
    id: str
    words: list[str]
    visemes: list[tuple[int, ...]]
    viseme_durations: list[list[int]]
    silences: list[tuple[int, int]]
    features: np.ndarray
    labels: np.ndarray
    boundaries: list[tuple[int, int]] = field(default_factory=list)

    @property
    def durations(self) -> list[int]:
        return [int(sum(d)) for d in self.viseme_durations]

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_words(self) -> int:
        return len(self.words)

    def phoneme_view(self) -> "Utterance":
        """The same utterance with every viseme treated as a transcript unit."""
        units = [viseme_symbol(v) for seq in self.visemes for v in seq]
        durs = [[d] for ds in self.viseme_durations for d in ds]
        target = encode_alignment([d[0] for d in durs], self.silences)
        return Utterance(self.id, units, [(v,) for seq in self.visemes for v in seq], durs,
                         list(self.silences), self.features, target.labels, list(target.boundaries))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "T": self.n_frames,
            "S": self.n_words,
            "D_in": int(self.features.shape[1]),
            "words": self.words,
            "visemes": [list(v) for v in self.visemes],
            "viseme_durations": self.viseme_durations,
            "durations": self.durations,
            "silences": [list(s) for s in self.silences],
            "labels": self.labels.tolist(),
            "features": [float(x) for x in self.features.reshape(-1)],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Utterance":
        try:
            t, d_in = int(rec["T"]), int(rec["D_in"])
            feats = np.asarray(rec["features"], dtype=np.float32).reshape(t, d_in)
            utt = cls(
                id=str(rec["id"]),
                words=list(rec["words"]),
                visemes=[tuple(v) for v in rec["visemes"]],
                viseme_durations=[list(map(int, d)) for d in rec["viseme_durations"]],
                silences=[(int(a), int(b)) for a, b in rec["silences"]],
                features=feats,
                labels=np.asarray(rec["labels"], dtype=np.int64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed corpus record {rec.get('id', '?')!r}: {exc}") from None
        target = encode_alignment(utt.durations, utt.silences)
        if not np.array_equal(target.labels, utt.labels) or int(rec["S"]) != utt.n_words:
            raise DataError(f"record {utt.id!r}: labels disagree with durations and silences")
        utt.boundaries = list(target.boundaries)
        return utt


def viseme_symbol(v: int) -> str:
    return f"V{v:02d}"


def synth_utterance(lexicon: Lexicon, words: Sequence[str], rng: np.random.Generator, noise_sigma: float = 0.3,
                    silence_prob: float = 0.2, utt_id: str = "utt", viseme_durations=None) -> Utterance:
    """Render a word sequence into frame features with exact labels.

    Every viseme lasts 1-4 frames (uniform). Each of the S + 1 word gaps
    (before the first word, between words, after the last) receives a 1-4
    frame silence with probability ``silence_prob``. ``viseme_durations``
    overrides the random durations (one list per word).
    """
    words = [w.upper() for w in words]
    unknown = [w for w in words if w not in lexicon.visemes]
    if unknown:
        raise KeyError(f"word(s) not in lexicon: {', '.join(unknown)}")
    if not words:
        raise ValueError("an utterance needs at least one word")
    seqs = [lexicon.visemes[w] for w in words]
    if viseme_durations is None:
        viseme_durations = [[int(rng.integers(MIN_FRAMES_PER_VISEME, MAX_FRAMES_PER_VISEME + 1)) for _ in s]
                            for s in seqs]
    else:
        viseme_durations = [list(map(int, d)) for d in viseme_durations]
        if [len(d) for d in viseme_durations] != [len(s) for s in seqs]:
            raise ValueError("viseme_durations must give one duration per viseme")
    gaps = [int(rng.integers(MIN_FRAMES_PER_VISEME, MAX_FRAMES_PER_VISEME + 1)) if rng.random() < silence_prob else 0
            for _ in range(len(words) + 1)]

    frames: list[int] = []
    silences = []
    for i, (seq, durs) in enumerate(zip(seqs, viseme_durations)):
        if gaps[i]:
            silences.append((len(frames), len(frames) + gaps[i] - 1))
            frames += [lexicon.silence_index] * gaps[i]
        for v, d in zip(seq, durs):
            frames += [v] * d
    if gaps[-1]:
        silences.append((len(frames), len(frames) + gaps[-1] - 1))
        frames += [lexicon.silence_index] * gaps[-1]

    feats = lexicon.prototypes[np.asarray(frames)].astype(np.float64)
    if noise_sigma > 0:
        feats = feats + rng.normal(0.0, noise_sigma, size=feats.shape)
    target = encode_alignment([sum(d) for d in viseme_durations], silences)
    assert target.labels.shape[0] == len(frames)
    return Utterance(utt_id, words, seqs, viseme_durations, silences, feats.astype(np.float32), target.labels,
                     list(target.boundaries))


# -- corpus generation ---------------------------------------------------------

@dataclass
class CorpusConfig:
    vocab_size: int = 30
    n_visemes: int = 12
    min_visemes: int = 2
    max_visemes: int = 5
    feature_dim: int = 16
    homophene_prob: float = 0.05
    min_words: int = 3
    max_words: int = 8
    n_train: int = 2000
    n_val: int = 100
    n_test: int = 200
    noise_sigma: float = 0.3
    silence_prob: float = 0.2
    holdout_words: int = 0
    word_sampler: str = "uniform"
    zipf_exponent: float = 1.0

    def validate(self) -> None:
        for name in ("vocab_size", "n_visemes", "min_words", "max_words", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"config field {name} must be positive")
        for name in ("n_train", "n_val", "n_test", "holdout_words"):
            if getattr(self, name) < 0:
                raise ValueError(f"config field {name} must be non-negative")
        if self.min_words > self.max_words:
            raise ValueError("config field min_words exceeds max_words")
        if self.noise_sigma < 0:
            raise ValueError("config field noise_sigma must be non-negative")
        if not 0.0 <= self.silence_prob <= 1.0:
            raise ValueError("config field silence_prob must lie in [0, 1]")
        if self.word_sampler not in ("uniform", "zipf"):
            raise ValueError(f"config field word_sampler must be 'uniform' or 'zipf', got {self.word_sampler!r}")
        if self.holdout_words >= self.vocab_size:
            raise ValueError("config field holdout_words must be smaller than vocab_size")

    @classmethod
    def from_dict(cls, doc: dict) -> "CorpusConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(unknown)}")
        cfg = cls(**{k: type(getattr(cls(), k))(v) for k, v in doc.items()})
        cfg.validate()
        return cfg

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def word_probabilities(config: CorpusConfig, n_words: int) -> np.ndarray:
    if config.word_sampler == "uniform":
        p = np.ones(n_words)
    else:
        p = 1.0 / np.arange(1, n_words + 1) ** config.zipf_exponent
    return p / p.sum()


def _sentence(rng, config: CorpusConfig, vocab: list[str], probs: np.ndarray) -> list[str]:
    n = int(rng.integers(config.min_words, config.max_words + 1))
    return [vocab[i] for i in rng.choice(len(vocab), size=n, p=probs)]


def generate_split(config: CorpusConfig, lexicon: Lexicon, seed: int, split: str, count: int) -> list[Utterance]:
    """Utterances for one split; utterance i uses the RNG seeded by (seed, split, i)."""
    split_code = SPLITS.index(split)
    held = lexicon.words[len(lexicon.words) - config.holdout_words:] if config.holdout_words else []
    seen = [w for w in lexicon.words if w not in held]
    probs = word_probabilities(config, len(seen))
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, split_code, i])
        words = _sentence(rng, config, seen, probs)
        if held and split == "test":
            words[int(rng.integers(len(words)))] = held[int(rng.integers(len(held)))]
        out.append(synth_utterance(lexicon, words, rng, config.noise_sigma, config.silence_prob,
                                   utt_id=f"{split}-{i:05d}"))
    return out


def write_split(path, utterances: Sequence[Utterance], split: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "split": split,
                             "count": len(utterances)}) + "\n")
        for u in utterances:
            fh.write(json.dumps(u.to_record(), separators=(",", ":")) + "\n")


def read_split(path) -> list[Utterance]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError:
            raise DataError(f"{path}: missing corpus header") from None
        if header.get("format") != CORPUS_FORMAT or header.get("version") != CORPUS_VERSION:
            raise DataError(f"{path}: unsupported corpus format {header.get('format')!r} v{header.get('version')!r}")
        utts = [Utterance.from_record(json.loads(line)) for line in fh if line.strip()]
    if len(utts) != header.get("count"):
        raise DataError(f"{path}: header promises {header.get('count')} records, found {len(utts)}")
    return utts


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def gen_corpus(config: CorpusConfig, seed: int, out_dir, force: bool = False) -> dict:
    """Write a full corpus directory and return its manifest."""
    config.validate()
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} already exists and is not empty (use force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    lexicon = build_lexicon(seed, config.vocab_size, config.n_visemes, config.min_visemes, config.max_visemes,
                            config.feature_dim, config.homophene_prob)
    (out / "lexicon.json").write_text(json.dumps(lexicon.to_dict(), sort_keys=True) + "\n")
    files = {"lexicon.json": _sha256(out / "lexicon.json")}
    for split, count in zip(SPLITS, (config.n_train, config.n_val, config.n_test)):
        path = out / f"{split}.jsonl"
        write_split(path, generate_split(config, lexicon, seed, split, count), split)
        files[path.name] = _sha256(path)
    held = lexicon.words[len(lexicon.words) - config.holdout_words:] if config.holdout_words else []
    manifest = {
        "format": "dvfa-manifest",
        "version": CORPUS_VERSION,
        "seed": seed,
        "config": asdict(config),
        "config_hash": config.hash(),
        "holdout_words": held,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


@dataclass
class Corpus:
    root: Path
    manifest: dict
    lexicon: Lexicon

    def split(self, name: str, limit: int | None = None) -> list[Utterance]:
        utts = read_split(self.root / f"{name}.jsonl")
        return utts if limit is None else utts[:limit]


def load_corpus(root, verify: bool = True) -> Corpus:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DataError(f"no manifest.json in {root}")
    manifest = json.loads(mpath.read_text())
    if verify:
        cfg = CorpusConfig.from_dict(manifest["config"])
        if cfg.hash() != manifest.get("config_hash"):
            raise DataError(f"{mpath}: config_hash does not match the recorded config")
        for name, digest in manifest.get("files", {}).items():
            if not (root / name).exists() or _sha256(root / name) != digest:
                raise DataError(f"{root / name}: content does not match the manifest hash")
    lexicon = Lexicon.from_dict(json.loads((root / "lexicon.json").read_text()))
    return Corpus(root, manifest, lexicon)
