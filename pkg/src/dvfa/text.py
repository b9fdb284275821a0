"""Transcript tokenization and subword-to-word pooling."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .synth import Lexicon, viseme_symbol

PAD, UNK = "<pad>", "<unk>"
TOKENIZER_VERSION = 1
MODES = ("word", "phoneme")


@dataclass
class Transcript:
    words: list[str]
    token_ids: list[int]
    word_map: list[tuple[int, int]]  # half-open token range per word
    mode: str = "word"
    source_word: list[int] | None = None  # phoneme mode: index of the word each unit came from

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_tokens(self) -> int:
        return len(self.token_ids)


def normalize(text: str | Sequence[str]) -> list[str]:
    words = text.split() if isinstance(text, str) else [w for part in text for w in str(part).split()]
    return [w.upper() for w in words]


class Tokenizer:
    """Greedy longest-match subword tokenizer over a fixed fragment inventory.

    The inventory holds every character seen in the training text plus the
    most frequent within-word fragments of length 2..``max_fragment_len``,
    and one symbol per viseme for phoneme mode.
    """

    def __init__(self, fragments: Sequence[str], n_visemes: int = 0, max_fragment_len: int = 3):
        self.fragments = list(fragments)
        self.n_visemes = int(n_visemes)
        self.max_fragment_len = max_fragment_len
        self.vocab = [PAD, UNK] + self.fragments + [viseme_symbol(v) for v in range(self.n_visemes)]
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        if len(self.index) != len(self.vocab):
            raise ValueError("tokenizer inventory contains duplicates")
        self._fragment_index = {f: self.index[f] for f in self.fragments}
        self._longest = max((len(f) for f in self.fragments), default=1)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str] | str], n_fragments: int = 48, max_fragment_len: int = 3,
              n_visemes: int = 0, alphabet: Iterable[str] = ()) -> "Tokenizer":
        """``alphabet`` adds characters that must stay known even if unseen in ``sentences``."""
        chars: set[str] = {c.upper() for unit in alphabet for c in unit}
        counts: Counter = Counter()
        for sentence in sentences:
            for word in normalize(sentence):
                chars.update(word)
                for n in range(2, max_fragment_len + 1):
                    for i in range(len(word) - n + 1):
                        counts[word[i:i + n]] += 1
        multi = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max(0, n_fragments)]
        return cls(sorted(chars) + [f for f, _ in multi], n_visemes, max_fragment_len)

    def __len__(self) -> int:
        return len(self.vocab)

    def _split_word(self, word: str) -> list[int]:
        ids = []
        i = 0
        while i < len(word):
            for n in range(min(self._longest, len(word) - i), 0, -1):
                tok = self._fragment_index.get(word[i:i + n])
                if tok is not None:
                    ids.append(tok)
                    i += n
                    break
            else:
                ids.append(self.index[UNK])
                i += 1
        return ids

    def tokenize(self, text, mode: str = "word", lexicon: Lexicon | None = None) -> Transcript:
        if mode not in MODES:
            raise ValueError(f"unknown tokenization mode {mode!r}")
        words = normalize(text)
        if not words:
            raise ValueError("cannot tokenize an empty transcript")
        if mode == "phoneme":
            if lexicon is None:
                raise ValueError("phoneme mode needs a lexicon")
            unknown = [w for w in words if w not in lexicon.visemes]
            if unknown:
                raise KeyError(f"word(s) not in lexicon: {', '.join(unknown)}")
            units, source = [], []
            for i, w in enumerate(words):
                for v in lexicon.visemes[w]:
                    units.append(viseme_symbol(v))
                    source.append(i)
            return self.tokenize_units(units, source)
        ids: list[int] = []
        word_map = []
        for w in words:
            start = len(ids)
            ids += self._split_word(w)
            word_map.append((start, len(ids)))
        return Transcript(words, ids, word_map, "word")

    def tokenize_units(self, units: Sequence[str], source: Sequence[int] | None = None) -> Transcript:
        """Phoneme-mode transcript from already-expanded viseme symbols."""
        ids = []
        for u in units:
            if u not in self.index or not u.startswith("V"):
                raise KeyError(f"unknown phoneme symbol {u!r}")
            ids.append(self.index[u])
        return Transcript(list(units), ids, [(i, i + 1) for i in range(len(ids))], "phoneme",
                          None if source is None else list(source))

    def detokenize(self, transcript: Transcript) -> str:
        return " ".join("".join(self.vocab[t] for t in transcript.token_ids[a:b]) for a, b in transcript.word_map)

    def to_dict(self) -> dict:
        return {"version": TOKENIZER_VERSION, "fragments": self.fragments, "n_visemes": self.n_visemes,
                "max_fragment_len": self.max_fragment_len}

    @classmethod
    def from_dict(cls, doc: dict) -> "Tokenizer":
        if doc.get("version") != TOKENIZER_VERSION:
            raise ValueError(f"unsupported tokenizer version {doc.get('version')!r}")
        return cls(doc["fragments"], doc.get("n_visemes", 0), doc.get("max_fragment_len", 3))


def check_word_map(word_map: Sequence[tuple[int, int]], n_tokens: int) -> None:
    cursor = 0
    for i, (a, b) in enumerate(word_map):
        if a != cursor:
            raise ValueError(f"word map has a gap or overlap before word {i}: expected start {cursor}, got {a}")
        if b <= a:
            raise ValueError(f"word {i} has an empty token range ({a}, {b})")
        cursor = b
    if cursor != n_tokens:
        raise ValueError(f"word map covers {cursor} tokens but there are {n_tokens}")


def pooling_matrix(word_map: Sequence[tuple[int, int]], n_tokens: int, n_rows: int | None = None,
                   n_cols: int | None = None, dtype=np.float32) -> np.ndarray:
    """Matrix P with ``P @ tokens`` = per-word means; optional zero padding to (n_rows, n_cols)."""
    check_word_map(word_map, n_tokens)
    p = np.zeros((n_rows or len(word_map), n_cols or n_tokens), dtype=dtype)
    for i, (a, b) in enumerate(word_map):
        p[i, a:b] = 1.0 / (b - a)
    return p


def pool_to_words(tokens: ad.Tensor, word_map: Sequence[tuple[int, int]]) -> ad.Tensor:
    """Average subword rows (S_tok x D) into word rows (S x D)."""
    p = pooling_matrix(word_map, tokens.shape[-2], dtype=tokens.dtype)
    return ad.matmul(ad.Tensor(p), tokens)
