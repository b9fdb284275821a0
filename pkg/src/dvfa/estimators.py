"""scikit-learn style wrappers around the trainer.

``fit`` takes a list of :class:`~dvfa.synth.Utterance` plus the lexicon that
generated them; ``predict`` takes ``(features, transcript)`` pairs and returns
alignment documents; ``score`` returns frame accuracy on utterances.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .codec import DEFAULT_FPS, alignment_document
from .synth import Lexicon, Utterance
from .text import normalize
from .trainer import TrainConfig, align, evaluate_model, fit


def check_features(features, d_in: int | None = None) -> np.ndarray:
    """(T, D_in) finite float32 matrix with at least one frame."""
    x = check_array(features, dtype=np.float32, ensure_2d=True, ensure_min_samples=1)
    if d_in is not None and x.shape[1] != d_in:
        raise ValueError(f"features have {x.shape[1]} columns, expected {d_in}")
    return x


def check_transcript(text) -> list[str]:
    words = normalize(text)
    if not words:
        raise ValueError("transcript is empty")
    return words


def check_utterances(utts) -> list[Utterance]:
    utts = list(utts)
    if not utts:
        raise ValueError("need at least one utterance")
    bad = [type(u).__name__ for u in utts if not isinstance(u, Utterance)]
    if bad:
        raise TypeError(f"expected Utterance objects, got {bad[0]}")
    return utts


class _AlignerBase(BaseEstimator):
    _method = "dvfa"

    def __init__(self, preset="desk", epochs=30, batch_size=16, lr=1e-3, weight_decay=0.01, seed=0, p_add=0.1,
                 p_del=0.1, p_sub=0.1, patience=5, transcript="word", target="position", threshold=0.5,
                 fps=DEFAULT_FPS):
        self.preset = preset
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed
        self.p_add = p_add
        self.p_del = p_del
        self.p_sub = p_sub
        self.patience = patience
        self.transcript = transcript
        self.target = target
        self.threshold = threshold
        self.fps = fps

    def _train_config(self) -> TrainConfig:
        return TrainConfig(method=self._method, preset=self.preset, epochs=self.epochs, batch_size=self.batch_size,
                           lr=self.lr, weight_decay=self.weight_decay, seed=self.seed, p_add=self.p_add,
                           p_del=self.p_del, p_sub=self.p_sub, patience=self.patience, transcript=self.transcript,
                           target=self.target)

    def fit(self, X, y=None, lexicon: Lexicon | None = None, validation: Sequence[Utterance] = ()):
        if lexicon is None:
            raise ValueError("fit needs the lexicon the utterances were generated from")
        utts = check_utterances(X)
        self.model_, self.task_, self.result_ = fit(self._train_config(), lexicon, utts, list(validation))
        return self

    def predict(self, X) -> list[dict]:
        """Alignment documents for ``(features, transcript)`` pairs."""
        check_is_fitted(self, "model_")
        out = []
        for features, text in X:
            words = check_transcript(text)
            feats = check_features(features, self.task_.config.d_in)
            decoded, presence, records = align(self.model_, self.task_, feats, words, self.threshold)
            out.append(alignment_document(words, decoded, presence, records, self.fps))
        return out

    def score(self, X, y=None) -> float:
        """Frame accuracy on clean transcripts of the given utterances."""
        check_is_fitted(self, "model_")
        return evaluate_model(self.model_, self.task_, check_utterances(X)).frame_accuracy

    def evaluate(self, X, mode: str = "clean", seed: int = 0):
        check_is_fitted(self, "model_")
        return evaluate_model(self.model_, self.task_, check_utterances(X), mode, seed)


class DVFAligner(_AlignerBase):
    """Transcript-to-video aligner with word-presence prediction."""

    _method = "dvfa"


class CTCAligner(_AlignerBase):
    """CTC best-path segmentation baseline over viseme tokens."""

    _method = "ctc"
