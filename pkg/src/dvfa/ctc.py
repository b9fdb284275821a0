"""CTC baseline: loss over viseme tokens and best-path segmentation into word spans."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import SIL, DecodedAlignment, interpolate_boundaries
from .model import ModelConfig, VisualStem
from .nn import ConformerLayer, Linear, Module

BLANK = 0


def _extended(targets: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(targets) + 1, blank, dtype=np.int64)
    ext[1::2] = targets
    return ext


def _skip_allowed(ext: np.ndarray, blank: int) -> np.ndarray:
    """skip[s]: state s may be entered from s - 2 (non-blank, different from the label two back)."""
    skip = np.zeros(len(ext), dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return skip


def _check_targets(targets, n_classes: int, blank: int) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1:
        raise ValueError("CTC targets must be a 1-D label sequence")
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes or np.any(targets == blank)):
        raise ValueError(f"CTC targets must lie in [0, {n_classes}) and exclude the blank {blank}")
    return targets


def _shift(v: np.ndarray, k: int) -> np.ndarray:
    """``v`` moved k places along the states (right for k > 0), filled with -inf."""
    out = np.full_like(v, -np.inf)
    if abs(k) < len(v):
        if k > 0:
            out[k:] = v[:-k]
        else:
            out[:k] = v[-k:]
    return out


def min_frames(targets: Sequence[int]) -> int:
    """Shortest input that can emit ``targets``: one frame per label plus a blank between repeats."""
    targets = list(targets)
    return len(targets) + sum(a == b for a, b in zip(targets, targets[1:]))


def ctc_forward_backward(log_probs: np.ndarray, targets, blank: int = BLANK):
    """Log-space alpha and beta over the blank-extended target.

    Both include the emission at their own frame, so
    ``alpha[t, s] + beta[t, s] - log_probs[t, ext[s]]`` is the log-mass of paths
    through state s at frame t. Returns (log_alpha, log_beta, log_likelihood, ext).
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    t_len, n_classes = lp.shape
    targets = _check_targets(targets, n_classes, blank)
    if t_len < min_frames(targets):
        raise ValueError(f"{t_len} frames cannot emit {len(targets)} CTC labels")
    ext = _extended(targets, blank)
    n = len(ext)
    skip = _skip_allowed(ext, blank)
    emit = lp[:, ext]

    alpha = np.full((t_len, n), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if n > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        two = np.where(skip, _shift(prev, 2), -np.inf)
        alpha[t] = np.logaddexp(np.logaddexp(prev, _shift(prev, 1)), two) + emit[t]

    beta = np.full((t_len, n), -np.inf)
    beta[-1, -1] = emit[-1, -1]
    if n > 1:
        beta[-1, -2] = emit[-1, -2]
    skip_from = np.zeros(n, dtype=bool)  # state s may jump to s + 2
    skip_from[:-2] = skip[2:]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        two = np.where(skip_from, _shift(nxt, -2), -np.inf)
        beta[t] = np.logaddexp(np.logaddexp(nxt, _shift(nxt, -1)), two) + emit[t]

    ll = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if n > 1 else alpha[-1, -1]
    return alpha, beta, float(ll), ext


def ctc_loss(log_probs: Tensor, targets, input_lengths=None, blank: int = BLANK) -> Tensor:
    """Summed CTC negative log-likelihood.

    ``log_probs`` is (T, V) with one target sequence, or (B, T, V) with a list
    of sequences and optional per-item ``input_lengths``. Padded frames get no
    gradient.
    """
    data = log_probs.data
    batched = data.ndim == 3
    if not batched:
        if data.ndim != 2:
            raise ad.ShapeError(f"ctc_loss expects (T, V) or (B, T, V), got {data.shape}")
        data = data[None]
        targets = [targets]
    if len(targets) != data.shape[0]:
        raise ValueError(f"{len(targets)} target sequences for a batch of {data.shape[0]}")
    lengths = [data.shape[1]] * data.shape[0] if input_lengths is None else [int(n) for n in input_lengths]
    total = 0.0
    grad = np.zeros(data.shape, dtype=np.float64)
    for b, (tgt, t_len) in enumerate(zip(targets, lengths)):
        lp = data[b, :t_len].astype(np.float64)
        alpha, beta, ll, ext = ctc_forward_backward(lp, tgt, blank)
        total -= ll
        post = alpha + beta - lp[:, ext] - ll  # log occupancy of each state
        occ = np.zeros_like(lp)
        for k in np.unique(ext):
            cols = post[:, ext == k]
            occ[:, k] = np.exp(np.logaddexp.reduce(cols, axis=1))
        grad[b, :t_len] = -occ
    out = np.asarray(total, dtype=log_probs.dtype)
    grad = grad.astype(log_probs.dtype)
    if not batched:
        grad = grad[0]
    return ad._result(out, (log_probs,), lambda g: (g * grad,))


def ctc_best_path(log_probs: np.ndarray, targets, blank: int = BLANK) -> tuple[np.ndarray, float]:
    """Most probable frame-level path that collapses to ``targets``.

    Returns the extended-state index per frame (odd states are labels) and the
    path log-probability.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    t_len, n_classes = lp.shape
    targets = _check_targets(targets, n_classes, blank)
    if t_len < min_frames(targets):
        raise ValueError(f"{t_len} frames cannot emit {len(targets)} CTC labels")
    ext = _extended(targets, blank)
    n = len(ext)
    skip = _skip_allowed(ext, blank)
    emit = lp[:, ext]
    score = np.full(n, -np.inf)
    score[0] = emit[0, 0]
    if n > 1:
        score[1] = emit[0, 1]
    back = np.zeros((t_len, n), dtype=np.int64)
    states = np.arange(n)
    for t in range(1, t_len):
        cands = np.stack([
            score,
            _shift(score, 1),
            np.where(skip, _shift(score, 2), -np.inf),
        ])
        pick = cands.argmax(axis=0)  # ties prefer staying, then the nearer state
        back[t] = states - pick
        score = cands[pick, states] + emit[t]
    finals = [n - 1] if n == 1 else [n - 2, n - 1]
    state = max(finals, key=lambda s: (score[s], s))
    best = float(score[state])
    path = np.empty(t_len, dtype=np.int64)
    for t in range(t_len - 1, -1, -1):
        path[t] = state
        state = back[t, state]
    return path, best


def ctc_segment(log_probs: np.ndarray, targets, blank: int = BLANK) -> list[tuple[int, int]]:
    """Inclusive (first, last) frame span of every target token along the best path."""
    path, _ = ctc_best_path(log_probs, targets, blank)
    spans = []
    for j in range(len(targets)):
        frames = np.flatnonzero(path == 2 * j + 1)
        spans.append((int(frames[0]), int(frames[-1])))
    return spans


def word_spans(token_spans: Sequence[tuple[int, int]], tokens_per_word: Sequence[int]) -> list[tuple[int, int]]:
    """Merge consecutive token spans into one covering span per word."""
    if sum(tokens_per_word) != len(token_spans):
        raise ValueError(f"{sum(tokens_per_word)} tokens expected, got {len(token_spans)} spans")
    out = []
    i = 0
    for n in tokens_per_word:
        group = token_spans[i:i + n]
        out.append((group[0][0], group[-1][1]))
        i += n
    return out


def segment_words(log_probs: np.ndarray, tokens: Sequence[int], tokens_per_word: Sequence[int],
                  blank: int = BLANK) -> DecodedAlignment:
    """CTC segmentation expressed in the same form as the DVFA decoder output.

    Frames inside a word's span carry its 1-based position, every other frame
    is ``SIL``. If the utterance is too short to emit the tokens, every word is
    marked absent and placed by interpolation.
    """
    t_len = np.asarray(log_probs).shape[0]
    n_words = len(tokens_per_word)
    labels = np.full(t_len, SIL, dtype=np.int64)
    if t_len < min_frames(tokens):
        bounds = interpolate_boundaries([None] * n_words, t_len)
        return DecodedAlignment(labels, bounds, [False] * n_words, [], labels.copy())
    spans = word_spans(ctc_segment(log_probs, tokens, blank), tokens_per_word)
    for w, (a, b) in enumerate(spans, start=1):
        labels[a:b + 1] = w
    return DecodedAlignment(labels, spans, [True] * n_words, [], labels.copy())


class CTCModel(Module):
    """Visual encoder with a per-frame softmax over visemes plus blank (index 0)."""

    def __init__(self, cfg: ModelConfig, n_visemes: int):
        self.config = cfg
        self.n_visemes = n_visemes
        dtype = np.dtype(cfg.dtype).type
        rng = np.random.default_rng(cfg.seed)
        block = cfg.block()
        self.stem = VisualStem(cfg, rng, dtype)
        self.visual = [ConformerLayer(block, rng, dtype) for _ in range(cfg.visual_layers + cfg.fusion_layers)]
        self.head = Linear(cfg.d_model, n_visemes + 1, rng, dtype, scale=0.02)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype).type

    def __call__(self, features, frame_valid) -> Tensor:
        x = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=self.dtype))
        h = self.stem(x, frame_valid)
        for layer in self.visual:
            h = layer(h, frame_valid)
        return ad.log_softmax(self.head(h))
