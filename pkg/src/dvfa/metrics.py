"""Boundary error, frame accuracy and anomaly-detection accuracy."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .codec import DEFAULT_FPS, AnomalyRecord, frames_to_ms

SPAN_OVERLAP = 0.5


def boundary_errors(predicted: Sequence[tuple[int, int]], ground_truth: Sequence[tuple[int, int]]) -> np.ndarray:
    """Per-word mean of the left and right boundary errors, in frames."""
    if len(predicted) != len(ground_truth):
        raise ValueError(f"{len(predicted)} predicted words vs {len(ground_truth)} ground-truth words")
    if any(b is None for b in predicted) or any(b is None for b in ground_truth):
        raise ValueError("boundaries must be filled in (interpolate absent words first)")
    p = np.asarray(predicted, dtype=np.float64).reshape(-1, 2)
    g = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 2)
    return np.abs(p - g).mean(axis=1)


def boundary_mae_frames(predicted, ground_truth) -> float:
    errs = boundary_errors(predicted, ground_truth)
    if errs.size == 0:
        raise ValueError("boundary MAE needs at least one word")
    return float(errs.mean())


def boundary_mae(predicted, ground_truth, fps: float = DEFAULT_FPS) -> float:
    """Mean absolute boundary error in milliseconds."""
    return float(frames_to_ms(boundary_mae_frames(predicted, ground_truth), fps))


def frame_accuracy(predicted, ground_truth) -> float:
    p = np.asarray(predicted)
    g = np.asarray(ground_truth)
    if p.shape != g.shape or p.ndim != 1:
        raise ValueError(f"frame label sequences differ in shape: {p.shape} vs {g.shape}")
    if p.size == 0:
        raise ValueError("frame accuracy of an empty sequence is undefined")
    return float((p == g).mean())


# -- anomaly accuracy ----------------------------------------------------------

def flagged_words(records: Sequence[AnomalyRecord]) -> set[int]:
    """Transcript words judged not spoken (additions and the text side of substitutions)."""
    return {r.word_index for r in records if r.kind in ("addition", "substitution") and r.word_index is not None}


def deletion_spans(records: Sequence[AnomalyRecord]) -> list[tuple[int, int]]:
    """Frame spans judged spoken-but-missing (deletions and the video side of substitutions)."""
    return [r.span for r in records if r.kind in ("deletion", "substitution") and r.span is not None]


def span_match(pred: tuple[int, int], gt: tuple[int, int], min_overlap: float = SPAN_OVERLAP) -> bool:
    """Overlap covers at least ``min_overlap`` of the ground-truth span."""
    inter = min(pred[1], gt[1]) - max(pred[0], gt[0]) + 1
    return inter > 0 and inter >= min_overlap * (gt[1] - gt[0] + 1)


def spans_agree(predicted: Sequence[tuple[int, int]], ground_truth: Sequence[tuple[int, int]],
                min_overlap: float = SPAN_OVERLAP) -> bool:
    """True when the spans pair up one-to-one with every pair overlapping enough."""
    if len(predicted) != len(ground_truth):
        return False
    if not predicted:
        return True
    ok = np.array([[span_match(p, g, min_overlap) for g in ground_truth] for p in predicted])
    rows, cols = linear_sum_assignment(-ok.astype(np.float64))
    return bool(ok[rows, cols].all())


def anomaly_accuracy(detected: Sequence[Sequence[AnomalyRecord]], ground_truth: Sequence[Sequence[AnomalyRecord]],
                     n_words: Sequence[int], min_overlap: float = SPAN_OVERLAP) -> dict:
    """Per-utterance and per-word detection accuracy.

    ``addition``: fraction of utterances whose set of flagged words equals the
    truth. ``addition_word``: fraction of word slots with the right presence
    decision. ``deletion``: fraction of utterances whose deletion spans match
    the truth one-to-one at ``min_overlap``.
    """
    if not len(detected) == len(ground_truth) == len(n_words):
        raise ValueError("detected, ground_truth and n_words must cover the same utterances")
    if not detected:
        raise ValueError("anomaly accuracy needs at least one utterance")
    add_utt = add_word = del_utt = 0
    total_words = 0
    for det, gt, n in zip(detected, ground_truth, n_words):
        fd, fg = flagged_words(det), flagged_words(gt)
        add_utt += fd == fg
        add_word += n - len(fd ^ fg)
        total_words += n
        del_utt += spans_agree(deletion_spans(det), deletion_spans(gt), min_overlap)
    m = len(detected)
    return {"addition": add_utt / m, "addition_word": add_word / total_words, "deletion": del_utt / m,
            "utterances": m, "words": total_words}


# -- report ----------------------------------------------------------------------

@dataclass
class EvalReport:
    method: str
    mode: str
    n_utterances: int
    n_words: int
    n_frames: int
    mae_frames: float
    mae_ms: float
    frame_accuracy: float
    anomaly: dict = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.frame_accuracy <= 1.0:
            raise ValueError(f"frame accuracy {self.frame_accuracy} outside [0, 1]")
        if self.mae_frames < 0 or self.mae_ms < 0:
            raise ValueError("MAE cannot be negative")

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key in ("mae_frames", "mae_ms", "frame_accuracy"):
            doc[key] = round(doc[key], 6)
        doc["anomaly"] = {k: round(v, 6) if isinstance(v, float) else v for k, v in self.anomaly.items()}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(**doc)


def summarize(method: str, mode: str, predicted_bounds, gt_bounds, predicted_labels, gt_labels,
              fps: float = DEFAULT_FPS, anomaly: dict | None = None, config_hash: str = "", seed: int = 0) -> EvalReport:
    """Corpus-level report: MAE pools every word, accuracy pools every frame."""
    errs = np.concatenate([boundary_errors(p, g) for p, g in zip(predicted_bounds, gt_bounds)])
    correct = sum(int((np.asarray(p) == np.asarray(g)).sum()) for p, g in zip(predicted_labels, gt_labels))
    for p, g in zip(predicted_labels, gt_labels):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"frame label sequences differ in shape: {np.shape(p)} vs {np.shape(g)}")
    n_frames = sum(len(g) for g in gt_labels)
    mae = float(errs.mean())
    return EvalReport(method, mode, len(gt_bounds), int(errs.size), n_frames, mae, float(frames_to_ms(mae, fps)),
                      correct / n_frames, dict(anomaly or {}), config_hash, seed)
