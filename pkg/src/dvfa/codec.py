"""Frame-label targets, posterior decoding, transcript perturbation and anomaly records.

Label convention used throughout: frame labels are integers where ``SIL``
(0) marks silence, ``1..S`` are 1-based transcript word positions and ``DEL``
(-1) marks frames of a spoken word that is missing from the transcript.
Frames are 0-based and word boundaries are inclusive ``(first, last)`` pairs.
Model class indices map these onto ``0..N-1`` via :func:`to_class_ids`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIL = 0
DEL = -1
DEFAULT_FPS = 25.0

KINDS = ("addition", "deletion", "substitution")


@dataclass
class AlignmentTarget:
    labels: np.ndarray
    boundaries: list  # per transcript word: (first, last) or None for words without frames
    deletion_spans: list = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_words(self) -> int:
        return len(self.boundaries)


@dataclass
class AnomalyRecord:
    kind: str
    word_index: int | None = None
    span: tuple[int, int] | None = None
    provenance: str = "ground-truth"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown anomaly kind {self.kind!r}")
        if self.kind == "substitution" and (self.word_index is None or self.span is None):
            raise ValueError("substitution records need both a word index and a frame span")
        if self.span is not None:
            self.span = (int(self.span[0]), int(self.span[1]))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "word_index": self.word_index,
            "start_frame": None if self.span is None else self.span[0],
            "end_frame": None if self.span is None else self.span[1],
            "provenance": self.provenance,
        }


# -- encoding ----------------------------------------------------------------

def encode_alignment(durations: Sequence[int], silences: Sequence[tuple[int, int]] = (),
                     positions: Sequence[int | None] | None = None, n_words: int | None = None) -> AlignmentTarget:
    """Build per-frame labels from spoken-word durations.

    ``durations[i]`` is the frame count of the i-th spoken word; frames not
    covered by ``silences`` are handed to spoken words in order. ``positions[i]``
    is the 1-based transcript position of spoken word i, or ``None`` if the word
    was deleted from the transcript (its frames become ``DEL``). ``n_words`` is
    the transcript length, which may exceed the spoken count when words were
    added; it defaults to the largest position.
    """
    durations = [int(d) for d in durations]
    if positions is None:
        positions = list(range(1, len(durations) + 1))
    if len(positions) != len(durations):
        raise ValueError(f"{len(positions)} positions for {len(durations)} spoken words")
    if any(d < 1 for d, p in zip(durations, positions)):
        raise ValueError("every spoken word needs a duration of at least one frame")
    spans = sorted((int(a), int(b)) for a, b in silences)
    for a, b in spans:
        if b < a:
            raise ValueError(f"silence span ({a}, {b}) is reversed")
    for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
        if a1 <= b0:
            raise ValueError(f"silence spans ({a0}, {b0}) and ({a1}, {b1}) overlap")
    total = sum(durations) + sum(b - a + 1 for a, b in spans)
    if spans and (spans[0][0] < 0 or spans[-1][1] >= total):
        raise ValueError(f"silence spans fall outside the {total}-frame utterance")

    present = [p for p in positions if p is not None]
    if len(set(present)) != len(present):
        raise ValueError("two spoken words map to the same transcript position")
    if n_words is None:
        n_words = max(present, default=0)
    if present and (min(present) < 1 or max(present) > n_words):
        raise ValueError(f"positions must lie in 1..{n_words}")
    if sorted(present) != present:
        raise ValueError("transcript positions must follow spoken order")

    labels = np.full(total, SIL, dtype=np.int64)
    silent = np.zeros(total, dtype=bool)
    for a, b in spans:
        silent[a:b + 1] = True
    speech_frames = np.flatnonzero(~silent)
    boundaries: list = [None] * n_words
    deletion_spans = []
    cursor = 0
    for d, p in zip(durations, positions):
        frames = speech_frames[cursor:cursor + d]
        cursor += d
        first, last = int(frames[0]), int(frames[-1])
        if p is None:
            labels[frames] = DEL
            deletion_spans.append((first, last))
        else:
            labels[frames] = p
            boundaries[p - 1] = (first, last)
    return AlignmentTarget(labels, boundaries, deletion_spans)


def to_class_ids(labels: np.ndarray, n_positions: int, word_ids: Sequence[int] | None = None) -> np.ndarray:
    """Map codec labels onto model class indices.

    Position targets: ``SIL -> 0``, position ``i -> i``, ``DEL -> n_positions + 1``.
    Word targets (``word_ids`` given, one dictionary id per transcript word):
    position ``i -> word_ids[i-1] + 1`` and ``DEL -> n_positions + 1`` where
    ``n_positions`` is then the dictionary size.
    """
    labels = np.asarray(labels)
    out = np.where(labels == DEL, n_positions + 1, labels).astype(np.int64)
    if word_ids is not None:
        lookup = np.concatenate([[0], np.asarray(word_ids, dtype=np.int64) + 1])
        speech = (labels > 0)
        out[speech] = lookup[labels[speech]]
    return out


def from_class_ids(classes: np.ndarray, n_positions: int) -> np.ndarray:
    classes = np.asarray(classes, dtype=np.int64)
    return np.where(classes == n_positions + 1, DEL, classes)


# -- decoding ----------------------------------------------------------------

def monotonic_repair(observed: Sequence[int], n_words: int, log_probs: np.ndarray | None = None) -> np.ndarray:
    """Closest labeling whose word positions never decrease over time.

    Minimises the number of frames that differ from ``observed``. ``SIL`` and
    ``DEL`` may appear anywhere. When ``log_probs`` (T x (n_words + 2), columns
    ordered SIL, 1..S, DEL) is given, ties in edit count are broken by the
    larger total log-probability.
    """
    observed = np.asarray(observed, dtype=np.int64)
    t_len = observed.shape[0]
    if t_len == 0:
        raise ValueError("cannot repair an empty label sequence")
    n_states = n_words + 1  # state = largest word position used so far (0 = none yet)
    if log_probs is None:
        nll = np.zeros((t_len, n_words + 2))
        weight = 1.0
    else:
        nll = -np.maximum(np.asarray(log_probs, dtype=np.float64), np.log(1e-7))
        # an edit must outweigh any possible log-probability difference
        weight = float(t_len * nll.max() + 1.0)
    # frame-level costs: column 0 = SIL, 1..S = words, S+1 = DEL
    label_of_col = np.concatenate([[SIL], np.arange(1, n_words + 1), [DEL]])
    cost = (label_of_col[None, :] != observed[:, None]) * weight + nll

    best = np.full(n_states, np.inf)
    best[0] = 0.0
    back_state = np.zeros((t_len, n_states), dtype=np.int64)
    back_col = np.zeros((t_len, n_states), dtype=np.int64)
    for t in range(t_len):
        c = cost[t]
        filler_col = 0 if c[0] <= c[n_words + 1] else n_words + 1
        stay = best + c[filler_col]
        # prefix minimum of best over states <= m
        prefix_idx = np.zeros(n_states, dtype=np.int64)
        running = 0
        for m in range(1, n_states):
            if best[m] < best[running]:
                running = m
            prefix_idx[m] = running
        word = np.full(n_states, np.inf)
        word[1:] = best[prefix_idx[1:]] + c[1:n_words + 1]
        take_word = word < stay
        new = np.where(take_word, word, stay)
        back_state[t] = np.where(take_word, prefix_idx, np.arange(n_states))
        back_col[t] = np.where(take_word, np.arange(n_states), filler_col)
        best = new
    state = int(np.argmin(best))
    out = np.empty(t_len, dtype=np.int64)
    for t in range(t_len - 1, -1, -1):
        out[t] = label_of_col[back_col[t, state]]
        state = int(back_state[t, state])
    return out


@dataclass
class DecodedAlignment:
    labels: np.ndarray  # repaired frame labels (codec convention)
    boundaries: list  # (first, last) per transcript word, interpolated where absent
    present: list  # True if the word owns at least one frame after repair
    deletion_spans: list
    raw_labels: np.ndarray  # per-frame argmax before repair

    @property
    def n_frames(self) -> int:
        return int(self.labels.shape[0])


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(np.int8), [0]])))
    return [(int(a), int(b) - 1) for a, b in zip(idx[::2], idx[1::2])]


def interpolate_boundaries(boundaries: list, n_frames: int) -> list:
    """Fill ``None`` entries from the timelines of the nearest present neighbours.

    The gap between the previous present word's last frame and the next present
    word's first frame is split evenly among the absent words inside it. When
    the gap is narrower than the number of absent words, each gets a single
    frame at evenly spaced points between the neighbours.
    """
    out = list(boundaries)
    n = len(out)
    i = 0
    while i < n:
        if out[i] is not None:
            i += 1
            continue
        j = i
        while j < n and out[j] is None:
            j += 1
        left = out[i - 1][1] if i > 0 else -1
        right = out[j][0] if j < n else n_frames
        k = j - i
        gap = right - left - 1
        for r in range(k):
            if gap >= k:
                first = left + 1 + (r * gap) // k
                last = left + ((r + 1) * gap) // k
            else:
                point = int(round(left + (r + 1) * (right - left) / (k + 1)))
                first = last = min(max(point, 0), n_frames - 1)
            out[i + r] = (first, last)
        i = j
    return out


def decode_alignment(log_probs: np.ndarray, n_words: int, min_run: int = 2,
                     deletion_class: int | None = None) -> DecodedAlignment:
    """Turn per-frame class log-probabilities into word boundaries.

    Columns are ``0 = SIL``, ``1..n_words`` positions and ``deletion_class``
    (default: last column) for ``DEL``; other columns are ignored. Steps:
    argmax, monotonic repair, run extraction, ``DEL`` runs of at least
    ``min_run`` frames become deletion spans, and words left without frames
    are placed by :func:`interpolate_boundaries`.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[0] == 0:
        raise ValueError(f"decode_alignment needs a non-empty T x N array, got shape {log_probs.shape}")
    n_classes = log_probs.shape[1]
    if deletion_class is None:
        deletion_class = n_classes - 1
    if n_words + 1 > n_classes or deletion_class <= n_words:
        raise ValueError(f"{n_classes} classes cannot hold {n_words} positions plus silence and deletion")
    cols = np.concatenate([np.arange(n_words + 1), [deletion_class]])
    sub = log_probs[:, cols]
    arg = sub.argmax(axis=1)
    raw = np.where(arg == n_words + 1, DEL, arg)
    labels = monotonic_repair(raw, n_words, sub)

    boundaries: list = []
    present = []
    for w in range(1, n_words + 1):
        frames = np.flatnonzero(labels == w)
        if frames.size:
            boundaries.append((int(frames[0]), int(frames[-1])))
            present.append(True)
        else:
            boundaries.append(None)
            present.append(False)
    deletion_spans = [r for r in _runs(labels == DEL) if r[1] - r[0] + 1 >= min_run]
    return DecodedAlignment(labels, interpolate_boundaries(boundaries, len(labels)), present, deletion_spans, raw)


def one_hot_log_probs(labels: Sequence[int], n_words: int, n_classes: int | None = None) -> np.ndarray:
    """Log-probabilities that put all mass on the given codec labels."""
    n_classes = n_classes or n_words + 2
    classes = np.where(np.asarray(labels) == DEL, n_classes - 1, labels)
    out = np.full((len(classes), n_classes), np.log(1e-9))
    out[np.arange(len(classes)), classes] = 0.0
    return out


# -- perturbation ------------------------------------------------------------

@dataclass
class PerturbedTranscript:
    words: list
    target: AlignmentTarget
    presence: np.ndarray
    records: list
    spoken_positions: list  # transcript position (1-based) per spoken word, None if deleted


def perturb_transcript(utterance, rng: np.random.Generator, p_add: float, p_del: float, p_sub: float,
                       dictionary: Sequence[str], s_max: int | None = None) -> PerturbedTranscript:
    """Inject addition / deletion / substitution errors, one decision per spoken word.

    ``utterance`` needs ``words``, ``durations`` and ``silences``. For each
    spoken word a single uniform draw picks at most one error type:
    addition keeps the word and inserts a random dictionary word next to it
    (presence 0, no frames); deletion drops the word from the text (its
    frames become ``DEL``); substitution replaces it with a different word
    (presence 0, original frames ``DEL``). A transcript is never left empty,
    and additions are dropped from the end if the result would exceed ``s_max``.
    """
    for name, p in (("p_add", p_add), ("p_del", p_del), ("p_sub", p_sub)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name}={p} outside [0, 1]")
    if p_add + p_del + p_sub > 1.0 + 1e-12:
        raise ValueError("p_add + p_del + p_sub must not exceed 1")
    dictionary = list(dictionary)
    if not dictionary:
        raise ValueError("perturbation needs a non-empty dictionary")

    # entries: ("spoken", i) | ("added", word, kind, spoken index for substitutions)
    entries: list[tuple] = []
    deleted: list[int] = []
    for i, word in enumerate(utterance.words):
        u = rng.random()
        if u < p_add:
            extra = dictionary[int(rng.integers(len(dictionary)))]
            if rng.integers(2):
                entries += [("spoken", i), ("added", extra, "addition", None)]
            else:
                entries += [("added", extra, "addition", None), ("spoken", i)]
        elif u < p_add + p_del:
            deleted.append(i)
        elif u < p_add + p_del + p_sub:
            choices = [w for w in dictionary if w != word]
            if not choices:
                entries.append(("spoken", i))
                continue
            entries.append(("added", choices[int(rng.integers(len(choices)))], "substitution", i))
        else:
            entries.append(("spoken", i))

    if not entries and deleted:
        # keep the last deleted word so the transcript is never empty
        i = deleted.pop()
        entries.append(("spoken", i))
    if s_max is not None:
        while len(entries) > s_max:
            drop = max(k for k, e in enumerate(entries) if e[0] == "added" and e[2] == "addition")
            del entries[drop]

    positions: list[int | None] = [None] * len(utterance.words)
    words = []
    presence = []
    for pos, e in enumerate(entries, start=1):
        if e[0] == "spoken":
            positions[e[1]] = pos
            words.append(utterance.words[e[1]])
            presence.append(1.0)
        else:
            words.append(e[1])
            presence.append(0.0)
    target = encode_alignment(utterance.durations, utterance.silences, positions, n_words=len(words))
    spans = _spoken_spans(utterance.durations, utterance.silences)

    records = []
    for pos, e in enumerate(entries):
        if e[0] == "added" and e[2] == "addition":
            records.append(AnomalyRecord("addition", word_index=pos))
        elif e[0] == "added":
            records.append(AnomalyRecord("substitution", word_index=pos, span=spans[e[3]]))
    for i in deleted:
        records.append(AnomalyRecord("deletion", span=spans[i]))
    records.sort(key=_record_order)
    return PerturbedTranscript(words, target, np.asarray(presence), records, positions)


def inject_anomaly(utterance, kind: str, rng: np.random.Generator, dictionary: Sequence[str]) -> PerturbedTranscript:
    """Exactly one error of ``kind`` ("addition" or "deletion") at a random place.

    Deletion needs at least two spoken words so the transcript stays non-empty.
    """
    n = len(utterance.words)
    spans = _spoken_spans(utterance.durations, utterance.silences)
    if kind == "addition":
        at = int(rng.integers(n + 1))
        extra = list(dictionary)[int(rng.integers(len(dictionary)))]
        words = list(utterance.words[:at]) + [extra] + list(utterance.words[at:])
        positions = [i + 1 if i < at else i + 2 for i in range(n)]
        presence = np.ones(n + 1)
        presence[at] = 0.0
        records = [AnomalyRecord("addition", word_index=at)]
    elif kind == "deletion":
        if n < 2:
            raise ValueError("deletion needs an utterance of at least two words")
        at = int(rng.integers(n))
        words = [w for i, w in enumerate(utterance.words) if i != at]
        positions = [None if i == at else (i + 1 if i < at else i) for i in range(n)]
        presence = np.ones(n - 1)
        records = [AnomalyRecord("deletion", span=spans[at])]
    else:
        raise ValueError(f"inject_anomaly supports 'addition' or 'deletion', got {kind!r}")
    target = encode_alignment(utterance.durations, utterance.silences, positions, n_words=len(words))
    return PerturbedTranscript(words, target, presence, records, positions)


def clean_transcript(utterance) -> PerturbedTranscript:
    n = len(utterance.words)
    target = encode_alignment(utterance.durations, utterance.silences)
    return PerturbedTranscript(list(utterance.words), target, np.ones(n), [], list(range(1, n + 1)))


def _spoken_spans(durations, silences) -> list[tuple[int, int]]:
    t = encode_alignment(durations, silences)
    return list(t.boundaries)


def _record_order(r: AnomalyRecord):
    return (r.span[0] if r.span is not None else -1, r.word_index if r.word_index is not None else -1, r.kind)


# -- anomaly detection -------------------------------------------------------

def detect_anomalies(decoded: DecodedAlignment, presence: Sequence[float], threshold: float = 0.5) -> list:
    """Combine TPP presence scores and TAP deletion spans into anomaly records.

    A word is an addition when its presence probability is below
    ``threshold``. Each ``DEL`` span is a deletion, unless an addition word's
    (possibly interpolated) boundary overlaps or touches it, in which case the
    pair is reported as one substitution.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    presence = np.asarray(presence, dtype=np.float64)
    if presence.shape[0] != len(decoded.boundaries):
        raise ValueError(f"{presence.shape[0]} presence scores for {len(decoded.boundaries)} words")
    additions = [i for i, p in enumerate(presence) if p < threshold]
    records = []
    for span in decoded.deletion_spans:
        a, b = span
        candidates = [i for i in additions
                      if decoded.boundaries[i][0] <= b + 1 and decoded.boundaries[i][1] >= a - 1]
        if candidates:
            centre = (a + b) / 2
            best = min(candidates, key=lambda i: (abs(sum(decoded.boundaries[i]) / 2 - centre), i))
            additions.remove(best)
            records.append(AnomalyRecord("substitution", word_index=best, span=span, provenance="detected"))
        else:
            records.append(AnomalyRecord("deletion", span=span, provenance="detected"))
    records += [AnomalyRecord("addition", word_index=i, provenance="detected") for i in additions]
    records.sort(key=_record_order)
    return records


# -- time conversion and output documents ------------------------------------

def frames_to_ms(frames, fps: float = DEFAULT_FPS):
    """Frame index (or count) to milliseconds: ``frames * 1000 / fps``."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if np.ndim(frames):
        return np.asarray(frames, dtype=np.float64) * (1000.0 / fps)
    return frames * 1000.0 / fps


def alignment_document(words: Sequence[str], decoded: DecodedAlignment, presence: Sequence[float] | None,
                       records: Sequence[AnomalyRecord], fps: float = DEFAULT_FPS) -> dict:
    """Structured alignment output; see ``schemas/alignment.schema.json``.

    ``start_ms`` is the start of the first frame and ``end_ms`` the end of
    the last frame (``(last + 1) * 1000 / fps``).
    """
    flags: list[list[str]] = [[] if ok else ["absent"] for ok in decoded.present]
    for r in records:
        if r.kind in ("addition", "substitution") and r.word_index is not None:
            flags[r.word_index].append(r.kind)
    for r in records:
        if r.kind != "deletion":
            continue
        for i, (a, b) in enumerate(decoded.boundaries):
            if a <= r.span[1] + 1 and b >= r.span[0] - 1 and "deletion-adjacent" not in flags[i]:
                flags[i].append("deletion-adjacent")
    out_words = []
    for i, (word, (a, b)) in enumerate(zip(words, decoded.boundaries)):
        out_words.append({
            "index": i,
            "text": word,
            "start_frame": int(a),
            "end_frame": int(b),
            "start_ms": round(float(frames_to_ms(a, fps)), 3),
            "end_ms": round(float(frames_to_ms(b + 1, fps)), 3),
            "present_probability": None if presence is None else round(float(presence[i]), 6),
            "flags": flags[i],
        })
    return {
        "version": 1,
        "fps": float(fps),
        "num_frames": decoded.n_frames,
        "words": out_words,
        "anomalies": [r.to_dict() for r in records],
    }
