import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dvfa import schemas
from dvfa.codec import (DEL, SIL, AnomalyRecord, DecodedAlignment, alignment_document, clean_transcript,
                        decode_alignment, detect_anomalies, encode_alignment, frames_to_ms, from_class_ids,
                        inject_anomaly, interpolate_boundaries, monotonic_repair, one_hot_log_probs,
                        perturb_transcript, to_class_ids)
from dvfa.synth import build_lexicon, synth_utterance


def test_worked_example_durations_1_3_2():
    t = encode_alignment([1, 3, 2])
    assert t.labels.tolist() == [1, 2, 2, 2, 3, 3]
    assert t.boundaries == [(0, 0), (1, 3), (4, 5)]


def test_silence_and_deletion_labels():
    t = encode_alignment([2, 1, 2], silences=[(0, 0), (4, 4)], positions=[1, None, 2])
    assert t.labels.tolist() == [SIL, 1, 1, DEL, SIL, 2, 2]
    assert t.boundaries == [(1, 2), (5, 6)]
    assert t.deletion_spans == [(3, 3)]


def test_added_words_have_no_frames():
    t = encode_alignment([2, 2], positions=[1, 3], n_words=3)
    assert t.boundaries[1] is None
    assert t.labels.tolist() == [1, 1, 3, 3]


@pytest.mark.parametrize("kwargs", [
    dict(durations=[2, 0]),
    dict(durations=[2, 2], silences=[(1, 0)]),
    dict(durations=[2, 2], silences=[(0, 1), (1, 2)]),
    dict(durations=[2, 2], positions=[2, 1]),
    dict(durations=[2, 2], positions=[1, 1]),
    dict(durations=[2], silences=[(5, 6)]),
])
def test_encode_rejects_bad_inputs(kwargs):
    with pytest.raises(ValueError):
        encode_alignment(**kwargs)


def random_config(rng):
    """Durations, silences, deletions and additions drawn at random."""
    n = int(rng.integers(1, 7))
    durations = rng.integers(1, 6, size=n).tolist()
    gaps = [int(rng.integers(1, 4)) if rng.random() < 0.4 else 0 for _ in range(n + 1)]
    silences, cursor = [], 0
    for i in range(n + 1):
        if gaps[i]:
            silences.append((cursor, cursor + gaps[i] - 1))
            cursor += gaps[i]
        if i < n:
            cursor += durations[i]
    deleted = [rng.random() < 0.25 for _ in range(n)]
    if all(deleted):
        deleted[int(rng.integers(n))] = False
    positions, pos = [], 0
    for d in deleted:
        pos += int(rng.random() < 0.2)  # an added word before this one
        if d:
            positions.append(None)
        else:
            pos += 1
            positions.append(pos)
    n_words = pos + int(rng.random() < 0.2)
    return durations, silences, positions, n_words


def merge_adjacent(spans):
    merged = []
    for a, b in spans:
        if merged and merged[-1][1] + 1 == a:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged


def test_round_trip_on_1000_random_configurations():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        durations, silences, positions, n_words = random_config(rng)
        target = encode_alignment(durations, silences, positions, n_words)
        decoded = decode_alignment(one_hot_log_probs(target.labels, n_words), n_words, min_run=1)
        assert decoded.labels.tolist() == target.labels.tolist()
        assert decoded.deletion_spans == merge_adjacent(target.deletion_spans)
        for w, b in enumerate(target.boundaries):
            assert decoded.present[w] == (b is not None)
            if b is not None:
                assert decoded.boundaries[w] == b


def test_class_id_mapping_round_trip():
    labels = np.array([SIL, 1, 1, DEL, 2, SIL, 3])
    ids = to_class_ids(labels, n_positions=5)
    assert ids.tolist() == [0, 1, 1, 6, 2, 0, 3]
    assert from_class_ids(ids, 5).tolist() == labels.tolist()
    word_ids = to_class_ids(labels, n_positions=10, word_ids=[7, 2, 7])
    assert word_ids.tolist() == [0, 8, 8, 11, 3, 0, 8]


# -- monotonic repair ---------------------------------------------------------

def _is_monotone(seq) -> bool:
    words = [x for x in seq if x > 0]
    return all(a <= b for a, b in zip(words, words[1:]))


def _alphabet(n_words):
    return [SIL, DEL] + list(range(1, n_words + 1))


@pytest.mark.parametrize("n_words", [1, 2, 3])
def test_repair_matches_exhaustive_search(n_words):
    for t_len in range(1, 7):
        every = np.array(list(itertools.product(_alphabet(n_words), repeat=t_len)))
        monotone = every[[_is_monotone(s) for s in every]]
        for start in range(0, len(every), 2048):
            obs = every[start:start + 2048]
            dist = (obs[:, None, :] != monotone[None, :, :]).sum(axis=2)
            best = dist.min(axis=1)
            for seq, d in zip(obs, best):
                fixed = monotonic_repair(seq, n_words)
                assert _is_monotone(fixed)
                assert int((fixed != seq).sum()) == d


def test_repair_tie_break_prefers_likely_frames():
    rng = np.random.default_rng(5)
    n_words = 2
    cols = {SIL: 0, 1: 1, 2: 2, DEL: 3}
    for _ in range(200):
        t_len = int(rng.integers(1, 6))
        lp = np.log(rng.dirichlet(np.ones(n_words + 2), size=t_len))
        observed = rng.choice(_alphabet(n_words), size=t_len)
        fixed = monotonic_repair(observed, n_words, lp)
        cands = [np.array(c) for c in itertools.product(_alphabet(n_words), repeat=t_len) if _is_monotone(c)]
        d_min = min(int((c != observed).sum()) for c in cands)
        score = lambda c: sum(lp[t, cols[int(x)]] for t, x in enumerate(c))
        best = max(score(c) for c in cands if int((c != observed).sum()) == d_min)
        assert int((fixed != observed).sum()) == d_min
        assert abs(score(fixed) - best) < 1e-9


def test_repair_rejects_empty():
    with pytest.raises(ValueError):
        monotonic_repair([], 2)


# -- decoding -------------------------------------------------------------------

def test_interpolation_splits_gap_evenly():
    bounds = interpolate_boundaries([(0, 1), None, None, (8, 9)], 10)
    assert bounds == [(0, 1), (2, 4), (5, 7), (8, 9)]


def test_interpolation_narrow_gap_gives_points():
    bounds = interpolate_boundaries([(0, 3), None, None, (4, 6)], 7)
    assert bounds[1][0] == bounds[1][1] and bounds[2][0] == bounds[2][1]
    assert bounds[1][0] <= bounds[2][0]


def test_interpolation_at_edges():
    assert interpolate_boundaries([None, (3, 4)], 5) == [(0, 2), (3, 4)]
    assert interpolate_boundaries([(0, 1), None], 5) == [(0, 1), (2, 4)]
    assert interpolate_boundaries([None, None], 4) == [(0, 1), (2, 3)]


def test_decode_repairs_out_of_order_frame():
    labels = [1, 1, 2, 1, 2, 2]
    decoded = decode_alignment(one_hot_log_probs(labels, 2), 2)
    assert _is_monotone(decoded.labels)
    assert decoded.raw_labels.tolist() == labels
    assert (decoded.labels != np.array(labels)).sum() == 1


def test_decode_short_deletion_runs_are_ignored():
    decoded = decode_alignment(one_hot_log_probs([1, DEL, 2, DEL, DEL, 2], 2), 2, min_run=2)
    assert decoded.deletion_spans == [(3, 4)]


def test_decode_uses_explicit_deletion_class():
    lp = np.full((3, 6), -20.0)
    lp[0, 1] = lp[1, 5] = lp[2, 2] = 0.0
    decoded = decode_alignment(lp, 2, min_run=1, deletion_class=5)
    assert decoded.labels.tolist() == [1, DEL, 2]


def test_decode_rejects_too_few_classes():
    with pytest.raises(ValueError):
        decode_alignment(np.zeros((3, 3)), 2)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=6), st.integers(0, 2**31 - 1))
def test_decoded_boundaries_are_ordered_and_inside(durations, seed):
    rng = np.random.default_rng(seed)
    t_len = sum(durations)
    n_words = len(durations)
    lp = np.log(rng.dirichlet(np.ones(n_words + 2), size=t_len))
    decoded = decode_alignment(lp, n_words)
    starts = [a for a, _ in decoded.boundaries]
    assert starts == sorted(starts)
    for a, b in decoded.boundaries:
        assert 0 <= a <= b < t_len


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=8))
def test_encoded_words_are_contiguous(durations):
    t = encode_alignment(durations)
    assert len(t.labels) == sum(durations)
    for w, (a, b) in enumerate(t.boundaries, start=1):
        assert np.all(t.labels[a:b + 1] == w)
        assert b - a + 1 == durations[w - 1]


# -- perturbation ------------------------------------------------------------------

@pytest.fixture(scope="module")
def lexicon():
    return build_lexicon(0, vocab_size=20)


def test_perturbation_keeps_labels_consistent(lexicon):
    rng = np.random.default_rng(0)
    for i in range(300):
        words = [lexicon.words[j] for j in rng.integers(len(lexicon.words), size=int(rng.integers(1, 8)))]
        utt = synth_utterance(lexicon, words, rng)
        pt = perturb_transcript(utt, rng, 0.2, 0.2, 0.2, lexicon.words, s_max=10)
        assert 1 <= len(pt.words) <= 10
        assert len(pt.target.labels) == utt.n_frames
        for pos, p in enumerate(pt.presence, start=1):
            has_frames = np.any(pt.target.labels == pos)
            assert has_frames == bool(p)
        assert np.all((pt.target.labels == DEL) <= (utt.labels > 0))
        kinds = [r.kind for r in pt.records]
        assert kinds.count("deletion") + kinds.count("substitution") == len(pt.target.deletion_spans) or \
            _adjacent_spans_merge(pt.target.deletion_spans)


def _adjacent_spans_merge(spans):
    return any(b + 1 == a for (_, b), (a, _) in zip(spans, spans[1:]))


def test_perturbation_probabilities_are_validated(lexicon):
    utt = synth_utterance(lexicon, lexicon.words[:3], np.random.default_rng(0))
    with pytest.raises(ValueError):
        perturb_transcript(utt, np.random.default_rng(0), 0.5, 0.5, 0.5, lexicon.words)
    with pytest.raises(ValueError):
        perturb_transcript(utt, np.random.default_rng(0), -0.1, 0.0, 0.0, lexicon.words)


def test_full_deletion_keeps_one_word(lexicon):
    utt = synth_utterance(lexicon, lexicon.words[:4], np.random.default_rng(0))
    pt = perturb_transcript(utt, np.random.default_rng(1), 0.0, 1.0, 0.0, lexicon.words)
    assert len(pt.words) == 1
    assert len([r for r in pt.records if r.kind == "deletion"]) == 3


def test_substitution_marks_frames_deleted(lexicon):
    utt = synth_utterance(lexicon, lexicon.words[:3], np.random.default_rng(0), silence_prob=0.0)
    pt = perturb_transcript(utt, np.random.default_rng(1), 0.0, 0.0, 1.0, lexicon.words)
    assert all(r.kind == "substitution" for r in pt.records)
    assert np.all(pt.target.labels == DEL)
    assert [w != o for w, o in zip(pt.words, utt.words)] == [True] * 3


def test_inject_single_anomaly(lexicon):
    utt = synth_utterance(lexicon, lexicon.words[:4], np.random.default_rng(0))
    add = inject_anomaly(utt, "addition", np.random.default_rng(1), lexicon.words)
    assert len(add.words) == 5 and add.presence.sum() == 4
    assert [r.kind for r in add.records] == ["addition"]
    dele = inject_anomaly(utt, "deletion", np.random.default_rng(1), lexicon.words)
    assert len(dele.words) == 3 and len(dele.target.deletion_spans) == 1
    with pytest.raises(ValueError):
        inject_anomaly(utt, "substitution", np.random.default_rng(1), lexicon.words)


# -- anomaly detection and documents ------------------------------------------------

def _decoded(labels, n_words, min_run=2):
    return decode_alignment(one_hot_log_probs(labels, n_words), n_words, min_run=min_run)


def test_detects_addition_and_deletion():
    dec = _decoded([1, 1, DEL, DEL, DEL, SIL, SIL, 3, 3, 3], 3)
    records = detect_anomalies(dec, [0.9, 0.1, 0.9])
    # word 2 has no frames and is interpolated into the SIL gap right after the deletion span
    assert [r.kind for r in records] == ["substitution"]
    dec = _decoded([1, 1, DEL, DEL, 2, 2, SIL, SIL, SIL, SIL, 3, 3], 3)
    records = detect_anomalies(dec, [0.9, 0.9, 0.1])
    assert sorted(r.kind for r in records) == ["addition", "deletion"]


def test_detect_threshold_validation():
    dec = _decoded([1, 1], 1)
    with pytest.raises(ValueError):
        detect_anomalies(dec, [0.5], threshold=1.0)
    with pytest.raises(ValueError):
        detect_anomalies(dec, [0.5, 0.5])


def test_vitamin_style_substitution():
    """Last hypothesis word is wrong: its frames are DEL and its presence is low."""
    labels = [SIL, 1, 1, 2, 2, 2, 3, 3, DEL, DEL, DEL, DEL, SIL]
    dec = _decoded(labels, 4)
    records = detect_anomalies(dec, [0.95, 0.97, 0.9, 0.05])
    assert [(r.kind, r.word_index, r.span) for r in records] == [("substitution", 3, (8, 11))]


def test_frames_to_ms():
    assert frames_to_ms(1) == 40.0
    assert frames_to_ms(1, fps=50) == 20.0
    np.testing.assert_allclose(frames_to_ms(np.array([0, 2])), [0.0, 80.0])
    with pytest.raises(ValueError):
        frames_to_ms(1, fps=0)


def test_alignment_document_matches_schema():
    dec = _decoded([SIL, 1, 1, DEL, DEL, 3, 3], 3)
    records = detect_anomalies(dec, [0.9, 0.2, 0.8])
    doc = alignment_document(["A", "B", "C"], dec, [0.9, 0.2, 0.8], records)
    schemas.validate(doc, "alignment")
    first = doc["words"][0]
    assert (first["start_frame"], first["end_frame"], first["start_ms"], first["end_ms"]) == (1, 2, 40.0, 120.0)
    assert "substitution" in doc["words"][1]["flags"]


def test_record_validation():
    with pytest.raises(ValueError):
        AnomalyRecord("swap")
    with pytest.raises(ValueError):
        AnomalyRecord("substitution", word_index=1)


def test_clean_transcript_has_no_records(lexicon):
    utt = synth_utterance(lexicon, lexicon.words[:3], np.random.default_rng(0))
    pt = clean_transcript(utt)
    assert pt.records == [] and pt.target.labels.tolist() == utt.labels.tolist()


def test_deleting_any_subset_of_three_words_renumbers_survivors():
    durations = [2, 3, 2]
    for mask in itertools.product([False, True], repeat=3):
        if all(mask):
            continue
        positions, pos = [], 0
        for deleted in mask:
            pos += not deleted
            positions.append(None if deleted else pos)
        t = encode_alignment(durations, positions=positions)
        expected, k = [], 0
        for w, deleted in enumerate(mask):
            k += not deleted
            expected += [DEL if deleted else k] * durations[w]
        assert t.labels.tolist() == expected
        assert len(t.boundaries) == pos


def test_repair_of_1_2_1_2_against_all_monotone_labelings():
    observed = np.array([1, 2, 1, 2])
    fixed = monotonic_repair(observed, 2)
    cands = [c for c in itertools.product(_alphabet(2), repeat=4) if _is_monotone(c)]
    assert int((fixed != observed).sum()) == min(int((np.array(c) != observed).sum()) for c in cands) == 1


def test_all_silence_makes_every_word_absent():
    decoded = decode_alignment(one_hot_log_probs([SIL] * 9, 3), 3)
    assert decoded.present == [False] * 3
    assert decoded.boundaries == [(0, 2), (3, 5), (6, 8)]


def test_zero_rates_are_identity(lexicon):
    utt = synth_utterance(lexicon, lexicon.words[:5], np.random.default_rng(0))
    pt = perturb_transcript(utt, np.random.default_rng(1), 0.0, 0.0, 0.0, lexicon.words)
    assert pt.words == utt.words and pt.records == []
    assert pt.target.labels.tolist() == utt.labels.tolist()


def test_forced_addition_on_one_word(lexicon):
    utt = synth_utterance(lexicon, lexicon.words[:1], np.random.default_rng(0))
    pt = perturb_transcript(utt, np.random.default_rng(1), 1.0, 0.0, 0.0, lexicon.words)
    assert len(pt.words) == 2 and pt.presence.tolist().count(0) == 1


def test_empty_dictionary_is_rejected(lexicon):
    utt = synth_utterance(lexicon, lexicon.words[:2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        perturb_transcript(utt, np.random.default_rng(1), 0.1, 0.1, 0.1, [])
