import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dvfa.codec import AnomalyRecord
from dvfa.metrics import (EvalReport, anomaly_accuracy, boundary_errors, boundary_mae, boundary_mae_frames,
                          frame_accuracy, span_match, spans_agree, summarize)


def test_identical_alignments_have_zero_error():
    b = [(0, 3), (4, 9), (10, 12)]
    assert boundary_mae(b, b) == 0.0


def test_one_frame_shift_is_40_ms():
    gt = [(0, 3), (4, 9), (10, 12)]
    shifted = [(a + 1, b + 1) for a, b in gt]
    assert boundary_mae(shifted, gt) == pytest.approx(40.0)
    assert boundary_mae(shifted, gt, fps=50) == pytest.approx(20.0)


def test_boundary_mae_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        gt = np.sort(rng.integers(0, 60, size=(5, 2)), axis=1)
        pred = np.sort(rng.integers(0, 60, size=(5, 2)), axis=1)
        total = 0.0
        for (pl, pr), (gl, gr) in zip(pred, gt):
            total += (abs(int(pl) - int(gl)) + abs(int(pr) - int(gr))) / 2.0
        ref = total / 5 * 40.0
        assert abs(boundary_mae([tuple(p) for p in pred], [tuple(g) for g in gt]) - ref) <= 1e-9


def test_boundary_mae_rejects_mismatches():
    with pytest.raises(ValueError):
        boundary_mae([(0, 1)], [(0, 1), (2, 3)])
    with pytest.raises(ValueError):
        boundary_errors([None], [(0, 1)])
    with pytest.raises(ValueError):
        boundary_mae_frames([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=6),
       st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=6, max_size=6),
       st.integers(-20, 20))
def test_mae_is_shift_invariant(pred, gt, shift):
    gt = gt[:len(pred)]
    moved_p = [(a + shift, b + shift) for a, b in pred]
    moved_g = [(a + shift, b + shift) for a, b in gt]
    assert boundary_mae_frames(moved_p, moved_g) == pytest.approx(boundary_mae_frames(pred, gt))
    assert boundary_mae_frames(pred, gt) >= 0


def test_frame_accuracy_examples():
    # the two sequences differ only at frame 3
    assert frame_accuracy([1, 2, 2, 2, 3, 3], [1, 2, 2, 3, 3, 3]) == pytest.approx(5 / 6)
    assert frame_accuracy([1, 2, 2, 2, 3, 3], [1, 2, 3, 3, 3, 1]) == pytest.approx(3 / 6)
    assert frame_accuracy([1, 1], [1, 1]) == 1.0
    assert frame_accuracy([1, 1], [2, 2]) == 0.0
    with pytest.raises(ValueError):
        frame_accuracy([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        frame_accuracy([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1, 4), min_size=1, max_size=20), st.integers(0, 2**31 - 1))
def test_frame_accuracy_self_and_symmetry(x, seed):
    y = np.random.default_rng(seed).integers(-1, 5, size=len(x))
    assert frame_accuracy(x, x) == 1.0
    assert frame_accuracy(x, y) == frame_accuracy(y, x)
    assert 0.0 <= frame_accuracy(x, y) <= 1.0


# -- anomaly accuracy ------------------------------------------------------------

def test_span_match_uses_ground_truth_length():
    assert span_match((0, 4), (2, 5))        # 3 of 4 gt frames
    assert span_match((4, 9), (2, 5))        # 2 of 4 gt frames
    assert not span_match((5, 9), (2, 5))    # 1 of 4
    assert not span_match((6, 9), (2, 5))


def _brute_force_agree(pred, gt):
    if len(pred) != len(gt):
        return False
    return any(all(span_match(p, gt[j]) for p, j in zip(pred, perm)) for perm in itertools.permutations(range(len(gt))))


def test_span_matching_against_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(500):
        k = int(rng.integers(0, 4))
        gt = [tuple(sorted(rng.integers(0, 12, size=2).tolist())) for _ in range(k)]
        m = k if rng.random() < 0.8 else int(rng.integers(0, 4))
        pred = [tuple(sorted(rng.integers(0, 12, size=2).tolist())) for _ in range(m)]
        assert spans_agree(pred, gt) == _brute_force_agree(pred, gt)


def _truth(kind, index=None, span=None):
    return AnomalyRecord(kind, word_index=index, span=span, provenance="ground-truth")


def test_perfect_detection_scores_one():
    gt = [[_truth("addition", 2)], [_truth("deletion", span=(3, 6))], [_truth("substitution", 1, (4, 8))], []]
    det = [[AnomalyRecord(r.kind, r.word_index, r.span) for r in u] for u in gt]
    acc = anomaly_accuracy(det, gt, [4, 3, 3, 5])
    assert acc["addition"] == acc["addition_word"] == acc["deletion"] == 1.0


def test_constant_no_anomaly_on_balanced_set_is_chance():
    gt = [[_truth("addition", 1)], [], [_truth("deletion", span=(2, 4))], []]
    acc = anomaly_accuracy([[]] * 4, gt, [3, 3, 3, 3])
    assert acc["addition"] == 0.75 and acc["deletion"] == 0.75
    add_only = anomaly_accuracy([[]] * 4, [[_truth("addition", 0)], [], [_truth("addition", 2)], []], [3] * 4)
    assert add_only["addition"] == 0.5
    assert add_only["addition_word"] == pytest.approx(10 / 12)


def test_wrong_word_and_poor_overlap_count_as_misses():
    gt = [[_truth("addition", 1)], [_truth("deletion", span=(0, 9))]]
    det = [[AnomalyRecord("addition", 2)], [AnomalyRecord("deletion", span=(8, 12))]]
    acc = anomaly_accuracy(det, gt, [3, 3])
    # the second utterance has no additions on either side, so it scores for additions
    assert acc["addition"] == 0.5 and acc["deletion"] == 0.5
    assert acc["addition_word"] == pytest.approx(4 / 6)


def test_anomaly_accuracy_validates_lengths():
    with pytest.raises(ValueError):
        anomaly_accuracy([[]], [[], []], [1, 1])
    with pytest.raises(ValueError):
        anomaly_accuracy([], [], [])


# -- report -----------------------------------------------------------------------

def test_summarize_pools_words_and_frames():
    report = summarize("dvfa", "clean", [[(0, 1), (2, 4)], [(0, 2)]], [[(0, 1), (3, 4)], [(1, 2)]],
                       [np.array([1, 1, 2, 2, 2]), np.array([1, 1, 1])],
                       [np.array([1, 1, 1, 2, 2]), np.array([0, 1, 1])], seed=3)
    assert report.n_words == 3 and report.n_frames == 8
    assert report.mae_frames == pytest.approx((0 + 0.5 + 0.5) / 3)
    assert report.mae_ms == pytest.approx(report.mae_frames * 40)
    assert report.frame_accuracy == pytest.approx(6 / 8)
    assert EvalReport.from_dict(report.to_dict()) == EvalReport.from_dict(report.to_dict())
    assert report.to_json() == EvalReport.from_dict(report.to_dict()).to_json()


def test_report_invariants():
    with pytest.raises(ValueError):
        EvalReport("dvfa", "clean", 1, 1, 1, 0.0, 0.0, 1.5)
    with pytest.raises(ValueError):
        EvalReport("dvfa", "clean", 1, 1, 1, -1.0, 0.0, 0.5)
