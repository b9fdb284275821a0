import jsonschema
import pytest
from hypothesis import given, settings, strategies as st

from dvfa.srt import cues_from_document, export_srt, parse_srt


def document(spans, texts=None, flags=None, fps=25.0):
    texts = texts or [f"W{i}" for i in range(len(spans))]
    flags = flags or [[] for _ in spans]
    words = [{"index": i, "text": t, "start_frame": a, "end_frame": b, "start_ms": a * 1000 / fps,
              "end_ms": (b + 1) * 1000 / fps, "present_probability": None, "flags": f}
             for i, ((a, b), t, f) in enumerate(zip(spans, texts, flags))]
    return {"version": 1, "fps": fps, "num_frames": spans[-1][1] + 1 if spans else 0, "words": words,
            "anomalies": []}


def test_single_frame_word():
    text = export_srt(document([(1, 1)], ["HELLO"]))
    assert text == "1\n00:00:00,040 --> 00:00:00,080\nHELLO\n\n"


def test_grouping_and_skipping():
    doc = document([(0, 2), (3, 5), (6, 9)], ["A", "B", "C"], [[], ["absent"], []])
    cues = cues_from_document(doc, group_size=2)
    assert [(c.index, c.start_ms, c.end_ms, c.text) for c in cues] == [(1, 0, 240, "A B"), (2, 240, 400, "C")]
    kept = cues_from_document(doc, skip_absent=True)
    assert [c.text for c in kept] == ["A", "C"] and [c.index for c in kept] == [1, 2]
    with pytest.raises(ValueError):
        cues_from_document(doc, group_size=0)


def test_invalid_document_is_rejected():
    doc = document([(0, 1)])
    del doc["words"][0]["flags"]
    with pytest.raises(jsonschema.ValidationError):
        export_srt(doc)


def test_empty_and_malformed():
    assert export_srt(document([])) == ""
    with pytest.raises(ValueError):
        parse_srt("1\nnot a time\nX\n\n")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 30)), min_size=1, max_size=8),
       st.sampled_from([25.0, 30.0, 50.0]))
def test_round_trip_keeps_frame_times(gaps, fps):
    spans, t = [], 0
    for gap, length in gaps:
        spans.append((t + gap, t + gap + length - 1))
        t += gap + length
    doc = document(spans, fps=fps)
    cues = parse_srt(export_srt(doc))
    assert [c.text for c in cues] == [w["text"] for w in doc["words"]]
    for c, (a, b) in zip(cues, spans):
        assert c.start_ms == round(a * 1000 / fps) and c.end_ms == round((b + 1) * 1000 / fps)
