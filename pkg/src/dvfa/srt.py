"""Subtitle export of alignment documents.

A cue spans from the start of its first word's first frame to the end of
its last word's last frame, so a word on frame 1 at 25 fps is shown from
00:00:00,040 to 00:00:00,080.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import timedelta

import srt

from . import schemas


@dataclass(frozen=True)
class Cue:
    index: int
    start_ms: int
    end_ms: int
    text: str


def cues_from_document(document: dict, group_size: int = 1, skip_absent: bool = False) -> list[Cue]:
    """One cue per ``group_size`` consecutive words, numbered from 1."""
    if group_size < 1:
        raise ValueError(f"group_size must be at least 1, got {group_size}")
    schemas.validate(document, "alignment")
    words = [w for w in document["words"] if not (skip_absent and "absent" in w["flags"])]
    cues = []
    for k in range(0, len(words), group_size):
        group = words[k:k + group_size]
        cues.append(Cue(len(cues) + 1, int(round(group[0]["start_ms"])), int(round(group[-1]["end_ms"])),
                        " ".join(w["text"] for w in group)))
    return cues


def format_cues(cues: list[Cue]) -> str:
    subs = [srt.Subtitle(c.index, timedelta(milliseconds=c.start_ms), timedelta(milliseconds=c.end_ms), c.text)
            for c in cues]
    return srt.compose(subs, reindex=False) if subs else ""


def export_srt(document: dict, group_size: int = 1, skip_absent: bool = False) -> str:
    return format_cues(cues_from_document(document, group_size, skip_absent))


def parse_srt(text: str) -> list[Cue]:
    try:
        subs = list(srt.parse(text))
    except srt.SRTParseError as exc:
        raise ValueError(f"malformed SRT: {exc}") from None
    return [Cue(s.index, int(s.start // timedelta(milliseconds=1)), int(s.end // timedelta(milliseconds=1)), s.content)
            for s in subs]
