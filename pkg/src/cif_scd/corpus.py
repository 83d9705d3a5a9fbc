"""Annotation ingestion, sentence construction, and token-label derivation.

Annotation files are whitespace-separated lines:

    SPEAKER <session> <start_s> <end_s> <speaker_id> [text...]

Consecutive intervals of a session are grouped greedily into sentences of
up to four members; a sentence is then rejected when it contains too much
overlapped speech (in absolute seconds or relative to any member interval)
or too much internal silence, and optionally when it contains no speaker
change (test-set mode).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, UncoveredToken
from .metrics import Segmentation


@dataclass(frozen=True)
class AnnotationInterval:
    session_id: str
    speaker_id: str
    start_s: float
    end_s: float
    text: str | None = None

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise ValueError(
                f"interval end {self.end_s} must exceed start {self.start_s}"
            )

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


class RejectReason(enum.Enum):
    OVERLAP_DURATION = "OverlapDuration"
    OVERLAP_RATIO = "OverlapRatio"
    LONG_SILENCE = "LongSilence"
    NO_CHANGE_TEST_FILTER = "NoChangeTestFilter"


@dataclass(frozen=True)
class SentencePolicy:
    """Grouping and rejection thresholds.

    ``grouping_gap_s`` controls how sentences are formed and is deliberately
    separate from the rejection thresholds, so loosening a rejection
    threshold never changes which sentences exist.
    """

    max_intervals: int = 4
    grouping_gap_s: float = 10.0
    max_overlap_s: float = 1.0
    max_overlap_ratio: float = 0.10
    max_silence_s: float = 10.0
    reject_no_change: bool = False


@dataclass(frozen=True)
class Sentence:
    intervals: tuple[AnnotationInterval, ...]
    span: tuple[float, float]
    kept: bool
    reject_reason: RejectReason | None = None


def parse_annotation_lines(lines) -> list[AnnotationInterval]:
    intervals = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 5:
            raise ParseError(f"expected at least 5 fields, got {len(fields)}", lineno)
        tag, session, start_str, end_str, speaker = fields[:5]
        if tag != "SPEAKER":
            raise ParseError(f"unknown record type {tag!r}", lineno)
        try:
            start, end = float(start_str), float(end_str)
        except ValueError:
            raise ParseError(
                f"start/end must be numeric, got {start_str!r} {end_str!r}", lineno
            ) from None
        if not end > start:
            raise ParseError(f"end {end} must exceed start {start}", lineno)
        text = " ".join(fields[5:]) if len(fields) > 5 else None
        intervals.append(AnnotationInterval(session, speaker, start, end, text))
    intervals.sort(key=lambda iv: (iv.session_id, iv.start_s, iv.end_s))
    return intervals


def parse_annotations(path) -> list[AnnotationInterval]:
    with open(path, encoding="utf-8") as fh:
        return parse_annotation_lines(fh)


def format_annotation_line(interval: AnnotationInterval) -> str:
    base = (
        f"SPEAKER {interval.session_id} {interval.start_s:.3f} "
        f"{interval.end_s:.3f} {interval.speaker_id}"
    )
    return base if interval.text is None else f"{base} {interval.text}"


def write_annotations(path, intervals):
    with open(path, "w", encoding="utf-8") as fh:
        for interval in intervals:
            fh.write(format_annotation_line(interval) + "\n")


def _overlapped_measure(member: AnnotationInterval,
                        others: list[AnnotationInterval]) -> float:
    """Duration within ``member`` where at least one other interval is active."""
    events = []
    for other in others:
        lo = max(member.start_s, other.start_s)
        hi = min(member.end_s, other.end_s)
        if hi > lo:
            events.append((lo, hi))
    if not events:
        return 0.0
    events.sort()
    total = 0.0
    cur_lo, cur_hi = events[0]
    for lo, hi in events[1:]:
        if lo > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    return total + (cur_hi - cur_lo)


def _judge(members: list[AnnotationInterval], session: list[AnnotationInterval],
           policy: SentencePolicy) -> RejectReason | None:
    # Overlap is measured against every interval in the session, not just the
    # sentence members: overlap in the source recording is what matters.
    per_member = [
        _overlapped_measure(m, [iv for iv in session if iv is not m])
        for m in members
    ]
    merged_overlap = _sentence_overlap_total(members, session)
    if merged_overlap > policy.max_overlap_s:
        return RejectReason.OVERLAP_DURATION
    for m, ov in zip(members, per_member):
        if ov > policy.max_overlap_ratio * m.duration:
            return RejectReason.OVERLAP_RATIO
    silence = 0.0
    for prev, cur in zip(members, members[1:]):
        silence += max(0.0, cur.start_s - prev.end_s)
    if silence > policy.max_silence_s:
        return RejectReason.LONG_SILENCE
    if policy.reject_no_change:
        speakers = [m.speaker_id for m in members]
        if all(s == speakers[0] for s in speakers):
            return RejectReason.NO_CHANGE_TEST_FILTER
    return None


def _sentence_overlap_total(members: list[AnnotationInterval],
                            session: list[AnnotationInterval]) -> float:
    """Time inside the sentence's speech where >= 2 session intervals are active."""
    events = []
    for iv in session:
        events.append((iv.start_s, 1))
        events.append((iv.end_s, -1))
    events.sort()
    member_support = sorted((m.start_s, m.end_s) for m in members)
    overlap_regions = []
    active = 0
    region_start = None
    for t, delta in events:
        prev = active
        active += delta
        if prev < 2 <= active:
            region_start = t
        elif prev >= 2 > active and region_start is not None:
            overlap_regions.append((region_start, t))
            region_start = None
    total = 0.0
    for lo, hi in overlap_regions:
        for ms, me in member_support:
            total += max(0.0, min(hi, me) - max(lo, ms))
    return total


def build_sentences(intervals: list[AnnotationInterval],
                    policy: SentencePolicy) -> list[Sentence]:
    """Group intervals per session and apply the rejection rules.

    Grouping is greedy: a new sentence starts when the current one is full
    or when the gap to the next interval exceeds the grouping bound.
    Rejections are recorded on the sentence, never raised.
    """
    by_session: dict[str, list[AnnotationInterval]] = {}
    for iv in intervals:
        by_session.setdefault(iv.session_id, []).append(iv)

    sentences: list[Sentence] = []
    for session_id in sorted(by_session):
        session = sorted(by_session[session_id], key=lambda iv: (iv.start_s, iv.end_s))
        group: list[AnnotationInterval] = []
        groups: list[list[AnnotationInterval]] = []
        for iv in session:
            if group and (
                len(group) >= policy.max_intervals
                or iv.start_s - group[-1].end_s > policy.grouping_gap_s
            ):
                groups.append(group)
                group = []
            group.append(iv)
        if group:
            groups.append(group)
        for members in groups:
            reason = _judge(members, session, policy)
            span = (members[0].start_s, max(m.end_s for m in members))
            sentences.append(
                Sentence(tuple(members), span, kept=reason is None,
                         reject_reason=reason)
            )
    return sentences


def write_sentence_manifest(path, sentences: list[Sentence]):
    """JSON-lines manifest, one sentence per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            record = {
                "session": s.intervals[0].session_id,
                "span": [s.span[0], s.span[1]],
                "members": [
                    {"speaker": m.speaker_id, "start": m.start_s, "end": m.end_s}
                    for m in s.intervals
                ],
                "kept": s.kept,
                "reject_reason": None if s.reject_reason is None else s.reject_reason.value,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_sentence_manifest(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def derive_token_labels(reference: Segmentation, boundaries, frame_shift_s: float,
                        downsampling: int) -> tuple[list[str], list[int]]:
    """Project a reference segmentation onto CIF token spans.

    Token i spans (previous boundary time, own boundary time] where a
    boundary at 0-based frame b maps to (b + 1) * downsampling *
    frame_shift_s seconds.  Each token takes the speaker with maximal
    temporal overlap (earlier speaker wins exact ties); the change label at
    position i is 1 iff the next token has a different speaker, and the
    final position is always 0.
    """
    times = [(int(b) + 1) * downsampling * frame_shift_s for b in boundaries]
    speaker_labels: list[str] = []
    prev_time = 0.0
    for t in times:
        best_label: str | None = None
        best_overlap = 0.0
        for seg in reference:
            ov = max(0.0, min(seg.end, t) - max(seg.start, prev_time))
            if ov > best_overlap:
                best_overlap = ov
                best_label = seg.label
        if best_label is None:
            raise UncoveredToken(
                f"token span ({prev_time:.3f}, {t:.3f}] overlaps no reference segment"
            )
        speaker_labels.append(best_label)
        prev_time = t
    change_labels = [
        1 if speaker_labels[i + 1] != speaker_labels[i] else 0
        for i in range(len(speaker_labels) - 1)
    ]
    change_labels.append(0)
    return speaker_labels, change_labels
