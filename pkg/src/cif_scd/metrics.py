"""Segmentation metrics: purity, coverage, threshold sweeps, and ECP.

Purity asks how much of each hypothesis segment is explained by its
best-matching reference segment; coverage asks the mirror question.  Both
are duration ratios, computed here as sums of pairwise interval
intersections.  Unlabeled time (gaps in the reference) is excluded from
both sides before anything is measured, so silence contributes to neither
numerator nor denominator.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCurve, EmptySegmentation, EmptySpan, NonFiniteWeight


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    label: str | None = None

    def __post_init__(self):
        if not (self.end > self.start):
            raise ValueError(f"segment end {self.end} must exceed start {self.start}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Segmentation:
    """Time-ordered, non-overlapping labeled intervals."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        segs = tuple(
            s if isinstance(s, Segment) else Segment(*s) for s in self.segments
        )
        for prev, cur in zip(segs, segs[1:]):
            if cur.start < prev.end - 1e-12:
                raise ValueError(
                    f"segments overlap: ({prev.start}, {prev.end}) and "
                    f"({cur.start}, {cur.end})"
                )
        object.__setattr__(self, "segments", segs)

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def support(self) -> list[tuple[float, float]]:
        """Merged union of the segment intervals."""
        merged: list[list[float]] = []
        for seg in self.segments:
            if merged and seg.start <= merged[-1][1] + 1e-12:
                merged[-1][1] = max(merged[-1][1], seg.end)
            else:
                merged.append([seg.start, seg.end])
        return [(a, b) for a, b in merged]


@dataclass(frozen=True)
class ScoredChangePoints:
    """Candidate change times with scores in [0, 1], strictly increasing."""

    times: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if times.shape != scores.shape or times.ndim != 1:
            raise ValueError("times and scores must be equal-length 1-d arrays")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("change point times must be strictly increasing")
        if not np.all(np.isfinite(scores)) or not np.all(np.isfinite(times)):
            raise NonFiniteWeight("change points contain NaN or Inf")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.times.size


def default_theta_grid(step: float = 0.01) -> np.ndarray:
    count = int(round(1.0 / step)) + 1
    return np.linspace(0.0, 1.0, count)


@dataclass(frozen=True)
class SweepConfig:
    theta_grid: np.ndarray = field(default_factory=default_theta_grid)

    def __post_init__(self):
        grid = np.asarray(self.theta_grid, dtype=np.float64)
        if grid.size == 0:
            raise ValueError("theta grid must be non-empty")
        if grid.min() < 0.0 or grid.max() > 1.0:
            raise ValueError("theta grid must lie within [0, 1]")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("theta grid must be strictly increasing")
        object.__setattr__(self, "theta_grid", grid)


def cut_segments(audio_span: tuple[float, float], points: ScoredChangePoints,
                 theta: float) -> Segmentation:
    """Partition a span at every candidate whose score strictly exceeds theta."""
    start, end = audio_span
    if not end > start:
        raise EmptySpan(f"span ({start}, {end}) has non-positive duration")
    inside = (points.times > start) & (points.times < end)
    accepted = points.times[inside & (points.scores > theta)]
    cuts = [start, *accepted.tolist(), end]
    return Segmentation(tuple(Segment(a, b) for a, b in zip(cuts, cuts[1:])))


def _overlap(a: Segment, b: Segment) -> float:
    return max(0.0, min(a.end, b.end) - max(a.start, b.start))


def _restrict(seg: Segmentation, support: list[tuple[float, float]]) -> list[Segment]:
    """Clip segments to a support; pieces keep their labels."""
    out: list[Segment] = []
    for s in seg:
        for lo, hi in support:
            a, b = max(s.start, lo), min(s.end, hi)
            if b > a:
                out.append(Segment(a, b, s.label))
    return out


def _best_match_parts(left: list[Segment], right: list[Segment]) -> tuple[float, float]:
    """(numerator, denominator): summed best-match overlap and total duration.

    Uses a two-pointer walk over the sorted segments, so each left segment
    only examines the right segments it can intersect.
    """
    num = 0.0
    den = 0.0
    j = 0
    for seg in left:
        den += seg.duration
        while j < len(right) and right[j].end <= seg.start:
            j += 1
        best = 0.0
        k = j
        while k < len(right) and right[k].start < seg.end:
            best = max(best, _overlap(seg, right[k]))
            k += 1
        num += best
    return num, den


def purity_parts(hypothesis: Segmentation, reference: Segmentation) -> tuple[float, float]:
    """Numerator/denominator of purity, for corpus-level aggregation."""
    if len(reference) == 0:
        raise EmptySegmentation("reference has no segments")
    restricted = _restrict(hypothesis, reference.support())
    if not restricted:
        raise EmptySegmentation("hypothesis is empty within the reference support")
    return _best_match_parts(restricted, list(reference))


def coverage_parts(hypothesis: Segmentation, reference: Segmentation) -> tuple[float, float]:
    """Numerator/denominator of coverage: purity with the roles swapped."""
    if len(reference) == 0:
        raise EmptySegmentation("reference has no segments")
    restricted = _restrict(hypothesis, reference.support())
    if not restricted:
        raise EmptySegmentation("hypothesis is empty within the reference support")
    return _best_match_parts(list(reference), restricted)


def purity(hypothesis: Segmentation, reference: Segmentation) -> float:
    num, den = purity_parts(hypothesis, reference)
    return num / den


def coverage(hypothesis: Segmentation, reference: Segmentation) -> float:
    num, den = coverage_parts(hypothesis, reference)
    return num / den


@dataclass(frozen=True)
class CurvePoint:
    theta: float
    purity: float
    coverage: float


def sweep_curve(points: ScoredChangePoints, reference: Segmentation,
                config: SweepConfig, span: tuple[float, float] | None = None
                ) -> list[CurvePoint]:
    """Cut and score at every threshold of the grid, sorted by theta."""
    if span is None:
        support = reference.support()
        if not support:
            raise EmptySegmentation("reference has no segments")
        span = (support[0][0], support[-1][1])
    out = []
    for theta in config.theta_grid:
        hyp = cut_segments(span, points, float(theta))
        out.append(CurvePoint(float(theta), purity(hyp, reference),
                              coverage(hyp, reference)))
    return out


def corpus_sweep_curve(items, config: SweepConfig) -> list[CurvePoint]:
    """Corpus-level curve over (span, points, reference) triples.

    Numerators and denominators are summed across sentences before dividing,
    so long sentences weigh proportionally to their duration.
    """
    items = list(items)
    if not items:
        raise EmptySegmentation("no sentences to evaluate")
    out = []
    for theta in config.theta_grid:
        p_num = p_den = c_num = c_den = 0.0
        for span, points, reference in items:
            hyp = cut_segments(span, points, float(theta))
            num, den = purity_parts(hyp, reference)
            p_num += num
            p_den += den
            num, den = coverage_parts(hyp, reference)
            c_num += num
            c_den += den
        out.append(CurvePoint(float(theta), p_num / p_den, c_num / c_den))
    return out


@dataclass(frozen=True)
class EcpResult:
    ecp: float
    theta: float
    interpolated: bool


def ecp(curve: list[CurvePoint]) -> EcpResult:
    """Equal coverage-purity: the common value where the two curves cross.

    Scans the grid for a sign change of (purity - coverage) and linearly
    interpolates both metrics in theta between the bracketing grid points.
    An exact tie at a grid point short-circuits; if the curves never cross,
    the grid point with the smallest gap is returned un-interpolated.
    """
    if not curve:
        raise EmptyCurve("cannot compute ECP of an empty curve")
    diffs = [pt.purity - pt.coverage for pt in curve]
    for pt, d in zip(curve, diffs):
        if d == 0.0:
            return EcpResult(pt.purity, pt.theta, interpolated=False)
    for (lo, hi), (d_lo, d_hi) in zip(zip(curve, curve[1:]), zip(diffs, diffs[1:])):
        if d_lo * d_hi < 0.0:
            t = d_lo / (d_lo - d_hi)
            theta = lo.theta + t * (hi.theta - lo.theta)
            value = lo.purity + t * (hi.purity - lo.purity)
            return EcpResult(value, theta, interpolated=True)
    best = min(range(len(curve)), key=lambda i: abs(diffs[i]))
    mid = 0.5 * (curve[best].purity + curve[best].coverage)
    return EcpResult(mid, curve[best].theta, interpolated=False)


def write_curve_csv(path, curve: list[CurvePoint]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "purity", "coverage"])
        for pt in curve:
            writer.writerow(
                [f"{pt.theta:.6f}", f"{pt.purity:.6f}", f"{pt.coverage:.6f}"]
            )


def write_ecp_json(path, result: EcpResult):
    with open(path, "w") as fh:
        json.dump(
            {"ecp": result.ecp, "theta": result.theta,
             "interpolated": result.interpolated},
            fh, sort_keys=True, indent=2,
        )
        fh.write("\n")
