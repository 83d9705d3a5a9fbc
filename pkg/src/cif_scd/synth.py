"""Synthetic sentence generator with exactly known change-point ground truth.

Each sentence is a sequence of fixed-duration tokens.  Speaker turns are
drawn with geometric lengths; every frame of a token carries its speaker's
Gaussian cluster mean plus a per-token content pattern plus isotropic noise.
Tokens that precede a speaker change draw their content id from a small
"terminal" vocabulary most of the time, so both the speaker-difference cue
and the content cue carry usable signal.

Datasets serialize to a directory with a manifest and one JSON file per
sentence (frames as nested arrays), versioned with ``format_version``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .metrics import Segment, Segmentation
from .model import TrainingExample

FORMAT_VERSION = 1


@dataclass(frozen=True)
class SynthConfig:
    num_speakers: int = 4
    num_sentences: int = 200
    min_tokens: int = 6
    max_tokens: int = 24
    frames_per_token: int = 4      # encoded frames per token
    downsampling: int = 4          # raw frames per encoded frame
    frame_shift_s: float = 0.01
    feature_dim: int = 8
    speaker_scale: float = 1.5
    content_scale: float = 1.0
    noise_scale: float = 0.15
    num_content_ids: int = 12
    num_terminal_ids: int = 4
    terminal_prob: float = 0.9
    spurious_terminal_prob: float = 0.05
    turn_continue_prob: float = 0.65

    def __post_init__(self):
        if self.num_speakers < 2:
            raise ValueError("need at least two speakers for change detection")
        if self.min_tokens < 2 or self.max_tokens < self.min_tokens:
            raise ValueError("token count range is invalid")
        if self.num_terminal_ids >= self.num_content_ids:
            raise ValueError("terminal ids must be a strict subset of content ids")

    @property
    def token_duration_s(self) -> float:
        return self.frames_per_token * self.downsampling * self.frame_shift_s


@dataclass(frozen=True)
class SentenceExample:
    sentence_id: str
    example: TrainingExample
    reference: Segmentation


def speaker_label(index: int) -> str:
    return f"spk{index}"


def _draw_speakers(cfg: SynthConfig, num_tokens: int,
                   rng: np.random.Generator) -> list[int]:
    speakers = [int(rng.integers(cfg.num_speakers))]
    while len(speakers) < num_tokens:
        if rng.random() < cfg.turn_continue_prob:
            speakers.append(speakers[-1])
        else:
            options = [s for s in range(cfg.num_speakers) if s != speakers[-1]]
            speakers.append(int(options[rng.integers(len(options))]))
    return speakers


def _reference_from_tokens(cfg: SynthConfig, speakers: list[int]) -> Segmentation:
    dur = cfg.token_duration_s
    segments = []
    start = 0
    for i, spk in enumerate(speakers):
        if i + 1 < len(speakers) and speakers[i + 1] == spk:
            continue
        segments.append(
            Segment(start * dur, (i + 1) * dur, speaker_label(spk))
        )
        start = i + 1
    return Segmentation(tuple(segments))


def generate_dataset(cfg: SynthConfig, seed: int) -> list[SentenceExample]:
    rng = np.random.default_rng(seed)
    speaker_means = cfg.speaker_scale * rng.standard_normal(
        (cfg.num_speakers, cfg.feature_dim)
    )
    content_means = cfg.content_scale * rng.standard_normal(
        (cfg.num_content_ids, cfg.feature_dim)
    )
    raw_per_token = cfg.frames_per_token * cfg.downsampling

    sentences = []
    for idx in range(cfg.num_sentences):
        num_tokens = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
        speakers = _draw_speakers(cfg, num_tokens, rng)
        changes = [
            1 if i + 1 < num_tokens and speakers[i + 1] != speakers[i] else 0
            for i in range(num_tokens)
        ]
        content_ids = []
        for c in changes:
            terminal = rng.random() < (
                cfg.terminal_prob if c else cfg.spurious_terminal_prob
            )
            if terminal:
                content_ids.append(int(rng.integers(cfg.num_terminal_ids)))
            else:
                content_ids.append(
                    int(rng.integers(cfg.num_terminal_ids, cfg.num_content_ids))
                )
        frames = np.empty((num_tokens * raw_per_token, cfg.feature_dim))
        for i, (spk, cid) in enumerate(zip(speakers, content_ids)):
            lo = i * raw_per_token
            frames[lo : lo + raw_per_token] = (
                speaker_means[spk]
                + content_means[cid]
                + cfg.noise_scale
                * rng.standard_normal((raw_per_token, cfg.feature_dim))
            )
        example = TrainingExample(
            acoustic_frames=frames,
            token_count=num_tokens,
            token_speaker_labels=tuple(speakers),
            token_change_labels=tuple(changes),
        )
        sentences.append(
            SentenceExample(
                sentence_id=f"synth-{idx:05d}",
                example=example,
                reference=_reference_from_tokens(cfg, speakers),
            )
        )
    return sentences


def save_dataset(out_dir, cfg: SynthConfig, sentences: list[SentenceExample]):
    out = Path(out_dir)
    (out / "sentences").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": asdict(cfg),
        "sentence_ids": [s.sentence_id for s in sentences],
        "speakers": [speaker_label(i) for i in range(cfg.num_speakers)],
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    for s in sentences:
        record = {
            "format_version": FORMAT_VERSION,
            "sentence_id": s.sentence_id,
            "token_count": s.example.token_count,
            "speaker_labels": list(s.example.token_speaker_labels),
            "change_labels": list(s.example.token_change_labels),
            "frames": s.example.acoustic_frames.tolist(),
            "reference": [[seg.start, seg.end, seg.label] for seg in s.reference],
        }
        with open(out / "sentences" / f"{s.sentence_id}.json", "w",
                  encoding="utf-8") as fh:
            json.dump(record, fh, sort_keys=True)


def load_dataset(data_dir) -> tuple[SynthConfig, list[SentenceExample]]:
    root = Path(data_dir)
    with open(root / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"unsupported dataset format version {manifest.get('format_version')!r}"
        )
    cfg = SynthConfig(**manifest["config"])
    sentences = []
    for sid in manifest["sentence_ids"]:
        with open(root / "sentences" / f"{sid}.json", encoding="utf-8") as fh:
            record = json.load(fh)
        reference = Segmentation(
            tuple(Segment(a, b, label) for a, b, label in record["reference"])
        )
        example = TrainingExample(
            acoustic_frames=np.asarray(record["frames"], dtype=np.float64),
            token_count=record["token_count"],
            token_speaker_labels=tuple(record["speaker_labels"]),
            token_change_labels=tuple(record["change_labels"]),
        )
        sentences.append(SentenceExample(sid, example, reference))
    return cfg, sentences
