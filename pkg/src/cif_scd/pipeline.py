"""Training and evaluation drivers shared by the CLI and the test suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cif import quantity_loss
from .errors import NonFiniteWeight
from .metrics import (
    CurvePoint,
    EcpResult,
    ScoredChangePoints,
    SweepConfig,
    corpus_sweep_curve,
    ecp,
)
from .model import (
    BslBaseline,
    ModelConfig,
    ScdModel,
    bsl_frame_targets,
    joint_loss,
    reference_change_times,
    tokens_to_change_times,
)
from .nn import (
    Adam,
    AmsConfig,
    Module,
    Sgd,
    Tensor,
    WarmupHold,
    amsoftmax_loss,
    bce_loss,
    load_checkpoint,
    save_checkpoint,
)
from .nn import tensor as T
from .synth import SentenceExample

logger = logging.getLogger(__name__)


def _check_finite(value: float, what: str):
    if not np.isfinite(value):
        raise NonFiniteWeight(f"{what} became non-finite: {value!r}")


def _example_order(num_examples: int, steps: int, rng: np.random.Generator):
    order: list[int] = []
    while len(order) < steps:
        order.extend(rng.permutation(num_examples).tolist())
    return order[:steps]


def pretrain_asr(model: ScdModel, sentences: list[SentenceExample], steps: int,
                 peak_lr: float = 1e-3, warmup: int = 100,
                 seed: int = 0) -> list[tuple[int, float]]:
    """Train the weight estimator so total weight mass matches token counts."""
    rng = np.random.default_rng(seed)
    opt = Adam(model.asr_parameters(), WarmupHold(peak_lr, warmup))
    rows = []
    for step, idx in enumerate(_example_order(len(sentences), steps, rng)):
        ex = sentences[idx].example
        _, alpha = model.asr.encode(ex.acoustic_frames)
        loss = T.absolute(T.tsum(alpha) - float(ex.token_count))
        value = loss.item()
        _check_finite(value, "quantity loss")
        opt.zero_grad()
        loss.backward()
        opt.step()
        rows.append((step, value))
    return rows


class SpeakerPretrainHead(Module):
    """Average pooling plus an AMS output layer, discarded after pretraining."""

    def __init__(self, speaker_dim: int, num_classes: int,
                 rng: np.random.Generator):
        bound = 1.0 / np.sqrt(speaker_dim)
        self.class_weights = Tensor(
            rng.uniform(-bound, bound, size=(num_classes, speaker_dim)),
            requires_grad=True,
        )


def turn_utterances(sentences: list[SentenceExample], frames_per_token_raw: int
                    ) -> list[tuple[np.ndarray, int]]:
    """Single-speaker crops: one utterance per speaker turn."""
    utterances = []
    for s in sentences:
        labels = s.example.token_speaker_labels
        start = 0
        for i in range(len(labels)):
            if i + 1 < len(labels) and labels[i + 1] == labels[i]:
                continue
            frames = s.example.acoustic_frames[
                start * frames_per_token_raw : (i + 1) * frames_per_token_raw
            ]
            utterances.append((frames, int(labels[i])))
            start = i + 1
    return utterances


def pretrain_speaker(model: ScdModel, sentences: list[SentenceExample],
                     steps: int, peak_lr: float = 0.05, warmup: int = 100,
                     seed: int = 0) -> tuple[list[tuple[int, float]], SpeakerPretrainHead]:
    """Utterance-level speaker classification over single-speaker turns."""
    cfg = model.cfg
    raw_per_token = _raw_per_token(model, sentences)
    utterances = turn_utterances(sentences, raw_per_token)
    rng = np.random.default_rng(seed)
    head = SpeakerPretrainHead(cfg.speaker_dim, cfg.num_speakers, rng)
    params = model.speaker_encoder.parameters() + head.parameters()
    opt = Sgd(params, WarmupHold(peak_lr, warmup))
    ams_cfg = AmsConfig(cfg.ams_margin, cfg.ams_scale, cfg.num_speakers)
    rows = []
    for step, idx in enumerate(_example_order(len(utterances), steps, rng)):
        frames, label = utterances[idx]
        z = model.speaker_encoder(frames)
        pooled = T.reshape(T.tmean(z, axis=0), (1, cfg.speaker_dim))
        loss = amsoftmax_loss(pooled, [label], head.class_weights, ams_cfg)
        value = loss.item()
        _check_finite(value, "speaker pretraining loss")
        opt.zero_grad()
        loss.backward()
        opt.step()
        rows.append((step, value))
    return rows, head


def speaker_utterance_accuracy(model: ScdModel, head: SpeakerPretrainHead,
                               sentences: list[SentenceExample]) -> float:
    raw_per_token = _raw_per_token(model, sentences)
    utterances = turn_utterances(sentences, raw_per_token)
    correct = 0
    for frames, label in utterances:
        z = model.speaker_encoder(frames).data
        pooled = z.mean(axis=0)
        pooled /= np.linalg.norm(pooled) + 1e-12
        w = head.class_weights.data
        w = w / (np.linalg.norm(w, axis=1, keepdims=True) + 1e-12)
        if int(np.argmax(w @ pooled)) == label:
            correct += 1
    return correct / len(utterances)


def _raw_per_token(model: ScdModel, sentences: list[SentenceExample]) -> int:
    ex = sentences[0].example
    return ex.acoustic_frames.shape[0] // ex.token_count


def train_joint(model: ScdModel, sentences: list[SentenceExample], steps: int,
                peak_lr: float = 1e-3, warmup: int = 100, seed: int = 0
                ) -> list[tuple[int, float, float, float]]:
    """Joint speaker-classification + change-detection training, frozen ASR."""
    rng = np.random.default_rng(seed)
    opt = Adam(model.joint_parameters(), WarmupHold(peak_lr, warmup))
    rows = []
    for step, idx in enumerate(_example_order(len(sentences), steps, rng)):
        ex = sentences[idx].example
        bundle, path, scores = model.forward(ex.acoustic_frames, ex.token_count)
        total, ams, bce = joint_loss(path, scores, ex, model.cfg)
        _check_finite(total.item(), "joint loss")
        opt.zero_grad()
        total.backward()
        opt.step()
        rows.append(
            (step, ams.item(), bce.item(),
             quantity_loss(bundle.weights, ex.token_count))
        )
    return rows


def train_bsl(baseline: BslBaseline, sentences: list[SentenceExample],
              steps: int, peak_lr: float = 1e-3, warmup: int = 100,
              seed: int = 0, collar_s: float = 0.2) -> list[tuple[int, float]]:
    """Frame-level comparator training with collar-based positive labels."""
    cfg = baseline.cfg
    rng = np.random.default_rng(seed)
    opt = Adam(baseline.parameters(), WarmupHold(peak_lr, warmup))
    rows = []
    for step, idx in enumerate(_example_order(len(sentences), steps, rng)):
        s = sentences[idx]
        scores = baseline(s.example.acoustic_frames)
        targets = bsl_frame_targets(
            reference_change_times(s.reference), scores.data.shape[0],
            cfg.frame_shift_s, cfg.downsampling, collar_s,
        )
        loss = bce_loss(scores, targets)
        _check_finite(loss.item(), "baseline loss")
        opt.zero_grad()
        loss.backward()
        opt.step()
        rows.append((step, loss.item()))
    return rows


def _interior_points(times: np.ndarray, scores: np.ndarray,
                     span_end: float) -> ScoredChangePoints:
    keep = (times > 1e-9) & (times < span_end - 1e-9)
    return ScoredChangePoints(times[keep], scores[keep])


def sentence_eval_items(model: ScdModel, sentences: list[SentenceExample],
                        oracle_scores: bool = False):
    """(span, candidate points, reference) triples for the corpus sweep."""
    cfg = model.cfg
    items = []
    for s in sentences:
        span_end = s.example.acoustic_frames.shape[0] * cfg.frame_shift_s
        if oracle_scores:
            times = np.asarray(reference_change_times(s.reference))
            points = ScoredChangePoints(times, np.ones_like(times))
        else:
            bundle, _, scores = model.forward(s.example.acoustic_frames, None)
            candidates = tokens_to_change_times(
                bundle.boundaries, scores.data, cfg.frame_shift_s, cfg.downsampling
            )
            points = _interior_points(candidates.times, candidates.scores, span_end)
        items.append(((0.0, span_end), points, s.reference))
    return items


def bsl_eval_items(baseline: BslBaseline, sentences: list[SentenceExample]):
    cfg = baseline.cfg
    items = []
    for s in sentences:
        span_end = s.example.acoustic_frames.shape[0] * cfg.frame_shift_s
        scores = baseline(s.example.acoustic_frames).data
        candidates = tokens_to_change_times(
            np.arange(scores.shape[0]), scores, cfg.frame_shift_s, cfg.downsampling
        )
        points = _interior_points(candidates.times, candidates.scores, span_end)
        items.append(((0.0, span_end), points, s.reference))
    return items


def evaluate(items, sweep: SweepConfig) -> tuple[list[CurvePoint], EcpResult]:
    curve = corpus_sweep_curve(items, sweep)
    return curve, ecp(curve)


def clone_with_config(model: ScdModel, cfg: ModelConfig, seed: int = 0) -> ScdModel:
    """Fresh model under a different head config, reusing pretrained parts.

    The ASR side, speaker encoder, and SID head keep their trained weights;
    the detection head is re-initialized to fit the new cue layout.
    """
    variant = ScdModel(cfg, seed=seed)
    arrays = model.state_arrays()
    shared = {
        name: value
        for name, value in arrays.items()
        if not name.startswith("scd_head.")
    }
    for name, param in variant.named_parameters():
        if name in shared:
            param.data = shared[name].copy()
    return variant


def save_model(path, model: ScdModel, seed: int | None = None):
    save_checkpoint(path, model.state_arrays(), seed=seed,
                    config={"kind": "joint", "model": model.cfg.to_dict()})


def load_model(path) -> tuple[ScdModel, dict]:
    arrays, header = load_checkpoint(path)
    config = (header.get("config") or {}).get("model")
    if config is None:
        raise ValueError(f"{path}: checkpoint carries no model config")
    model = ScdModel(ModelConfig.from_dict(config), seed=header.get("seed") or 0)
    model.load_state_arrays(arrays)
    return model, header
