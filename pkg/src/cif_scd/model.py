"""Joint token-level change detection model at desk scale.

Three cooperating parts:

* a toy ASR side producing encoded frames ``h``, information weights
  ``alpha``, integrate-and-fire token vectors ``c``, and decoder states
  ``o`` (a single causal attention pass over ``c`` stands in for a real
  autoregressive decoder);
* a speaker path producing frame-level speaker representations ``z``,
  token-level speaker representations ``e`` (fired with the same weights
  as the ASR side, treated as constants), embeddings ``m``, and class
  posteriors ``v``;
* a change-detection head that fuses the speaker-difference cue (convolution
  plus FFN over ``m``) with the speech-content cue (FC plus causal attention
  over ``c`` and ``o``) and emits one change probability per token.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cif import (
    CifConfig,
    FiredTokens,
    Mode,
    WeightedFrames,
    cif_forward,
    contributions_matrix,
)
from .errors import ConfigError, ShapeMismatch
from .metrics import ScoredChangePoints
from .nn import (
    FFN,
    AmsConfig,
    CausalSelfAttention,
    Conv1d,
    Linear,
    Module,
    Tensor,
    TransformerLayer,
    ams_posteriors,
    amsoftmax_loss,
    bce_loss,
)
from .nn import tensor as T


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 8
    encoder_dim: int = 16
    speaker_dim: int = 16
    embed_dim: int = 8
    num_speakers: int = 4
    attention_heads: int = 2
    sce_dim: int = 16
    sce_layers: int = 1
    sde_hidden: int = 32
    jointer_hidden: int = 32
    downsampling: int = 4
    frame_shift_s: float = 0.01
    conv_context: int = 1
    use_difference: bool = True
    use_content: bool = True
    use_conv_in_sde: bool = True
    cif_threshold: float = 1.0
    cif_scale_epsilon: float = 1e-8
    ams_margin: float = 0.2
    ams_scale: float = 30.0
    loss_weight_speaker: float = 1.0
    loss_weight_change: float = 1.0

    def __post_init__(self):
        if not (self.use_difference or self.use_content):
            raise ConfigError("at least one of the difference/content cues must be on")
        if self.conv_context not in (1, 2, 3):
            raise ConfigError("conv_context must be 1, 2, or 3")
        for dim in (self.encoder_dim, self.sce_dim):
            if dim % self.attention_heads != 0:
                raise ConfigError(
                    f"attention heads ({self.attention_heads}) must divide {dim}"
                )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)

    def ams_config(self) -> AmsConfig:
        return AmsConfig(self.ams_margin, self.ams_scale, self.num_speakers)

    def cif_config(self, mode: Mode) -> CifConfig:
        return CifConfig(mode, self.cif_threshold, scale_epsilon=self.cif_scale_epsilon)


@dataclass(frozen=True)
class TrainingExample:
    """Acoustic frames plus token-level targets for one sentence."""

    acoustic_frames: np.ndarray
    token_count: int
    token_speaker_labels: tuple[int, ...]
    token_change_labels: tuple[int, ...]

    def __post_init__(self):
        frames = np.asarray(self.acoustic_frames, dtype=np.float64)
        speakers = tuple(int(v) for v in self.token_speaker_labels)
        changes = tuple(int(v) for v in self.token_change_labels)
        if len(speakers) != self.token_count or len(changes) != self.token_count:
            raise ShapeMismatch("label sequences must have token_count entries")
        if any(c not in (0, 1) for c in changes):
            raise ValueError("change labels must be bits")
        if changes and changes[-1] != 0:
            raise ValueError("the final token's change label must be 0")
        object.__setattr__(self, "acoustic_frames", frames)
        object.__setattr__(self, "token_speaker_labels", speakers)
        object.__setattr__(self, "token_change_labels", changes)


@dataclass
class ToyAsrBundle:
    """Everything the frozen ASR side hands to the detection head."""

    encoded_frames: Tensor          # h, (U, D)
    weight_tensor: Tensor           # alpha before detaching, for quantity loss
    weights: np.ndarray             # raw alpha values, (U,)
    fired: FiredTokens
    cif_tokens: Tensor              # c, (S, D)
    decoder_states: Tensor          # o, (S, D)
    coefficients: np.ndarray        # (S, U), tokens = coefficients @ h

    @property
    def boundaries(self) -> np.ndarray:
        return self.fired.boundaries

    @property
    def token_count(self) -> int:
        return self.fired.num_tokens


@dataclass
class SpeakerPath:
    speaker_frames: Tensor          # z, (U, Dz)
    token_speaker_reps: Tensor      # e, (S, Dz)
    embeddings: Tensor              # m, (S, De)
    posteriors: np.ndarray          # v, (S, C), rows sum to 1
    class_weights: Tensor           # AMS class prototypes, (C, De)
    fired: FiredTokens


class ToyAsr(Module):
    """Conv front-end, two-layer encoder, weight estimator, toy decoder."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.encoder_dim
        self.cfg = cfg
        self.front = Linear(cfg.feature_dim, d, rng, activation="relu")
        self.front_conv = Conv1d(d, d, 3, rng)
        self.enc1 = Linear(d, d, rng, activation="relu")
        self.enc2 = Linear(d, d, rng, activation="relu")
        self.west_conv = Conv1d(d, d, 3, rng)
        self.west_fc = Linear(d, 1, rng)
        self.decoder = CausalSelfAttention(d, cfg.attention_heads, rng)

    def encode(self, frames: np.ndarray) -> tuple[Tensor, Tensor]:
        """frames (T, F) -> (h (U, D), alpha (U,)) with U = T / downsampling."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != self.cfg.feature_dim:
            raise ShapeMismatch(
                f"expected (T, {self.cfg.feature_dim}) frames, got {frames.shape}"
            )
        if frames.shape[0] % self.cfg.downsampling != 0:
            raise ShapeMismatch(
                f"frame count {frames.shape[0]} not divisible by "
                f"downsampling {self.cfg.downsampling}"
            )
        x = self.front(Tensor(frames))
        x = T.relu(self.front_conv(x))
        x = T.mean_pool_rows(x, self.cfg.downsampling)
        h = self.enc2(self.enc1(x))
        west = T.sigmoid(self.west_fc(T.relu(self.west_conv(h))))
        alpha = T.reshape(west, (h.data.shape[0],))
        return h, alpha

    def forward(self, frames: np.ndarray, token_count: int | None = None,
                weights_override: np.ndarray | None = None) -> ToyAsrBundle:
        h, alpha = self.encode(frames)
        raw = (
            np.asarray(weights_override, dtype=np.float64)
            if weights_override is not None
            else alpha.data.copy()
        )
        mode = Mode.TRAIN if token_count is not None else Mode.INFERENCE
        fired = cif_forward(
            WeightedFrames(h.data, raw), self.cfg.cif_config(mode), token_count
        )
        coeffs = contributions_matrix(fired, h.data.shape[0])
        c = T.matmul(Tensor(coeffs), h)
        if fired.num_tokens > 0:
            o = self.decoder(c)
        else:
            o = Tensor(np.zeros((0, self.cfg.encoder_dim)))
        return ToyAsrBundle(
            encoded_frames=h,
            weight_tensor=alpha,
            weights=raw,
            fired=fired,
            cif_tokens=c,
            decoder_states=o,
            coefficients=coeffs,
        )


class SpeakerEncoder(Module):
    """Frame-level speaker representations with the ASR side's downsampling."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        dz = cfg.speaker_dim
        self.cfg = cfg
        self.front = Linear(cfg.feature_dim, dz, rng, activation="relu")
        self.conv = Conv1d(dz, dz, 3, rng)
        self.proj = Linear(dz, dz, rng, activation="relu")

    def __call__(self, frames: np.ndarray) -> Tensor:
        frames = np.asarray(frames, dtype=np.float64)
        x = self.front(Tensor(frames))
        x = T.relu(self.conv(x))
        x = T.mean_pool_rows(x, self.cfg.downsampling)
        return self.proj(x)


class SidHead(Module):
    """Token-level speaker embedding layer plus AMS class prototypes."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.fc_m = Linear(cfg.speaker_dim, cfg.embed_dim, rng, activation="relu")
        bound = 1.0 / np.sqrt(cfg.embed_dim)
        self.class_weights = Tensor(
            rng.uniform(-bound, bound, size=(cfg.num_speakers, cfg.embed_dim)),
            requires_grad=True,
        )


def speaker_path_forward(encoder: SpeakerEncoder, sid_head: SidHead,
                         cfg: ModelConfig, frames: np.ndarray, weights,
                         token_count: int | None = None) -> SpeakerPath:
    """Run the speaker side with externally provided information weights.

    The weights are consumed as constants: gradients flow into the speaker
    encoder through the firing coefficients, never into the weights.
    """
    z = encoder(frames)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (z.data.shape[0],):
        raise ShapeMismatch(
            f"got {weights.shape[0] if weights.ndim else 0} weights for "
            f"{z.data.shape[0]} speaker frames"
        )
    mode = Mode.TRAIN if token_count is not None else Mode.INFERENCE
    fired = cif_forward(WeightedFrames(z.data, weights), cfg.cif_config(mode),
                        token_count)
    coeffs = contributions_matrix(fired, z.data.shape[0])
    e = T.matmul(Tensor(coeffs), z)
    m = sid_head.fc_m(e)
    if fired.num_tokens > 0:
        v = ams_posteriors(m.data, sid_head.class_weights.data, cfg.ams_scale)
    else:
        v = np.zeros((0, cfg.num_speakers))
    return SpeakerPath(z, e, m, v, sid_head.class_weights, fired)


class ScdHead(Module):
    """Fuses speaker difference and speech content into change probabilities."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        if not (cfg.use_difference or cfg.use_content):
            raise ConfigError("both cues disabled")
        self.cfg = cfg
        jointer_in = 0
        if cfg.use_difference:
            if cfg.use_conv_in_sde:
                self.sde_conv = Conv1d(
                    cfg.embed_dim, cfg.embed_dim, 2 * cfg.conv_context + 1, rng
                )
            self.sde_ffn = FFN(cfg.embed_dim, cfg.sde_hidden, rng)
            jointer_in += cfg.embed_dim
        if cfg.use_content:
            self.sce_fc = Linear(2 * cfg.encoder_dim, cfg.sce_dim, rng)
            self.sce_stack = [
                TransformerLayer(cfg.sce_dim, cfg.attention_heads,
                                 2 * cfg.sce_dim, rng)
                for _ in range(cfg.sce_layers)
            ]
            jointer_in += cfg.sce_dim
        self.joint_fc1 = Linear(jointer_in, cfg.jointer_hidden, rng, activation="relu")
        self.joint_fc2 = Linear(cfg.jointer_hidden, 1, rng)

    def __call__(self, bundle: ToyAsrBundle, path: SpeakerPath) -> Tensor:
        num_tokens = bundle.token_count
        if path.embeddings.data.shape[0] != num_tokens:
            raise ShapeMismatch(
                f"speaker path has {path.embeddings.data.shape[0]} tokens, "
                f"ASR side has {num_tokens}"
            )
        cues = []
        if self.cfg.use_difference:
            x = path.embeddings
            if self.cfg.use_conv_in_sde:
                x = self.sde_conv(x)
            cues.append(self.sde_ffn(x))
        if self.cfg.use_content:
            content = T.concat([bundle.cif_tokens, bundle.decoder_states], axis=1)
            l = self.sce_fc(content)
            for layer in self.sce_stack:
                l = layer(l)
            cues.append(l)
        fused = cues[0] if len(cues) == 1 else T.concat(cues, axis=1)
        logits = self.joint_fc2(self.joint_fc1(fused))
        return T.reshape(T.sigmoid(logits), (num_tokens,))


def scd_forward(bundle: ToyAsrBundle, path: SpeakerPath, head: ScdHead) -> Tensor:
    return head(bundle, path)


class ScdModel(Module):
    """Full joint model; the ASR side stays frozen during joint training."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.asr = ToyAsr(cfg, rng)
        self.speaker_encoder = SpeakerEncoder(cfg, rng)
        self.sid_head = SidHead(cfg, rng)
        self.scd_head = ScdHead(cfg, rng)

    def joint_parameters(self) -> list[Tensor]:
        """Trainable parameters for the joint stage (everything except ASR)."""
        return (
            self.speaker_encoder.parameters()
            + self.sid_head.parameters()
            + self.scd_head.parameters()
        )

    def asr_parameters(self) -> list[Tensor]:
        return self.asr.parameters()

    def forward(self, frames: np.ndarray, token_count: int | None = None,
                weights_override: np.ndarray | None = None
                ) -> tuple[ToyAsrBundle, SpeakerPath, Tensor]:
        bundle = self.asr.forward(frames, token_count, weights_override)
        path = speaker_path_forward(
            self.speaker_encoder, self.sid_head, self.cfg, frames,
            bundle.weights, token_count,
        )
        if bundle.token_count == 0:
            scores = Tensor(np.zeros(0))
        else:
            scores = self.scd_head(bundle, path)
        return bundle, path, scores


def joint_loss(path: SpeakerPath, scores: Tensor, example: TrainingExample,
               cfg: ModelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """(total, speaker term, change term) of the interpolated objective."""
    ams = amsoftmax_loss(
        path.embeddings, example.token_speaker_labels, path.class_weights,
        cfg.ams_config(),
    )
    bce = bce_loss(scores, example.token_change_labels)
    total = ams * cfg.loss_weight_speaker + bce * cfg.loss_weight_change
    return total, ams, bce


class BslBaseline(Module):
    """Frame-level comparator: encoder plus MLP scoring every frame in (0,1)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.encoder_dim
        self.cfg = cfg
        self.front = Linear(cfg.feature_dim, d, rng, activation="relu")
        self.conv = Conv1d(d, d, 3, rng)
        self.mlp_hidden = Linear(d, d, rng, activation="relu")
        self.mlp_out = Linear(d, 1, rng)

    def __call__(self, frames: np.ndarray) -> Tensor:
        frames = np.asarray(frames, dtype=np.float64)
        x = self.front(Tensor(frames))
        x = T.relu(self.conv(x))
        x = T.mean_pool_rows(x, self.cfg.downsampling)
        x = self.mlp_hidden(x)
        scores = T.sigmoid(self.mlp_out(x))
        return T.reshape(scores, (x.data.shape[0],))


def bsl_baseline_forward(baseline: BslBaseline, frames: np.ndarray) -> Tensor:
    return baseline(frames)


def bsl_frame_targets(change_times_s, num_frames: int, frame_shift_s: float,
                      downsampling: int, collar_s: float = 0.2) -> np.ndarray:
    """Binary frame labels: 1 within the collar of any true change time."""
    ends = (np.arange(num_frames) + 1.0) * downsampling * frame_shift_s
    targets = np.zeros(num_frames)
    for t in change_times_s:
        targets[np.abs(ends - t) <= collar_s] = 1.0
    return targets


def tokens_to_change_times(boundaries, scores, frame_shift_s: float,
                           downsampling: int) -> ScoredChangePoints:
    """Map fired frame indices to candidate change times in seconds.

    A boundary at frame index b becomes (b + 1) * downsampling *
    frame_shift_s.  Repeated boundaries (one frame firing several tokens)
    collapse to a single candidate carrying the maximum score.
    """
    boundaries = np.asarray(boundaries, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if boundaries.shape != scores.shape:
        raise ShapeMismatch(
            f"{boundaries.shape[0]} boundaries but {scores.shape[0]} scores"
        )
    times: list[float] = []
    merged: list[float] = []
    for b, s in zip(boundaries, scores):
        t = (int(b) + 1) * downsampling * frame_shift_s
        if times and t == times[-1]:
            merged[-1] = max(merged[-1], float(s))
        else:
            times.append(t)
            merged.append(float(s))
    return ScoredChangePoints(np.asarray(times), np.asarray(merged))


def reference_change_times(reference) -> list[float]:
    """Interior boundaries of a segmentation where the speaker label flips."""
    times = []
    segs = list(reference)
    for prev, cur in zip(segs, segs[1:]):
        if prev.label != cur.label and abs(cur.start - prev.end) < 1e-9:
            times.append(prev.end)
    return times
