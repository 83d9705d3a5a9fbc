"""Continuous integrate-and-fire (CIF) alignment.

A CIF pass walks a frame sequence left to right, accumulating each frame's
information weight and a weight-scaled running sum of the frame vectors.
Whenever the accumulated weight reaches the firing threshold, the running
vector is emitted as one token-level representation, the weight of the
firing frame is split between the completed token and the next one, and the
accumulator state is reset to the leftover part.

Everything here is deterministic, double precision, and free of shared
mutable state.  Firing decisions are threshold comparisons, so inputs are
accumulated in float64 regardless of where they came from.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInput,
    NonFiniteWeight,
    ShapeMismatch,
    ZeroWeightMass,
)


class Mode(enum.Enum):
    """Whether firing runs against scaled (train) or raw (inference) weights."""

    TRAIN = "train"
    INFERENCE = "inference"


class TailPolicy(enum.Enum):
    """What to do with leftover accumulated weight after the last frame."""

    FIRE_IF_AT_LEAST_HALF = "fire_if_at_least_half"
    DROP = "drop"


@dataclass(frozen=True)
class CifConfig:
    mode: Mode
    threshold: float = 1.0
    tail_policy: TailPolicy = TailPolicy.FIRE_IF_AT_LEAST_HALF
    scale_epsilon: float = 1e-8

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("firing threshold must be positive")
        if self.scale_epsilon <= 0:
            raise ValueError("scale_epsilon must be positive")


@dataclass(frozen=True)
class WeightedFrames:
    """Frame vectors paired with their non-negative information weights.

    ``frames`` has shape (U, D); ``weights`` has shape (U,).
    """

    frames: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if frames.ndim != 2:
            raise ShapeMismatch(f"frames must be 2-d (U, D), got shape {frames.shape}")
        if weights.ndim != 1:
            raise ShapeMismatch(f"weights must be 1-d (U,), got shape {weights.shape}")
        if frames.shape[0] == 0:
            raise EmptyInput("need at least one frame")
        if frames.shape[0] != weights.shape[0]:
            raise ShapeMismatch(
                f"{frames.shape[0]} frames but {weights.shape[0]} weights"
            )
        if not np.all(np.isfinite(weights)):
            raise NonFiniteWeight("weights contain NaN or Inf")
        if not np.all(np.isfinite(frames)):
            raise NonFiniteWeight("frames contain NaN or Inf")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "weights", weights)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class CifState:
    """Accumulator between firings: weight mass and weighted vector sum."""

    accumulated_weight: float
    accumulated_vector: np.ndarray


@dataclass(frozen=True)
class FiredTokens:
    """Result of a CIF pass.

    ``tokens``         (S, D) emitted token vectors.
    ``boundaries``     (S,) 0-based index of the frame at which each
                       integration completed.  Non-decreasing; repeats only
                       when one frame's weight spans several firings.
    ``contributions``  per token, the (frame index, coefficient) pairs whose
                       weighted sum equals the token.
    ``scaled_weights`` the weight vector actually consumed by the scan
                       (scaled in train mode, raw otherwise).
    """

    tokens: np.ndarray
    boundaries: np.ndarray
    contributions: tuple[tuple[tuple[int, float], ...], ...]
    scaled_weights: np.ndarray = field(repr=False)

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]


def scale_weights(weights, target_len: int, eps: float = 1e-8) -> np.ndarray:
    """Rescale raw weights so that they sum to ``target_len``.

    Proportions are preserved; only the total mass changes.
    """
    w = np.asarray(weights, dtype=np.float64)
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    if not np.all(np.isfinite(w)):
        raise NonFiniteWeight("weights contain NaN or Inf")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = float(w.sum())
    if total <= eps:
        raise ZeroWeightMass(
            f"total weight mass {total!r} is at or below epsilon {eps!r}"
        )
    return w * (float(target_len) / total)


def quantity_loss(raw_weights, target_len: int) -> float:
    """Absolute gap between total raw weight mass and the token count."""
    w = np.asarray(raw_weights, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NonFiniteWeight("weights contain NaN or Inf")
    return abs(float(w.sum()) - float(target_len))


def cif_forward(
    inp: WeightedFrames, config: CifConfig, target_len: int | None = None
) -> FiredTokens:
    """Run the integrate-and-fire scan over a weighted frame sequence.

    In train mode the weights are scaled to sum to ``target_len`` first and
    exactly ``target_len`` tokens are emitted.  In inference mode the raw
    weights are consumed as-is and the tail policy decides whether leftover
    mass after the last frame fires one final (un-normalized) token.
    """
    if config.mode is Mode.TRAIN:
        if target_len is None:
            raise ValueError("train mode requires target_len")
        weights = scale_weights(inp.weights, target_len, config.scale_epsilon)
    else:
        if target_len is not None:
            raise ValueError("target_len is only meaningful in train mode")
        weights = inp.weights

    frames = inp.frames
    num_frames, dim = frames.shape
    beta = config.threshold

    state = CifState(0.0, np.zeros(dim))
    tokens: list[np.ndarray] = []
    boundaries: list[int] = []
    contributions: list[tuple[tuple[int, float], ...]] = []
    current: list[tuple[int, float]] = []

    def emit(vector: np.ndarray, frame_idx: int, contrib: list[tuple[int, float]]):
        tokens.append(vector)
        boundaries.append(frame_idx)
        contributions.append(tuple(contrib))

    for u in range(num_frames):
        alpha = float(weights[u])
        if state.accumulated_weight + alpha < beta:
            if alpha > 0.0:
                current.append((u, alpha))
                state = CifState(
                    state.accumulated_weight + alpha,
                    state.accumulated_vector + alpha * frames[u],
                )
            continue
        # Threshold reached at this frame (equality fires): split the
        # frame's weight into the part completing the current token and
        # the leftover carried into the next integration.
        first = beta - state.accumulated_weight
        current.append((u, first))
        emit(state.accumulated_vector + first * frames[u], u, current)
        leftover = alpha - first
        while leftover >= beta:
            # One frame carrying several thresholds' worth of weight fires
            # repeatedly from the same time step.
            emit(beta * frames[u], u, [(u, beta)])
            leftover -= beta
        if leftover > 0.0:
            state = CifState(leftover, leftover * frames[u])
            current = [(u, leftover)]
        else:
            state = CifState(0.0, np.zeros(dim))
            current = []

    if config.mode is Mode.TRAIN:
        # Rounding in the scaling step can leave the final token a few ulps
        # short of the threshold; top it up so the count law holds exactly.
        if len(tokens) == target_len - 1 and state.accumulated_weight > 0.0:
            emit(state.accumulated_vector, current[-1][0], current)
        if len(tokens) != target_len:
            raise RuntimeError(
                f"train-mode scan fired {len(tokens)} tokens, expected {target_len}"
            )
    elif (
        config.tail_policy is TailPolicy.FIRE_IF_AT_LEAST_HALF
        and state.accumulated_weight >= beta / 2.0
    ):
        # Residual vector is emitted raw, without normalizing to full mass.
        emit(state.accumulated_vector, current[-1][0], current)

    if tokens:
        token_array = np.stack(tokens)
    else:
        token_array = np.zeros((0, dim))
    return FiredTokens(
        tokens=token_array,
        boundaries=np.asarray(boundaries, dtype=np.int64),
        contributions=tuple(contributions),
        scaled_weights=weights,
    )


def cif_backward(
    inp: WeightedFrames,
    config: CifConfig,
    upstream_grads,
    target_len: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the firing computation w.r.t. frames and scaled weights.

    The token/frame split pattern is treated as fixed (straight-through):
    each token is the linear map ``sum_k coeff_ik * frames[k]`` and each
    coefficient scales proportionally with its frame's weight.  Frame
    gradients are therefore exact for the realized firing pattern; weight
    gradients apportion a frame's influence across the tokens it fed.
    """
    fired = cif_forward(inp, config, target_len)
    upstream = np.asarray(upstream_grads, dtype=np.float64)
    expected = (fired.num_tokens, inp.dim)
    if upstream.shape != expected:
        raise ShapeMismatch(
            f"upstream gradients have shape {upstream.shape}, expected {expected}"
        )
    frame_grads = np.zeros_like(inp.frames)
    weight_grads = np.zeros(inp.num_frames)
    weights = fired.scaled_weights
    for i, contrib in enumerate(fired.contributions):
        g = upstream[i]
        for u, coeff in contrib:
            frame_grads[u] += coeff * g
            if weights[u] > 0.0:
                weight_grads[u] += (coeff / weights[u]) * float(inp.frames[u] @ g)
    return frame_grads, weight_grads


def contributions_matrix(fired: FiredTokens, num_frames: int) -> np.ndarray:
    """Dense (S, U) coefficient matrix C with ``tokens = C @ frames``."""
    mat = np.zeros((fired.num_tokens, num_frames))
    for i, contrib in enumerate(fired.contributions):
        for u, coeff in contrib:
            mat[i, u] += coeff
    return mat
