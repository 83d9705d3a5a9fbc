"""Neural blocks: fully connected, 1-d convolution, FFN, causal attention.

All weight matrices are initialized uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
with zero biases.  Layers operate on single sequences (no batch axis):
inputs are (S, D) matrices.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, ShapeMismatch
from . import tensor as T
from .tensor import Tensor

_ACTIVATIONS = {"relu": T.relu, "sigmoid": T.sigmoid, None: lambda x: x}


class Module:
    """Base with recursive parameter discovery over attributes."""

    def named_parameters(self, prefix: str = ""):
        out: list[tuple[str, Tensor]] = []
        for name, value in self.__dict__.items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = ""):
        for name, p in self.named_parameters(prefix):
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ShapeMismatch(
                    f"parameter {name!r}: checkpoint shape {value.shape} "
                    f"!= model shape {p.data.shape}"
                )
            p.data = value.copy()


def _init_weight(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 activation: str | None = None):
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.weight = _init_weight(rng, in_dim, (in_dim, out_dim))
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self._activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return _ACTIVATIONS[self._activation](T.matmul(x, self.weight) + self.bias)


class Conv1d(Module):
    """Same-length 1-d convolution over the sequence axis of an (S, C) input.

    Odd kernel, zero padding at both edges; output position i sees input
    positions i-r .. i+r with r = kernel // 2.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator):
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigError("conv kernel must be odd and positive")
        self.kernel = kernel
        self.in_channels = in_channels
        self.weight = _init_weight(
            rng, kernel * in_channels, (kernel * in_channels, out_channels)
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        seq_len, channels = x.data.shape
        if channels != self.in_channels:
            raise ShapeMismatch(
                f"conv expects {self.in_channels} channels, got {channels}"
            )
        radius = self.kernel // 2
        padded = T.pad_rows(x, radius, radius)
        taps = [T.rows(padded, t, t + seq_len) for t in range(self.kernel)]
        stacked = T.concat(taps, axis=1)  # (S, kernel * C)
        return T.matmul(stacked, self.weight) + self.bias


class FFN(Module):
    """Two-layer position-wise feed-forward block with ReLU inside."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator,
                 out_dim: int | None = None):
        self.fc1 = Linear(dim, hidden, rng, activation="relu")
        self.fc2 = Linear(hidden, out_dim if out_dim is not None else dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x))


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = T.tmean(x, axis=-1, keepdims=True)
        centered = x - mu
        var = T.tmean(centered * centered, axis=-1, keepdims=True)
        inv = T.power(var + self.eps, -0.5)
        return centered * inv * self.gamma + self.beta


def causal_mask(seq_len: int) -> np.ndarray:
    """(S, S) additive mask: 0 at or below the diagonal, large negative above."""
    return np.triu(np.full((seq_len, seq_len), -1e30), k=1)


class CausalSelfAttention(Module):
    """Multi-head self-attention where position i attends to positions <= i."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ConfigError(f"heads ({heads}) must divide model dim ({dim})")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def _head_scores(self, x: Tensor):
        seq_len = x.data.shape[0]
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        mask = Tensor(causal_mask(seq_len))
        scale = 1.0 / math.sqrt(self.head_dim)
        per_head = []
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh, kh, vh = T.cols(q, lo, hi), T.cols(k, lo, hi), T.cols(v, lo, hi)
            scores = T.matmul(qh, T.transpose2d(kh)) * scale + mask
            per_head.append((T.softmax(scores, axis=-1), vh))
        return per_head

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.dim:
            raise ShapeMismatch(f"attention expects dim {self.dim}, got {x.data.shape[1]}")
        per_head = self._head_scores(x)
        merged = T.concat([T.matmul(attn, vh) for attn, vh in per_head], axis=1)
        return self.wo(merged)

    def attention_weights(self, x: Tensor) -> np.ndarray:
        """(heads, S, S) attention matrices, for inspection in tests."""
        return np.stack([attn.data for attn, _ in self._head_scores(x)])


class TransformerLayer(Module):
    """Pre-norm causal attention sublayer plus a residual FFN sublayer."""

    def __init__(self, dim: int, heads: int, ffn_hidden: int,
                 rng: np.random.Generator):
        self.norm = LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, heads, rng)
        self.ffn = FFN(dim, ffn_hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm(x))
        return x + self.ffn(x)
