"""Optimizers and the warmup-then-hold learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class WarmupHold:
    """Linear warmup to a peak learning rate, then hold it."""

    def __init__(self, peak_lr: float, warmup_steps: int):
        if peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        self.peak_lr = peak_lr
        self.warmup_steps = warmup_steps

    def lr(self, step: int) -> float:
        if self.warmup_steps == 0:
            return self.peak_lr
        return self.peak_lr * min(1.0, (step + 1) / self.warmup_steps)


class Sgd:
    """SGD with classical momentum."""

    def __init__(self, params: list[Tensor], schedule: WarmupHold,
                 momentum: float = 0.9):
        self.params = list(params)
        self.schedule = schedule
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        lr = self.schedule.lr(self.step_count)
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= lr * v
        self.step_count += 1


class Adam:
    def __init__(self, params: list[Tensor], schedule: WarmupHold,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.schedule = schedule
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        lr = self.schedule.lr(self.step_count)
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
