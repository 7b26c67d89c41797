"""Adam with linear learning-rate warm-up and global-norm gradient clipping."""

from __future__ import annotations

import numpy as np


class MissingGrad(Exception):
    pass


class Adam:
    def __init__(self, named_params, learning_rate: float = 1e-4,
                 warmup_steps: int = 0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float | None = 1.0):
        self.params = list(named_params)  # (name, Parameter) pairs
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def effective_lr(self, step: int) -> float:
        if self.warmup_steps > 0:
            return self.learning_rate * min(1.0, step / self.warmup_steps)
        return self.learning_rate

    def zero_grad(self):
        for _, p in self.params:
            p.tensor.grad = None

    def step(self):
        active = [(name, p) for name, p in self.params if not p.frozen]
        for name, p in active:
            if p.tensor.grad is None:
                raise MissingGrad(f"no gradient for parameter {name}")
        if self.clip_norm is not None:
            total = float(np.sqrt(sum(
                float((p.tensor.grad ** 2).sum()) for _, p in active)))
            if total > self.clip_norm:
                scale = np.float32(self.clip_norm / (total + 1e-12))
                for _, p in active:
                    p.tensor.grad *= scale
        self.step_count += 1
        lr = self.effective_lr(self.step_count)
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in active:
            g = p.tensor.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.tensor.data = (p.tensor.data
                             - lr * m_hat / (np.sqrt(v_hat) + self.eps)
                             ).astype(p.tensor.data.dtype)
