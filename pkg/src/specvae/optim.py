"""AdamW with decoupled weight decay, EMA shadow weights, gradient clipping."""

from __future__ import annotations

import numpy as np


class AdamW:
    """Bias-corrected Adam with weight decay applied directly to the weights.

    Steps with any non-finite gradient are skipped entirely (no moment or
    weight update) and counted in skipped_steps.
    """

    def __init__(self, named_params, lr: float = 1e-3, betas=(0.5, 0.99),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.skipped_steps = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def step(self) -> bool:
        """Apply one update; returns False if skipped on non-finite grads."""
        grads = []
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                self.skipped_steps += 1
                return False
            grads.append((name, p, g))

        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p, g in grads:
            g = g.astype(p.data.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return True

    def state_tensors(self, prefix: str):
        """Flat (name, array) pairs of the moments for checkpointing."""
        out = []
        for name, _ in self.named_params:
            out.append((f"{prefix}.m.{name}", self.m[name]))
            out.append((f"{prefix}.v.{name}", self.v[name]))
        return out

    def load_state_tensors(self, prefix: str, table: dict):
        for name, _ in self.named_params:
            self.m[name][...] = table[f"{prefix}.m.{name}"]
            self.v[name][...] = table[f"{prefix}.v.{name}"]


class EMA:
    """Exponential moving average of parameters: shadow = m*shadow + (1-m)*value."""

    def __init__(self, named_params, momentum: float = 0.9999):
        self.named_params = list(named_params)
        self.momentum = momentum
        self.shadow = {name: p.data.copy() for name, p in self.named_params}

    def update(self):
        m = self.momentum
        for name, p in self.named_params:
            s = self.shadow[name]
            s *= m
            s += (1.0 - m) * p.data

    def copy_to(self):
        """Overwrite live weights with the shadow (for eval/export)."""
        for name, p in self.named_params:
            p.data[...] = self.shadow[name]

    def state_tensors(self, prefix: str):
        return [(f"{prefix}.{name}", self.shadow[name]) for name, _ in self.named_params]

    def load_state_tensors(self, prefix: str, table: dict):
        for name, _ in self.named_params:
            self.shadow[name][...] = table[f"{prefix}.{name}"]


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm
