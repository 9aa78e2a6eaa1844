"""AdamW: adaptive moments with decoupled weight decay."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


class AdamW:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4, betas=(0.9, 0.999),
                 weight_decay: float = 1e-4, eps: float = 1e-8, grad_clip: float | None = None):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        # frozen params are dropped up front; they can never be stepped
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for p in self.params}
        self.v = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        missing = [p.name for p in self.params if p.grad is None]
        if len(missing) == len(self.params) and self.params:
            raise RuntimeError("optimizer step without gradients; call backward first")
        scale = 1.0
        if self.grad_clip is not None:
            norm = np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                               for p in self.params if p.grad is not None))
            if norm > self.grad_clip:
                scale = self.grad_clip / (norm + 1e-12)
        self.t += 1
        b1, b2, lr = self.beta1, self.beta2, self.lr
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            if p.grad is None or not p.trainable:
                continue
            g = p.grad * np.float32(scale)
            m = self.m[id(p)]
            v = self.v[id(p)]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr == 0:
                continue
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data *= np.float32(1.0 - lr * self.weight_decay)
            p.data -= (lr * update).astype(np.float32)
