"""RMSProp with per-parameter L2 and a plateau learning-rate schedule."""

from __future__ import annotations

import numpy as np


class RMSProp:
    """s <- rho*s + (1-rho)*g^2;  theta <- theta - lr * g / (sqrt(s) + eps).

    A parameter's ``weight_decay`` coefficient (set at model build time, only
    on recurrent weights) is added as decay * theta to its gradient before
    the accumulator update.
    """

    def __init__(self, params, lr, rho=0.9, eps=1e-7):
        self.params = list(params)
        self.lr = float(lr)
        self.rho = rho
        self.eps = eps
        self.sq = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, grad_clip=0.0):
        grads = {}
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            if p.weight_decay:
                g = g + p.weight_decay * p.data
            grads[p.name] = g
        if grad_clip:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > grad_clip:
                factor = grad_clip / norm
                grads = {k: g * factor for k, g in grads.items()}
        for p in self.params:
            g = grads.get(p.name)
            if g is None:
                continue
            s = self.sq[p.name]
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p.tensor.data = p.data - self.lr * g / (np.sqrt(s) + self.eps)


class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` epochs without an
    improvement greater than ``threshold``; never below ``floor``."""

    def __init__(self, lr, factor=0.2, patience=10, threshold=1e-4, floor=1e-7):
        self.lr = float(lr)
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.floor = floor
        self.best = None
        self.stale = 0

    def observe(self, loss):
        """Feed one epoch's validation loss; returns the (possibly reduced) lr."""
        loss = float(loss)
        if self.best is None or self.best - loss > self.threshold:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr = max(self.lr * self.factor, self.floor)
                self.stale = 0
        return self.lr
