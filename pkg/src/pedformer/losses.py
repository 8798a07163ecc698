"""Multi-task objective: log-cosh trajectory + weighted BCE + cell CE.

The total is omega_l * sum(logcosh) + omega_a * weighted-BCE + omega_dl * CE
per sample, mean-reduced over the batch. Class weighting for the crossing
action uses w_cross = N_noncross / N_cross from corpus counts (the PIE-scale
counts 3980 total / 995 crossing give exactly 3.0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

_EPS = 1e-7


class LossError(Exception):
    pass


@dataclass
class LossWeights:
    omega_l: float = 0.6
    omega_a: float = 1.0
    omega_dl: float = 1.0
    w_cross: float = 1.0
    w_noncross: float = 1.0

    @classmethod
    def for_profile(cls, profile, **overrides):
        omega_l = {"pie": 0.6, "jaad": 0.5}.get(profile)
        if omega_l is None:
            raise LossError(f"unknown loss profile '{profile}'")
        kw = {"omega_l": omega_l, **overrides}
        return cls(**kw)

    def with_class_counts(self, n_cross, n_noncross):
        """Crossing class weight from corpus counts; falls back to 1 if a
        class is absent (nothing to balance)."""
        w = (n_noncross / n_cross) if n_cross > 0 else 1.0
        return LossWeights(self.omega_l, self.omega_a, self.omega_dl,
                           w_cross=w, w_noncross=1.0)


def logcosh_loss(pred, target):
    """Sum of log(cosh(pred - target)) over all steps and coordinates."""
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise LossError(f"shape mismatch {pred.data.shape} vs {target.shape}")
    return ad.tsum(ad.logcosh(ad.sub(pred, ad.Tensor(target))))


def bce_action(prob, label, weights: LossWeights):
    """Class-weighted negative log-likelihood of the crossing label."""
    p = ad.clip(prob, _EPS, 1.0 - _EPS)
    if label == 1:
        return ad.scale(ad.neg(ad.tsum(ad.log(p))), weights.w_cross)
    if label == 0:
        one_minus = ad.sub(ad.Tensor(np.ones_like(p.data)), p)
        return ad.scale(ad.neg(ad.tsum(ad.log(one_minus))), weights.w_noncross)
    raise LossError(f"crossing label must be 0 or 1, got {label!r}")


def ce_discrete(distribution, target_cell):
    """-log(distribution[target_cell]) with a 1e-7 floor."""
    n = distribution.data.shape[-1]
    cell = int(target_cell)
    if not 0 <= cell < n:
        raise LossError(f"target cell {cell} outside [0, {n})")
    picked = ad.narrow(distribution, 1, cell, 1)
    return ad.neg(ad.tsum(ad.log(ad.clip(picked, _EPS, 1.0))))


@dataclass
class LossParts:
    total: float
    trajectory: float
    action: float
    discrete: float


def total_loss(bundles, targets, weights: LossWeights):
    """Batch objective.

    ``targets`` is a list of (future_boxes, crossing_label, final_cell)
    matching ``bundles``. Returns (loss Tensor, LossParts of detached means).
    """
    if not bundles or len(bundles) != len(targets):
        raise LossError(f"batch mismatch: {len(bundles)} bundles, {len(targets)} targets")
    n = len(bundles)
    traj_terms, act_terms, dl_terms = [], [], []
    for bundle, (boxes, label, cell) in zip(bundles, targets):
        traj_terms.append(logcosh_loss(bundle.future_boxes, boxes))
        act_terms.append(bce_action(bundle.crossing_prob, label, weights))
        dl_terms.append(ce_discrete(bundle.cell_distribution, cell))

    def mean(terms):
        total = terms[0]
        for t in terms[1:]:
            total = ad.add(total, t)
        return ad.scale(total, 1.0 / n)

    traj = mean(traj_terms)
    act = mean(act_terms)
    dl = mean(dl_terms)
    total = ad.add(
        ad.add(ad.scale(traj, weights.omega_l), ad.scale(act, weights.omega_a)),
        ad.scale(dl, weights.omega_dl),
    )
    parts = LossParts(
        total=float(total.item()),
        trajectory=float(traj.item()),
        action=float(act.item()),
        discrete=float(dl.item()),
    )
    return total, parts
