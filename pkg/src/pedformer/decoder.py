"""Shared/gated/task decoders and the three prediction heads.

The context sequence Psi stacks [psi_cm ⊕ psi_int ⊕ em_t] for each future
step t, where em_t is the *future* ego-motion row. A bidirectional shared
decoder turns Psi into h_sd (tau, 2H); the gated hybrid feeds the task
decoders x_hat_t = sigma(h_sd_t) ⊙ h_sd_t ⊕ Psi_t.

Heads: trajectory — per-step linear to 4 normalized box coordinates; action —
per-step linear -> sigmoid -> mean (crossing probability); discrete location —
per-step linear -> softmax -> mean (cell distribution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .configs import ConfigError, DecoderConfig
from .recurrent import BiLSTM, LSTMCell

TASKS = ("trajectory", "action", "discrete_location")


@dataclass
class PredictionBundle:
    future_boxes: "ad.Tensor"        # (tau, 4) normalized coordinates
    crossing_prob: "ad.Tensor"       # (1, 1) in [0, 1]
    cell_distribution: "ad.Tensor"   # (1, n_cells) sums to 1

    def detached(self):
        return (
            self.future_boxes.data.copy(),
            float(self.crossing_prob.data[0, 0]),
            self.cell_distribution.data[0].copy(),
        )


def gate_input(h_sd, psi):
    """x_hat = sigma(h_sd) ⊙ h_sd ⊕ Psi, row-aligned."""
    gated = ad.mul(ad.sigmoid(h_sd), h_sd)
    return ad.concat([gated, psi], axis=1)


class Decoder:
    def __init__(self, store, rng, cfg: DecoderConfig, d_ctx, n_cells,
                 weight_decay=0.0):
        problems = cfg.problems()
        if problems:
            raise ConfigError(problems)
        self.cfg = cfg
        self.n_cells = n_cells
        H = cfg.d_hidden

        if cfg.variant == "task_based":
            self.shared = None
            task_in = d_ctx
            head_in = H
        elif cfg.variant == "shared_only":
            self.shared = BiLSTM(store, rng, "dec/shared", d_ctx, H,
                                 weight_decay=weight_decay)
            task_in = None
            head_in = 2 * H
        else:  # hybrid, gated_hybrid
            self.shared = BiLSTM(store, rng, "dec/shared", d_ctx, H,
                                 weight_decay=weight_decay)
            task_in = 2 * H + d_ctx
            head_in = H

        self.tasks = {}
        if task_in is not None:
            acts = {"trajectory": "tanh", "action": "softsign",
                    "discrete_location": "softsign"}
            for task in TASKS:
                self.tasks[task] = LSTMCell(
                    store, rng, f"dec/task/{task}", task_in, H,
                    output_activation=acts[task], weight_decay=weight_decay,
                )

        def head(name, d_out):
            w = store.add(f"dec/head/{name}/w",
                          ad.glorot_uniform(rng, (head_in, d_out), head_in, d_out))
            b = store.add(f"dec/head/{name}/b", np.zeros((1, d_out)))
            return w, b

        self.head_traj = head("trajectory", 4)
        self.head_act = head("action", 1)
        self.head_cells = head("discrete_location", n_cells)

    # -- stages ------------------------------------------------------------

    def task_inputs(self, psi):
        """Per-variant x_hat sequence fed to the task decoders (or heads)."""
        if self.cfg.variant == "task_based":
            return psi
        h_sd = self.shared.run(psi)
        if self.cfg.variant == "shared_only":
            return h_sd
        if self.cfg.variant == "hybrid":
            return ad.concat([h_sd, psi], axis=1)
        return gate_input(h_sd, psi)

    def _task_hidden(self, task, x_hat):
        outputs, _ = self.tasks[task].run(x_hat)
        return ad.concat(outputs, axis=0)

    def predict_trajectory(self, hidden):
        w, b = self.head_traj
        return ad.linear(hidden, w.tensor, b.tensor)

    def predict_action(self, hidden):
        w, b = self.head_act
        per_step = ad.sigmoid(ad.linear(hidden, w.tensor, b.tensor))
        return ad.tmean(per_step, axis=0, keepdims=True)

    def predict_discrete_location(self, hidden):
        w, b = self.head_cells
        per_step = ad.softmax(ad.linear(hidden, w.tensor, b.tensor), axis=-1)
        self.last_cell_softmax = per_step.data
        return ad.tmean(per_step, axis=0, keepdims=True)

    # -- full pass ---------------------------------------------------------

    def decode(self, psi):
        x_hat = self.task_inputs(psi)
        if self.tasks:
            h_traj = self._task_hidden("trajectory", x_hat)
            h_act = self._task_hidden("action", x_hat)
            h_cells = self._task_hidden("discrete_location", x_hat)
        else:  # shared_only: heads read the shared decoder directly
            h_traj = h_act = h_cells = x_hat
        return PredictionBundle(
            future_boxes=self.predict_trajectory(h_traj),
            crossing_prob=self.predict_action(h_act),
            cell_distribution=self.predict_discrete_location(h_cells),
        )
