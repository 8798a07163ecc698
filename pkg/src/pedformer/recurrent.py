"""Gated recurrent cells built on the tape.

One combined-gate LSTM cell: gates are computed from a single affine map with
weights W_x (d_in, 4H), W_h (H, 4H) and bias (1, 4H), split in (i, f, g, o)
order. The forget-gate bias initializes to 1 so early training does not wipe
cell state. The candidate activation is always tanh; the *output* activation
(applied to the cell state before the output gate) is configurable because
the task decoders use tanh for trajectory and softsign elsewhere.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

_OUTPUT_ACTS = {"tanh": ad.tanh, "softsign": ad.softsign}


class LSTMCell:
    def __init__(self, store, rng, name, d_in, d_hidden, output_activation="tanh",
                 weight_decay=0.0):
        if output_activation not in _OUTPUT_ACTS:
            raise ad.AutodiffError(f"unknown output activation '{output_activation}'")
        self.d_hidden = d_hidden
        self.activation = _OUTPUT_ACTS[output_activation]
        self.wx = store.add(
            f"{name}/wx",
            ad.glorot_uniform(rng, (d_in, 4 * d_hidden), d_in, d_hidden),
            weight_decay=weight_decay,
        )
        self.wh = store.add(
            f"{name}/wh",
            ad.glorot_uniform(rng, (d_hidden, 4 * d_hidden), d_hidden, d_hidden),
            weight_decay=weight_decay,
        )
        bias = np.zeros((1, 4 * d_hidden))
        bias[0, d_hidden:2 * d_hidden] = 1.0  # forget gate
        self.b = store.add(f"{name}/b", bias, weight_decay=weight_decay)

    def initial_state(self):
        h = ad.Tensor(np.zeros((1, self.d_hidden)))
        c = ad.Tensor(np.zeros((1, self.d_hidden)))
        return h, c

    def step(self, x, h, c):
        """One update; ``x`` is a (1, d_in) row. Returns (h', c')."""
        z = ad.add(ad.add(ad.matmul(x, self.wx.tensor), ad.matmul(h, self.wh.tensor)),
                   self.b.tensor)
        H = self.d_hidden
        zi, zf, zg, zo = ad.split(z, [H, H, H, H], axis=1)
        i = ad.sigmoid(zi)
        f = ad.sigmoid(zf)
        g = ad.tanh(zg)
        o = ad.sigmoid(zo)
        c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
        h_new = ad.mul(o, self.activation(c_new))
        return h_new, c_new

    def run(self, xs):
        """Consume a (T, d_in) tensor; returns (list of h_t, final (h, c))."""
        h, c = self.initial_state()
        outputs = []
        for t in range(xs.data.shape[0]):
            x_t = ad.narrow(xs, 0, t, 1)
            h, c = self.step(x_t, h, c)
            outputs.append(h)
        return outputs, (h, c)


class BiLSTM:
    """Forward + backward cells; per-step outputs concatenated to 2H."""

    def __init__(self, store, rng, name, d_in, d_hidden, weight_decay=0.0):
        self.fwd = LSTMCell(store, rng, f"{name}/fwd", d_in, d_hidden,
                            weight_decay=weight_decay)
        self.bwd = LSTMCell(store, rng, f"{name}/bwd", d_in, d_hidden,
                            weight_decay=weight_decay)

    def run(self, xs):
        """(T, d_in) -> (T, 2 * d_hidden)."""
        T = xs.data.shape[0]
        fwd_out, _ = self.fwd.run(xs)
        h, c = self.bwd.initial_state()
        bwd_out = [None] * T
        for t in reversed(range(T)):
            x_t = ad.narrow(xs, 0, t, 1)
            h, c = self.bwd.step(x_t, h, c)
            bwd_out[t] = h
        rows = [ad.concat([fwd_out[t], bwd_out[t]], axis=1) for t in range(T)]
        return ad.concat(rows, axis=0)
