"""Multi-head attention and transformer encoder layers.

Attention follows S-Attn(Q, K, V) = Softmax(QKᵀ)V — logits are *unscaled* by
default; 1/sqrt(d_head) scaling is available behind a flag. Projections are
bias-free: per head, W^Q/W^K/W^V map the input widths to d_model/num_heads,
and the concatenated heads go through W^O (d_model × d_model).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .configs import ConfigError


def positional_encoding(length, dim):
    """Sinusoidal table: PE[p, 2i] = sin(p / 10000^(2i/dim)), odd cols cos."""
    if length <= 0 or dim <= 0:
        raise ConfigError(f"positional encoding needs positive dims, got {length}x{dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    out = np.empty((length, dim))
    out[:, 0::2] = np.sin(angle[:, 0::2])
    out[:, 1::2] = np.cos(angle[:, 1::2])
    return out


class MultiHeadAttention:
    """k-head attention with independent per-head projections.

    General widths: queries enter at ``d_q_in``, keys/values at ``d_kv_in``,
    and the unit's output width is ``d_model``. The square d -> d case used
    inside transformer layers is just d_q_in = d_kv_in = d_model.
    """

    def __init__(self, store, rng, name, d_q_in, d_kv_in, d_model,
                 num_heads, scaled=False):
        if d_model % num_heads:
            raise ConfigError(
                f"{name}: width {d_model} not divisible by {num_heads} heads"
            )
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.scaled = scaled
        self.heads = []
        for h in range(num_heads):
            wq = store.add(f"{name}/h{h}/wq",
                           ad.glorot_uniform(rng, (d_q_in, self.d_head), d_q_in, self.d_head))
            wk = store.add(f"{name}/h{h}/wk",
                           ad.glorot_uniform(rng, (d_kv_in, self.d_head), d_kv_in, self.d_head))
            wv = store.add(f"{name}/h{h}/wv",
                           ad.glorot_uniform(rng, (d_kv_in, self.d_head), d_kv_in, self.d_head))
            self.heads.append((wq, wk, wv))
        self.wo = store.add(f"{name}/wo",
                            ad.glorot_uniform(rng, (d_model, d_model), d_model, d_model))
        self.last_weights = None  # (num_heads, n_q, n_k) from the latest call

    def __call__(self, q_in, k_in, v_in):
        outs = []
        weights = []
        for wq, wk, wv in self.heads:
            q = ad.matmul(q_in, wq.tensor)
            k = ad.matmul(k_in, wk.tensor)
            v = ad.matmul(v_in, wv.tensor)
            logits = ad.matmul(q, ad.transpose(k))
            if self.scaled:
                logits = ad.scale(logits, 1.0 / np.sqrt(self.d_head))
            attn = ad.softmax(logits, axis=-1)
            weights.append(attn.data)
            outs.append(ad.matmul(attn, v))
        self.last_weights = np.stack(weights)
        return ad.matmul(ad.concat(outs, axis=1), self.wo.tensor)


class TransformerLayer:
    """Post-norm block: Norm(I + Attn(I)), then Norm(I' + FFN(I'))."""

    def __init__(self, store, rng, name, d_model, num_heads, ffn_hidden,
                 scaled=False):
        self.attn = MultiHeadAttention(
            store, rng, f"{name}/attn", d_model, d_model, d_model,
            num_heads, scaled=scaled,
        )
        self.w1 = store.add(f"{name}/ffn/w1",
                            ad.glorot_uniform(rng, (d_model, ffn_hidden), d_model, ffn_hidden))
        self.b1 = store.add(f"{name}/ffn/b1", np.zeros((1, ffn_hidden)))
        self.w2 = store.add(f"{name}/ffn/w2",
                            ad.glorot_uniform(rng, (ffn_hidden, d_model), ffn_hidden, d_model))
        self.b2 = store.add(f"{name}/ffn/b2", np.zeros((1, d_model)))
        self.ln1_gain = store.add(f"{name}/ln1/gain", np.ones(d_model))
        self.ln1_bias = store.add(f"{name}/ln1/bias", np.zeros(d_model))
        self.ln2_gain = store.add(f"{name}/ln2/gain", np.ones(d_model))
        self.ln2_bias = store.add(f"{name}/ln2/bias", np.zeros(d_model))

    def __call__(self, x):
        attended = self.attn(x, x, x)
        x1 = ad.layer_norm(ad.add(x, attended),
                           self.ln1_gain.tensor, self.ln1_bias.tensor)
        hidden = ad.relu(ad.linear(x1, self.w1.tensor, self.b1.tensor))
        ffn = ad.linear(hidden, self.w2.tensor, self.b2.tensor)
        return ad.layer_norm(ad.add(x1, ffn),
                             self.ln2_gain.tensor, self.ln2_bias.tensor)


class TransformerStack:
    def __init__(self, store, rng, name, d_model, num_heads, num_layers,
                 ffn_hidden, scaled=False):
        self.layers = [
            TransformerLayer(store, rng, f"{name}/layer{i}", d_model,
                             num_heads, ffn_hidden, scaled=scaled)
            for i in range(num_layers)
        ]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def attention_weights(self):
        return [layer.attn.last_weights for layer in self.layers]
