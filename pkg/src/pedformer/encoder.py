"""Cross-modal sequence encoder producing the summary vector psi_cm.

Four modality streams — location (4), velocity (4), discrete grid cell
(embedded id) and ego-motion (3) — are each embedded to d_embed and
concatenated with a sinusoidal positional encoding. The main variant runs one
attention unit per *ordered* modality pair (m(m-1) = 12 units), concatenates
the unit outputs with another positional encoding, optionally projects to the
transformer width, runs the transformer stack, and pools a single row.

Ablation variants: ``modality_transformers`` runs an independent transformer
per modality and concatenates the pooled outputs (no cross-attention);
``shared_transformer`` concatenates the raw streams and runs one transformer.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import autodiff as ad
from .attention import MultiHeadAttention, TransformerStack, positional_encoding
from .configs import ConfigError, EncoderConfig

_FEATURE_DIMS = {"location": 4, "velocity": 4, "ego_motion": 3}


class _ModalityEmbeddings:
    """Shared front end: raw per-step features -> per-modality streams.

    Stream width is 2 * d_embed (embedding ⊕ positional encoding) or d_embed
    when the positional concat is disabled.
    """

    def __init__(self, store, rng, name, cfg: EncoderConfig, n_cells):
        d = cfg.d_embed
        self.cfg = cfg
        self.linears = {}
        self.cell_table = None
        for mod in cfg.modalities:
            if mod == "discrete_location":
                self.cell_table = store.add(
                    f"{name}/discrete_location/table",
                    ad.glorot_uniform(rng, (n_cells, d), d, d),
                )
            else:
                d_in = _FEATURE_DIMS[mod]
                w = store.add(f"{name}/{mod}/w", ad.glorot_uniform(rng, (d_in, d), d_in, d))
                b = store.add(f"{name}/{mod}/b", np.zeros((1, d)))
                self.linears[mod] = (w, b)

    @property
    def stream_width(self):
        return 2 * self.cfg.d_embed if self.cfg.use_positional else self.cfg.d_embed

    def streams(self, loc, vel, cells, ego):
        o = len(loc)
        if not (len(vel) == len(cells) == len(ego) == o):
            raise ConfigError(
                f"modality lengths disagree: {len(loc)}/{len(vel)}/{len(cells)}/{len(ego)}"
            )
        raw = {"location": loc, "velocity": vel, "ego_motion": ego}
        out = {}
        for mod in self.cfg.modalities:
            if mod == "discrete_location":
                emb = ad.embedding(self.cell_table.tensor, cells)
            else:
                w, b = self.linears[mod]
                emb = ad.linear(ad.Tensor(np.asarray(raw[mod], dtype=np.float64)),
                                w.tensor, b.tensor)
            if self.cfg.use_positional:
                pe = ad.Tensor(positional_encoding(o, self.cfg.d_embed))
                emb = ad.concat([emb, pe], axis=1)
            out[mod] = emb
        return out


class CrossModalEncoder:
    """Pair-wise cross-attention fusion (the main configuration)."""

    def __init__(self, store, rng, cfg: EncoderConfig, obs_len, n_cells):
        d = cfg.d_embed
        self.cfg = cfg
        self.embeds = _ModalityEmbeddings(store, rng, "enc/embed", cfg, n_cells)
        self.pairs = list(itertools.permutations(cfg.modalities, 2))
        width_in = self.embeds.stream_width
        self.units = {
            pair: MultiHeadAttention(
                store, rng, f"enc/unit/{pair[0]}__{pair[1]}",
                d_q_in=width_in, d_kv_in=width_in, d_model=d,
                num_heads=cfg.num_heads, scaled=cfg.scaled_attention,
            )
            for pair in self.pairs
        }
        fused_width = len(self.pairs) * d + (d if cfg.use_positional else 0)
        if cfg.d_model:
            self.proj_w = store.add(
                "enc/proj/w",
                ad.glorot_uniform(rng, (fused_width, cfg.d_model), fused_width, cfg.d_model),
            )
            self.proj_b = store.add("enc/proj/b", np.zeros((1, cfg.d_model)))
            width = cfg.d_model
        else:
            self.proj_w = None
            width = fused_width
        self.fused_width = fused_width
        self.transformer = TransformerStack(
            store, rng, "enc/transformer", width, cfg.num_heads,
            cfg.num_layers, cfg.ffn_hidden, scaled=cfg.scaled_attention,
        )
        self.d_out = width

    def fuse(self, streams):
        """Concatenated cross-attention unit outputs (+ positional encoding)."""
        outs = [
            self.units[pair](streams[pair[0]], streams[pair[1]], streams[pair[1]])
            for pair in self.pairs
        ]
        if self.cfg.use_positional:
            o = outs[0].data.shape[0]
            outs.append(ad.Tensor(positional_encoding(o, self.cfg.d_embed)))
        return ad.concat(outs, axis=1)

    def encode(self, loc, vel, cells, ego):
        streams = self.embeds.streams(loc, vel, cells, ego)
        fused = self.fuse(streams)
        if self.proj_w is not None:
            fused = ad.linear(fused, self.proj_w.tensor, self.proj_b.tensor)
        encoded = self.transformer(fused)
        return _pool(encoded, self.cfg.pool)

    def attention_rows(self):
        rows = [u.last_weights for u in self.units.values()]
        rows += self.transformer.attention_weights()
        return [w for w in rows if w is not None]


class ModalityTransformersEncoder:
    """One independent transformer per modality; pooled outputs concatenated."""

    def __init__(self, store, rng, cfg: EncoderConfig, obs_len, n_cells):
        self.cfg = cfg
        self.embeds = _ModalityEmbeddings(store, rng, "enc/embed", cfg, n_cells)
        width_in = self.embeds.stream_width
        self.towers = {
            m: TransformerStack(
                store, rng, f"enc/tower/{m}", width_in, cfg.num_heads,
                cfg.num_layers, cfg.ffn_hidden, scaled=cfg.scaled_attention,
            )
            for m in cfg.modalities
        }
        concat_width = len(cfg.modalities) * width_in
        if cfg.d_model:
            self.proj_w = store.add(
                "enc/proj/w",
                ad.glorot_uniform(rng, (concat_width, cfg.d_model), concat_width, cfg.d_model),
            )
            self.proj_b = store.add("enc/proj/b", np.zeros((1, cfg.d_model)))
            self.d_out = cfg.d_model
        else:
            self.proj_w = None
            self.d_out = concat_width

    def encode(self, loc, vel, cells, ego):
        streams = self.embeds.streams(loc, vel, cells, ego)
        pooled = [
            _pool(self.towers[m](streams[m]), self.cfg.pool)
            for m in self.cfg.modalities
        ]
        out = ad.concat(pooled, axis=1)
        if self.proj_w is not None:
            out = ad.linear(out, self.proj_w.tensor, self.proj_b.tensor)
        return out

    def attention_rows(self):
        out = []
        for tower in self.towers.values():
            out += [w for w in tower.attention_weights() if w is not None]
        return out


class SharedTransformerEncoder:
    """All streams concatenated per step, then a single transformer."""

    def __init__(self, store, rng, cfg: EncoderConfig, obs_len, n_cells):
        self.cfg = cfg
        self.embeds = _ModalityEmbeddings(store, rng, "enc/embed", cfg, n_cells)
        concat_width = len(cfg.modalities) * self.embeds.stream_width
        if cfg.d_model:
            self.proj_w = store.add(
                "enc/proj/w",
                ad.glorot_uniform(rng, (concat_width, cfg.d_model), concat_width, cfg.d_model),
            )
            self.proj_b = store.add("enc/proj/b", np.zeros((1, cfg.d_model)))
            width = cfg.d_model
        else:
            self.proj_w = None
            width = concat_width
        self.transformer = TransformerStack(
            store, rng, "enc/transformer", width, cfg.num_heads,
            cfg.num_layers, cfg.ffn_hidden, scaled=cfg.scaled_attention,
        )
        self.d_out = width

    def encode(self, loc, vel, cells, ego):
        streams = self.embeds.streams(loc, vel, cells, ego)
        fused = ad.concat([streams[m] for m in self.cfg.modalities], axis=1)
        if self.proj_w is not None:
            fused = ad.linear(fused, self.proj_w.tensor, self.proj_b.tensor)
        return _pool(self.transformer(fused), self.cfg.pool)

    def attention_rows(self):
        return [w for w in self.transformer.attention_weights() if w is not None]


def _pool(seq, mode):
    if mode == "last":
        return ad.narrow(seq, 0, seq.data.shape[0] - 1, 1)
    return ad.tmean(seq, axis=0, keepdims=True)


_ENCODERS = {
    "cross_modal": CrossModalEncoder,
    "modality_transformers": ModalityTransformersEncoder,
    "shared_transformer": SharedTransformerEncoder,
}


def build_encoder(store, rng, cfg: EncoderConfig, obs_len, n_cells):
    if cfg.variant not in _ENCODERS:
        raise ConfigError(f"unknown encoder variant '{cfg.variant}'")
    return _ENCODERS[cfg.variant](store, rng, cfg, obs_len, n_cells)
