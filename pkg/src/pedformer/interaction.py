"""Semantic attention interaction module (SAIM) producing psi_int.

The 4-channel occupancy map is cut into ps x ps patches (row-major), each
flattened patch linearly embedded to lambda_p and concatenated with a patch
positional encoding. Self-attention over patches yields the scene encoding
Gamma_sc. A dynamics query phi_q — embedded observed boxes and ego-motion run
through an LSTM, final hidden state projected to d_query — scores the patches
through W_Gamma; the softmax-weighted patch context c is fused as
psi_int = tanh(W_c [c concat phi_q]).

Variants: ``no_global_attention`` replaces the query/score/fuse step with a
per-patch 1x1 linear summary (mean-pooled, tanh); ``no_motion`` keeps global
attention but uses the last patch row of Gamma_sc as the query instead of the
dynamics encoding. The ``off`` variant is handled by the model (no module).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .attention import MultiHeadAttention, positional_encoding
from .configs import ConfigError, SAIMConfig


def patch_rows(channels, patch_size):
    """(4, H, W) map -> (n_patches, ps * ps * 4) rows in row-major patch order.

    Each row is the flattened (ps, ps, 4) patch with the channel axis last.
    """
    c, h, w = channels.shape
    ps = patch_size
    if h % ps or w % ps:
        raise ConfigError(f"map {h}x{w} not divisible by patch size {ps}")
    hwc = np.transpose(np.asarray(channels, dtype=np.float64), (1, 2, 0))
    tiles = hwc.reshape(h // ps, ps, w // ps, ps, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape((h // ps) * (w // ps), ps * ps * c))


class SAIM:
    def __init__(self, store, rng, cfg: SAIMConfig, weight_decay=0.0):
        problems = cfg.problems()
        if problems:
            raise ConfigError(problems)
        if cfg.variant == "off":
            raise ConfigError("saim variant 'off' has no module; wire it at the model level")
        self.cfg = cfg
        lam = cfg.lambda_p
        ps = cfg.patch_size

        self.patch_w = store.add(
            "saim/patch/w",
            ad.glorot_uniform(rng, (ps * ps * 4, lam), ps * ps * 4, lam),
        )
        self.patch_b = store.add("saim/patch/b", np.zeros((1, lam)))
        xi_dim = 2 * lam if cfg.use_positional else lam
        self.scene_attn = []
        for depth in range(cfg.attn_depth):
            d_in = xi_dim if depth == 0 else lam
            self.scene_attn.append(
                MultiHeadAttention(
                    store, rng, f"saim/attn{depth}", d_in, d_in, lam,
                    cfg.num_heads, scaled=cfg.scaled_attention,
                )
            )

        if cfg.variant == "no_global_attention":
            # 1x1 summary over the patch attention output, pooled over patches
            self.conv_w = store.add(
                "saim/conv1x1/w", ad.glorot_uniform(rng, (lam, cfg.d_out), lam, cfg.d_out)
            )
            self.conv_b = store.add("saim/conv1x1/b", np.zeros((1, cfg.d_out)))
            return

        if cfg.variant == "full":
            from .recurrent import LSTMCell  # local import avoids cycle at module load

            self.coord_w = store.add(
                "saim/dyn/coord/w", ad.glorot_uniform(rng, (4, lam), 4, lam))
            self.coord_b = store.add("saim/dyn/coord/b", np.zeros((1, lam)))
            self.ego_w = store.add(
                "saim/dyn/ego/w", ad.glorot_uniform(rng, (3, lam), 3, lam))
            self.ego_b = store.add("saim/dyn/ego/b", np.zeros((1, lam)))
            self.dyn_lstm = LSTMCell(store, rng, "saim/dyn/lstm", 2 * lam,
                                     cfg.d_dynamics, weight_decay=weight_decay)
            self.query_w = store.add(
                "saim/dyn/query/w",
                ad.glorot_uniform(rng, (cfg.d_dynamics, cfg.d_query),
                                  cfg.d_dynamics, cfg.d_query),
            )
            self.query_b = store.add("saim/dyn/query/b", np.zeros((1, cfg.d_query)))
            d_query = cfg.d_query
        else:  # no_motion: query is the last Gamma_sc row, width lambda_p
            d_query = lam

        self.w_gamma = store.add(
            "saim/gatt/w_gamma", ad.glorot_uniform(rng, (d_query, lam), d_query, lam)
        )
        self.w_c = store.add(
            "saim/gatt/w_c",
            ad.glorot_uniform(rng, (lam + d_query, cfg.d_out), lam + d_query, cfg.d_out),
        )

    # -- stages ------------------------------------------------------------

    def patchify_embed(self, channels):
        """Map channels -> xi_sc: embedded patches (+ positional encoding)."""
        rows = patch_rows(channels, self.cfg.patch_size)
        embedded = ad.linear(ad.Tensor(rows), self.patch_w.tensor, self.patch_b.tensor)
        if not self.cfg.use_positional:
            return embedded
        pe = ad.Tensor(positional_encoding(rows.shape[0], self.cfg.lambda_p))
        return ad.concat([embedded, pe], axis=1)

    def scene_encode(self, xi_sc):
        """Self-attention over patches -> Gamma_sc (n_patches, lambda_p)."""
        out = xi_sc
        for attn in self.scene_attn:
            out = attn(out, out, out)
        return out

    def encode_dynamics(self, obs_boxes, ego_obs):
        """Observed boxes + ego-motion -> phi_q (1, d_query)."""
        coords = ad.linear(ad.Tensor(obs_boxes), self.coord_w.tensor, self.coord_b.tensor)
        ego = ad.linear(ad.Tensor(ego_obs), self.ego_w.tensor, self.ego_b.tensor)
        joint = ad.concat([coords, ego], axis=1)
        _, (h, _) = self.dyn_lstm.run(joint)
        return ad.linear(h, self.query_w.tensor, self.query_b.tensor)

    def global_attention(self, gamma_sc, phi_q):
        """Score patches with phi_q W_Gamma, pool, fuse: tanh(W_c [c ⊕ phi_q])."""
        scores = ad.matmul(ad.matmul(phi_q, self.w_gamma.tensor),
                           ad.transpose(gamma_sc))
        weights = ad.softmax(scores, axis=-1)
        self.last_global_weights = weights.data
        c = ad.matmul(weights, gamma_sc)
        return ad.tanh(ad.matmul(ad.concat([c, phi_q], axis=1), self.w_c.tensor))

    # -- full passes -------------------------------------------------------

    def encode(self, channels, obs_boxes, ego_obs):
        xi = self.patchify_embed(channels)
        gamma = self.scene_encode(xi)
        if self.cfg.variant == "no_global_attention":
            summary = ad.linear(gamma, self.conv_w.tensor, self.conv_b.tensor)
            return ad.tanh(ad.tmean(summary, axis=0, keepdims=True))
        if self.cfg.variant == "no_motion":
            phi_q = ad.narrow(gamma, 0, gamma.data.shape[0] - 1, 1)
        else:
            phi_q = self.encode_dynamics(obs_boxes, ego_obs)
        return self.global_attention(gamma, phi_q)

    def attention_rows(self):
        rows = [a.last_weights for a in self.scene_attn if a.last_weights is not None]
        w = getattr(self, "last_global_weights", None)
        if w is not None:
            rows.append(w)
        return rows
