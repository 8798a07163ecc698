"""Full multi-task predictor: encoder + interaction module + decoder.

Given one window sample — observed boxes/velocities/cells/ego, the anchor
frame's semantic map, and the future ego-motion — the model produces a
PredictionBundle (future boxes, crossing probability, cell distribution).
Checkpoints embed the model config; loading performs a dimension handshake
and fails with the offending parameter shapes.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .configs import ConfigError, ModelConfig, dataclass_from_dict, dataclass_to_dict
from .data import Sample
from .decoder import Decoder, PredictionBundle
from .encoder import build_encoder
from .interaction import SAIM


class Model:
    def __init__(self, cfg: ModelConfig, seed=0):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.store = ParamStore()
        rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        self.encoder = build_encoder(self.store, rng, cfg.encoder,
                                     cfg.obs_len, cfg.n_cells)
        if cfg.saim.variant == "off":
            self.saim = None
            saim_width = 0
        else:
            self.saim = SAIM(self.store, rng, cfg.saim,
                             weight_decay=cfg.l2_recurrent)
            saim_width = cfg.saim.d_out
        self.d_ctx = self.encoder.d_out + saim_width + 3
        self.decoder = Decoder(self.store, rng, cfg.decoder, self.d_ctx,
                               cfg.n_cells, weight_decay=cfg.l2_recurrent)

    # -- forward -----------------------------------------------------------

    def context(self, psi_cm, psi_int, ego_future):
        """Stack Psi_t = psi_cm ⊕ psi_int ⊕ em_t over the future steps."""
        rows = []
        for t in range(len(ego_future)):
            em = ad.Tensor(np.asarray(ego_future[t], dtype=np.float64).reshape(1, 3))
            parts = [psi_cm] + ([psi_int] if psi_int is not None else []) + [em]
            rows.append(ad.concat(parts, axis=1))
        return ad.concat(rows, axis=0)

    def forward(self, obs_boxes, obs_velocities, obs_cells, ego_obs,
                ego_future, map_channels):
        psi_cm = self.encoder.encode(obs_boxes, obs_velocities, obs_cells, ego_obs)
        psi_int = None
        if self.saim is not None:
            psi_int = self.saim.encode(map_channels, obs_boxes, ego_obs)
        psi = self.context(psi_cm, psi_int, ego_future)
        bundle = self.decoder.decode(psi)
        if self.cfg.decoder.delta_boxes:
            last = np.asarray(obs_boxes[-1], dtype=np.float64).reshape(1, 4)
            bundle = PredictionBundle(
                future_boxes=ad.add(bundle.future_boxes, ad.Tensor(last)),
                crossing_prob=bundle.crossing_prob,
                cell_distribution=bundle.cell_distribution,
            )
        return bundle

    def forward_sample(self, sample: Sample, map_channels):
        o = sample.o
        return self.forward(
            sample.obs_boxes, sample.obs_velocities, sample.obs_cells,
            sample.ego[:o], sample.ego[o:], map_channels,
        )

    def attention_rows(self):
        """Most recent attention weight matrices from every unit (for checks)."""
        rows = list(self.encoder.attention_rows())
        if self.saim is not None:
            rows += self.saim.attention_rows()
        return rows

    # -- persistence -------------------------------------------------------

    def config_dict(self):
        return {"model": dataclass_to_dict(self.cfg), "seed": self.seed}

    def save(self, path):
        save_checkpoint(path, self.store.state(), self.config_dict())

    @classmethod
    def load(cls, path):
        tensors, config = load_checkpoint(path)
        if "model" not in config:
            raise CheckpointError(f"{path}: checkpoint has no model config")
        cfg = dataclass_from_dict(ModelConfig, config["model"])
        model = cls(cfg, seed=config.get("seed", 0))
        stored = set(tensors)
        expected = set(model.store.names())
        if stored != expected:
            missing = sorted(expected - stored)[:4]
            extra = sorted(stored - expected)[:4]
            raise CheckpointError(
                f"{path}: parameter set mismatch (missing {missing}, unexpected {extra})"
            )
        model.store.load_state(tensors)
        return model


def build_model(cfg: ModelConfig, seed=0):
    return Model(cfg, seed=seed)


def tiny_config(**overrides):
    """A fast desk-scale config used by gradient checks and smoke tests."""
    from .configs import DecoderConfig, EncoderConfig, SAIMConfig

    base = dict(
        obs_len=4,
        pred_len=3,
        grid_rows=2,
        grid_cols=3,
        cell_px=12,
        image_size=(36, 24),
        encoder=EncoderConfig(d_embed=4, num_heads=2, num_layers=1,
                              ffn_hidden=8, d_model=8),
        saim=SAIMConfig(patch_size=6, map_size=(12, 24), lambda_p=4,
                        num_heads=2, d_dynamics=4, d_query=4, d_out=8),
        decoder=DecoderConfig(d_hidden=4),
    )
    base.update(overrides)
    return ModelConfig(**base)
