"""Cross-modal encoder: unit wiring, sensitivity, census, gradients."""

import itertools

import numpy as np
import pytest

from pedformer import autodiff as ad
from pedformer.configs import ConfigError, EncoderConfig, MODALITIES
from pedformer.encoder import CrossModalEncoder, build_encoder

O = 4
N_CELLS = 6


def tiny_cfg(**kw):
    base = dict(d_embed=4, num_heads=2, num_layers=1, ffn_hidden=8, d_model=8)
    base.update(kw)
    return EncoderConfig(**base)


def build(cfg=None, seed=0):
    cfg = cfg or tiny_cfg()
    store = ad.ParamStore()
    rng = np.random.default_rng(seed)
    return store, build_encoder(store, rng, cfg, O, N_CELLS)


def inputs(seed=0, o=O):
    rng = np.random.default_rng(seed)
    loc = rng.uniform(0, 1, (o, 4))
    vel = rng.normal(0, 0.05, (o, 4))
    cells = rng.integers(0, N_CELLS, o)
    ego = rng.uniform(0, 3, (o, 3))
    return loc, vel, cells, ego


class TestUnitWiring:
    def test_twelve_units_for_four_modalities(self):
        _, enc = build()
        assert len(enc.units) == 12
        assert len(set(enc.pairs)) == 12

    def test_two_modalities_two_units(self):
        cfg = tiny_cfg(modalities=("location", "ego_motion"))
        _, enc = build(cfg)
        assert len(enc.units) == 2

    def test_zeroed_modality_zeroes_its_keyed_units(self):
        # positional concat off and zero raw velocity -> V_velocity = 0
        cfg = tiny_cfg(use_positional=False, d_model=0)
        _, enc = build(cfg)
        loc, vel, cells, ego = inputs()
        streams = enc.embeds.streams(loc, np.zeros_like(vel), cells, ego)
        fused = enc.fuse(streams).data
        d = cfg.d_embed
        for i, (q_mod, kv_mod) in enumerate(enc.pairs):
            block = fused[:, i * d:(i + 1) * d]
            if kv_mod == "velocity":
                assert np.allclose(block, 0.0, atol=1e-12), (q_mod, kv_mod)
            else:
                assert np.abs(block).max() > 1e-6, (q_mod, kv_mod)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            build(tiny_cfg(variant="bogus"))

    def test_modalities_validated(self):
        assert tiny_cfg(modalities=("location", "sound")).problems()
        assert tiny_cfg(modalities=("location",)).problems()


class TestEncode:
    def test_deterministic(self):
        _, enc = build()
        out1 = enc.encode(*inputs())
        out2 = enc.encode(*inputs())
        assert np.array_equal(out1.data, out2.data)

    def test_finite_on_random_inputs(self):
        _, enc = build()
        for seed in range(5):
            rng = np.random.default_rng(seed)
            out = enc.encode(
                rng.uniform(-1, 1, (O, 4)), rng.uniform(-1, 1, (O, 4)),
                rng.integers(0, N_CELLS, O), rng.uniform(-1, 1, (O, 3)),
            )
            assert np.all(np.isfinite(out.data))
            assert out.data.shape == (1, 8)

    def test_final_step_sensitivity(self):
        _, enc = build()
        loc, vel, cells, ego = inputs()
        base = enc.encode(loc, vel, cells, ego).data.copy()
        loc2 = loc.copy()
        loc2[-1] += 0.25
        moved = enc.encode(loc2, vel, cells, ego).data
        assert np.linalg.norm(moved - base) > 0

    def test_mismatched_lengths_rejected(self):
        _, enc = build()
        loc, vel, cells, ego = inputs()
        with pytest.raises(ConfigError):
            enc.encode(loc, vel[:-1], cells, ego)

    def test_attention_rows_sum_to_one(self):
        _, enc = build()
        enc.encode(*inputs())
        rows = enc.attention_rows()
        assert len(rows) == 12 + 1  # units + one transformer layer
        for w in rows:
            assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-10)

    def test_mean_pool_alternative(self):
        _, enc = build(tiny_cfg(pool="mean"))
        out = enc.encode(*inputs())
        assert out.data.shape == (1, 8)


class TestVariants:
    @pytest.mark.parametrize("variant", ["cross_modal", "modality_transformers",
                                         "shared_transformer"])
    def test_all_variants_encode(self, variant):
        _, enc = build(tiny_cfg(variant=variant))
        out = enc.encode(*inputs())
        assert out.data.shape == (1, 8)
        assert np.all(np.isfinite(out.data))

    def test_modality_towers_have_no_cross_units(self):
        store, _ = build(tiny_cfg(variant="modality_transformers"))
        assert not any("enc/unit/" in n for n in store.names())
        assert any("enc/tower/" in n for n in store.names())


class TestParameterCensus:
    def test_closed_form_count(self):
        cfg = tiny_cfg()
        store, enc = build(cfg)
        d, k, l, D, ffn = cfg.d_embed, cfg.num_heads, cfg.num_layers, cfg.d_model, cfg.ffn_hidden
        m = len(MODALITIES)
        embed = 2 * (4 * d + d) + (3 * d + d) + N_CELLS * d  # loc, vel, ego, table
        units = m * (m - 1) * (3 * (2 * d) * d + d * d)       # per head triples + W^O
        fused = m * (m - 1) * d + d
        proj = fused * D + D
        per_layer = 4 * D * D + (D * ffn + ffn + ffn * D + D) + 4 * D
        expected = embed + units + proj + l * per_layer
        assert store.count() == expected

    def test_full_scale_count_formula(self):
        cfg = EncoderConfig()  # d=64, heads=4, layers=2, D=128, ffn=128
        store = ad.ParamStore()
        enc = build_encoder(store, np.random.default_rng(0), cfg, 15, 576)
        d, D, ffn, l, m = 64, 128, 128, 2, 4
        embed = 2 * (4 * d + d) + (3 * d + d) + 576 * d
        units = 12 * (3 * (2 * d) * d + d * d)
        proj = (12 * d + d) * D + D
        per_layer = 4 * D * D + (D * ffn + ffn + ffn * D + D) + 4 * D
        assert store.count() == embed + units + proj + l * per_layer
        assert enc.fused_width == 832


class TestGradients:
    def test_full_encoder_gradcheck(self):
        cfg = tiny_cfg(d_embed=8, num_heads=2, d_model=8, ffn_hidden=8)
        store, enc = build(cfg, seed=3)
        rng = np.random.default_rng(4)
        loc = rng.uniform(0, 1, (O, 4))
        vel = rng.normal(0, 0.5, (O, 4))
        cells = rng.integers(0, N_CELLS, O)
        ego = rng.uniform(0, 3, (O, 3))
        w = np.random.default_rng(5).normal(size=(1, 8))

        def f():
            return ad.tsum(ad.mul(enc.encode(loc, vel, cells, ego), ad.Tensor(w)))

        # spot-check a slice of parameters from each block to keep this fast
        names = store.names()
        picked = [n for n in names if "unit/location__velocity" in n]
        picked += [n for n in names if n.startswith("enc/embed/velocity")]
        picked += ["enc/proj/w", "enc/transformer/layer0/attn/h0/wq",
                   "enc/transformer/layer0/ffn/w1", "enc/transformer/layer0/ln1/gain",
                   "enc/embed/discrete_location/table"]
        params = [store[n] for n in picked]
        report = ad.grad_check(f, params, h=1e-4, tol=1e-3)
        assert report.ok, report.summary()
