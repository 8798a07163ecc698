"""Positional encoding, multi-head attention, and transformer layer tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pedformer import autodiff as ad
from pedformer.attention import MultiHeadAttention, TransformerLayer, positional_encoding
from pedformer.configs import ConfigError


def dense_attention_oracle(Q, K, V):
    """Direct softmax(QK^T)V with a naive per-row softmax loop."""
    logits = Q @ K.T
    out = np.zeros((Q.shape[0], V.shape[1]))
    for r in range(logits.shape[0]):
        e = np.exp(logits[r] - logits[r].max())
        out[r] = (e / e.sum()) @ V
    return out


class TestPositionalEncoding:
    def test_position_zero_alternates(self):
        pe = positional_encoding(5, 8)
        assert np.allclose(pe[0], [0, 1, 0, 1, 0, 1, 0, 1])

    def test_rows_distinct(self):
        pe = positional_encoding(30, 16)
        for a in range(30):
            for b in range(a + 1, 30):
                assert np.linalg.norm(pe[a] - pe[b]) > 0

    def test_trig_oracle(self):
        length, dim = 11, 10
        pe = positional_encoding(length, dim)
        for p in range(length):
            for i in range(dim // 2):
                freq = p / 10000 ** (2 * i / dim)
                assert abs(pe[p, 2 * i] - np.sin(freq)) < 1e-12
                assert abs(pe[p, 2 * i + 1] - np.cos(freq)) < 1e-12

    def test_rejects_empty(self):
        with pytest.raises(ConfigError):
            positional_encoding(0, 8)


def make_mha(d_q=6, d_kv=6, d_model=6, heads=2, seed=0, scaled=False):
    store = ad.ParamStore()
    rng = np.random.default_rng(seed)
    return store, MultiHeadAttention(store, rng, "attn", d_q, d_kv, d_model,
                                     heads, scaled=scaled)


class TestMultiHeadAttention:
    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            make_mha(d_model=6, heads=4)

    def test_output_shape(self):
        _, attn = make_mha(d_q=64, d_kv=64, d_model=64, heads=4)
        rng = np.random.default_rng(1)
        x = ad.Tensor(rng.normal(size=(15, 64)))
        assert attn(x, x, x).data.shape == (15, 64)

    def test_single_key_ignores_query(self):
        _, attn = make_mha()
        rng = np.random.default_rng(2)
        kv = ad.Tensor(rng.normal(size=(1, 6)))
        out1 = attn(ad.Tensor(rng.normal(size=(4, 6))), kv, kv)
        out2 = attn(ad.Tensor(100 * rng.normal(size=(4, 6))), kv, kv)
        # softmax over one logit is 1 for every query row
        assert np.allclose(out1.data, out2.data, atol=1e-12)
        assert np.allclose(out1.data[0], out1.data[3], atol=1e-12)

    def test_identity_projection_permutes_values(self):
        d = 4
        store, attn = make_mha(d_q=d, d_kv=d, d_model=d, heads=1)
        for name in store.names():
            p = store[name]
            if name.endswith("wo") or name.endswith(("wq", "wk", "wv")):
                p.tensor.data = np.eye(d)
        sharp = 50.0
        perm = [2, 0, 3, 1]
        K = np.eye(d) * sharp
        Q = np.eye(d)[perm] * sharp
        V = np.random.default_rng(3).normal(size=(d, d))
        out = attn(ad.Tensor(Q), ad.Tensor(K), ad.Tensor(V))
        assert np.allclose(out.data, V[perm], atol=1e-6)
        assert np.allclose(out.data, dense_attention_oracle(Q, K, V), atol=1e-12)

    def test_rows_sum_to_one(self):
        _, attn = make_mha(heads=3, d_model=6)
        rng = np.random.default_rng(4)
        x = ad.Tensor(rng.normal(size=(7, 6)))
        attn(x, x, x)
        sums = attn.last_weights.sum(axis=-1)
        assert np.allclose(sums, 1.0, atol=1e-10)

    @given(seed=st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_kv_permutation_leaves_output_unchanged(self, seed):
        rng = np.random.default_rng(seed)
        _, attn = make_mha(seed=seed % 1000)
        q = ad.Tensor(rng.normal(size=(3, 6)))
        kv = rng.normal(size=(5, 6))
        perm = rng.permutation(5)
        out = attn(q, ad.Tensor(kv), ad.Tensor(kv))
        out_p = attn(q, ad.Tensor(kv[perm]), ad.Tensor(kv[perm]))
        assert np.allclose(out.data, out_p.data, atol=1e-10)

    def test_matches_dense_oracle_identity_heads(self):
        # one head with identity projections is exactly softmax(QK^T)V
        d = 5
        store, attn = make_mha(d_q=d, d_kv=d, d_model=d, heads=1)
        for name in store.names():
            store[name].tensor.data = np.eye(d)
        rng = np.random.default_rng(5)
        Q, K, V = (rng.normal(size=(4, d)) for _ in range(3))
        out = attn(ad.Tensor(Q), ad.Tensor(K), ad.Tensor(V))
        assert np.allclose(out.data, dense_attention_oracle(Q, K, V), atol=1e-12)

    def test_scaled_flag_divides_logits(self):
        d = 4
        store_u, unscaled = make_mha(d_q=d, d_kv=d, d_model=d, heads=1, seed=9)
        store_s, scaled = make_mha(d_q=d, d_kv=d, d_model=d, heads=1, seed=9,
                                   scaled=True)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(3, d))
        unscaled(ad.Tensor(x), ad.Tensor(x), ad.Tensor(x))
        scaled(ad.Tensor(x), ad.Tensor(x), ad.Tensor(x))
        assert not np.allclose(unscaled.last_weights, scaled.last_weights)

    def test_gradients_match_finite_differences(self):
        store, attn = make_mha(d_q=4, d_kv=4, d_model=4, heads=2, seed=11)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))  # mixing weights make the loss non-uniform

        def f():
            t = ad.Tensor(x)
            return ad.tsum(ad.mul(attn(t, t, t), ad.Tensor(w)))

        report = ad.grad_check(f, list(store), h=1e-6, tol=1e-5)
        assert report.ok, report.summary()


class TestTransformerLayer:
    def make(self, d=4, heads=2, ffn=8, seed=0):
        store = ad.ParamStore()
        rng = np.random.default_rng(seed)
        return store, TransformerLayer(store, rng, "layer", d, heads, ffn)

    def test_shape_preserved(self):
        _, layer = self.make()
        x = ad.Tensor(np.random.default_rng(0).normal(size=(15, 4)))
        assert layer(x).data.shape == (15, 4)

    def test_zero_ffn_reduces_to_double_norm(self):
        store, layer = self.make()
        store["layer/ffn/w1"].tensor.data[:] = 0.0
        store["layer/ffn/w2"].tensor.data[:] = 0.0
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 4))  # single key: attention output fixed
        out = layer(ad.Tensor(x))

        def norm(v):
            mu, var = v.mean(), v.var()
            return (v - mu) / np.sqrt(var + 1e-5)

        # single row -> each head's softmax weight is exactly [1]
        heads = [x @ wv.data for _, _, wv in layer.attn.heads]
        attended = np.concatenate(heads, axis=1) @ layer.attn.wo.data
        expected = norm(norm(x + attended))
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_two_layer_gradient_vs_fd(self):
        store = ad.ParamStore()
        rng = np.random.default_rng(3)
        layers = [TransformerLayer(store, rng, f"l{i}", 4, 2, 4) for i in range(2)]
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))

        def f():
            out = ad.Tensor(x)
            for layer in layers:
                out = layer(out)
            return ad.tsum(ad.mul(out, ad.Tensor(w)))

        report = ad.grad_check(f, list(store), h=1e-5, tol=1e-4)
        assert report.ok, report.summary()
