"""Full-model wiring, checkpoint handshake, and the training loop."""

import dataclasses

import numpy as np
import pytest

from pedformer.checkpoint import CheckpointError, save_checkpoint
from pedformer.configs import SAIMConfig, TrainConfig
from pedformer.data import GridSpec
from pedformer.dataset import build_dataset, load_corpus, save_corpus
from pedformer.model import Model, tiny_config
from pedformer.synthetic import ScenarioConfig, generate_synthetic, manifest_for
from pedformer.training import (EPOCH_CSV_HEADER, evaluate, predict_dataset,
                                report_from_outputs, train)

SCENARIO = ScenarioConfig(
    n_tracks=6, fps=5, obs_len=4, pred_len=3,
    image_size=(36, 24), map_size=(12, 24),
    episode_len_range=(14, 18),
    ped_height_range=(6, 12),
    walk_speed_range=(0.1, 0.4),
    cross_speed_range=(1.0, 2.0),
    ego_speed_range=(0.0, 3.0),
    n_parked_vehicles=1,
)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    tracks, maps = generate_synthetic(SCENARIO, seed=42)
    save_corpus(root, tracks, maps, manifest_for(SCENARIO, 42, tracks))
    grid = GridSpec(rows=2, cols=3, cell_px=12, image_size=(36, 24))
    ds, _ = build_dataset(load_corpus(root), 4, 3, (1.0, 2.0), grid,
                          map_size=(12, 24))
    assert len(ds.samples) > 10
    return ds


def quick_train_cfg(**kw):
    base = dict(epochs=2, batch_size=4, learning_rate=1e-3, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestModelWiring:
    def test_context_width(self):
        model = Model(tiny_config(), seed=0)
        assert model.d_ctx == model.encoder.d_out + model.cfg.saim.d_out + 3

    def test_saim_off_narrows_context(self):
        cfg = tiny_config(saim=SAIMConfig(variant="off"))
        model = Model(cfg, seed=0)
        assert model.saim is None
        assert model.d_ctx == model.encoder.d_out + 3
        assert not any(n.startswith("saim/") for n in model.store.names())

    def test_forward_sample_shapes(self, dataset):
        model = Model(tiny_config(), seed=0)
        s = dataset.samples[0]
        bundle = model.forward_sample(s, dataset.map_for(s))
        assert bundle.future_boxes.data.shape == (3, 4)
        assert bundle.crossing_prob.data.shape == (1, 1)
        assert bundle.cell_distribution.data.shape == (1, 6)
        assert abs(bundle.cell_distribution.data.sum() - 1.0) < 1e-9

    def test_same_seed_same_parameters(self):
        a = Model(tiny_config(), seed=7)
        b = Model(tiny_config(), seed=7)
        c = Model(tiny_config(), seed=8)
        for name in a.store.names():
            assert np.array_equal(a.store[name].data, b.store[name].data)
        assert any(not np.array_equal(a.store[n].data, c.store[n].data)
                   for n in a.store.names())

    def test_delta_boxes_offsets_by_last_observation(self, dataset):
        plain = Model(tiny_config(), seed=3)
        cfg = tiny_config()
        delta_cfg = dataclasses.replace(
            cfg, decoder=dataclasses.replace(cfg.decoder, delta_boxes=True))
        delta = Model(delta_cfg, seed=3)
        s = dataset.samples[1]
        chan = dataset.map_for(s)
        base = plain.forward_sample(s, chan).future_boxes.data
        offset = delta.forward_sample(s, chan).future_boxes.data
        assert np.allclose(offset, base + s.obs_boxes[-1], atol=1e-12)

    def test_recurrent_weights_carry_decay_others_do_not(self):
        model = Model(tiny_config(), seed=0)
        decay = model.cfg.l2_recurrent
        assert model.store["dec/shared/fwd/wx"].weight_decay == decay
        assert model.store["dec/task/action/wh"].weight_decay == decay
        assert model.store["saim/dyn/lstm/wx"].weight_decay == decay
        assert model.store["dec/head/trajectory/w"].weight_decay == 0.0
        assert model.store["saim/patch/w"].weight_decay == 0.0

    def test_attention_rows_cover_encoder_and_interaction(self, dataset):
        model = Model(tiny_config(), seed=0)
        s = dataset.samples[0]
        model.forward_sample(s, dataset.map_for(s))
        rows = model.attention_rows()
        assert len(rows) > 12  # 12 cross-modal units plus transformer + scene
        for w in rows:
            assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-9)


class TestCheckpointHandshake:
    def test_save_load_round_trip_bit_exact(self, dataset, tmp_path):
        model = Model(tiny_config(), seed=5)
        s = dataset.samples[0]
        chan = dataset.map_for(s)
        before = model.forward_sample(s, chan).future_boxes.data.copy()
        path = tmp_path / "model.ckpt"
        model.save(path)
        loaded = Model.load(path)
        assert loaded.cfg == model.cfg
        after = loaded.forward_sample(s, chan).future_boxes.data
        assert np.array_equal(before, after)

    def test_parameter_set_mismatch_names_offenders(self, tmp_path):
        model = Model(tiny_config(), seed=0)
        state = model.store.state()
        state.pop("dec/head/action/w")
        state["bogus/extra"] = np.zeros((1, 1))
        path = tmp_path / "bad.ckpt"
        save_checkpoint(path, state, model.config_dict())
        with pytest.raises(CheckpointError) as err:
            Model.load(path)
        assert "dec/head/action/w" in str(err.value)
        assert "bogus/extra" in str(err.value)

    def test_missing_config_rejected(self, tmp_path):
        model = Model(tiny_config(), seed=0)
        path = tmp_path / "headless.ckpt"
        save_checkpoint(path, model.store.state(), {"seed": 0})
        with pytest.raises(CheckpointError):
            Model.load(path)


class TestTrainingLoop:
    def test_runs_and_logs(self, dataset, tmp_path):
        model = Model(tiny_config(), seed=0)
        log = tmp_path / "epochs.csv"
        result = train(model, dataset, quick_train_cfg(), log_path=log)
        assert len(result.rows) == 2
        assert not result.aborted
        lines = log.read_text().strip().split("\n")
        assert lines[0] == EPOCH_CSV_HEADER
        assert len(lines) == 3
        assert lines[1].startswith("1,")
        # every numeric field parses back
        for cell in lines[1].split(","):
            if cell:
                float(cell)

    def test_split_is_disjoint_by_pedestrian(self, dataset):
        model = Model(tiny_config(), seed=0)
        result = train(model, dataset, quick_train_cfg(epochs=1))
        train_ids = {s.ped_id for s in result.train_samples}
        val_ids = {s.ped_id for s in result.val_samples}
        assert train_ids and val_ids
        assert not train_ids & val_ids

    def test_bit_reproducible_training(self, dataset):
        runs = []
        for _ in range(2):
            model = Model(tiny_config(), seed=0)
            result = train(model, dataset, quick_train_cfg())
            runs.append((result, model.store.state()))
        (r1, s1), (r2, s2) = runs
        assert [row.to_csv() for row in r1.rows] == [row.to_csv() for row in r2.rows]
        assert set(s1) == set(s2)
        for name in s1:
            assert np.array_equal(s1[name], s2[name])

    def test_shuffle_seed_changes_outcome(self, dataset):
        a = train(Model(tiny_config(), seed=0), dataset, quick_train_cfg(seed=0))
        b = train(Model(tiny_config(), seed=0), dataset, quick_train_cfg(seed=9))
        assert a.rows[-1].train_loss != b.rows[-1].train_loss

    def test_best_epoch_tracks_minimum_val_loss(self, dataset):
        model = Model(tiny_config(), seed=0)
        result = train(model, dataset, quick_train_cfg(epochs=3))
        losses = [r.val_loss for r in result.rows]
        assert result.best_val == min(losses)
        assert result.best_epoch == losses.index(min(losses)) + 1
        assert set(result.best_state) == set(model.store.names())

    def test_zero_epochs_returns_initial_state(self, dataset):
        model = Model(tiny_config(), seed=0)
        init = model.store.state()
        result = train(model, dataset, quick_train_cfg(epochs=0))
        assert result.rows == []
        assert not result.aborted
        for name, value in result.final_state.items():
            assert np.array_equal(value, init[name])

    def test_non_finite_aborts_and_restores(self, dataset):
        model = Model(tiny_config(), seed=0)
        model.store["dec/head/action/w"].tensor.data[0, 0] = np.nan
        result = train(model, dataset, quick_train_cfg())
        assert result.aborted
        assert result.abort_reason.startswith("epoch 1")
        assert result.rows == []

    def test_callback_sees_every_epoch(self, dataset):
        seen = []
        train(Model(tiny_config(), seed=0), dataset,
              quick_train_cfg(epochs=3), callback=lambda row: seen.append(row.epoch))
        assert seen == [1, 2, 3]

    def test_learning_reduces_loss(self, dataset):
        model = Model(tiny_config(), seed=0)
        result = train(model, dataset, quick_train_cfg(epochs=6))
        assert result.rows[-1].train_loss < result.rows[0].train_loss


class TestEvaluation:
    def test_predict_outputs_aligned(self, dataset):
        model = Model(tiny_config(), seed=0)
        outputs = predict_dataset(model, dataset)
        assert len(outputs) == len(dataset.samples)
        for o, s in zip(outputs, dataset.samples):
            assert o["sample"] is s
            assert o["future_boxes"].shape == (3, 4)
            assert 0.0 <= o["crossing_prob"] <= 1.0

    def test_report_on_perfect_predictions(self, dataset):
        model = Model(tiny_config(), seed=0)
        outputs = predict_dataset(model, dataset)
        for o in outputs:
            o["future_boxes"] = o["sample"].future_boxes.copy()
            o["crossing_prob"] = float(o["sample"].crossing_label)
        report = report_from_outputs(outputs, model.cfg.image_size)
        assert report.ade == 0.0
        assert report.frb == 0.0
        assert report.fiou == pytest.approx(1.0, abs=1e-12)
        assert report.accuracy == 1.0
        assert report.skipped_degenerate == 0

    def test_evaluate_is_deterministic(self, dataset):
        model = Model(tiny_config(), seed=0)
        r1, _ = evaluate(model, dataset)
        r2, _ = evaluate(model, dataset)
        assert r1 == r2
