"""Exercise the command-line surface: layering, exit codes, artifacts."""

import json
import xml.dom.minidom

import numpy as np
import pytest

from pedformer.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main

SCENARIO = {
    "n_tracks": 6, "fps": 5, "obs_len": 4, "pred_len": 3,
    "image_size": [36, 24], "map_size": [12, 24],
    "episode_len_range": [14, 18], "ped_height_range": [6, 12],
    "walk_speed_range": [0.1, 0.4], "cross_speed_range": [1.0, 2.0],
    "ego_speed_range": [0.0, 3.0], "n_parked_vehicles": 1,
}

MODEL = {
    "obs_len": 4, "pred_len": 3, "grid_rows": 2, "grid_cols": 3, "cell_px": 12,
    "image_size": [36, 24],
    "encoder": {"d_embed": 4, "num_heads": 2, "num_layers": 1,
                "ffn_hidden": 8, "d_model": 8},
    "saim": {"patch_size": 6, "map_size": [12, 24], "lambda_p": 4,
             "num_heads": 2, "d_dynamics": 4, "d_query": 4, "d_out": 8},
    "decoder": {"d_hidden": 4},
}

TRAIN = {"epochs": 2, "batch_size": 4, "learning_rate": 1e-3, "seed": 0}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated corpus plus a finished 2-epoch training run."""
    root = tmp_path_factory.mktemp("cli")
    (root / "scenario.json").write_text(json.dumps({"scenario": SCENARIO}))
    (root / "train.json").write_text(json.dumps({"model": MODEL, "train": TRAIN}))
    assert main(["gen-data", "--out", str(root / "corpus"),
                 "--config", str(root / "scenario.json"), "--seed", "42"]) == EXIT_OK
    assert main(["train", "--data", str(root / "corpus"),
                 "--out", str(root / "run"),
                 "--config", str(root / "train.json")]) == EXIT_OK
    return root


class TestGenData:
    def test_deterministic_output(self, tmp_path, workspace):
        for d in ("a", "b"):
            assert main(["gen-data", "--out", str(tmp_path / d),
                         "--config", str(workspace / "scenario.json"),
                         "--seed", "7"]) == EXIT_OK
        a = sorted((tmp_path / "a").rglob("*"))
        b = sorted((tmp_path / "b").rglob("*"))
        assert [p.name for p in a] == [p.name for p in b]
        for pa, pb in zip(a, b):
            if pa.is_file():
                assert pa.read_bytes() == pb.read_bytes(), pa.name

    def test_zero_tracks_still_valid_manifest(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "empty"),
                     "--tracks", "0", "--seed", "1"]) == EXIT_OK
        manifest = json.loads((tmp_path / "empty" / "manifest.json").read_text())
        assert manifest["format"] == "pedformer-corpus-v1"
        assert manifest["stats"]["n_tracks"] == 0
        assert (tmp_path / "empty" / "tracks.jsonl").exists()

    def test_profile_sets_crossing_ratio_target(self, tmp_path, workspace):
        assert main(["gen-data", "--out", str(tmp_path / "pie"),
                     "--config", str(workspace / "scenario.json"),
                     "--tracks", "64", "--seed", "3", "--profile", "pie"]) == EXIT_OK
        manifest = json.loads((tmp_path / "pie" / "manifest.json").read_text())
        assert manifest["scenario"]["crossing_window_ratio"] == 995 / 3980
        assert abs(manifest["stats"]["crossing_ratio"] - 0.25) <= 0.03

    def test_env_seed_fallback(self, tmp_path, workspace, monkeypatch):
        monkeypatch.setenv("PEDFORMER_SEED", "7")
        assert main(["gen-data", "--out", str(tmp_path / "env"),
                     "--config", str(workspace / "scenario.json")]) == EXIT_OK
        manifest = json.loads((tmp_path / "env" / "manifest.json").read_text())
        assert manifest["seed"] == 7

    def test_bad_env_seed_is_usage_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("PEDFORMER_SEED", "not-a-number")
        assert main(["gen-data", "--out", str(tmp_path / "x"),
                     "--tracks", "1"]) == EXIT_USAGE
        assert "PEDFORMER_SEED" in capsys.readouterr().err

    def test_unknown_section_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"scenari0": {}}))
        assert main(["gen-data", "--out", str(tmp_path / "x"),
                     "--config", str(bad)]) == EXIT_USAGE


class TestTrain:
    def test_artifacts_and_log_shape(self, workspace):
        run = workspace / "run"
        assert (run / "checkpoint_best.ckpt").is_file()
        assert (run / "checkpoint_last.ckpt").is_file()
        lines = (run / "epochs.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + TRAIN["epochs"]
        snapshot = json.loads((run / "config.json").read_text())
        assert snapshot["model"]["encoder"]["d_embed"] == 4
        assert snapshot["train"]["seed"] == 0

    def test_missing_data_dir_is_usage_error(self, tmp_path, capsys):
        assert main(["train", "--data", str(tmp_path / "nowhere"),
                     "--out", str(tmp_path / "out")]) == EXIT_USAGE
        assert "not found" in capsys.readouterr().err

    def test_snapshot_reproduces_run_bit_for_bit(self, workspace, tmp_path):
        assert main(["train", "--data", str(workspace / "corpus"),
                     "--out", str(tmp_path / "redo"),
                     "--config", str(workspace / "run" / "config.json")]) == EXIT_OK
        for name in ("checkpoint_last.ckpt", "checkpoint_best.ckpt", "epochs.csv"):
            assert (tmp_path / "redo" / name).read_bytes() == \
                (workspace / "run" / name).read_bytes(), name

    def test_all_validation_problems_reported_together(self, workspace, tmp_path,
                                                       capsys):
        code = main(["train", "--data", str(workspace / "corpus"),
                     "--out", str(tmp_path / "x"),
                     "--config", str(workspace / "train.json"),
                     "--set", "model.encoder.d_embedX=4",
                     "--set", "train.epochs=-1"])
        assert code == EXIT_USAGE
        err = capsys.readouterr().err
        assert "d_embedX" in err
        assert "epochs" in err

    def test_flag_overrides_file(self, workspace, tmp_path):
        assert main(["train", "--data", str(workspace / "corpus"),
                     "--out", str(tmp_path / "one"),
                     "--config", str(workspace / "train.json"),
                     "--epochs", "1"]) == EXIT_OK
        lines = (tmp_path / "one" / "epochs.csv").read_text().strip().split("\n")
        assert len(lines) == 2

    def test_dimension_mismatch_names_both_sides(self, workspace, tmp_path,
                                                 capsys):
        cfg = {"model": dict(MODEL, image_size=[48, 24], grid_cols=4),
               "train": TRAIN}
        bad = tmp_path / "mismatch.json"
        bad.write_text(json.dumps(cfg))
        assert main(["train", "--data", str(workspace / "corpus"),
                     "--out", str(tmp_path / "x"),
                     "--config", str(bad)]) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "(48, 24)" in err and "(36, 24)" in err


class TestEvalPredict:
    def test_eval_writes_metric_files(self, workspace, tmp_path):
        out = tmp_path / "metrics"
        assert main(["eval", "--checkpoint",
                     str(workspace / "run" / "checkpoint_best.ckpt"),
                     "--data", str(workspace / "corpus"),
                     "--out", str(out)]) == EXIT_OK
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["n_samples"] > 10
        header = (out / "metrics.csv").read_text().split("\n")[0]
        assert header == "ade,fde,arb,frb,fiou,acc,auc,f1,prec"

    def test_predict_then_eval_closure_bit_exact(self, workspace, tmp_path):
        ckpt = str(workspace / "run" / "checkpoint_best.ckpt")
        data = str(workspace / "corpus")
        preds = tmp_path / "preds.jsonl"
        assert main(["eval", "--checkpoint", ckpt, "--data", data,
                     "--out", str(tmp_path / "direct")]) == EXIT_OK
        assert main(["predict", "--checkpoint", ckpt, "--data", data,
                     "--out", str(preds)]) == EXIT_OK
        assert main(["eval", "--checkpoint", ckpt, "--data", data,
                     "--out", str(tmp_path / "fromdump"),
                     "--predictions", str(preds)]) == EXIT_OK
        for name in ("metrics.json", "metrics.csv"):
            assert (tmp_path / "direct" / name).read_bytes() == \
                (tmp_path / "fromdump" / name).read_bytes()

    def test_prediction_rows_well_formed(self, workspace, tmp_path):
        preds = tmp_path / "p.jsonl"
        assert main(["predict", "--checkpoint",
                     str(workspace / "run" / "checkpoint_best.ckpt"),
                     "--data", str(workspace / "corpus"),
                     "--out", str(preds)]) == EXIT_OK
        rows = [json.loads(l) for l in preds.read_text().splitlines()]
        assert len(rows) > 10
        for row in rows:
            assert set(row) == {"ped_id", "anchor_frame", "future_boxes",
                                "crossing_prob", "top5_cells"}
            probs = [p for _, p in row["top5_cells"]]
            assert probs == sorted(probs, reverse=True)
            assert len(row["top5_cells"]) == 5
            assert np.asarray(row["future_boxes"]).shape == (3, 4)

    def test_tampered_dump_is_runtime_error(self, workspace, tmp_path, capsys):
        ckpt = str(workspace / "run" / "checkpoint_best.ckpt")
        data = str(workspace / "corpus")
        preds = tmp_path / "p.jsonl"
        assert main(["predict", "--checkpoint", ckpt, "--data", data,
                     "--out", str(preds)]) == EXIT_OK
        lines = preds.read_text().splitlines()
        preds.write_text("\n".join(lines[:-1]) + "\n")  # drop one row
        assert main(["eval", "--checkpoint", ckpt, "--data", data,
                     "--out", str(tmp_path / "x"),
                     "--predictions", str(preds)]) == EXIT_RUNTIME

    def test_missing_checkpoint_is_usage_error(self, workspace, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "no.ckpt"),
                     "--data", str(workspace / "corpus"),
                     "--out", str(tmp_path / "x")]) == EXIT_USAGE


class TestGradcheckCommand:
    def test_oversize_config_rejected(self, capsys):
        assert main(["gradcheck", "--set", "model.encoder.d_embed=64"]) == \
            EXIT_USAGE
        assert "gradcheck limit" in capsys.readouterr().err


class TestPlot:
    def test_curves_match_log_and_svg_is_xml(self, workspace, tmp_path):
        out = tmp_path / "plots"
        assert main(["plot", "--log", str(workspace / "run" / "epochs.csv"),
                     "--out", str(out)]) == EXIT_OK
        for svg in out.glob("*.svg"):
            xml.dom.minidom.parse(str(svg))  # raises if malformed
        assert (out / "loss.svg").is_file()
        tidy = (out / "curves.csv").read_text().strip().split("\n")
        assert tidy[0] == "epoch,series,value"
        # the tidy file reproduces the log exactly (no smoothing)
        log_lines = (workspace / "run" / "epochs.csv").read_text().strip().split("\n")
        header = log_lines[0].split(",")
        first = dict(zip(header, log_lines[1].split(",")))
        assert f"1,train_loss,{first['train_loss']}" in tidy

    def test_single_row_log(self, tmp_path, workspace):
        log = workspace / "run" / "epochs.csv"
        one = tmp_path / "one.csv"
        one.write_text("\n".join(log.read_text().split("\n")[:2]) + "\n")
        assert main(["plot", "--log", str(one), "--out",
                     str(tmp_path / "plots")]) == EXIT_OK
        assert (tmp_path / "plots" / "loss.svg").is_file()

    def test_missing_log_is_usage_error(self, tmp_path):
        assert main(["plot", "--log", str(tmp_path / "no.csv"),
                     "--out", str(tmp_path / "x")]) == EXIT_USAGE
