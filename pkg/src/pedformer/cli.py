"""Command-line entry point: gen-data / train / eval / predict / gradcheck / plot.

Config layering, lowest to highest precedence: dataclass defaults, --profile
presets, the JSON config file, then explicit flags (including --set KEY=VAL
dotted-path overrides). Unknown keys anywhere are rejected with their full
paths, and every validation problem is reported in one pass.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. When --seed
is absent the PEDFORMER_SEED environment variable is used as a fallback.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError
from .checkpoint import CheckpointError
from .configs import (ConfigError, ModelConfig, TrainConfig,
                      dataclass_from_dict, dataclass_to_dict)
from .data import DataError, GridSpec
from .dataset import build_dataset, load_corpus, save_corpus
from .losses import LossError
from .metrics import MetricError
from .model import Model, tiny_config
from .semantic import SemanticMapError
from .synthetic import (ScenarioConfig, ScenarioError, generate_synthetic,
                        manifest_for)
from .training import predict_dataset, report_from_outputs, train
from . import verify

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# gen-data crossing ratios per corpus profile (crossing / total sequences)
_PROFILE_RATIO = {"pie": 995 / 3980, "jaad": 807 / 3955}


class UsageError(Exception):
    """Bad invocation or configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config plumbing


def _read_config_file(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {p} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise UsageError(f"config file {p} must hold a JSON object")
    return data


def _check_sections(data, allowed):
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise UsageError(
            f"unknown config sections {unknown}; expected subset of {sorted(allowed)}")


def _apply_set_overrides(data, assignments):
    """Apply ``--set a.b.c=value`` pairs onto the raw config dict."""
    for item in assignments or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got '{item}'")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise UsageError(f"--set has an empty key in '{item}'")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings stay strings
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set {key}: '{part}' is not a section")
        node[parts[-1]] = value
    return data


def _resolve_seed(flag_value, section, default=0):
    """flags > config file > PEDFORMER_SEED > default."""
    if flag_value is not None:
        return int(flag_value)
    if isinstance(section, dict) and "seed" in section:
        return int(section["seed"])
    env = os.environ.get("PEDFORMER_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as err:
            raise UsageError(f"PEDFORMER_SEED={env!r} is not an integer") from err
    return default


def _build_sections(data, wanted):
    """Instantiate and validate config dataclasses, pooling every problem —
    structural (unknown keys) and semantic (bad values) — into one error."""
    out = {}
    problems = []
    for key, cls in wanted.items():
        try:
            cfg = dataclass_from_dict(cls, data.get(key, {}), path=key)
            out[key] = cfg
            if hasattr(cfg, "problems"):
                problems.extend(f"{key}: {p}" for p in cfg.problems())
            else:
                try:
                    cfg.validate()
                except ScenarioError as err:
                    problems.append(f"{key}: {err}")
        except ConfigError as err:
            problems.extend(err.problems)
    if problems:
        raise ConfigError(problems)
    return out


# ---------------------------------------------------------------------------
# dataset plumbing


def _open_corpus(data_dir):
    root = Path(data_dir)
    if not root.is_dir():
        raise UsageError(f"data directory not found: {root}")
    if not (root / "tracks.jsonl").is_file():
        raise UsageError(f"{root} is not a corpus (no tracks.jsonl)")
    return load_corpus(root)


def _corpus_consistency(model_cfg: ModelConfig, corpus):
    """The checkpoint/config dims must agree with how the corpus was drawn."""
    scenario = corpus.manifest.get("scenario", {})
    problems = []
    img = scenario.get("image_size")
    if img is not None and tuple(img) != tuple(model_cfg.image_size):
        problems.append(
            f"model.image_size {tuple(model_cfg.image_size)} does not match "
            f"corpus image_size {tuple(img)}")
    msz = scenario.get("map_size")
    if (model_cfg.saim.variant != "off" and msz is not None
            and tuple(msz) != tuple(model_cfg.saim.map_size)):
        problems.append(
            f"model.saim.map_size {tuple(model_cfg.saim.map_size)} does not "
            f"match corpus map_size {tuple(msz)}")
    if problems:
        raise ConfigError(problems)


def _dataset_for(model_cfg: ModelConfig, corpus):
    _corpus_consistency(model_cfg, corpus)
    sampling = corpus.manifest.get("sampling", {})
    tte = tuple(sampling.get("tte_range", (1.0, 2.0)))
    grid = GridSpec(model_cfg.grid_rows, model_cfg.grid_cols, model_cfg.cell_px,
                    tuple(model_cfg.image_size))
    dataset, stats = build_dataset(corpus, model_cfg.obs_len, model_cfg.pred_len,
                                   tte, grid, map_size=model_cfg.saim.map_size)
    return dataset, stats


def _require_samples(dataset, what):
    if not dataset.samples:
        raise UsageError(f"no usable windows in the corpus for {what}; "
                         "check obs/pred lengths against track lengths")


def _load_model(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    return Model.load(p)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    data = _read_config_file(args.config)
    _check_sections(data, {"scenario"})
    scenario = dict(data.get("scenario", {}))
    if args.profile:
        scenario.setdefault("crossing_window_ratio", _PROFILE_RATIO[args.profile])
    data["scenario"] = scenario
    _apply_set_overrides(data, args.set)
    scenario = data["scenario"]
    if args.tracks is not None:
        scenario["n_tracks"] = args.tracks
    seed = _resolve_seed(args.seed, None)

    cfg = _build_sections(data, {"scenario": ScenarioConfig})["scenario"]
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise UsageError(f"output directory {out} is not writable: {err}") from err

    tracks, maps = generate_synthetic(cfg, seed=seed)
    manifest = manifest_for(cfg, seed, tracks)
    save_corpus(out, tracks, maps, manifest)
    stats = manifest["stats"]
    print(f"wrote {stats['n_tracks']} tracks / {stats['n_windows']} windows "
          f"(crossing ratio {stats['crossing_ratio']:.3f}) to {out}")
    return EXIT_OK


def _train_configs(args):
    data = _read_config_file(args.config)
    _check_sections(data, {"model", "train"})
    train_section = dict(data.get("train", {}))
    if args.profile:
        preset = TrainConfig.for_profile(args.profile)
        train_section.setdefault("profile", preset.profile)
        train_section.setdefault("learning_rate", preset.learning_rate)
    data["train"] = train_section
    _apply_set_overrides(data, args.set)
    train_section = data["train"]
    if args.epochs is not None:
        train_section["epochs"] = args.epochs
    if args.batch_size is not None:
        train_section["batch_size"] = args.batch_size
    train_section["seed"] = _resolve_seed(args.seed, train_section)

    cfgs = _build_sections(data, {"model": ModelConfig, "train": TrainConfig})
    model_cfg, train_cfg = cfgs["model"], cfgs["train"]

    # the recurrent-weight decay lives on the model parameters; keep the two
    # declarations in sync rather than silently preferring one
    model_l2 = ("l2_recurrent" in data.get("model", {}))
    train_l2 = ("l2_recurrent" in train_section)
    if train_l2 and not model_l2:
        model_cfg.l2_recurrent = train_cfg.l2_recurrent
    elif train_l2 and model_l2 and model_cfg.l2_recurrent != train_cfg.l2_recurrent:
        raise ConfigError([
            f"model.l2_recurrent={model_cfg.l2_recurrent} conflicts with "
            f"train.l2_recurrent={train_cfg.l2_recurrent}"])
    train_cfg.l2_recurrent = model_cfg.l2_recurrent
    return model_cfg, train_cfg


def cmd_train(args):
    model_cfg, train_cfg = _train_configs(args)
    corpus = _open_corpus(args.data)
    dataset, stats = _dataset_for(model_cfg, corpus)
    _require_samples(dataset, "training")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    snapshot = {"model": dataclass_to_dict(model_cfg),
                "train": dataclass_to_dict(train_cfg)}
    (out / "config.json").write_text(json.dumps(snapshot, indent=2) + "\n",
                                     encoding="utf-8")

    model = Model(model_cfg, seed=train_cfg.seed)
    print(f"training on {len(dataset.samples)} windows "
          f"({stats.tte_rejected} rejected by the time-to-event band)")

    def progress(row):
        auc = "-" if row.report.auc is None else f"{row.report.auc:.3f}"
        print(f"epoch {row.epoch:4d}  lr {row.lr:.2e}  "
              f"train {row.train_loss:.4f}  val {row.val_loss:.4f}  "
              f"ade {row.report.ade:.2f}  acc {row.report.accuracy:.3f}  "
              f"auc {auc}")

    result = train(model, dataset, train_cfg, log_path=out / "epochs.csv",
                   callback=progress)

    model.store.load_state(result.final_state)
    model.save(out / "checkpoint_last.ckpt")
    if result.best_state is not None:
        model.store.load_state(result.best_state)
        model.save(out / "checkpoint_best.ckpt")
    if result.aborted:
        print(f"aborted: {result.abort_reason}; parameters restored to the "
              f"epoch start", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"done: best val loss {result.best_val:.4f} at epoch "
          f"{result.best_epoch}; artifacts in {out}")
    return EXIT_OK


def _read_predictions(path, samples):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"prediction dump not found: {p}")
    rows = []
    with open(p, encoding="utf-8") as f:
        for i, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as err:
                raise DataError(f"{p}:{i}: invalid JSON: {err}") from err
    if len(rows) != len(samples):
        raise DataError(f"{p}: {len(rows)} predictions for {len(samples)} samples")
    outputs = []
    for i, (row, sample) in enumerate(zip(rows, samples), 1):
        if row.get("ped_id") != sample.ped_id or \
                row.get("anchor_frame") != sample.anchor_frame:
            raise DataError(
                f"{p}:{i}: prediction for {row.get('ped_id')}@"
                f"{row.get('anchor_frame')} does not match sample "
                f"{sample.ped_id}@{sample.anchor_frame}")
        boxes = np.asarray(row["future_boxes"], dtype=np.float64)
        if boxes.shape != sample.future_boxes.shape:
            raise DataError(f"{p}:{i}: future_boxes shape {boxes.shape} != "
                            f"{sample.future_boxes.shape}")
        outputs.append({"sample": sample, "future_boxes": boxes,
                        "crossing_prob": float(row["crossing_prob"])})
    return outputs


def cmd_eval(args):
    model = _load_model(args.checkpoint)
    corpus = _open_corpus(args.data)
    dataset, _ = _dataset_for(model.cfg, corpus)
    _require_samples(dataset, "evaluation")
    if args.predictions:
        outputs = _read_predictions(args.predictions, dataset.samples)
    else:
        outputs = predict_dataset(model, dataset)
    report = report_from_outputs(outputs, model.cfg.image_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
    print(f"evaluated {report.n_samples} windows: ade {report.ade:.2f} px, "
          f"fde {report.fde:.2f} px, acc {report.accuracy:.3f}, auc {auc}")
    return EXIT_OK


def cmd_predict(args):
    model = _load_model(args.checkpoint)
    corpus = _open_corpus(args.data)
    dataset, _ = _dataset_for(model.cfg, corpus)
    _require_samples(dataset, "prediction")
    outputs = predict_dataset(model, dataset)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    k = min(5, model.cfg.n_cells)
    with open(out, "w", encoding="utf-8") as f:
        for o in outputs:
            dist = o["cell_distribution"]
            top = sorted(range(len(dist)), key=lambda c: (-dist[c], c))[:k]
            row = {
                "ped_id": o["sample"].ped_id,
                "anchor_frame": o["sample"].anchor_frame,
                "future_boxes": o["future_boxes"].tolist(),
                "crossing_prob": o["crossing_prob"],
                "top5_cells": [[int(c), float(dist[c])] for c in top],
            }
            f.write(json.dumps(row) + "\n")
    print(f"wrote {len(outputs)} predictions to {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    data = _read_config_file(args.config) if args.config else {}
    _check_sections(data, {"model"})
    if not args.config:
        data["model"] = dataclass_to_dict(tiny_config())
    _apply_set_overrides(data, args.set)
    cfg = _build_sections(data, {"model": ModelConfig})["model"]
    verify.enforce_tiny(cfg)
    seed = _resolve_seed(args.seed, None)

    results = verify.check_primitives(seed)
    results += verify.check_model(cfg, seed=seed, tol=args.tol)
    for r in results:
        print(r.line())
    ok = all(r.ok for r in results)
    n_fail = sum(not r.ok for r in results)
    print(f"gradcheck: {len(results) - n_fail}/{len(results)} suites passed")
    return EXIT_OK if ok else EXIT_RUNTIME


def _read_epoch_log(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"epoch log not found: {p}")
    lines = [ln for ln in p.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) < 2:
        raise UsageError(f"{p} has no epoch rows")
    header = lines[0].split(",")
    if "epoch" not in header:
        raise UsageError(f"{p} has no 'epoch' column")
    rows = []
    for i, line in enumerate(lines[1:], 2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise DataError(f"{p}:{i}: {len(cells)} cells for {len(header)} columns")
        rows.append(dict(zip(header, cells)))
    return header, rows


_LOSS_SERIES = ("train_loss", "val_loss", "traj_loss", "act_loss", "dl_loss")


def cmd_plot(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, rows = _read_epoch_log(args.log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    epochs = [int(r["epoch"]) for r in rows]
    series = {}
    for name in header:
        if name == "epoch":
            continue
        pts = [(e, float(r[name])) for e, r in zip(epochs, rows) if r[name] != ""]
        if pts:
            series[name] = pts

    tidy = ["epoch,series,value"]
    for name in sorted(series):
        for e, v in series[name]:
            tidy.append(f"{e},{name},{repr(v)}")
    (out / "curves.csv").write_text("\n".join(tidy) + "\n", encoding="utf-8")

    def draw(names, title, ylabel, fname):
        chosen = [n for n in names if n in series]
        if not chosen:
            return
        fig, ax = plt.subplots(figsize=(7, 4.2))
        for name in chosen:
            xs, ys = zip(*series[name])
            ax.plot(xs, ys, marker="o", markersize=3, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="best", fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / fname, format="svg")
        plt.close(fig)

    draw(_LOSS_SERIES, "training objective", "loss", "loss.svg")
    draw(("ade", "fde", "arb", "frb"), "displacement error", "pixels",
         "displacement.svg")
    draw(("acc", "auc", "f1", "prec"), "crossing action", "score",
         "classification.svg")
    written = sorted(p.name for p in out.iterdir() if p.suffix in (".svg", ".csv"))
    print(f"wrote {', '.join(written)} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pedformer",
        description="Multi-task pedestrian behavior prediction: trajectory, "
                    "crossing action, and discrete location.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_set(p):
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-path config override, e.g. "
                            "--set model.encoder.d_model=64 (repeatable)")

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--tracks", type=int, help="number of pedestrian tracks")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--profile", choices=sorted(_PROFILE_RATIO),
                   help="corpus preset controlling the crossing ratio")
    p.add_argument("--config", help="JSON config with a 'scenario' section")
    add_set(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", help="JSON config with 'model'/'train' sections")
    p.add_argument("--profile", choices=("pie", "jaad"),
                   help="training preset (loss weights, learning rate)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    add_set(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="metrics output directory")
    p.add_argument("--predictions",
                   help="score a prediction dump instead of running the model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="dump per-window predictions as JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every gradient")
    p.add_argument("--config", help="JSON config with a 'model' section "
                                    "(small dimensions enforced)")
    p.add_argument("--tol", type=float, default=verify.MODEL_TOL,
                   help="relative-error tolerance for the end-to-end check")
    p.add_argument("--seed", type=int)
    add_set(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="render epoch-log curves as SVG + tidy CSV")
    p.add_argument("--log", required=True, help="epochs.csv from a training run")
    p.add_argument("--out", required=True, help="plot output directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ScenarioError) as err:
        problems = getattr(err, "problems", None) or [str(err)]
        print("configuration problems:", file=sys.stderr)
        for p in problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, SemanticMapError, MetricError,
            LossError, NonFiniteError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
