#!/usr/bin/env python3
"""Single-batch overfit check.

Drives the full model onto 8 synthetic windows for 300 optimizer steps and
reports whether (a) the trajectory log-cosh loss fell to <= 1% of its value
at step 0 and (b) the model classifies the crossing label of every one of
the 8 windows correctly. A model that cannot memorize one batch has a wiring
problem somewhere, so this doubles as an end-to-end smoke test of encoder,
interaction module, decoder, losses, and optimizer together.

Exit code 0 when both targets are met, 1 otherwise.
"""

import argparse
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from pedformer.autodiff import Tape
from pedformer.configs import (DecoderConfig, EncoderConfig, ModelConfig,
                               SAIMConfig)
from pedformer.data import GridSpec
from pedformer.dataset import build_dataset, load_corpus, save_corpus
from pedformer.losses import LossWeights, total_loss
from pedformer.model import Model
from pedformer.optim import RMSProp
from pedformer.synthetic import ScenarioConfig, generate_synthetic, manifest_for
from pedformer.training import evaluate

OBS, PRED = 8, 8
IMAGE = (96, 48)


def overfit_config():
    """Width-64 model on an 8-step horizon, small enough to iterate fast."""
    return ModelConfig(
        obs_len=OBS, pred_len=PRED,
        grid_rows=2, grid_cols=4, cell_px=24, image_size=IMAGE,
        l2_recurrent=0.0,  # memorization run: regularizing fights the point
        encoder=EncoderConfig(d_embed=64, num_heads=4, num_layers=1,
                              ffn_hidden=128, d_model=64),
        saim=SAIMConfig(patch_size=6, map_size=(12, 24), lambda_p=16,
                        num_heads=4, d_dynamics=32, d_query=16, d_out=32),
        decoder=DecoderConfig(d_hidden=64),
    )


def pick_batch(samples, n=8):
    """Up to n/2 crossing + n/2 non-crossing windows, then fill with the rest."""
    cross = [s for s in samples if s.crossing_label]
    stay = [s for s in samples if not s.crossing_label]
    batch = cross[: n // 2] + stay[: n // 2]
    for s in samples:
        if len(batch) >= n:
            break
        if s not in batch:
            batch.append(s)
    if len(batch) < n:
        raise SystemExit(f"scenario produced only {len(batch)} windows; "
                         "raise n_tracks")
    return batch[:n]


def make_batch(workdir, seed):
    scenario = ScenarioConfig(
        n_tracks=10, fps=5.0, obs_len=OBS, pred_len=PRED,
        image_size=IMAGE, map_size=(12, 24),
        episode_len_range=(30, 40), crossing_window_ratio=0.5,
        ped_height_range=(8, 16), walk_speed_range=(0.1, 0.5),
        cross_speed_range=(1.0, 2.5), ego_speed_range=(0.0, 5.0),
        n_parked_vehicles=1,
    )
    tracks, maps = generate_synthetic(scenario, seed)
    save_corpus(workdir, tracks, maps, manifest_for(scenario, seed, tracks))
    grid = GridSpec(rows=2, cols=4, cell_px=24, image_size=IMAGE)
    dataset, _ = build_dataset(load_corpus(workdir), OBS, PRED, (1.0, 2.0),
                               grid, map_size=(12, 24))
    return dataset, pick_batch(dataset.samples)


def run(steps, lr, seed, log_every):
    with tempfile.TemporaryDirectory() as workdir:
        dataset, batch = make_batch(workdir, seed)
        n_cross = sum(s.crossing_label for s in batch)
        print(f"batch: {len(batch)} windows ({n_cross} crossing)")

        model = Model(overfit_config(), seed=seed)
        weights = LossWeights.for_profile("pie").with_class_counts(
            n_cross, len(batch) - n_cross)
        opt = RMSProp(model.store, lr)

        targets = [(s.future_boxes, s.crossing_label, s.final_cell)
                   for s in batch]
        traj0 = None
        t0 = time.time()
        for step in range(steps):
            model.store.zero_grad()
            with Tape() as tape:
                bundles = [model.forward_sample(s, dataset.map_for(s))
                           for s in batch]
                loss, parts = total_loss(bundles, targets, weights)
            tape.backward(loss)
            if traj0 is None:
                traj0 = parts.trajectory
            opt.step()
            if step % log_every == 0 or step == steps - 1:
                print(f"step {step:4d}  total {parts.total:.6f}  "
                      f"traj {parts.trajectory:.6f}  act {parts.action:.6f}  "
                      f"dl {parts.discrete:.6f}")

        report, _ = evaluate(model, dataset, batch)
        bundles = [model.forward_sample(s, dataset.map_for(s)) for s in batch]
        _, parts = total_loss(bundles, targets, weights)
        elapsed = time.time() - t0

    ratio = parts.trajectory / traj0
    print(f"\ntrajectory loss: {traj0:.6f} -> {parts.trajectory:.6f} "
          f"(ratio {ratio:.4f}, target <= 0.01)")
    print(f"crossing accuracy: {report.accuracy:.3f} (target 1.0)")
    print(f"elapsed: {elapsed:.1f}s over {steps} steps")
    ok = ratio <= 0.01 and report.accuracy == 1.0
    print("overfit check:", "PASS" if ok else "FAIL")
    return {"ratio": ratio, "accuracy": report.accuracy,
            "elapsed": elapsed, "ok": ok}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[1])
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--lr", type=float, default=5e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--log-every", type=int, default=25)
    args = ap.parse_args(argv)
    return 0 if run(args.steps, args.lr, args.seed, args.log_every)["ok"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
