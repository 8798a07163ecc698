"""Training loop, evaluation orchestration, and prediction dumps.

Bit-reproducibility: the model is seeded at build time, each epoch's shuffle
comes from SeedSequence([seed, epoch]), batch gradients accumulate in sample
order on one tape, and the optimizer walks parameters in registration order.
Two runs with the same (seed, config, corpus) produce identical checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Tape
from .configs import TrainConfig
from .data import denormalize_boxes
from .dataset import Dataset, split_by_track
from .losses import LossWeights, total_loss
from .metrics import MetricError, MetricReport, aggregate_report
from .model import Model

EPOCH_CSV_HEADER = ("epoch,lr,train_loss,traj_loss,act_loss,dl_loss,val_loss,"
                    "ade,fde,arb,frb,fiou,acc,auc,f1,prec")


@dataclass
class EpochRow:
    epoch: int
    lr: float
    train_loss: float
    traj_loss: float
    act_loss: float
    dl_loss: float
    val_loss: float
    report: MetricReport

    def to_csv(self):
        r = self.report
        auc = "" if r.auc is None else repr(r.auc)
        head = [str(self.epoch)] + [
            repr(v) for v in (self.lr, self.train_loss, self.traj_loss,
                              self.act_loss, self.dl_loss, self.val_loss,
                              r.ade, r.fde, r.arb, r.frb, r.fiou, r.accuracy)
        ]
        return ",".join(head + [auc, repr(r.f1), repr(r.precision)])


@dataclass
class TrainResult:
    rows: list = field(default_factory=list)
    best_state: dict | None = None
    best_epoch: int = 0
    best_val: float = math.inf
    final_state: dict | None = None
    aborted: bool = False
    abort_reason: str = ""
    train_samples: list = field(default_factory=list)
    val_samples: list = field(default_factory=list)

    def write_csv(self, path):
        lines = [EPOCH_CSV_HEADER] + [r.to_csv() for r in self.rows]
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")


def _targets(samples):
    return [(s.future_boxes, s.crossing_label, s.final_cell) for s in samples]


def predict_dataset(model: Model, dataset: Dataset, samples=None):
    """Forward every sample without recording; list of per-sample outputs."""
    samples = dataset.samples if samples is None else samples
    out = []
    for s in samples:
        bundle = model.forward_sample(s, dataset.map_for(s))
        boxes, prob, dist = bundle.detached()
        out.append({"sample": s, "future_boxes": boxes,
                    "crossing_prob": prob, "cell_distribution": dist})
    return out


def report_from_outputs(outputs, image_size):
    """Pixel-space MetricReport from aligned prediction/target pairs."""
    if not outputs:
        raise MetricError("empty evaluation batch")
    pred_px = np.stack([denormalize_boxes(o["future_boxes"], image_size) for o in outputs])
    gt_px = np.stack([denormalize_boxes(o["sample"].future_boxes, image_size) for o in outputs])
    probs = np.array([o["crossing_prob"] for o in outputs])
    labels = np.array([o["sample"].crossing_label for o in outputs])
    return aggregate_report(pred_px, gt_px, probs, labels)


def evaluate(model: Model, dataset: Dataset, samples=None):
    outputs = predict_dataset(model, dataset, samples)
    return report_from_outputs(outputs, model.cfg.image_size), outputs


def _batch_loss(model, dataset, batch, weights):
    with Tape() as tape:
        bundles = [model.forward_sample(s, dataset.map_for(s)) for s in batch]
        loss, parts = total_loss(bundles, _targets(batch), weights)
    tape.backward(loss)
    return parts


def train(model: Model, dataset: Dataset, cfg: TrainConfig,
          weights: LossWeights | None = None, log_path=None, callback=None):
    """Run the full protocol on ``dataset``; returns a TrainResult.

    The split is by pedestrian id (cfg.val_fraction). Action class weights
    are recomputed from the *training* split counts.
    """
    from .optim import PlateauScheduler, RMSProp

    cfg.validate()
    train_samples, val_samples = split_by_track(dataset.samples, cfg.val_fraction)
    if not train_samples:
        raise MetricError("training split is empty")
    base = weights or LossWeights.for_profile(cfg.profile)
    n_cross = sum(s.crossing_label for s in train_samples)
    weights = base.with_class_counts(n_cross, len(train_samples) - n_cross)

    opt = RMSProp(model.store, cfg.learning_rate)
    sched = PlateauScheduler(cfg.learning_rate, cfg.lr_reduce_factor,
                             cfg.lr_patience, cfg.lr_threshold, cfg.lr_floor)
    result = TrainResult(train_samples=train_samples, val_samples=val_samples,
                         best_state=model.store.state(),
                         final_state=model.store.state())

    for epoch in range(1, cfg.epochs + 1):
        epoch_start_state = model.store.state()
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, epoch])
        ).permutation(len(train_samples))
        sums = np.zeros(4)  # total, traj, act, dl weighted by batch size
        seen = 0
        try:
            for lo in range(0, len(order), cfg.batch_size):
                batch = [train_samples[i] for i in order[lo:lo + cfg.batch_size]]
                model.store.zero_grad()
                parts = _batch_loss(model, dataset, batch, weights)
                opt.step(grad_clip=cfg.grad_clip)
                sums += len(batch) * np.array(
                    [parts.total, parts.trajectory, parts.action, parts.discrete])
                seen += len(batch)
        except NonFiniteError as err:
            model.store.load_state(epoch_start_state)
            result.final_state = epoch_start_state
            result.aborted = True
            result.abort_reason = f"epoch {epoch}: {err}"
            break

        train_loss, traj, act, dl = sums / seen
        eval_samples = val_samples or train_samples
        report, outputs = evaluate(model, dataset, eval_samples)
        if val_samples:
            _, val_parts = _eval_loss(model, dataset, val_samples, weights)
            val_loss = val_parts.total
        else:
            val_loss = train_loss

        row = EpochRow(epoch=epoch, lr=opt.lr, train_loss=float(train_loss),
                       traj_loss=float(traj), act_loss=float(act),
                       dl_loss=float(dl), val_loss=float(val_loss),
                       report=report)
        result.rows.append(row)
        if val_loss < result.best_val:
            result.best_val = float(val_loss)
            result.best_epoch = epoch
            result.best_state = model.store.state()
        opt.lr = sched.observe(val_loss)
        if callback:
            callback(row)

    if not result.aborted:
        result.final_state = model.store.state()
    if log_path:
        result.write_csv(log_path)
    return result


def _eval_loss(model, dataset, samples, weights):
    bundles = [model.forward_sample(s, dataset.map_for(s)) for s in samples]
    return total_loss(bundles, _targets(samples), weights)
