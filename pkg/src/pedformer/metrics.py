"""Evaluation metrics, all pure numpy, all in pixel space.

ADE/FDE use box-center Euclidean distance; ARB/FRB use per-step RMSE over
the four box coordinates; FIoU is final-box intersection over union. The
classifier block reports accuracy/F1/precision at 0.5 and a rank-based AUC
(Mann-Whitney normalization, ties get half credit). AUC is ``None`` when a
batch contains a single class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

CSV_HEADER = "ade,fde,arb,frb,fiou,acc,auc,f1,prec"


class MetricError(Exception):
    pass


def ade_fde(pred_boxes, gt_boxes):
    """(n, tau, 4) pixel boxes -> mean / final center displacement."""
    pred = np.asarray(pred_boxes, dtype=np.float64)
    gt = np.asarray(gt_boxes, dtype=np.float64)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if pred.shape != gt.shape or pred.shape[-1] != 4 or pred.shape[1] < 1:
        raise MetricError(f"bad trajectory shapes {pred.shape} vs {gt.shape}")
    pc = np.stack([(pred[..., 0] + pred[..., 2]) / 2, (pred[..., 1] + pred[..., 3]) / 2], axis=-1)
    gc = np.stack([(gt[..., 0] + gt[..., 2]) / 2, (gt[..., 1] + gt[..., 3]) / 2], axis=-1)
    dist = np.sqrt(((pc - gc) ** 2).sum(axis=-1))  # (n, tau)
    return float(dist.mean()), float(dist[:, -1].mean())


def arb_frb(pred_boxes, gt_boxes):
    """Per-step RMSE over the 4 coordinates; mean over steps / final step."""
    pred = np.asarray(pred_boxes, dtype=np.float64)
    gt = np.asarray(gt_boxes, dtype=np.float64)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if pred.shape != gt.shape or pred.shape[-1] != 4 or pred.shape[1] < 1:
        raise MetricError(f"bad trajectory shapes {pred.shape} vs {gt.shape}")
    rmse = np.sqrt(((pred - gt) ** 2).mean(axis=-1))  # (n, tau)
    return float(rmse.mean()), float(rmse[:, -1].mean())


def fiou(box_a, box_b):
    """Intersection over union of two boxes; disjoint -> 0, identical -> 1."""
    a = np.asarray(box_a, dtype=np.float64)
    b = np.asarray(box_b, dtype=np.float64)
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    union = area_a + area_b - inter
    if union <= 0.0:
        raise MetricError(f"degenerate boxes for IoU: {a.tolist()} / {b.tolist()}")
    return float(inter / union)


def auc_score(probs, labels):
    """Rank-based AUC with average ranks (half credit for ties); None if a
    single class is present."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(probs, kind="stable")
    ranks = np.empty(len(probs))
    sorted_p = probs[order]
    i = 0
    while i < len(sorted_p):
        j = i
        while j + 1 < len(sorted_p) and sorted_p[j + 1] == sorted_p[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    pos_ranks = ranks[labels == 1].sum()
    return float((pos_ranks - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classification_metrics(probs, labels, threshold=0.5):
    """(accuracy, auc, f1, precision) at the given threshold."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(probs) == 0 or len(probs) != len(labels):
        raise MetricError(f"bad classification inputs: {len(probs)} probs, {len(labels)} labels")
    pred = (probs >= threshold).astype(np.int64)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    accuracy = float((pred == labels).mean())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, auc_score(probs, labels), float(f1), float(precision)


@dataclass
class MetricReport:
    ade: float
    fde: float
    arb: float
    frb: float
    fiou: float
    accuracy: float
    auc: float | None
    f1: float
    precision: float
    n_samples: int = 0
    skipped_degenerate: int = 0

    def to_json(self):
        return json.dumps(
            {
                "ade": self.ade, "fde": self.fde, "arb": self.arb,
                "frb": self.frb, "fiou": self.fiou, "accuracy": self.accuracy,
                "auc": self.auc, "f1": self.f1, "precision": self.precision,
                "n_samples": self.n_samples,
                "skipped_degenerate": self.skipped_degenerate,
            },
            indent=2,
        )

    def to_csv(self):
        auc = "" if self.auc is None else repr(self.auc)
        vals = [repr(v) for v in (self.ade, self.fde, self.arb, self.frb,
                                  self.fiou, self.accuracy)]
        tail = [repr(v) for v in (self.f1, self.precision)]
        return CSV_HEADER + "\n" + ",".join(vals + [auc] + tail) + "\n"


def aggregate_report(pred_boxes_px, gt_boxes_px, probs, labels):
    """Build a MetricReport from aligned batches of pixel-space predictions."""
    pred = np.asarray(pred_boxes_px, dtype=np.float64)
    gt = np.asarray(gt_boxes_px, dtype=np.float64)
    if len(pred) == 0:
        raise MetricError("empty evaluation batch")
    ade, fde = ade_fde(pred, gt)
    arb, frb = arb_frb(pred, gt)
    ious, skipped = [], 0
    for p, g in zip(pred, gt):
        try:
            ious.append(fiou(p[-1], g[-1]))
        except MetricError:
            skipped += 1
    accuracy, auc, f1, precision = classification_metrics(probs, labels)
    return MetricReport(
        ade=ade, fde=fde, arb=arb, frb=frb,
        fiou=float(np.mean(ious)) if ious else 0.0,
        accuracy=accuracy, auc=auc, f1=f1, precision=precision,
        n_samples=len(pred), skipped_degenerate=skipped,
    )
