"""Class-weighted binary cross-entropy and segmentation metrics.

The loss weights come from pixel statistics of the training masks:
"as_written" puts the foreground pixel fraction on the foreground term
(w1 = N_fg / N, w0 = N_bg / N); "inverse_frequency" swaps them so the
rare class carries the larger weight. Metrics treat grain (1) as the
positive class.
"""

import json
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, make_node

CLAMP_EPS = 1e-7
METRIC_NAMES = ("accuracy", "recall", "precision", "f1", "jaccard")


@dataclass
class ClassWeights:
    w0: float
    w1: float
    mode: str = "as_written"


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def compute_class_weights(masks, mode: str = "as_written") -> ClassWeights:
    if mode not in ("as_written", "inverse_frequency"):
        raise ValueError(f"unknown weight mode {mode!r}")
    masks = list(masks)
    if not masks:
        raise ValueError("no masks given")
    n_fg = 0
    n_total = 0
    for m in masks:
        arr = np.asarray(m)
        n_fg += int((arr > 0).sum())
        n_total += arr.size
    n_bg = n_total - n_fg
    if n_fg == 0 or n_bg == 0:
        raise ValueError(
            "degenerate training set: only one class present across all masks")
    fg_frac = n_fg / n_total
    if mode == "as_written":
        return ClassWeights(w0=1.0 - fg_frac, w1=fg_frac, mode=mode)
    return ClassWeights(w0=fg_frac, w1=1.0 - fg_frac, mode=mode)


def weighted_bce(pred: Tensor, target, weights: ClassWeights) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, np.float32)
    if pred.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {t.shape}")
    p = np.clip(pred.data, CLAMP_EPS, 1.0 - CLAMP_EPS)
    w0 = np.float32(weights.w0)
    w1 = np.float32(weights.w1)
    per_pixel = -w1 * t * np.log(p) - w0 * (1.0 - t) * np.log(1.0 - p)
    loss = np.array([per_pixel.mean()], np.float32)
    m = t.size

    def backward(g):
        inside = (pred.data > CLAMP_EPS) & (pred.data < 1.0 - CLAMP_EPS)
        dp = (-w1 * t / p + w0 * (1.0 - t) / (1.0 - p)) / m
        return ((g.reshape(-1)[0] * dp * inside).astype(np.float32),)

    return make_node(loss, (pred,), backward)


def confusion_counts(pred_mask, gt_mask) -> ConfusionCounts:
    p = np.asarray(pred_mask) > 0
    g = np.asarray(gt_mask) > 0
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    tn = int(np.sum(~p & ~g))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num, den, both_empty):
    # 0/0 resolves to 1.0 only when prediction and truth are both empty
    if den == 0:
        return 1.0 if both_empty else 0.0
    return num / den


def segmentation_metrics(c: ConfusionCounts) -> dict:
    if c.total <= 0:
        raise ValueError("no pixels to evaluate")
    both_empty = (c.tp + c.fp == 0) and (c.tp + c.fn == 0)
    precision = _ratio(c.tp, c.tp + c.fp, both_empty)
    recall = _ratio(c.tp, c.tp + c.fn, both_empty)
    f1 = _ratio(2.0 * precision * recall, precision + recall, both_empty)
    accuracy = (c.tp + c.tn) / c.total
    jaccard = _ratio(c.tp, c.tp + c.fp + c.fn, both_empty)
    return {"accuracy": accuracy, "recall": recall, "precision": precision,
            "f1": f1, "jaccard": jaccard}


@dataclass
class MetricsReport:
    per_image: list   # [(image_id, {metric: value})]
    aggregate: dict   # {metric: {"min","max","avg","std"}}

    def to_json(self) -> str:
        doc = {
            "per_image": [{"id": img_id, **row} for img_id, row in self.per_image],
            "aggregate": self.aggregate,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        per_image = [(row["id"], {k: row[k] for k in METRIC_NAMES})
                     for row in doc["per_image"]]
        return cls(per_image=per_image, aggregate=doc["aggregate"])


def aggregate_report(rows) -> MetricsReport:
    rows = list(rows)
    if not rows:
        raise ValueError("no metric rows to aggregate")
    aggregate = {}
    for name in METRIC_NAMES:
        vals = np.array([row[name] for _, row in rows], np.float64)
        aggregate[name] = {
            "min": float(vals.min()),
            "max": float(vals.max()),
            "avg": float(vals.mean()),
            "std": float(vals.std()),  # population std, matching single-row std 0
        }
    return MetricsReport(per_image=rows, aggregate=aggregate)
