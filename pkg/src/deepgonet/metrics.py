"""Confusion counts, F1 and Matthews correlation for multi-label predictions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, ShapeError
from .ontology import TermDictionary


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """A label is called when its probability strictly exceeds ``threshold``."""
    return (np.asarray(probs) > threshold).astype(np.uint8)


def confusion(pred: np.ndarray, target: np.ndarray) -> tuple[ConfusionCounts, list[ConfusionCounts]]:
    """Micro counts over every (sample, label) decision, plus one count per label column."""
    pred = np.asarray(pred).astype(bool)
    target = np.asarray(target).astype(bool)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeError(f"confusion shape mismatch: {pred.shape} vs {target.shape}")
    tp = (pred & target).sum(axis=0)
    fp = (pred & ~target).sum(axis=0)
    tn = (~pred & ~target).sum(axis=0)
    fn = (~pred & target).sum(axis=0)
    per_label = [ConfusionCounts(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(tp, fp, tn, fn)]
    micro = ConfusionCounts(int(tp.sum()), int(fp.sum()), int(tn.sum()), int(fn.sum()))
    return micro, per_label


def f1(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0 or c.tp + c.fn == 0:
        return 0.0
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def mcc(c: ConfusionCounts) -> float:
    # python ints do not overflow, so the product is exact before the sqrt
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


@dataclass(frozen=True)
class LabelScore:
    index: int
    term_id: str
    name: str
    counts: ConfusionCounts
    f1: float
    mcc: float


@dataclass(frozen=True)
class EvalReport:
    threshold: float
    counts: ConfusionCounts
    f1: float
    mcc: float
    per_label: tuple[LabelScore, ...]
    n_samples: int
    namespace: str = ""

    @property
    def macro_f1(self) -> float:
        return float(np.mean([s.f1 for s in self.per_label])) if self.per_label else 0.0

    @property
    def macro_mcc(self) -> float:
        return float(np.mean([s.mcc for s in self.per_label])) if self.per_label else 0.0

    def to_text(self) -> str:
        c = self.counts
        lines = [
            f"namespace\t{self.namespace}",
            f"samples\t{self.n_samples}",
            f"labels\t{len(self.per_label)}",
            f"threshold\t{self.threshold:.6g}",
            f"micro_counts\ttp={c.tp}\tfp={c.fp}\ttn={c.tn}\tfn={c.fn}",
            f"micro_f1\t{self.f1:.6f}",
            f"micro_mcc\t{self.mcc:.6f}",
            f"macro_f1\t{self.macro_f1:.6f}",
            f"macro_mcc\t{self.macro_mcc:.6f}",
            "",
        ]
        lines.append(self.to_tsv().rstrip("\n"))
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> str:
        rows = ["index\tterm\tname\ttp\tfp\ttn\tfn\tf1\tmcc"]
        for s in self.per_label:
            k = s.counts
            rows.append(f"{s.index}\t{s.term_id}\t{s.name}\t{k.tp}\t{k.fp}\t{k.tn}\t{k.fn}"
                        f"\t{s.f1:.6f}\t{s.mcc:.6f}")
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        obj = {
            "namespace": self.namespace, "samples": self.n_samples,
            "threshold": self.threshold, "counts": vars(self.counts),
            "micro_f1": self.f1, "micro_mcc": self.mcc,
            "macro_f1": self.macro_f1, "macro_mcc": self.macro_mcc,
            "per_label": [{"index": s.index, "term": s.term_id, "name": s.name,
                           "counts": vars(s.counts), "f1": s.f1, "mcc": s.mcc}
                          for s in self.per_label],
        }
        return json.dumps(obj, indent=2) + "\n"


def score_predictions(probs: np.ndarray, target: np.ndarray, threshold: float = 0.5,
                      dictionary: TermDictionary | None = None) -> EvalReport:
    pred = binarize(probs, threshold)
    micro, per_label = confusion(pred, target)
    ids = dictionary.term_ids if dictionary else tuple(str(i) for i in range(len(per_label)))
    names = dictionary.names if dictionary else ("",) * len(per_label)
    labels = tuple(LabelScore(i, ids[i], names[i], c, f1(c), mcc(c))
                   for i, c in enumerate(per_label))
    return EvalReport(threshold, micro, f1(micro), mcc(micro), labels, int(pred.shape[0]),
                      dictionary.namespace if dictionary else "")


def evaluate(model, dataset, threshold: float = 0.5, batch_size: int = 128) -> EvalReport:
    """Eval-mode forward over ``dataset`` in row order, then threshold and score."""
    if len(dataset) == 0:
        raise DatasetError("cannot evaluate an empty dataset")
    model.check_dataset(dataset)
    probs = model.predict_proba(dataset.indices, dataset.mask, batch_size=batch_size)
    return score_predictions(probs, dataset.labels, threshold, dataset.dictionary)
