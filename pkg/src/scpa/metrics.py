"""Change-type confusion matrix, per-type IoU, mean IoU and binary accuracy.

Confusions are value objects: ``accumulate`` returns a new matrix and two
matrices over the same codec merge with ``+``.  One accumulator per worker and
a final merge gives the same numbers as a single pass over all pixels.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Tuple

import numpy as np

from .codec import ChangeCodec
from .errors import DataError
from .rasters import ChangeRaster

PRESENCE_RULES = ("union", "truth-only")


@dataclass
class ChangeConfusion:
    """``counts[i, j]`` = pixels of true change type ``i`` predicted as ``j``."""

    codec: ChangeCodec
    counts: np.ndarray = None

    def __post_init__(self):
        n = self.codec.n_types
        if self.counts is None:
            self.counts = np.zeros((n, n), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (n, n):
                raise DataError(f"confusion must be {n}x{n}, got {self.counts.shape}")
            if (self.counts < 0).any():
                raise DataError("confusion counts must be non-negative")

    @property
    def n_types(self) -> int:
        return self.codec.n_types

    @property
    def total_pixels(self) -> int:
        return int(self.counts.sum())

    def _check_compatible(self, other: "ChangeConfusion"):
        if self.codec.n_classes != other.codec.n_classes:
            raise DataError(
                f"cannot merge confusions over {self.codec.n_classes} and {other.codec.n_classes} classes"
            )

    def __add__(self, other: "ChangeConfusion") -> "ChangeConfusion":
        self._check_compatible(other)
        return ChangeConfusion(self.codec, self.counts + other.counts)

    def __eq__(self, other):
        return (
            isinstance(other, ChangeConfusion)
            and self.codec.n_classes == other.codec.n_classes
            and np.array_equal(self.counts, other.counts)
        )

    def is_diagonal(self) -> bool:
        return not np.any(self.counts - np.diag(np.diag(self.counts)))


def merge(*confusions: ChangeConfusion) -> ChangeConfusion:
    if not confusions:
        raise DataError("nothing to merge")
    out = ChangeConfusion(confusions[0].codec)
    for c in confusions:
        out = out + c
    return out


def confusion_counts(truth: np.ndarray, pred: np.ndarray, n_types: int) -> np.ndarray:
    flat = truth.astype(np.int64).ravel() * n_types + pred.astype(np.int64).ravel()
    return np.bincount(flat, minlength=n_types * n_types).reshape(n_types, n_types)


def accumulate(conf: ChangeConfusion, truth: ChangeRaster, pred: ChangeRaster) -> ChangeConfusion:
    if truth.shape != pred.shape:
        raise DataError(f"dimension mismatch: truth {truth.shape} vs prediction {pred.shape}")
    for cr, role in ((truth, "truth"), (pred, "prediction")):
        if cr.codec.n_classes != conf.codec.n_classes:
            raise DataError(
                f"{role} raster uses {cr.codec.n_classes} classes, confusion expects {conf.codec.n_classes}"
            )
    return ChangeConfusion(conf.codec, conf.counts + confusion_counts(truth.data, pred.data, conf.n_types))


def _require_pixels(conf: ChangeConfusion):
    if conf.total_pixels == 0:
        raise DataError("confusion is empty; metrics are undefined")


def mean_iou(conf: ChangeConfusion, presence: str = "union") -> Tuple[float, Dict[int, float], List[int]]:
    """Mean IoU over the change types that appear.

    ``presence="union"`` counts a type as present when it occurs in the truth
    or the prediction; ``"truth-only"`` restricts to ground-truth types.  Types
    absent from both never enter the mean.
    """
    _require_pixels(conf)
    if presence not in PRESENCE_RULES:
        raise DataError(f"unknown presence rule {presence!r}; choose from {PRESENCE_RULES}")
    c = conf.counts
    inter = np.diag(c)
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    union = rows + cols - inter
    present_mask = rows > 0 if presence == "truth-only" else union > 0
    present = [int(i) for i in np.flatnonzero(present_mask)]
    # exact rationals, rounded once, so the mean carries no accumulated error
    ious = {i: Fraction(int(inter[i]), int(union[i])) for i in present}
    miou = float(sum(ious.values()) / len(present))
    return miou, {i: float(v) for i, v in ious.items()}, present


def binary_accuracy(conf: ChangeConfusion) -> Tuple[float, int, int, int, int]:
    """Accuracy after collapsing every nonzero code to "changed".

    Returns ``(bacc, tp, tn, fp, fn)``.
    """
    _require_pixels(conf)
    c = conf.counts
    tn = int(c[0, 0])
    fp = int(c[0, 1:].sum())
    fn = int(c[1:, 0].sum())
    tp = int(c[1:, 1:].sum())
    return (tp + tn) / conf.total_pixels, tp, tn, fp, fn


@dataclass
class MetricsReport:
    miou: float
    bacc: float
    per_type_iou: Dict[int, float]
    present_types: List[int]
    tp: int
    tn: int
    fp: int
    fn: int
    total_pixels: int
    presence: str = "union"
    codec: dict = field(default_factory=dict)

    @property
    def n_present(self) -> int:
        return len(self.present_types)

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "bacc": self.bacc,
            "per_type_iou": {str(k): v for k, v in sorted(self.per_type_iou.items())},
            "present_types": list(self.present_types),
            "n_present": self.n_present,
            "tp": self.tp,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
            "total_pixels": self.total_pixels,
            "presence": self.presence,
            "codec": self.codec,
        }


def report(conf: ChangeConfusion, presence: str = "union") -> MetricsReport:
    miou, per_type, present = mean_iou(conf, presence)
    bacc, tp, tn, fp, fn = binary_accuracy(conf)
    return MetricsReport(
        miou=miou,
        bacc=bacc,
        per_type_iou=per_type,
        present_types=present,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
        total_pixels=conf.total_pixels,
        presence=presence,
        codec=conf.codec.metadata(),
    )


def write_report_json(rep: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_confusion_csv(conf: ChangeConfusion, path) -> None:
    """Confusion as CSV: header row of predicted codes, first column of true codes."""
    n = conf.n_types
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["truth\\pred"] + list(range(n)))
        for i in range(n):
            w.writerow([i] + conf.counts[i].tolist())


def read_confusion_csv(path, codec: ChangeCodec) -> ChangeConfusion:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    return ChangeConfusion(codec, counts)
