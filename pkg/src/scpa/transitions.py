"""Land-class distributions and source->destination transition matrices."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .codec import ChangeCodec, LandClassSet
from .errors import DataError
from .rasters import ChangeRaster, LabelRaster


@dataclass
class ClassDistribution:
    classes: LandClassSet
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.classes.count,):
            raise DataError(f"expected {self.classes.count} class counts, got shape {self.counts.shape}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def proportions(self) -> np.ndarray:
        if self.total == 0:
            raise DataError("distribution is empty")
        return self.counts / self.total

    def to_dict(self) -> dict:
        props = self.proportions
        return {
            "total": self.total,
            "classes": [
                {"id": i, "name": self.classes.name(i), "count": int(self.counts[i]), "proportion": float(props[i])}
                for i in range(self.classes.count)
            ],
        }


def class_distribution(r: LabelRaster) -> ClassDistribution:
    if r.data.size == 0:
        raise DataError("raster is empty")
    return ClassDistribution(r.classes, np.bincount(r.data.ravel(), minlength=r.classes.count))


@dataclass
class TransitionMatrix:
    """``counts[i, j]`` = pixels going from source class ``i`` to destination class ``j``.

    When built from a change raster without class information for unchanged
    pixels, the diagonal stays zero and those pixels are kept in
    ``unattributed_unchanged``.
    """

    classes: LandClassSet
    counts: np.ndarray
    unattributed_unchanged: int = 0

    def __post_init__(self):
        L = self.classes.count
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (L, L):
            raise DataError(f"transition matrix must be {L}x{L}, got {self.counts.shape}")

    @property
    def total_pixels(self) -> int:
        return int(self.counts.sum()) + self.unattributed_unchanged

    @property
    def unchanged(self) -> int:
        return int(np.trace(self.counts)) + self.unattributed_unchanged

    def off_diagonal(self) -> np.ndarray:
        return self.counts - np.diag(np.diag(self.counts))

    def __add__(self, other: "TransitionMatrix") -> "TransitionMatrix":
        if self.classes.count != other.classes.count:
            raise DataError("cannot merge transition matrices over different class sets")
        return TransitionMatrix(
            self.classes,
            self.counts + other.counts,
            self.unattributed_unchanged + other.unattributed_unchanged,
        )

    def __eq__(self, other):
        return (
            isinstance(other, TransitionMatrix)
            and self.classes.count == other.classes.count
            and np.array_equal(self.counts, other.counts)
            and self.unattributed_unchanged == other.unattributed_unchanged
        )


def transition_matrix(src: LabelRaster, dst: LabelRaster) -> TransitionMatrix:
    if src.shape != dst.shape:
        raise DataError(f"dimension mismatch: source {src.shape} vs destination {dst.shape}")
    if src.classes.count != dst.classes.count:
        raise DataError(
            f"class-set mismatch: source has {src.classes.count} classes, destination {dst.classes.count}"
        )
    L = src.classes.count
    flat = src.data.astype(np.int64).ravel() * L + dst.data.ravel()
    return TransitionMatrix(src.classes, np.bincount(flat, minlength=L * L).reshape(L, L))


def unchanged_distribution(src: LabelRaster, dst: LabelRaster) -> ClassDistribution:
    """Per-class counts of pixels whose class did not change."""
    if src.shape != dst.shape:
        raise DataError(f"dimension mismatch: source {src.shape} vs destination {dst.shape}")
    same = src.data == dst.data
    return ClassDistribution(src.classes, np.bincount(src.data[same], minlength=src.classes.count))


def transition_from_change_raster(
    cr: ChangeRaster,
    unchanged_dist: Optional[ClassDistribution] = None,
) -> TransitionMatrix:
    """Rebuild a transition matrix from change codes alone.

    Off-diagonal cells are exact.  Code 0 erases the class, so the diagonal is
    taken from ``unchanged_dist`` when given, otherwise the unchanged pixels
    are reported as one aggregate count.
    """
    codec = cr.codec
    L = codec.n_classes
    hist = np.bincount(cr.data.ravel(), minlength=codec.n_types)
    counts = np.zeros((L, L), dtype=np.int64)
    changed = np.arange(1, codec.n_types)
    if len(changed):
        s, d = codec.decode_array(changed)
        counts[s, d] = hist[1:]
    n_unchanged = int(hist[0])
    if unchanged_dist is None:
        return TransitionMatrix(codec.classes, counts, n_unchanged)
    if unchanged_dist.classes.count != L:
        raise DataError(f"unchanged distribution has {unchanged_dist.classes.count} classes, codec {L}")
    if unchanged_dist.total != n_unchanged:
        raise DataError(
            f"unchanged distribution sums to {unchanged_dist.total} but raster has {n_unchanged} unchanged pixels"
        )
    counts[np.arange(L), np.arange(L)] = unchanged_dist.counts
    return TransitionMatrix(codec.classes, counts)


AsymmetryRow = Tuple[int, int, int, int, float]


def asymmetry_report(tm: TransitionMatrix) -> List[AsymmetryRow]:
    """One row per unordered class pair ``(i, j, forward, reverse, ratio)``.

    Each row is oriented so ``forward >= reverse`` (the dominant direction comes
    first; ties keep ``i < j``).  Rows are sorted by ``forward - reverse``
    descending, then by class IDs.  ``ratio = forward / max(reverse, 1)``.
    """
    c = tm.counts
    L = tm.classes.count
    rows = []
    for i in range(L):
        for j in range(i + 1, L):
            a, b = int(c[i, j]), int(c[j, i])
            if b > a:
                rows.append((j, i, b, a))
            else:
                rows.append((i, j, a, b))
    rows.sort(key=lambda r: (-(r[2] - r[3]), min(r[0], r[1]), max(r[0], r[1])))
    return [(i, j, a, b, a / max(b, 1)) for i, j, a, b in rows]


def write_matrix_csv(tm: TransitionMatrix, path) -> None:
    names = list(tm.classes.names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src\\dst"] + names)
        for i, name in enumerate(names):
            w.writerow([name] + tm.counts[i].tolist())
        if tm.unattributed_unchanged:
            w.writerow(["unattributed_unchanged", tm.unattributed_unchanged])


def read_matrix_csv(path) -> TransitionMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    body = [r for r in rows[1:] if r and r[0] != "unattributed_unchanged"]
    extra = [int(r[1]) for r in rows[1:] if r and r[0] == "unattributed_unchanged"]
    counts = np.array([[int(v) for v in r[1:]] for r in body], dtype=np.int64)
    return TransitionMatrix(LandClassSet.from_names(names), counts, extra[0] if extra else 0)


def write_asymmetry_csv(tm: TransitionMatrix, path) -> None:
    names = tm.classes.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "src_name", "dst_name", "forward", "reverse", "ratio"])
        for i, j, a, b, ratio in asymmetry_report(tm):
            w.writerow([i, j, names[i], names[j], a, b, f"{ratio:.6g}"])


def write_distribution_json(dist: ClassDistribution, path) -> None:
    with open(path, "w") as fh:
        json.dump(dist.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
