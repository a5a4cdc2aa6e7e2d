"""Change-type encoding.

A pixel pair (source class ``a``, destination class ``b``) maps to a single
integer change code.  Every unchanged pair collapses to code 0; the ``L*(L-1)``
ordered changed pairs take codes ``1..N-1`` in lexicographic ``(src, dst)``
order with the diagonal skipped, so ``N = L**2 - L + 1``.

For ``L = 7``::

    0 -> no change, 1 -> (0,1), ..., 6 -> (0,6), 7 -> (1,0), 8 -> (1,2), ...
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DataError

#: Tag written next to change rasters so readers know how codes were assigned.
ORDERING_TAG = "lexicographic-offdiagonal-v1"

NO_CHANGE_NAME = "no_change"


def max_change_types(n_classes: int) -> int:
    """Number of change types for ``n_classes`` land classes (``L**2 - L + 1``)."""
    n_classes = int(n_classes)
    if n_classes < 1:
        raise DataError(f"need at least one land class, got {n_classes}")
    return n_classes * n_classes - n_classes + 1


@dataclass(frozen=True)
class LandClassSet:
    """Dense set of land classes ``0..count-1`` with display names."""

    count: int
    names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        if int(self.count) < 1:
            raise DataError(f"need at least one land class, got {self.count}")
        object.__setattr__(self, "count", int(self.count))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"class_{i}" for i in range(self.count)))
        else:
            names = tuple(str(n) for n in self.names)
            if len(names) != self.count:
                raise DataError(f"expected {self.count} class names, got {len(names)}")
            if len(set(names)) != len(names):
                raise DataError(f"class names must be distinct: {list(names)}")
            object.__setattr__(self, "names", names)

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "LandClassSet":
        return cls(len(names), tuple(names))

    def __len__(self) -> int:
        return self.count

    def name(self, class_id: int) -> str:
        return self.names[class_id]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown class name {name!r}") from None


@dataclass(frozen=True)
class ChangeCodec:
    """Bijection between ordered class pairs and change codes ``0..n_types-1``."""

    classes: LandClassSet

    @classmethod
    def for_classes(cls, n_classes: int, names: Optional[Sequence[str]] = None) -> "ChangeCodec":
        return cls(LandClassSet(n_classes, tuple(names or ())))

    @property
    def n_classes(self) -> int:
        return self.classes.count

    @property
    def n_types(self) -> int:
        return max_change_types(self.classes.count)

    @property
    def ordering(self) -> str:
        return ORDERING_TAG

    def _check_class(self, value: int, role: str) -> int:
        value = int(value)
        if not 0 <= value < self.n_classes:
            raise DataError(f"{role} class {value} out of range 0..{self.n_classes - 1}")
        return value

    def encode(self, src_class: int, dst_class: int) -> int:
        a = self._check_class(src_class, "source")
        b = self._check_class(dst_class, "destination")
        if a == b:
            return 0
        return 1 + a * (self.n_classes - 1) + (b if b < a else b - 1)

    def decode(self, code: int) -> Optional[Tuple[int, int]]:
        """Inverse of :meth:`encode`; returns ``None`` for the no-change code."""
        code = int(code)
        if not 0 <= code < self.n_types:
            raise DataError(f"change code {code} out of range 0..{self.n_types - 1}")
        if code == 0:
            return None
        src, rest = divmod(code - 1, self.n_classes - 1)
        return src, rest if rest < src else rest + 1

    def type_name(self, code: int) -> str:
        pair = self.decode(code)
        if pair is None:
            return NO_CHANGE_NAME
        return f"{self.classes.name(pair[0])}->{self.classes.name(pair[1])}"

    def encode_array(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`encode`; inputs are assumed already range-checked."""
        s = np.asarray(src, dtype=np.int64)
        d = np.asarray(dst, dtype=np.int64)
        codes = 1 + s * (self.n_classes - 1) + d - (d > s)
        return np.where(s == d, 0, codes).astype(np.uint16 if self.n_types <= 65536 else np.uint32)

    def decode_array(self, codes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorised :meth:`decode` for changed codes only (``codes >= 1``).

        Entries equal to 0 decode to ``(-1, -1)`` because the class is lost.
        """
        c = np.asarray(codes, dtype=np.int64)
        if self.n_classes == 1:
            neg = np.full(c.shape, -1, dtype=np.int64)
            return neg, neg.copy()
        src, rest = np.divmod(c - 1, self.n_classes - 1)
        dst = rest + (rest >= src)
        unchanged = c == 0
        src[unchanged] = -1
        dst[unchanged] = -1
        return src, dst

    def all_pairs(self):
        """Yield ``(code, (src, dst))`` for every changed type, in code order."""
        for code in range(1, self.n_types):
            yield code, self.decode(code)

    def metadata(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_types": self.n_types,
            "ordering": ORDERING_TAG,
            "class_names": list(self.classes.names),
        }


def first_bad_pixel(mask: np.ndarray) -> Tuple[int, ...]:
    """Coordinates (row, col) of the first True entry of ``mask`` in raster order."""
    return tuple(int(v) for v in np.argwhere(mask)[0])


def change_map(src, dst, codec: Optional[ChangeCodec] = None):
    """Per-pixel change codes for a co-registered pair of label rasters.

    ``src`` and ``dst`` may be :class:`~scpa.rasters.LabelRaster` objects or
    plain integer arrays (then ``codec`` is required).  Returns a
    :class:`~scpa.rasters.ChangeRaster`.
    """
    from .rasters import ChangeRaster, LabelRaster

    if codec is None:
        if not isinstance(src, LabelRaster):
            raise DataError("a codec is required when passing bare arrays")
        codec = ChangeCodec(src.classes)
    s = src.data if isinstance(src, LabelRaster) else np.asarray(src)
    d = dst.data if isinstance(dst, LabelRaster) else np.asarray(dst)
    for r in (src, dst):
        if isinstance(r, LabelRaster) and r.classes.count != codec.n_classes:
            raise DataError(
                f"label raster has {r.classes.count} classes but codec expects {codec.n_classes}"
            )
    if s.shape != d.shape:
        raise DataError(f"dimension mismatch: source {s.shape} vs destination {d.shape}")
    for arr, role in ((s, "source"), (d, "destination")):
        bad = (arr < 0) | (arr >= codec.n_classes)
        if bad.any():
            pos = first_bad_pixel(bad)
            raise DataError(
                f"{role} pixel {pos} has class {int(arr[pos])}, "
                f"outside 0..{codec.n_classes - 1}"
            )
    return ChangeRaster(codec.encode_array(s, d), codec)
