"""Dataset preparation: tiling, train/val/test splits, pair checks, synthetic pairs.

Dataset directories share one layout::

    <root>/src_img/<stem>.png   source RGB image
    <root>/dst_img/<stem>.png   destination RGB image
    <root>/src_lbl/<stem>.png   source class IDs (8-bit gray)
    <root>/dst_lbl/<stem>.png   destination class IDs
    <root>/manifest.json        optional split manifest
    <root>/palette.txt          optional palette
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .codec import LandClassSet
from .errors import DataError
from .rasters import (
    LabelRaster,
    Palette,
    load_image,
    load_label_raster,
    save_image,
    save_label_raster,
)

log = logging.getLogger(__name__)

SUBDIRS = ("src_img", "dst_img", "src_lbl", "dst_lbl")
DEFAULT_FRACTIONS = (Fraction(1, 2), Fraction(1, 6), Fraction(1, 3))
SPLITS = ("train", "val", "test")
SPLIT_POLICY = "floor(train), floor(val), remainder->test"


# ---------------------------------------------------------------- tiling

@dataclass
class TileGrid:
    tile_size: int
    tiles: List[Tuple[str, int, int]] = field(default_factory=list)  # (tile_id, x, y)

    def __len__(self):
        return len(self.tiles)


@dataclass
class Tile:
    tile_id: str
    x: int
    y: int
    src_image: np.ndarray
    dst_image: np.ndarray
    src_labels: LabelRaster
    dst_labels: LabelRaster


def tile(
    src_image: np.ndarray,
    dst_image: np.ndarray,
    src_labels: LabelRaster,
    dst_labels: LabelRaster,
    tile_size: int = 512,
    stem: str = "tile",
) -> Tuple[List[Tile], TileGrid]:
    """Cut a co-registered quadruple into aligned ``tile_size`` squares.

    Remainder strips on the right and bottom are dropped.  Tile IDs are
    ``<stem>_<y>_<x>`` with pixel offsets.
    """
    if tile_size < 1:
        raise DataError(f"tile size must be >= 1, got {tile_size}")
    shapes = {
        "source image": np.shape(src_image)[:2],
        "destination image": np.shape(dst_image)[:2],
        "source labels": src_labels.shape,
        "destination labels": dst_labels.shape,
    }
    if len(set(shapes.values())) != 1:
        raise DataError("dimension mismatch: " + ", ".join(f"{k} {v}" for k, v in shapes.items()))
    h, w = src_labels.shape
    grid = TileGrid(tile_size)
    tiles: List[Tile] = []
    if tile_size > h or tile_size > w:
        log.warning("tile size %d exceeds image %dx%d; no tiles produced", tile_size, w, h)
        return tiles, grid
    for y in range(0, h - tile_size + 1, tile_size):
        for x in range(0, w - tile_size + 1, tile_size):
            sl = np.s_[y : y + tile_size, x : x + tile_size]
            tid = f"{stem}_{y}_{x}"
            grid.tiles.append((tid, x, y))
            tiles.append(
                Tile(
                    tid,
                    x,
                    y,
                    np.array(src_image[sl]),
                    np.array(dst_image[sl]),
                    LabelRaster(src_labels.data[sl].copy(), src_labels.classes),
                    LabelRaster(dst_labels.data[sl].copy(), dst_labels.classes),
                )
            )
    return tiles, grid


def write_pair(root, stem: str, src_image, dst_image, src_labels: LabelRaster, dst_labels: LabelRaster) -> None:
    root = Path(root)
    for sub in SUBDIRS:
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_image(src_image, root / "src_img" / f"{stem}.png")
    save_image(dst_image, root / "dst_img" / f"{stem}.png")
    save_label_raster(src_labels, root / "src_lbl" / f"{stem}.png")
    save_label_raster(dst_labels, root / "dst_lbl" / f"{stem}.png")


def write_tiles(tiles: Sequence[Tile], root) -> None:
    for t in tiles:
        write_pair(root, t.tile_id, t.src_image, t.dst_image, t.src_labels, t.dst_labels)


def dataset_stems(root) -> List[str]:
    lbl = Path(root) / "src_lbl"
    if not lbl.is_dir():
        raise FileNotFoundError(f"{lbl} does not exist")
    return sorted(p.stem for p in lbl.glob("*.png"))


def load_pair(root, stem: str, classes, with_images: bool = True):
    """Load ``(src_image, dst_image, src_labels, dst_labels)`` for one stem."""
    root = Path(root)
    src_lbl = load_label_raster(root / "src_lbl" / f"{stem}.png", classes)
    dst_lbl = load_label_raster(root / "dst_lbl" / f"{stem}.png", classes)
    if not with_images:
        return None, None, src_lbl, dst_lbl
    return (
        load_image(root / "src_img" / f"{stem}.png"),
        load_image(root / "dst_img" / f"{stem}.png"),
        src_lbl,
        dst_lbl,
    )


# ---------------------------------------------------------------- splits

def parse_fractions(text: str) -> Tuple[Fraction, Fraction, Fraction]:
    try:
        parts = tuple(Fraction(p.strip()) for p in text.split(","))
    except (ValueError, ZeroDivisionError):
        raise DataError(f"cannot parse fractions {text!r}") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) != 1:
        raise DataError(f"need three non-negative fractions summing to 1, got {text!r}")
    return parts


@dataclass
class SplitManifest:
    seed: int
    assignments: Dict[str, str]
    fractions: Tuple[Fraction, Fraction, Fraction] = DEFAULT_FRACTIONS

    def ids(self, split: str) -> List[str]:
        return sorted(k for k, v in self.assignments.items() if v == split)

    def counts(self) -> Dict[str, int]:
        return {s: sum(1 for v in self.assignments.values() if v == s) for s in SPLITS}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fractions": [str(f) for f in self.fractions],
            "policy": SPLIT_POLICY,
            "counts": self.counts(),
            "assignments": dict(sorted(self.assignments.items())),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SplitManifest":
        with open(path) as fh:
            d = json.load(fh)
        bad = {v for v in d["assignments"].values()} - set(SPLITS)
        if bad:
            raise DataError(f"{path}: unknown split names {sorted(bad)}")
        return cls(d["seed"], d["assignments"], tuple(Fraction(f) for f in d["fractions"]))


def split(tile_ids: Sequence[str], seed: int, fractions=DEFAULT_FRACTIONS) -> SplitManifest:
    """Seeded random train/val/test assignment.

    Train and val get ``floor(n * f)`` items, test takes the remainder.  IDs
    are sorted before shuffling so the listing order does not matter.
    """
    ids = sorted(tile_ids)
    if not ids:
        raise DataError("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise DataError("tile ids must be unique")
    fractions = tuple(Fraction(f) for f in fractions)
    n = len(ids)
    n_train = math.floor(n * fractions[0])
    n_val = math.floor(n * fractions[1])
    order = np.random.default_rng(seed).permutation(n)
    assignments = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            assignments[ids[idx]] = "train"
        elif rank < n_train + n_val:
            assignments[ids[idx]] = "val"
        else:
            assignments[ids[idx]] = "test"
    return SplitManifest(int(seed), assignments, fractions)


# ---------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    findings: List[str]
    unchanged_fraction: Optional[float] = None
    per_class_unchanged: Dict[str, Optional[float]] = field(default_factory=dict)
    unchanged_pixels: Optional[int] = None

    @property
    def ok(self) -> bool:
        return not self.findings

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "findings": list(self.findings),
            "unchanged_fraction": self.unchanged_fraction,
            "unchanged_pixels": self.unchanged_pixels,
            "per_class_unchanged": self.per_class_unchanged,
        }


def validate_pair(
    src,
    dst,
    classes: Optional[LandClassSet] = None,
    src_image: Optional[np.ndarray] = None,
    dst_image: Optional[np.ndarray] = None,
    palette: Optional[Palette] = None,
) -> ValidationReport:
    """Collect consistency findings for a label pair instead of raising.

    ``src``/``dst`` may be :class:`LabelRaster` or raw integer arrays.
    """
    findings: List[str] = []
    if classes is None:
        classes = src.classes if isinstance(src, LabelRaster) else palette.classes if palette else None
    if classes is None:
        raise DataError("validate_pair needs a class set, a palette, or LabelRaster inputs")
    s = src.data if isinstance(src, LabelRaster) else np.asarray(src)
    d = dst.data if isinstance(dst, LabelRaster) else np.asarray(dst)
    for r, role in ((src, "source"), (dst, "destination")):
        if isinstance(r, LabelRaster) and r.classes.count != classes.count:
            findings.append(f"{role} labels use {r.classes.count} classes, expected {classes.count}")
    if s.shape != d.shape:
        findings.append(f"label dimension mismatch: source {s.shape} vs destination {d.shape}")
    for img, role in ((src_image, "source"), (dst_image, "destination")):
        if img is not None and np.shape(img)[:2] != s.shape:
            findings.append(f"{role} image is {np.shape(img)[:2]}, labels are {s.shape}")
    for arr, role in ((s, "source"), (d, "destination")):
        bad = (arr < 0) | (arr >= classes.count)
        if bad.any():
            pos = tuple(int(v) for v in np.argwhere(bad)[0])
            findings.append(
                f"{role} labels: {int(bad.sum())} pixels outside 0..{classes.count - 1}, first at {pos}"
            )
    if palette is not None and len(palette) < classes.count:
        findings.append(f"palette covers {len(palette)} classes, need {classes.count}")
    report = ValidationReport(findings)
    if s.shape == d.shape and s.size:
        same = s == d
        report.unchanged_pixels = int(same.sum())
        report.unchanged_fraction = float(same.mean())
        for c in range(classes.count):
            in_src = s == c
            n = int(in_src.sum())
            report.per_class_unchanged[classes.name(c)] = float((same & in_src).sum() / n) if n else None
    return report


# ---------------------------------------------------------------- synthetic data

@dataclass
class SynthSpec:
    """Parameters of the synthetic pair generator.

    ``colors`` defaults to the first ``n_classes`` default palette colors.
    ``noise`` is the standard deviation of additive Gaussian pixel noise in
    0..255 units.  ``n_pairs`` is only used when writing a whole dataset.
    """

    height: int = 256
    width: int = 256
    n_classes: int = 4
    n_regions: int = 8
    change_budget: float = 0.3
    noise: float = 8.0
    colors: Optional[List[Tuple[int, int, int]]] = None
    names: Optional[List[str]] = None
    n_pairs: int = 1

    def palette(self) -> Palette:
        if self.colors is None:
            if self.n_classes > 7:
                raise DataError(f"default palette has 7 colors; {self.n_classes} classes need explicit colors")
            pal = Palette.default(self.n_classes)
            if self.names:
                return Palette.from_colors([e.rgb for e in pal.entries], self.names)
            return pal
        if self.n_classes > len(self.colors):
            raise DataError(f"{self.n_classes} classes but only {len(self.colors)} colors")
        return Palette.from_colors(self.colors[: self.n_classes], self.names)

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise DataError(f"canvas must be at least 1x1, got {self.width}x{self.height}")
        if self.n_classes < 1:
            raise DataError("need at least one class")
        if not 0.0 <= self.change_budget <= 1.0:
            raise DataError(f"change budget must lie in [0, 1], got {self.change_budget}")
        if self.change_budget > 0 and self.n_classes < 2:
            raise DataError("a single class cannot change")
        if self.n_regions < 0 or self.noise < 0 or self.n_pairs < 1:
            raise DataError("n_regions and noise must be >= 0, n_pairs >= 1")
        self.palette()


_SPEC_INTS = {"height", "width", "n_classes", "n_regions", "n_pairs"}
_SPEC_FLOATS = {"change_budget", "noise"}


def parse_synth_spec(text: str) -> SynthSpec:
    """Parse ``key = value`` lines.  ``colors`` is ``r,g,b; r,g,b; ...``, ``names`` comma separated."""
    kw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        try:
            if key in _SPEC_INTS:
                kw[key] = int(value)
            elif key in _SPEC_FLOATS:
                kw[key] = float(value)
            elif key == "colors":
                kw[key] = [tuple(int(v) for v in c.split(",")) for c in value.split(";") if c.strip()]
            elif key == "names":
                kw[key] = [n.strip() for n in value.split(",")]
            else:
                raise DataError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"line {lineno}: bad value for {key}: {value!r}") from None
    spec = SynthSpec(**kw)
    spec.validate()
    return spec


@dataclass
class SynthPair:
    src_image: np.ndarray
    dst_image: np.ndarray
    src_labels: LabelRaster
    dst_labels: LabelRaster
    ledger: np.ndarray  # generator's own L x L transition counts

    @property
    def changed_fraction(self) -> float:
        return float((self.src_labels.data != self.dst_labels.data).mean())


def _joint(a: np.ndarray, b: np.ndarray, L: int) -> np.ndarray:
    return np.bincount(a.ravel().astype(np.int64) * L + b.ravel(), minlength=L * L).reshape(L, L)


def _rect(rng, h, w, max_h, max_w):
    rh = int(rng.integers(1, max_h + 1))
    rw = int(rng.integers(1, max_w + 1))
    y = int(rng.integers(0, h - rh + 1))
    x = int(rng.integers(0, w - rw + 1))
    return np.s_[y : y + rh, x : x + rw]


def synth_pair(spec: SynthSpec, seed) -> SynthPair:
    """Generate a labelled pair of axis-aligned rectangle scenes.

    Source labels are rectangles over background class 0; the destination
    repaints rectangles until the changed fraction approaches the budget.
    Every rectangle painted on the destination is sized to at most the
    remaining deficit, so the realised fraction never exceeds the budget.
    The loop stops within 2% of the target, or after a fixed number of
    attempts for budgets near 1.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    H, W, L = spec.height, spec.width, spec.n_classes
    palette = spec.palette()

    src = np.zeros((H, W), dtype=np.uint16)
    if L > 1:
        for r in range(spec.n_regions):
            cls = 1 + r if r < L - 1 else int(rng.integers(1, L))
            src[_rect(rng, H, W, max(1, H // 3), max(1, W // 3))] = cls

    dst = src.copy()
    ledger = np.diag(np.bincount(src.ravel(), minlength=L)).astype(np.int64)
    target = int(round(spec.change_budget * H * W))
    stop_at = math.floor(0.02 * target)
    changed = 0
    for _ in range(50_000):
        deficit = target - changed
        if deficit <= stop_at:
            break
        side = max(1, int(math.isqrt(deficit)))
        max_h = min(H, side * 2, deficit)
        rh = int(rng.integers(1, max_h + 1))
        max_w = min(W, deficit // rh, side * 2)
        if max_w < 1:
            continue
        rw = int(rng.integers(1, max_w + 1))
        y = int(rng.integers(0, H - rh + 1))
        x = int(rng.integers(0, W - rw + 1))
        region = np.s_[y : y + rh, x : x + rw]
        new = int(rng.integers(0, L))
        ledger -= _joint(src[region], dst[region], L)
        # pixels whose source already has the new class keep their current label,
        # so a paint never undoes an earlier change
        block = dst[region]
        block[src[region] != new] = new
        ledger += _joint(src[region], dst[region], L)
        changed = int(ledger.sum() - np.trace(ledger))

    def render(labels):
        img = palette.colors[labels].astype(np.float64)
        if spec.noise > 0:
            img += rng.normal(0.0, spec.noise, img.shape)
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)

    classes = palette.classes
    return SynthPair(render(src), render(dst), LabelRaster(src, classes), LabelRaster(dst, classes), ledger)


def write_synth_dataset(spec: SynthSpec, seed: int, root, split_seed: Optional[int] = None) -> SplitManifest:
    """Write ``spec.n_pairs`` pairs, palette and a split manifest under ``root``."""
    from .rasters import save_palette

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stems = []
    for k in range(spec.n_pairs):
        pair = synth_pair(spec, [seed, k])
        stem = f"pair_{k:04d}"
        write_pair(root, stem, pair.src_image, pair.dst_image, pair.src_labels, pair.dst_labels)
        stems.append(stem)
    save_palette(spec.palette(), root / "palette.txt")
    manifest = split(stems, seed if split_seed is None else split_seed)
    manifest.save(root / "manifest.json")
    return manifest
