"""Label/change rasters, palettes and PNG input/output.

On-disk conventions:

* class-ID rasters: 8-bit grayscale PNG, pixel value = class ID
* colored label rasters: 24-bit RGB PNG via a :class:`Palette`
* change rasters: 16-bit grayscale PNG, pixel value = change code, with the
  codec (class count, names, ordering tag) stored in PNG text chunks
* palette files: one ``id r g b name`` line per class, ``#`` comments
* render legends: CSV ``code,src_name,dst_name,r,g,b``
"""

from __future__ import annotations

import colorsys
import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .codec import NO_CHANGE_NAME, ORDERING_TAG, ChangeCodec, LandClassSet, first_bad_pixel
from .errors import DataError

PathLike = Union[str, os.PathLike]
RGB = Tuple[int, int, int]

# Pure-hue reading of the SCPA-WC annotation colors; exact published values are unknown.
SCPA_WC_CLASSES: Tuple[Tuple[str, RGB], ...] = (
    ("background", (0, 0, 0)),
    ("farmland", (255, 0, 0)),
    ("bare_land", (0, 255, 0)),
    ("industrial", (255, 255, 0)),
    ("parking", (0, 0, 255)),
    ("residential", (128, 0, 128)),
    ("water", (0, 255, 255)),
)


@dataclass(frozen=True)
class PaletteEntry:
    class_id: int
    rgb: RGB
    name: str


class Palette:
    """Bidirectional class ID <-> RGB color mapping."""

    def __init__(self, entries: Iterable[PaletteEntry]):
        entries = sorted(entries, key=lambda e: e.class_id)
        if not entries:
            raise DataError("palette is empty")
        ids = [e.class_id for e in entries]
        if ids != list(range(len(entries))):
            raise DataError(f"palette class IDs must be 0..{len(entries) - 1} without gaps, got {ids}")
        colors = [tuple(int(c) for c in e.rgb) for e in entries]
        for c in colors:
            if len(c) != 3 or not all(0 <= v <= 255 for v in c):
                raise DataError(f"invalid RGB triple {c}")
        if len(set(colors)) != len(colors):
            raise DataError("palette colors must be pairwise distinct")
        self.entries: Tuple[PaletteEntry, ...] = tuple(
            PaletteEntry(e.class_id, c, e.name) for e, c in zip(entries, colors)
        )
        self.classes = LandClassSet.from_names([e.name for e in self.entries])
        self.colors = np.array(colors, dtype=np.uint8)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, Palette) and self.entries == other.entries

    def __repr__(self):
        return f"Palette({[(e.class_id, e.rgb, e.name) for e in self.entries]})"

    @classmethod
    def default(cls, n_classes: Optional[int] = None) -> "Palette":
        """The 7-class SCPA-WC palette, optionally truncated to the first ``n_classes``."""
        items = SCPA_WC_CLASSES if n_classes is None else SCPA_WC_CLASSES[:n_classes]
        if n_classes is not None and n_classes > len(SCPA_WC_CLASSES):
            raise DataError(f"default palette has only {len(SCPA_WC_CLASSES)} classes, {n_classes} requested")
        return cls(PaletteEntry(i, rgb, name) for i, (name, rgb) in enumerate(items))

    @classmethod
    def from_colors(cls, colors: Sequence[RGB], names: Optional[Sequence[str]] = None) -> "Palette":
        names = names or [f"class_{i}" for i in range(len(colors))]
        return cls(PaletteEntry(i, tuple(c), n) for i, (c, n) in enumerate(zip(colors, names)))

    def encode(self, rgb: np.ndarray, snap_tolerance: int = 0) -> np.ndarray:
        """Map an ``(H, W, 3)`` RGB array to class IDs by exact color match.

        With ``snap_tolerance > 0`` colors that miss the palette are snapped to
        the nearest entry if every channel is within the tolerance.
        """
        rgb = np.asarray(rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise DataError(f"expected an (H, W, 3) RGB array, got shape {rgb.shape}")
        key = _pack(rgb)
        palette_keys = _pack(self.colors[None, :, :])[0]
        order = np.argsort(palette_keys)
        sorted_keys = palette_keys[order]
        pos = np.clip(np.searchsorted(sorted_keys, key), 0, len(sorted_keys) - 1)
        ids = order[pos]
        miss = sorted_keys[pos] != key
        if miss.any() and snap_tolerance > 0:
            diff = np.abs(rgb[miss][:, None, :].astype(np.int32) - self.colors[None, :, :].astype(np.int32))
            cheb = diff.max(axis=2)
            nearest = cheb.argmin(axis=1)
            ok = cheb[np.arange(len(nearest)), nearest] <= snap_tolerance
            snapped = ids[miss]
            snapped[ok] = nearest[ok]
            ids[miss] = snapped
            still = np.zeros_like(miss)
            still[miss] = ~ok
            miss = still
        if miss.any():
            pos = first_bad_pixel(miss)
            color = tuple(int(v) for v in rgb[pos])
            raise DataError(f"color {color} at pixel {pos} is not in the palette")
        return ids.astype(np.uint16)

    def decode(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        bad = ids >= len(self)
        if bad.any():
            pos = first_bad_pixel(bad)
            raise DataError(f"class {int(ids[pos])} at pixel {pos} has no palette color")
        return self.colors[ids]


def _pack(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.int64)
    return (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]


def load_palette(path: PathLike) -> Palette:
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 4)
            if len(parts) < 4:
                raise DataError(f"{path}:{lineno}: expected 'id r g b name', got {line!r}")
            try:
                cid, r, g, b = (int(p) for p in parts[:4])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer field in {line!r}") from None
            name = parts[4].strip() if len(parts) == 5 else f"class_{cid}"
            entries.append(PaletteEntry(cid, (r, g, b), name))
    return Palette(entries)


def save_palette(palette: Palette, path: PathLike) -> None:
    with open(path, "w") as fh:
        fh.write("# id r g b name\n")
        for e in palette.entries:
            fh.write(f"{e.class_id} {e.rgb[0]} {e.rgb[1]} {e.rgb[2]} {e.name}\n")


@dataclass
class LabelRaster:
    """2-D grid of land-class IDs."""

    data: np.ndarray
    classes: LandClassSet

    def __post_init__(self):
        if isinstance(self.classes, int):
            self.classes = LandClassSet(self.classes)
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DataError(f"label raster must be 2-D, got shape {data.shape}")
        if data.size and not np.issubdtype(data.dtype, np.integer):
            raise DataError(f"label raster must hold integers, got {data.dtype}")
        bad = (data < 0) | (data >= self.classes.count)
        if bad.any():
            pos = first_bad_pixel(bad)
            raise DataError(
                f"pixel {pos} has class {int(data[pos])}, outside 0..{self.classes.count - 1}"
            )
        self.data = data.astype(np.uint16, copy=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        return (
            isinstance(other, LabelRaster)
            and self.classes == other.classes
            and np.array_equal(self.data, other.data)
        )


@dataclass
class ChangeRaster:
    """2-D grid of change codes under a :class:`ChangeCodec`."""

    data: np.ndarray
    codec: ChangeCodec

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DataError(f"change raster must be 2-D, got shape {data.shape}")
        bad = (data < 0) | (data >= self.codec.n_types)
        if bad.any():
            pos = first_bad_pixel(bad)
            raise DataError(
                f"pixel {pos} has change code {int(data[pos])}, outside 0..{self.codec.n_types - 1}"
            )
        self.data = data.astype(np.uint16, copy=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        return (
            isinstance(other, ChangeRaster)
            and self.codec.n_classes == other.codec.n_classes
            and np.array_equal(self.data, other.data)
        )


def _open(path: PathLike) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return img


def load_image(path: PathLike) -> np.ndarray:
    """Load an image as an ``(H, W, 3)`` uint8 RGB array."""
    return np.asarray(_open(path).convert("RGB"))


def save_image(image: np.ndarray, path: PathLike) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def _resolve_classes(classes, palette: Optional[Palette]) -> LandClassSet:
    if isinstance(classes, LandClassSet):
        return classes
    if isinstance(classes, int):
        return LandClassSet(classes)
    if palette is not None:
        return palette.classes
    raise DataError("class set unknown: pass classes or a palette")


def load_label_raster(
    path: PathLike,
    classes: Union[LandClassSet, int, None] = None,
    palette: Optional[Palette] = None,
    snap_tolerance: int = 0,
) -> LabelRaster:
    """Read a class-ID (grayscale) or colored (RGB, needs ``palette``) label image."""
    img = _open(path)
    cls = _resolve_classes(classes, palette)
    if img.mode in ("L", "I;16", "I;16B", "I"):
        data = np.asarray(img)
        if img.mode == "I" and (data.min(initial=0) < 0 or data.max(initial=0) >= 1 << 16):
            raise DataError(f"{path}: values outside the 16-bit range")
    else:
        if palette is None:
            raise DataError(f"{path}: {img.mode} image needs a palette to map colors to classes")
        try:
            data = palette.encode(np.asarray(img.convert("RGB")), snap_tolerance=snap_tolerance)
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None
    try:
        return LabelRaster(data, cls)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_label_raster(
    raster: LabelRaster,
    path: PathLike,
    mode: str = "ids",
    palette: Optional[Palette] = None,
) -> None:
    if mode == "ids":
        if raster.classes.count > 256:
            raise DataError(f"ids mode stores 8-bit IDs; {raster.classes.count} classes do not fit")
        Image.fromarray(raster.data.astype(np.uint8)).save(path)
    elif mode == "colored":
        if palette is None:
            raise DataError("colored mode requires a palette")
        if len(palette) < raster.classes.count:
            raise DataError(f"palette covers {len(palette)} classes, raster has {raster.classes.count}")
        Image.fromarray(palette.decode(raster.data)).save(path)
    else:
        raise DataError(f"unknown label raster mode {mode!r}")


_META_KEY = "scpa:codec"


def save_change_raster(cr: ChangeRaster, path: PathLike) -> None:
    if cr.codec.n_types > 65536:
        raise DataError(f"{cr.codec.n_types} change types do not fit a 16-bit raster")
    info = PngInfo()
    info.add_text(_META_KEY, json.dumps(cr.codec.metadata(), sort_keys=True))
    Image.fromarray(cr.data.astype(np.uint16)).save(path, pnginfo=info)


def load_change_raster(path: PathLike, codec: Optional[ChangeCodec] = None) -> ChangeRaster:
    """Read a 16-bit change raster.

    Without ``codec`` the one recorded in the file is used.  When both exist
    their class counts and ordering must agree.
    """
    img = _open(path)
    meta = None
    raw = getattr(img, "text", {}).get(_META_KEY)
    if raw:
        meta = json.loads(raw)
        if meta.get("ordering", ORDERING_TAG) != ORDERING_TAG:
            raise DataError(f"{path}: unsupported code ordering {meta['ordering']!r}")
    if codec is None:
        if meta is None:
            raise DataError(f"{path}: no codec metadata in file; pass a codec")
        codec = ChangeCodec(LandClassSet(meta["n_classes"], tuple(meta.get("class_names", ()))))
    elif meta is not None and meta["n_classes"] != codec.n_classes:
        raise DataError(
            f"{path}: written with {meta['n_classes']} classes, codec has {codec.n_classes}"
        )
    if img.mode not in ("L", "I;16", "I;16B", "I"):
        raise DataError(f"{path}: change rasters must be grayscale, got mode {img.mode}")
    try:
        return ChangeRaster(np.asarray(img), codec)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def change_colors(n_types: int) -> np.ndarray:
    """Deterministic, pairwise distinct colors for codes ``0..n_types-1``; code 0 is black."""
    colors = np.zeros((n_types, 3), dtype=np.uint8)
    golden = 0.618033988749895
    for code in range(1, n_types):
        hue = ((code - 1) * golden) % 1.0
        sat = (1.0, 0.65)[(code - 1) % 2]
        val = (1.0, 0.8, 0.6)[((code - 1) // 2) % 3]
        colors[code] = [round(c * 255) for c in colorsys.hsv_to_rgb(hue, sat, val)]
    packed = _pack(colors)
    if len(np.unique(packed)) != n_types or (packed[1:] == 0).any():
        # hue scheme collides for very large N; odd-multiplier hash is a bijection on 24 bits
        codes = np.arange(n_types, dtype=np.int64)
        packed = (codes * 0x9E3779) & 0xFFFFFF
        colors = np.stack([(packed >> 16) & 255, (packed >> 8) & 255, packed & 255], axis=1).astype(np.uint8)
    return colors


def render_change_map(
    cr: ChangeRaster,
    color_scheme: Union[np.ndarray, Dict[int, RGB], None] = None,
) -> Tuple[np.ndarray, List[Tuple[int, str, str, int, int, int]]]:
    """Color a change raster.  Returns ``(rgb_image, legend_rows)``.

    Legend rows cover the codes present in ``cr`` in ascending order.
    """
    n = cr.codec.n_types
    if color_scheme is None:
        table = change_colors(n)
    elif isinstance(color_scheme, dict):
        table = change_colors(n)
        for code, rgb in color_scheme.items():
            table[int(code)] = rgb
    else:
        table = np.asarray(color_scheme, dtype=np.uint8)
    if tuple(table[0]) != (0, 0, 0):
        raise DataError("code 0 (no change) must render black")
    present = np.unique(cr.data)
    if len({tuple(table[c]) for c in present}) != len(present):
        raise DataError("color scheme assigns the same color to two codes present in the raster")
    legend = []
    for code in present.tolist():
        pair = cr.codec.decode(code)
        if pair is None:
            src_name = dst_name = NO_CHANGE_NAME
        else:
            src_name, dst_name = (cr.codec.classes.name(c) for c in pair)
        r, g, b = (int(v) for v in table[code])
        legend.append((code, src_name, dst_name, r, g, b))
    return table[cr.data], legend


def legend_path(image_path: PathLike) -> Path:
    p = Path(image_path)
    return p.with_name(p.stem + "_legend.csv")


def save_render(cr: ChangeRaster, path: PathLike, color_scheme=None) -> Path:
    """Write the rendered change map and its ``<stem>_legend.csv`` sidecar."""
    rgb, legend = render_change_map(cr, color_scheme)
    save_image(rgb, path)
    side = legend_path(path)
    with open(side, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["code", "src_name", "dst_name", "r", "g", "b"])
        w.writerows(legend)
    return side
