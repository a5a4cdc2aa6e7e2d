import csv

import numpy as np
import pytest
from PIL import Image

from scpa.codec import ChangeCodec, LandClassSet, change_map
from scpa.errors import DataError
from scpa.rasters import (
    ChangeRaster,
    LabelRaster,
    Palette,
    PaletteEntry,
    change_colors,
    legend_path,
    load_change_raster,
    load_label_raster,
    load_palette,
    render_change_map,
    save_change_raster,
    save_label_raster,
    save_palette,
    save_render,
)


def test_default_palette_layout():
    pal = Palette.default()
    assert len(pal) == 7
    assert pal.entries[0].rgb == (0, 0, 0)
    assert pal.entries[1].name == "farmland"
    assert pal.entries[1].rgb == (255, 0, 0)
    assert pal.entries[2].rgb == (0, 255, 0)


def test_palette_rejects_gaps_and_duplicates():
    with pytest.raises(DataError, match="gaps"):
        Palette([PaletteEntry(0, (0, 0, 0), "a"), PaletteEntry(2, (1, 1, 1), "b")])
    with pytest.raises(DataError, match="distinct"):
        Palette([PaletteEntry(0, (0, 0, 0), "a"), PaletteEntry(1, (0, 0, 0), "b")])


def test_rgb_load_with_default_palette(tmp_path):
    path = tmp_path / "rgb.png"
    Image.fromarray(np.array([[[0, 0, 0], [255, 0, 0]]], dtype=np.uint8)).save(path)
    r = load_label_raster(path, palette=Palette.default())
    assert r.data.tolist() == [[0, 1]]
    assert r.width == 2 and r.height == 1


def test_unknown_color_reports_color_and_pixel(tmp_path):
    path = tmp_path / "rgb.png"
    img = np.zeros((2, 3, 3), dtype=np.uint8)
    img[1, 2] = (10, 20, 30)
    Image.fromarray(img).save(path)
    with pytest.raises(DataError, match=r"\(10, 20, 30\).*\(1, 2\)"):
        load_label_raster(path, palette=Palette.default())


def test_snap_tolerance(tmp_path):
    path = tmp_path / "rgb.png"
    Image.fromarray(np.array([[[250, 3, 0], [0, 0, 0]]], dtype=np.uint8)).save(path)
    assert load_label_raster(path, palette=Palette.default(), snap_tolerance=5).data.tolist() == [[1, 0]]
    with pytest.raises(DataError):
        load_label_raster(path, palette=Palette.default(), snap_tolerance=2)


def test_gray_value_out_of_range(tmp_path):
    path = tmp_path / "ids.png"
    Image.fromarray(np.array([[0, 7]], dtype=np.uint8)).save(path)
    with pytest.raises(DataError, match="class 7"):
        load_label_raster(path, 7)


def test_rgb_without_palette_is_an_error(tmp_path):
    path = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(path)
    with pytest.raises(DataError, match="palette"):
        load_label_raster(path, 7)


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_label_raster(tmp_path / "nope.png", 3)


@pytest.mark.parametrize("mode", ["ids", "colored"])
def test_label_round_trip(tmp_path, label_pair, mode):
    src, _ = label_pair(13, 17, 7, seed=4)
    pal = Palette.default()
    src = LabelRaster(src.data, pal.classes)
    path = tmp_path / f"{mode}.png"
    save_label_raster(src, path, mode, pal)
    back = load_label_raster(path, pal.classes, pal)
    assert back == src


def test_colored_requires_palette(tmp_path, label_pair):
    src, _ = label_pair(4, 4, 3)
    with pytest.raises(DataError):
        save_label_raster(src, tmp_path / "x.png", "colored")


def test_ids_mode_rejects_more_than_256_classes(tmp_path):
    r = LabelRaster(np.zeros((2, 2), dtype=np.uint16), LandClassSet(300))
    with pytest.raises(DataError, match="8-bit"):
        save_label_raster(r, tmp_path / "x.png")


def test_palette_decode_encode_identity(label_pair):
    pal = Palette.default()
    src, _ = label_pair(20, 20, 7, seed=9)
    assert np.array_equal(pal.encode(pal.decode(src.data)), src.data)


def test_palette_file_round_trip(tmp_path):
    pal = Palette.from_colors([(1, 2, 3), (4, 5, 6), (7, 8, 9)], ["a", "b b", "c"])
    save_palette(pal, tmp_path / "p.txt")
    assert load_palette(tmp_path / "p.txt") == pal


def test_palette_file_parse_error(tmp_path):
    (tmp_path / "p.txt").write_text("0 0 0\n")
    with pytest.raises(DataError, match=":1"):
        load_palette(tmp_path / "p.txt")


def test_change_raster_round_trip(tmp_path, rng):
    codec = ChangeCodec.for_classes(7)
    cr = ChangeRaster(rng.integers(0, codec.n_types, size=(31, 29)), codec)
    save_change_raster(cr, tmp_path / "c.png")
    back = load_change_raster(tmp_path / "c.png", codec)
    assert back == cr
    assert back.data.dtype == np.uint16
    # codec recovered from file metadata
    assert load_change_raster(tmp_path / "c.png").codec == codec


def test_change_raster_large_codes_round_trip(tmp_path, rng):
    codec = ChangeCodec.for_classes(200)
    cr = ChangeRaster(rng.integers(0, codec.n_types, size=(8, 8)), codec)
    save_change_raster(cr, tmp_path / "c.png")
    assert load_change_raster(tmp_path / "c.png", codec) == cr


def test_change_raster_codec_mismatch(tmp_path):
    cr = ChangeRaster(np.zeros((2, 2), int), ChangeCodec.for_classes(7))
    save_change_raster(cr, tmp_path / "c.png")
    with pytest.raises(DataError, match="classes"):
        load_change_raster(tmp_path / "c.png", ChangeCodec.for_classes(4))


def test_change_raster_code_out_of_range_on_load(tmp_path):
    Image.fromarray(np.array([[0, 50]], dtype=np.uint16)).save(tmp_path / "c.png")
    with pytest.raises(DataError, match="50"):
        load_change_raster(tmp_path / "c.png", ChangeCodec.for_classes(7))


def test_render_all_zero_is_black():
    cr = ChangeRaster(np.zeros((5, 6), int), ChangeCodec.for_classes(7))
    rgb, legend = render_change_map(cr)
    assert rgb.shape == (5, 6, 3) and not rgb.any()
    assert legend == [(0, "no_change", "no_change", 0, 0, 0)]


def test_render_two_codes(tmp_path):
    cr = ChangeRaster(np.array([[0, 1], [1, 0]]), ChangeCodec(Palette.default().classes))
    rgb, legend = render_change_map(cr)
    assert len({tuple(c) for c in rgb.reshape(-1, 3)}) == 2
    assert len(legend) == 2
    assert legend[1][:3] == (1, "background", "farmland")


def test_render_every_code_distinct(tmp_path):
    codec = ChangeCodec.for_classes(7)
    cr = ChangeRaster(np.arange(codec.n_types).reshape(1, -1), codec)
    img_path = tmp_path / "r.png"
    side = save_render(cr, img_path)
    assert side == legend_path(img_path)
    rgb = np.asarray(Image.open(img_path))
    assert len({tuple(c) for c in rgb.reshape(-1, 3)}) == 43
    with open(side) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 43
    assert list(rows[0]) == ["code", "src_name", "dst_name", "r", "g", "b"]


@pytest.mark.parametrize("n", [3, 43, 241, 65281])
def test_change_colors_distinct(n):
    colors = change_colors(n)
    assert tuple(colors[0]) == (0, 0, 0)
    packed = {tuple(c) for c in colors}
    assert len(packed) == n


def test_render_is_deterministic(label_pair):
    src, dst = label_pair(10, 10, 5, seed=2)
    cr = change_map(src, dst)
    a, la = render_change_map(cr)
    b, lb = render_change_map(cr)
    assert np.array_equal(a, b) and la == lb
