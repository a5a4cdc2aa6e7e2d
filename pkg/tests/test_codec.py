import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scpa.codec import ChangeCodec, LandClassSet, change_map, max_change_types
from scpa.errors import DataError
from scpa.rasters import LabelRaster


def lexicographic_pairs(L):
    """Enumeration oracle: changed pairs in (src, dst) order, diagonal removed."""
    return [(a, b) for a, b in itertools.product(range(L), repeat=2) if a != b]


@pytest.mark.parametrize("L, expected", [(7, 43), (1, 1), (2, 3)])
def test_max_change_types(L, expected):
    assert max_change_types(L) == expected


def test_max_change_types_rejects_zero():
    with pytest.raises(DataError):
        max_change_types(0)


def test_encode_examples():
    codec = ChangeCodec.for_classes(7)
    assert codec.encode(3, 3) == 0
    assert codec.encode(0, 1) == 1
    assert codec.encode(1, 0) == 7
    assert codec.encode(1, 3) == 9


def test_decode_examples():
    codec = ChangeCodec.for_classes(7)
    assert codec.decode(0) is None
    assert codec.decode(1) == (0, 1)
    assert codec.decode(42) == lexicographic_pairs(7)[-1] == (6, 5)


@pytest.mark.parametrize("bad", [(-1, 0), (0, 7), (7, 7)])
def test_encode_rejects_out_of_range(bad):
    with pytest.raises(DataError):
        ChangeCodec.for_classes(7).encode(*bad)


def test_decode_rejects_code_beyond_n():
    codec = ChangeCodec.for_classes(7)
    with pytest.raises(DataError):
        codec.decode(43)
    with pytest.raises(DataError):
        codec.decode(-1)


@pytest.mark.parametrize("L", range(1, 17))
def test_codes_match_enumeration(L):
    codec = ChangeCodec.for_classes(L)
    pairs = lexicographic_pairs(L)
    assert [codec.encode(a, b) for a, b in pairs] == list(range(1, codec.n_types))
    assert [codec.decode(c) for c in range(1, codec.n_types)] == pairs


def test_degenerate_single_class():
    codec = ChangeCodec.for_classes(1)
    assert codec.n_types == 1
    assert codec.encode(0, 0) == 0
    assert list(codec.all_pairs()) == []


def test_vectorised_encode_decode_agree_with_scalar():
    codec = ChangeCodec.for_classes(5)
    a, b = np.meshgrid(np.arange(5), np.arange(5), indexing="ij")
    codes = codec.encode_array(a, b)
    for i, j in itertools.product(range(5), repeat=2):
        assert codes[i, j] == codec.encode(i, j)
    s, d = codec.decode_array(codes)
    changed = a != b
    assert np.array_equal(s[changed], a[changed])
    assert np.array_equal(d[changed], b[changed])
    assert (s[~changed] == -1).all()


@given(st.integers(2, 40).flatmap(lambda L: st.tuples(st.just(L), st.integers(0, L - 1), st.integers(0, L - 1))))
def test_round_trip_property(case):
    L, a, b = case
    codec = ChangeCodec.for_classes(L)
    code = codec.encode(a, b)
    if a == b:
        assert code == 0
    else:
        assert codec.decode(code) == (a, b)
        assert code != codec.encode(b, a)


def test_land_class_set_names():
    assert LandClassSet(3).names == ("class_0", "class_1", "class_2")
    with pytest.raises(DataError):
        LandClassSet(2, ("a", "a"))
    with pytest.raises(DataError):
        LandClassSet(2, ("a",))
    with pytest.raises(DataError):
        LandClassSet(0)


def test_type_name():
    codec = ChangeCodec(LandClassSet.from_names(["back", "farm", "bare"]))
    assert codec.type_name(0) == "no_change"
    assert codec.type_name(codec.encode(1, 2)) == "farm->bare"


class TestChangeMap:
    def test_identity_is_zero(self, label_pair):
        src, _ = label_pair(9, 11, 6)
        assert not change_map(src, src).data.any()

    def test_small_example(self):
        classes = LandClassSet(7)
        cr = change_map(LabelRaster(np.array([[1, 1]]), classes), LabelRaster(np.array([[1, 3]]), classes))
        assert cr.data.tolist() == [[0, 9]]

    def test_matches_pixel_loop(self, label_pair):
        src, dst = label_pair(16, 16, 4, seed=3)
        codec = ChangeCodec(src.classes)
        pairs = lexicographic_pairs(4)
        expected = np.zeros((16, 16), dtype=int)
        for y in range(16):
            for x in range(16):
                a, b = int(src.data[y, x]), int(dst.data[y, x])
                expected[y, x] = 0 if a == b else pairs.index((a, b)) + 1
        assert np.array_equal(change_map(src, dst, codec).data, expected)

    def test_dimension_mismatch(self):
        c = LandClassSet(3)
        with pytest.raises(DataError, match="dimension"):
            change_map(LabelRaster(np.zeros((2, 2), int), c), LabelRaster(np.zeros((2, 3), int), c))

    def test_out_of_range_reports_pixel(self):
        codec = ChangeCodec.for_classes(3)
        src = np.zeros((3, 3), int)
        dst = src.copy()
        dst[2, 1] = 5
        with pytest.raises(DataError, match=r"\(2, 1\)"):
            change_map(src, dst, codec)
