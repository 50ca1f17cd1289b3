import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from spatialgrasp.errors import FormatError, UsageError
from spatialgrasp.raster import DepthMap, Image, image_size, load_depth, load_image, save_depth, save_image


def test_image_rejects_out_of_range_and_bad_shape():
    with pytest.raises(UsageError):
        Image(np.full((2, 2, 3), 1.5))
    with pytest.raises(UsageError):
        Image(np.full((2, 2, 3), np.nan))
    with pytest.raises(UsageError):
        Image(np.zeros((2, 2)))


def test_depth_rejects_non_positive():
    with pytest.raises(UsageError):
        DepthMap(np.array([[0.0, 1.0]]))
    DepthMap(np.array([[np.nan, 1.0]]))


def test_hand_written_ppm_pixel(tmp_path):
    p = tmp_path / "red.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
    img = load_image(p)
    assert img.width == 1 and img.height == 1
    assert img.pixels[0, 0].tolist() == [1.0, 0.0, 0.0]


def test_ppm_header_comments_are_skipped(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([0, 51, 102, 153, 204, 255]))
    assert np.allclose(load_image(p).pixels.ravel(), np.arange(6) * 51 / 255)
    assert image_size(p) == (2, 1)


def test_p5_magic_rejected_naming_p6(tmp_path):
    p = tmp_path / "gray.pgm"
    p.write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(FormatError, match="P6") as err:
        load_image(p)
    assert err.value.offset == 0


def test_truncated_ppm_reports_offset(tmp_path):
    p = tmp_path / "t.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError, match="truncated") as err:
        load_image(p)
    assert err.value.offset == len(p.read_bytes())


def test_ppm_maxval_must_be_255(tmp_path):
    p = tmp_path / "m.ppm"
    p.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(FormatError, match="maxval"):
        load_image(p)


def test_save_quantizes_half_even(tmp_path):
    # 0.5/255 sits exactly between codes 0 and 1
    img = Image(np.array([[[0.5 / 255, 1.5 / 255, 1.0]]]))
    save_image(img, tmp_path / "q.ppm")
    assert (tmp_path / "q.ppm").read_bytes()[-3:] == bytes([0, 2, 255])


@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=3, max_dims=3, max_side=9).map(lambda s: (s[0], s[1], 3))))
def test_ppm_round_trip_bytes(tmp_path_factory, codes):
    d = tmp_path_factory.mktemp("ppm")
    img = Image(codes.astype(np.float64) / 255.0)
    save_image(img, d / "a.ppm")
    again = load_image(d / "a.ppm")
    save_image(again, d / "b.ppm")
    assert (d / "a.ppm").read_bytes() == (d / "b.ppm").read_bytes()
    assert np.array_equal(again.pixels, img.pixels)


def test_pfm_round_trip_with_nan(tmp_path):
    values = np.array([[0.5, 1.0], [np.nan, 2.0]])
    save_depth(DepthMap(values), tmp_path / "d.pfm")
    back = load_depth(tmp_path / "d.pfm").values
    assert np.array_equal(np.isnan(back), np.isnan(values))
    assert np.array_equal(back[~np.isnan(back)], values[~np.isnan(values)])


def test_pfm_rows_are_bottom_up(tmp_path):
    save_depth(DepthMap(np.array([[1.0], [2.0]])), tmp_path / "d.pfm")
    payload = (tmp_path / "d.pfm").read_bytes()[-8:]
    assert struct.unpack("<2f", payload) == (2.0, 1.0)


def test_hand_encoded_pfm(tmp_path):
    p = tmp_path / "one.pfm"
    p.write_bytes(b"Pf\n1 1\n-1.0\n" + struct.pack("<f", 0.25))
    assert load_depth(p).values[0, 0] == 0.25


def test_big_endian_pfm_is_read(tmp_path):
    p = tmp_path / "be.pfm"
    p.write_bytes(b"Pf\n1 1\n1.0\n" + struct.pack(">f", 0.75))
    assert load_depth(p).values[0, 0] == 0.75


@pytest.mark.parametrize("value", [-1.0, 0.0, float("inf")])
def test_non_positive_or_infinite_depth_rejected(tmp_path, value):
    p = tmp_path / "bad.pfm"
    header = b"Pf\n2 1\n-1.0\n"
    p.write_bytes(header + struct.pack("<2f", 1.0, value))
    with pytest.raises(FormatError) as err:
        load_depth(p)
    assert err.value.offset == len(header) + 4


def test_color_pfm_rejected(tmp_path):
    p = tmp_path / "c.pfm"
    p.write_bytes(b"PF\n1 1\n-1.0\n" + bytes(12))
    with pytest.raises(FormatError, match="Pf"):
        load_depth(p)


@pytest.mark.parametrize("header", [b"Pf\nx 1\n-1.0\n", b"Pf\n1 1\n0\n", b"Pf\n1 1\nabc\n"])
def test_bad_pfm_headers(tmp_path, header):
    p = tmp_path / "h.pfm"
    p.write_bytes(header + bytes(4))
    with pytest.raises(FormatError):
        load_depth(p)


finite_depth = st.floats(min_value=0.0009765625, max_value=1024.0, width=32)
depth_cell = st.one_of(finite_depth, st.just(float("nan")))


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=7), elements=depth_cell))
def test_pfm_round_trip_bytes(tmp_path_factory, values):
    d = tmp_path_factory.mktemp("pfm")
    save_depth(DepthMap(values.astype(np.float64)), d / "a.pfm")
    save_depth(load_depth(d / "a.pfm"), d / "b.pfm")
    assert (d / "a.pfm").read_bytes() == (d / "b.pfm").read_bytes()


def test_nan_payload_survives(tmp_path):
    payload_nan = struct.unpack("<f", struct.pack("<I", 0x7FC01234))[0]
    p = tmp_path / "n.pfm"
    raw = b"Pf\n2 1\n-1.0\n" + struct.pack("<I", 0x7FC01234) + struct.pack("<f", 1.0)
    p.write_bytes(raw)
    save_depth(load_depth(p), tmp_path / "m.pfm")
    assert (tmp_path / "m.pfm").read_bytes() == raw
    assert np.isnan(payload_nan)
