from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from covidct.errors import InvalidArgument, IoError, ParseError, UnsupportedFormat
from covidct.imaging import (
    Image, Mask, NormImage, count_nondark, encode_pgm, read_mask, read_pgm,
    resize_bilinear, resize_nearest_mask, squeeze_intensity, write_mask, write_pgm,
)

images = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def test_read_2x2(tmp_path):
    f = tmp_path / "a.pgm"
    f.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 7]))
    img = read_pgm(f)
    assert img.width == 2 and img.height == 2
    assert img.pixels.ravel().tolist() == [0, 128, 255, 7]


def test_rewrite_is_byte_identical(tmp_path):
    raw = b"P5\n3 2\n255\n" + bytes(range(6))
    src, dst = tmp_path / "in.pgm", tmp_path / "out.pgm"
    src.write_bytes(raw)
    write_pgm(read_pgm(src), dst)
    assert dst.read_bytes() == raw


def test_header_comments_and_whitespace(tmp_path):
    f = tmp_path / "c.pgm"
    f.write_bytes(b"P5 # made by hand\n# another\n2\t1 255\n" + bytes([9, 250]))
    assert read_pgm(f).pixels.tolist() == [[9, 250]]


@pytest.mark.parametrize("data, exc", [
    (b"P2\n1 1\n255\n42\n", ParseError),
    (b"P5\n2 2\n255\n" + bytes(3), ParseError),
    (b"P5\n2 2\n", ParseError),
    (b"P5\n0 2\n255\n", ParseError),
    (b"P5\n1 1\n65535\n" + bytes(2), UnsupportedFormat),
])
def test_bad_files(tmp_path, data, exc):
    f = tmp_path / "bad.pgm"
    f.write_bytes(data)
    with pytest.raises(exc):
        read_pgm(f)


def test_encode_single_pixel():
    assert encode_pgm(Image.from_flat(1, 1, [42])) == b"P5\n1 1\n255\n\x2a"


@given(images)
def test_pgm_round_trip(tmp_path_factory, px):
    path = tmp_path_factory.mktemp("rt") / "x.pgm"
    img = Image(px)
    write_pgm(img, path)
    assert read_pgm(path) == img


def test_unwritable_path(tmp_path):
    with pytest.raises(IoError):
        write_pgm(Image.from_flat(1, 1, [1]), tmp_path / "missing" / "x.pgm")
    assert list(tmp_path.iterdir()) == []


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        read_pgm(tmp_path / "nope.pgm")


def test_mask_round_trip(tmp_path):
    m = Mask(np.eye(4, dtype=bool))
    write_mask(m, tmp_path / "m.pgm")
    assert read_mask(tmp_path / "m.pgm") == m
    assert set(read_pgm(tmp_path / "m.pgm").pixels.ravel()) == {0, 255}


def test_image_validation():
    with pytest.raises(InvalidArgument):
        Image(np.zeros(5, dtype=np.uint8))
    with pytest.raises(InvalidArgument):
        Image(np.array([[300]]))
    with pytest.raises(InvalidArgument):
        Image.from_flat(2, 2, [1, 2, 3])
    with pytest.raises(InvalidArgument):
        NormImage(np.full((2, 2), 100.5))


@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 20), st.integers(1, 20))
def test_resize_constant(w, h, ow, oh):
    out = resize_bilinear(Image(np.full((h, w), 77, np.uint8)), ow, oh)
    assert out.shape == (oh, ow)
    assert np.all(out.pixels == 77)


@given(images)
def test_resize_identity(px):
    img = Image(px)
    assert resize_bilinear(img, img.width, img.height) == img


def test_resize_hand_value():
    out = resize_bilinear(Image(np.array([[0, 255]], np.uint8)), 3, 1)
    assert out.pixels.tolist() == [[0, 128, 255]]


def _bilinear_oracle(px, ow, oh):
    # exact rational arithmetic, corner-aligned sample grid, round half up
    h, w = px.shape
    out = np.zeros((oh, ow), dtype=np.uint8)
    for oy in range(oh):
        fy = Fraction(oy * (h - 1), oh - 1) if oh > 1 else Fraction(0)
        y0 = int(fy)
        y1 = min(y0 + 1, h - 1)
        ty = fy - y0
        for ox in range(ow):
            fx = Fraction(ox * (w - 1), ow - 1) if ow > 1 else Fraction(0)
            x0 = int(fx)
            x1 = min(x0 + 1, w - 1)
            tx = fx - x0
            top = px[y0, x0] * (1 - tx) + px[y0, x1] * tx
            bot = px[y1, x0] * (1 - tx) + px[y1, x1] * tx
            v = top * (1 - ty) + bot * ty
            out[oy, ox] = int(v + Fraction(1, 2))
    return out


@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))),
       st.integers(1, 9), st.integers(1, 9))
def test_resize_matches_rational_oracle(px, ow, oh):
    got = resize_bilinear(Image(px), ow, oh).pixels
    want = _bilinear_oracle(px.astype(object), ow, oh)
    assert np.array_equal(got, want)


def test_resize_rejects_bad_size():
    with pytest.raises(InvalidArgument):
        resize_bilinear(Image.from_flat(1, 1, [0]), 0, 3)
    with pytest.raises(InvalidArgument):
        resize_nearest_mask(Mask.empty(2, 2), 2, -1)


def test_nearest_mask_stays_binary():
    m = Mask(np.array([[1, 0], [0, 1]], bool))
    big = resize_nearest_mask(m, 4, 4)
    assert big.bits.tolist() == [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]]
    assert resize_nearest_mask(big, 2, 2) == m


@pytest.mark.parametrize("v, want", [(0, 0.0), (255, 100.0), (128, 50.19608)])
def test_squeeze_values(v, want):
    out = squeeze_intensity(Image.from_flat(1, 1, [v]))
    assert out.values.dtype == np.float32
    assert abs(float(out.values[0, 0]) - want) <= 1e-4


@given(images)
def test_squeeze_range_and_order(px):
    vals = squeeze_intensity(Image(px)).values
    assert vals.min() >= 0.0 and vals.max() <= 100.0
    order = np.argsort(px.ravel(), kind="stable")
    assert np.all(np.diff(vals.ravel()[order]) >= 0)


def test_count_nondark():
    assert count_nondark(Image(np.zeros((5, 5), np.uint8))) == 0
    assert count_nondark(Image(np.full((224, 224), 255, np.uint8))) == 50176
    px = np.zeros((224, 224), np.uint8)
    px.ravel()[:1764] = 1
    assert count_nondark(Image(px)) == 1764


def test_mask_algebra(rng):
    a = Mask(rng.random((6, 7)) < 0.5)
    b = Mask(rng.random((6, 7)) < 0.5)
    assert (a & b).issubset(a) and a.issubset(a | b)
    assert (~~a) == a
    assert a.count() + (~a).count() == 42
    assert Mask.empty(7, 6).count() == 0
