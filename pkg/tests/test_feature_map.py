import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from treefilter.feature_map import (
    FeatureMap, FmapHeaderError, FmapTruncatedError, ImageFormatError, NonFiniteError,
    from_image, load_fmap, read_image, save_fmap, to_image, write_image,
)


def _header(h, w, c, magic=b"LTF2", version=1):
    return struct.pack("<4sIIII", magic, version, h, w, c)


def test_load_two_value_payload(tmp_path):
    p = tmp_path / "a.fmap"
    p.write_bytes(_header(1, 2, 1) + np.array([0.0, 3.0], "<f4").tobytes())
    m = load_fmap(p)
    assert m.data.shape == (1, 2, 1)
    assert m.data.ravel().tolist() == [0.0, 3.0]


def test_resave_is_byte_identical(tmp_path, rng):
    p, q = tmp_path / "a.fmap", tmp_path / "b.fmap"
    p.write_bytes(_header(3, 4, 2) + rng.normal(size=24).astype("<f4").tobytes())
    save_fmap(load_fmap(p), q)
    assert p.read_bytes() == q.read_bytes()


def test_zero_channels_rejected(tmp_path):
    p = tmp_path / "a.fmap"
    p.write_bytes(_header(2, 2, 0))
    with pytest.raises(FmapHeaderError, match="invalid dimensions"):
        load_fmap(p)


def test_parse_errors_are_distinct(tmp_path):
    p = tmp_path / "a.fmap"
    p.write_bytes(_header(2, 2, 1, magic=b"NOPE") + bytes(16))
    with pytest.raises(FmapHeaderError):
        load_fmap(p)
    p.write_bytes(_header(2, 2, 1) + bytes(12))
    with pytest.raises(FmapTruncatedError):
        load_fmap(p)
    p.write_bytes(_header(1, 1, 1) + np.array([np.inf], "<f4").tobytes())
    with pytest.raises(NonFiniteError):
        load_fmap(p)
    p.write_bytes(b"LT")
    with pytest.raises(FmapHeaderError):
        load_fmap(p)


def test_invalid_maps_rejected():
    with pytest.raises(ValueError, match="invalid dimensions"):
        FeatureMap(np.zeros((0, 0, 1)))
    with pytest.raises(NonFiniteError, match="non-finite value"):
        FeatureMap(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((2, 2, 3)), groups=2)


def test_data_is_read_only():
    m = FeatureMap(np.zeros((2, 2, 1)))
    with pytest.raises(ValueError):
        m.data[0, 0, 0] = 1.0


@given(
    st.integers(1, 32), st.integers(1, 32), st.integers(1, 8), st.data(),
)
def test_fmap_round_trip_bitwise(tmp_path_factory, h, w, c, data):
    vals = data.draw(arrays(np.float32, (h, w, c),
                            elements=st.floats(-1e6, 1e6, width=32, allow_nan=False)))
    m = FeatureMap(vals.astype(np.float64))
    p = tmp_path_factory.mktemp("rt") / "m.fmap"
    save_fmap(m, p)
    assert load_fmap(p) == m


def test_node_index_layout():
    data = np.arange(12.0).reshape(2, 3, 2)
    m = FeatureMap(data)
    # node i = y * width + x
    assert np.array_equal(m.nodes[1 * 3 + 2], data[1, 2])


def test_p5_all_white(tmp_path):
    p = tmp_path / "w.pgm"
    p.write_bytes(b"P5\n3 2\n255\n" + bytes([255] * 6))
    m = from_image(p)
    assert m.data.shape == (2, 3, 1)
    assert np.all(m.data == 1.0)


def test_p6_shape(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# comment\n2 2\n255\n" + bytes(range(12)))
    assert from_image(p).data.shape == (2, 2, 3)


@pytest.mark.parametrize("raw", [b"P4\n2 2\n" + bytes(2), b"P5\n2 2\n65535\n" + bytes(8),
                                 b"P5\n2 2\n255\n" + bytes(3)])
def test_unsupported_images(tmp_path, raw):
    p = tmp_path / "bad.pgm"
    p.write_bytes(raw)
    with pytest.raises(ImageFormatError):
        from_image(p)


@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]), st.data())
def test_image_write_back_exact(tmp_path_factory, h, w, c, data):
    pix = data.draw(arrays(np.uint8, (h, w, c)))
    d = tmp_path_factory.mktemp("img")
    write_image(pix, d / "a.pnm")
    to_image(from_image(d / "a.pnm"), d / "b.pnm")
    assert np.array_equal(read_image(d / "b.pnm"), pix)
    assert (d / "a.pnm").read_bytes() == (d / "b.pnm").read_bytes()
