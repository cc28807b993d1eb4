import numpy as np
import pytest

from activezero import io as aio
from activezero.imagecore import DisparityMap


def test_pgm16_roundtrip_and_byte_order(tmp_path):
    img = np.array([[0.0, 1.0], [0.5, 257 / 65535]], dtype=np.float32)
    p = tmp_path / "a.pgm"
    aio.write_pgm(p, img)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n2 2\n65535\n")
    body = raw[len(b"P5\n2 2\n65535\n"):]
    # big-endian: 65535 -> ff ff, 257 -> 01 01, 32768 -> 80 00
    assert body == bytes([0, 0, 0xFF, 0xFF, 0x80, 0x00, 0x01, 0x01])
    back = aio.read_pgm(p)
    assert back.dtype == np.float32
    np.testing.assert_allclose(back, img, atol=0.5 / 65535)


def test_pgm_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n3 1\n# another\n255\n" + bytes([0, 128, 255]))
    samples, maxval = aio.read_pgm_raw(p)
    assert maxval == 255 and samples.tolist() == [[0, 128, 255]]


def test_pgm_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        aio.read_pgm(p)
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(ValueError):
        aio.read_pgm(p)
    with pytest.raises(ValueError):
        aio.write_pgm(p, np.zeros((2, 2)), maxval=1000)


def test_mask_encoding(tmp_path):
    m = np.array([[True, False, True]])
    p = tmp_path / "m.pgm"
    aio.write_mask(p, m)
    samples, maxval = aio.read_pgm_raw(p)
    assert maxval == 255 and samples.tolist() == [[255, 0, 255]]
    assert np.array_equal(aio.read_mask(p), m)


def test_label_roundtrip(tmp_path):
    labels = np.array([[0, 1, 2], [300, 7, 0]])
    p = tmp_path / "l.pgm"
    aio.write_label_pgm(p, labels)
    assert np.array_equal(aio.read_label_pgm(p), labels)


def test_pfm_roundtrip_layout(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "d.pfm"
    aio.write_pfm(p, a)
    raw = p.read_bytes()
    assert raw.startswith(b"Pf\n3 2\n-1.0\n")
    body = np.frombuffer(raw[len(b"Pf\n3 2\n-1.0\n"):], dtype="<f4")
    # rows are stored bottom-to-top
    assert body.tolist() == [3, 4, 5, 0, 1, 2]
    assert np.array_equal(aio.read_pfm(p), a)


def test_pfm_big_endian_read(tmp_path):
    a = np.array([[1.5, -2.0]], dtype=">f4")
    p = tmp_path / "be.pfm"
    p.write_bytes(b"Pf\n2 1\n1.0\n" + a.tobytes())
    np.testing.assert_array_equal(aio.read_pfm(p), [[1.5, -2.0]])


def test_disparity_invalid_as_inf(tmp_path):
    d = DisparityMap(np.array([[1.25, 2.0]]), np.array([[True, False]]))
    p = tmp_path / "disp.pfm"
    aio.write_disparity(p, d)
    assert np.isinf(aio.read_pfm(p)[0, 1])
    back = aio.read_disparity(p)
    assert back.valid.tolist() == [[True, False]]
    assert back.disp[0, 0] == 1.25
