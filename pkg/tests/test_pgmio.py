import numpy as np
import pytest

from laminae.errors import ParseError
from laminae.pgmio import read_pgm, write_pgm


def test_eight_bit_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(7, 11), dtype=np.uint8)
    path = tmp_path / "img.pgm"
    write_pgm(path, img, maxval=255)
    back = read_pgm(path)
    assert back.dtype == np.uint8
    np.testing.assert_array_equal(back, img)


def test_sixteen_bit_round_trip_big_endian(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 65536, size=(5, 4), dtype=np.uint16)
    path = tmp_path / "img.pgm"
    write_pgm(path, img, maxval=65535)
    raw = path.read_bytes()
    # header then big-endian samples
    assert raw.startswith(b"P5")
    back = read_pgm(path)
    assert back.dtype == np.uint16
    np.testing.assert_array_equal(back, img)


def test_comments_and_whitespace_in_header(tmp_path):
    path = tmp_path / "img.pgm"
    body = bytes([1, 2, 3, 4, 5, 6])
    path.write_bytes(b"P5\n# a comment\n3 # trailing\n2\n# more\n255\n" + body)
    img = read_pgm(path)
    assert img.shape == (2, 3)
    np.testing.assert_array_equal(img.ravel(), np.frombuffer(body, dtype=np.uint8))


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "img.pgm"
    path.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(ParseError, match="P5"):
        read_pgm(path)


def test_truncated_body_rejected(tmp_path):
    path = tmp_path / "img.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(ParseError, match="truncated"):
        read_pgm(path)


def test_bad_maxval_rejected(tmp_path):
    path = tmp_path / "img.pgm"
    path.write_bytes(b"P5\n2 2\n70000\n" + bytes(8))
    with pytest.raises(ParseError, match="maxval"):
        read_pgm(path)


def test_write_rejects_out_of_range():
    img = np.array([[300]], dtype=np.uint16)
    with pytest.raises(ValueError):
        write_pgm("/tmp/never-written.pgm", img, maxval=255)
