"""
PGM/PNG codecs, patch extraction and random masks
"""
import numpy as np
import pytest

from ride.core.exceptions import ImageFormatError, ShapeError
from ride.services import imgio
from ride.utils.numeric import make_rng

PIL = pytest.importorskip("PIL.Image")


def ramp(rows: int = 8, cols: int = 32) -> np.ndarray:
    return (np.arange(rows * cols) % 256).reshape(rows, cols) / 255.0


class TestPgm:
    def test_round_trip_is_exact_on_8_bit_values(self, tmp_path):
        path = imgio.write_image(ramp(), tmp_path / "ramp.pgm")
        assert np.array_equal(imgio.read_image(path), ramp())

    def test_header_layout(self):
        data = imgio.encode_pgm(np.zeros((2, 3)))
        assert data == b"P5\n3 2\n255\n" + bytes(6)

    def test_other_maxval_is_rescaled(self):
        decoded = imgio.decode_pgm(b"P5 2 1 15\n" + bytes([0, 15]))
        assert np.array_equal(decoded, [[0.0, 1.0]])

    def test_sixteen_bit_payload(self):
        decoded = imgio.decode_pgm(b"P5\n2 1\n65535\n" + b"\x00\x00\xff\xff")
        assert np.array_equal(decoded, [[0.0, 1.0]])

    def test_comments_in_header(self):
        decoded = imgio.decode_pgm(b"P5\n# made by hand\n2 # width then height\n1\n255\n" + bytes([0, 255]))
        assert np.array_equal(decoded, [[0.0, 1.0]])

    def test_truncated_payload_names_offset(self):
        with pytest.raises(ImageFormatError, match="byte offset"):
            imgio.decode_pgm(b"P5\n4 4\n255\n" + bytes(10))

    def test_ascii_pgm_rejected(self):
        with pytest.raises(ImageFormatError):
            imgio.decode_pgm(b"P2\n1 1\n255\n0\n")

    def test_quantize_clamps(self):
        assert np.array_equal(imgio.quantize(np.array([[-0.5, 0.5, 1.5]])), [[0, 128, 255]])


class TestPng:
    def test_round_trip(self, tmp_path):
        path = imgio.write_image(ramp(), tmp_path / "ramp.png")
        assert np.array_equal(imgio.read_image(path), ramp())

    def test_rgb_rejected(self, tmp_path):
        path = tmp_path / "rgb.png"
        PIL.new("RGB", (4, 4)).save(path)
        with pytest.raises(ImageFormatError, match="grayscale"):
            imgio.read_image(path)


def test_unknown_format_and_missing_file(tmp_path):
    path = tmp_path / "notes.txt"
    path.write_text("hello")
    with pytest.raises(ImageFormatError):
        imgio.read_image(path)
    with pytest.raises(ImageFormatError):
        imgio.read_image(tmp_path / "missing.pgm")


def test_list_images_sorted(tmp_path):
    for name in ("b.pgm", "a.png", "c.txt"):
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in imgio.list_images(tmp_path)] == ["a.png", "b.pgm"]


class TestPatches:
    def test_full_size_patch_is_the_image(self):
        image = ramp(6, 6)
        patches = imgio.extract_patches([image], 6, 3, make_rng(0))
        assert all(np.array_equal(p, image) for p in patches)

    def test_patches_are_crops(self):
        image = ramp(10, 12)
        for patch in imgio.extract_patches([image], 4, 20, make_rng(1)):
            found = any(
                np.array_equal(image[i:i + 4, j:j + 4], patch) for i in range(7) for j in range(9)
            )
            assert found

    def test_dequantize_noise_is_bounded(self):
        image = ramp(6, 6)
        for patch in imgio.extract_patches([image], 6, 4, make_rng(2), dequantize=True):
            noise = patch - image
            assert np.all(noise >= 0.0) and np.all(noise < 1.0 / 255.0)

    def test_zero_count_and_errors(self):
        assert imgio.extract_patches([ramp()], 4, 0, make_rng(0)) == []
        with pytest.raises(ShapeError):
            imgio.extract_patches([ramp(3, 3)], 4, 1, make_rng(0))
        with pytest.raises(ShapeError):
            imgio.extract_patches([], 4, 1, make_rng(0))

    def test_deterministic(self):
        a = imgio.extract_patches([ramp()], 4, 5, make_rng(8))
        b = imgio.extract_patches([ramp()], 4, 5, make_rng(8))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestRandomMask:
    def test_exact_missing_count(self):
        mask = imgio.random_mask(10, 10, 0.3, make_rng(0))
        assert mask.dtype == bool and mask.shape == (10, 10)
        assert np.count_nonzero(~mask) == 30

    def test_extremes(self):
        assert imgio.random_mask(4, 4, 0.0, make_rng(0)).all()
        assert not imgio.random_mask(4, 4, 1.0, make_rng(0)).any()

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            imgio.random_mask(4, 4, 1.5, make_rng(0))

    def test_grid_round_trip(self):
        mask = imgio.random_mask(5, 7, 0.5, make_rng(3))
        assert np.array_equal(imgio.grid_to_mask(imgio.mask_to_grid(mask)), mask)
