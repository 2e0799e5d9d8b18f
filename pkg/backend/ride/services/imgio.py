"""
Grayscale image I/O, training patch extraction and degradation synthesis.

Binary PGM (P5) is handled here byte for byte; PNG goes through Pillow and
must already be grayscale. Decoded intensities are mapped to [0, 1].
"""
import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import ImageFormatError, ShapeError
from ..utils.numeric import FloatArray, SeededRng

try:
    from PIL import Image as _PilImage
    PIL_AVAILABLE = True
except ImportError:
    _PilImage = None  # type: ignore[assignment]
    PIL_AVAILABLE = False
    logging.warning("Pillow not available. PNG support disabled.")

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_WHITESPACE = b" \t\n\r\v\f"


def _read_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif data[pos] in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError(f"malformed PGM header: unexpected end of data at byte offset {pos}")
    return data[start:pos], pos


def decode_pgm(data: bytes) -> FloatArray:
    """Decode a binary P5 PGM into a [0, 1] grid (divided by maxval)."""
    if data[:2] != b"P5":
        raise ImageFormatError("not a binary PGM: missing 'P5' magic at byte offset 0")
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = _read_token(data, pos)
        try:
            value = int(token)
        except ValueError:
            raise ImageFormatError(f"malformed PGM header: {name} {token!r} is not an integer (byte offset {pos - len(token)})")
        fields.append(value)
    width, height, maxval = fields
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise ImageFormatError(f"malformed PGM header: width={width} height={height} maxval={maxval}")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise ImageFormatError(f"malformed PGM header: expected whitespace after maxval at byte offset {pos}")
    pos += 1

    sample_bytes = 1 if maxval < 256 else 2
    expected = width * height * sample_bytes
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise ImageFormatError(
            f"truncated PGM payload: expected {expected} bytes from byte offset {pos}, "
            f"file ends at byte offset {len(data)}"
        )
    dtype = np.uint8 if sample_bytes == 1 else np.dtype(">u2")
    values = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(height, width)
    return values / float(maxval)


def quantize(grid: FloatArray) -> np.ndarray:
    """[0, 1] grid -> uint8, clamping out-of-range values."""
    grid = np.asarray(grid, dtype=np.float64)
    if not np.all(np.isfinite(grid)):
        raise ShapeError("cannot quantize a grid with non-finite values")
    return np.round(np.clip(grid, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pgm(grid: FloatArray) -> bytes:
    pixels = quantize(grid)
    if pixels.ndim != 2:
        raise ShapeError(f"PGM needs a 2-D grid, got shape {pixels.shape}")
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def read_image(path: PathLike) -> FloatArray:
    """Read a grayscale PGM (P5) or PNG into a [0, 1] grid."""
    path = Path(path)
    if not path.is_file():
        raise ImageFormatError(f"image file not found: {path}")
    data = path.read_bytes()
    if data[:2] == b"P5":
        return decode_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        if not PIL_AVAILABLE or _PilImage is None:
            raise ImageFormatError("PNG support requires Pillow")
        with _PilImage.open(path) as img:
            if img.mode == "L":
                return np.asarray(img, dtype=np.float64) / 255.0
            if img.mode in ("I;16", "I;16B", "I;16L"):
                return np.asarray(img, dtype=np.float64) / 65535.0
            raise ImageFormatError(f"PNG {path} is not grayscale (mode {img.mode})")
    raise ImageFormatError(f"unsupported image format for {path}: expected binary PGM (P5) or PNG")


def write_image(grid: FloatArray, path: PathLike) -> Path:
    """Write a [0, 1] grid as 8-bit PGM, or PNG when the suffix is .png."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".png":
        if not PIL_AVAILABLE or _PilImage is None:
            raise ImageFormatError("PNG support requires Pillow")
        _PilImage.fromarray(quantize(grid), mode="L").save(path, format="PNG")
    else:
        path.write_bytes(encode_pgm(grid))
    return path


def list_images(directory: PathLike) -> List[Path]:
    """Image files of a training directory, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageFormatError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in (".pgm", ".png"))


def extract_patches(
    images: Sequence[FloatArray],
    size: int,
    count: int,
    rng: SeededRng,
    dequantize: bool = False,
) -> List[FloatArray]:
    """
    count uniformly random size x size crops.

    With dequantize, U(0, 1/255) noise is added to each crop.
    """
    if count == 0:
        return []
    if not images:
        raise ShapeError("no images to extract patches from")
    for idx, img in enumerate(images):
        if img.shape[0] < size or img.shape[1] < size:
            raise ShapeError(f"image {idx} of shape {img.shape} is smaller than patch size {size}")
    gen = rng.generator
    patches = []
    for _ in range(count):
        img = images[int(gen.integers(len(images)))]
        top = int(gen.integers(img.shape[0] - size + 1))
        left = int(gen.integers(img.shape[1] - size + 1))
        patch = np.array(img[top:top + size, left:left + size], dtype=np.float64)
        if dequantize:
            patch += gen.uniform(0.0, 1.0 / 255.0, size=patch.shape)
        patches.append(patch)
    return patches


def random_mask(rows: int, cols: int, missing_fraction: float, rng: SeededRng) -> np.ndarray:
    """Boolean mask, True = observed, with exactly round(fraction * rows * cols) pixels missing."""
    if not 0.0 <= missing_fraction <= 1.0:
        raise ValueError(f"missing_fraction must be in [0, 1], got {missing_fraction}")
    total = rows * cols
    missing = int(np.floor(missing_fraction * total + 0.5))
    mask = np.ones(total, dtype=bool)
    mask[rng.generator.permutation(total)[:missing]] = False
    return mask.reshape(rows, cols)


def mask_to_grid(mask: np.ndarray) -> FloatArray:
    return mask.astype(np.float64)


def grid_to_mask(grid: FloatArray) -> np.ndarray:
    return np.asarray(grid) >= 0.5
