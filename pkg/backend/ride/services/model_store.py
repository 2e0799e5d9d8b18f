"""
Binary model files.

Layout (all little-endian):

    magic        8 bytes  b"RIDEMODL"
    version      u32
    dims         5 x u32  C, S, R, hidden_dim, window size K
    window       K x (i32, i32) offsets
    preprocess   f64 intensity_min, f64 intensity_max, u8 dequantize
    blocks       float64 arrays in RideModel.param_arrays() order
    checksum     32 bytes SHA-256 of everything above

See docs/MODEL_FORMAT.md.
"""
import hashlib
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from ..core.exceptions import ModelFormatError, ModelVersionError, ShapeError
from .mcgsm import McgsmParams
from .ride_model import Preprocessing, RideModel
from .slstm import NUM_GATES, CausalWindow, SlstmParams, window_from_offsets

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"RIDEMODL"
FORMAT_VERSION = 1
_CHECKSUM_BYTES = 32
_PREFIX = struct.Struct("<8sI")
_DIMS = struct.Struct("<5I")
_OFFSET = struct.Struct("<2i")
_PREPROCESS = struct.Struct("<ddB")


def _block_shapes(C: int, S: int, R: int, D: int, K: int):
    slstm_shapes = [(NUM_GATES, D, K + 2 * D), (NUM_GATES, D)]
    mcgsm_shapes = [(C, S), (C, S), (C, R, D), (C, D)]
    return slstm_shapes + mcgsm_shapes


def encode_model(model: RideModel) -> bytes:
    model.validate()
    m = model.mcgsm
    parts = [
        _PREFIX.pack(MAGIC, FORMAT_VERSION),
        _DIMS.pack(m.num_components, m.num_scales, m.rank, model.slstm.hidden_dim, model.window.size),
    ]
    parts += [_OFFSET.pack(dr, dc) for dr, dc in model.window.offsets]
    p = model.preprocessing
    parts.append(_PREPROCESS.pack(p.intensity_min, p.intensity_max, int(p.dequantize)))
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.param_arrays()]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_model(data: bytes) -> RideModel:
    if len(data) < _PREFIX.size or data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a RIDE model file: bad magic bytes")
    if len(data) < _PREFIX.size + _CHECKSUM_BYTES:
        raise ModelFormatError(f"model file truncated at {len(data)} bytes")
    _, version = _PREFIX.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"model file format version {version} is not supported (expected {FORMAT_VERSION})")

    body, checksum = data[:-_CHECKSUM_BYTES], data[-_CHECKSUM_BYTES:]
    pos = _PREFIX.size
    try:
        C, S, R, D, K = _DIMS.unpack_from(body, pos)
        pos += _DIMS.size
        offsets = []
        for _ in range(K):
            offsets.append(_OFFSET.unpack_from(body, pos))
            pos += _OFFSET.size
        lo, hi, dequantize = _PREPROCESS.unpack_from(body, pos)
        pos += _PREPROCESS.size
    except struct.error:
        raise ModelFormatError(f"model file truncated inside its header (byte offset {pos})")

    shapes = _block_shapes(C, S, R, D, K)
    expected = pos + sum(8 * int(np.prod(s)) for s in shapes)
    if len(body) != expected:
        raise ModelFormatError(
            f"model file has {len(body) + _CHECKSUM_BYTES} bytes, dimensions C={C} S={S} R={R} D={D} K={K} "
            f"require {expected + _CHECKSUM_BYTES}"
        )
    if hashlib.sha256(body).digest() != checksum:
        raise ModelFormatError("model file checksum mismatch")

    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape))
        pos += 8 * count

    try:
        window = window_from_offsets(offsets)
        n = len(SlstmParams.FIELDS)
        model = RideModel(
            SlstmParams(*arrays[:n]),
            McgsmParams(*arrays[n:]),
            window,
            Preprocessing(intensity_min=lo, intensity_max=hi, dequantize=bool(dequantize)),
        )
        return model.validate()
    except ShapeError as e:
        raise ModelFormatError(f"model file is inconsistent: {e}")


def save(model: RideModel, path: PathLike) -> str:
    """Write the model atomically; returns the SHA-256 hex digest of the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_model(model)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    digest = hashlib.sha256(data).hexdigest()
    logger.info("saved model to %s (%d bytes, sha256 %s)", path, len(data), digest[:12])
    return digest


def load(path: PathLike) -> RideModel:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"model file not found: {path}")
    model = decode_model(path.read_bytes())
    logger.debug("loaded model %s: C=%d S=%d hidden=%d", path, model.mcgsm.num_components, model.mcgsm.num_scales, model.slstm.hidden_dim)
    return model


def file_sha256(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
