"""
Compressive measurement operators.

Two kinds of Φ are supported:

- dense: i.i.d. N(0, 1) entries with orthonormalized rows, stored explicitly
- fwht:  m distinct rows of the 1/√n-normalized natural-ordered Hadamard
         matrix, applied matrix-free in O(n log n)

Images are flattened in raster (row-major) order. Both kinds are
row-orthonormal (ΦΦᵀ = I), which is what makes project_affine a single
matrix-free step.

Operators and measurements can be written to small files with a text header
and a little-endian binary payload; see docs/MODEL_FORMAT.md.
"""
import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from ..core.exceptions import ModelFormatError, ModelVersionError, OperatorError, ShapeError
from ..utils.numeric import FloatArray, SeededRng, make_rng, rng_gaussian

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ORTHONORMAL_TOL = 1e-10

OPERATOR_MAGIC = "RIDE-OPERATOR"
MEASUREMENT_MAGIC = "RIDE-MEASUREMENTS"
FILE_VERSION = 1
_HEADER_END = b"end\n"


def is_power_of_2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


def fwht(values, normalize: bool = True) -> FloatArray:
    """
    Walsh-Hadamard transform along the last axis, natural (Sylvester) order.

    With normalize the transform is orthonormal and its own inverse.
    """
    x = np.array(values, dtype=np.float64, copy=True)
    n = x.shape[-1]
    if not is_power_of_2(n):
        raise ShapeError(f"FWHT length must be a power of 2, got {n}")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        x = x.reshape(lead + (n // (2 * h), 2, h))
        a = x[..., 0, :]
        b = x[..., 1, :]
        x = np.stack((a + b, a - b), axis=-2)
        h *= 2
    x = x.reshape(lead + (n,))
    if normalize:
        x /= np.sqrt(n)
    return x


class MeasurementOperator(ABC):
    """Linear map from raster-flattened images (n,) to measurements (m,)"""

    kind: str = ""

    def __init__(self, n: int, m: int, seed: Optional[int]):
        if not 1 <= m <= n:
            raise OperatorError(f"need 1 <= m <= n, got m={m}, n={n}")
        self.n = n
        self.m = m
        self.seed = seed

    @property
    def row_orthonormal(self) -> bool:
        return True

    @property
    def measurement_rate(self) -> float:
        return self.m / self.n

    @abstractmethod
    def forward(self, x: FloatArray) -> FloatArray:
        """Φx for a flat (n,) vector"""

    @abstractmethod
    def adjoint(self, y: FloatArray) -> FloatArray:
        """Φᵀy for a flat (m,) vector"""

    @abstractmethod
    def matrix(self) -> FloatArray:
        """Explicit (m, n) matrix"""

    def _check_signal(self, x) -> FloatArray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size != self.n:
            raise ShapeError(f"operator expects {self.n} pixels, got {x.size}")
        return x

    def _check_measurements(self, y) -> FloatArray:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.size != self.m:
            raise ShapeError(f"operator produces {self.m} measurements, got {y.size}")
        return y

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, m={self.m}, seed={self.seed})"


class DenseOperator(MeasurementOperator):
    kind = "dense"

    def __init__(self, matrix, seed: Optional[int] = None, row_orthonormal: Optional[bool] = None):
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise OperatorError(f"dense operator needs a 2-D matrix, got shape {matrix.shape}")
        super().__init__(matrix.shape[1], matrix.shape[0], seed)
        if not np.all(np.isfinite(matrix)):
            raise OperatorError("operator matrix has non-finite entries")
        self._matrix = matrix
        self._matrix.setflags(write=False)
        if row_orthonormal is None:
            gram = matrix @ matrix.T
            row_orthonormal = bool(np.max(np.abs(gram - np.eye(self.m))) <= ORTHONORMAL_TOL)
        self._row_orthonormal = row_orthonormal

    @property
    def row_orthonormal(self) -> bool:
        return self._row_orthonormal

    def forward(self, x: FloatArray) -> FloatArray:
        return self._matrix @ self._check_signal(x)

    def adjoint(self, y: FloatArray) -> FloatArray:
        return self._matrix.T @ self._check_measurements(y)

    def matrix(self) -> FloatArray:
        return self._matrix

    def fingerprint(self) -> str:
        """SHA-256 of the little-endian float64 matrix bytes"""
        return hashlib.sha256(self._matrix.astype("<f8").tobytes()).hexdigest()


class FwhtOperator(MeasurementOperator):
    kind = "fwht"

    def __init__(self, n: int, rows, seed: Optional[int] = None):
        if not is_power_of_2(n):
            raise OperatorError(f"fwht operator needs a power-of-2 signal length, got {n}")
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        super().__init__(n, rows.size, seed)
        if rows.min() < 0 or rows.max() >= n:
            raise OperatorError(f"row indices must lie in [0, {n})")
        if np.unique(rows).size != rows.size:
            raise OperatorError("row indices must be distinct")
        self.rows = np.sort(rows)
        self.rows.setflags(write=False)

    def forward(self, x: FloatArray) -> FloatArray:
        return fwht(self._check_signal(x))[self.rows]

    def adjoint(self, y: FloatArray) -> FloatArray:
        full = np.zeros(self.n)
        full[self.rows] = self._check_measurements(y)
        # the normalized Hadamard matrix is symmetric
        return fwht(full)

    def matrix(self) -> FloatArray:
        return fwht(np.eye(self.n))[self.rows]


@dataclass
class Measurements:
    """y = Φx + σ·noise, plus the image shape needed to fold the recovery back"""
    values: FloatArray
    sigma: float = 0.0
    image_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("measurements contain non-finite values")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def m(self) -> int:
        return self.values.size


def _orthonormal_rows(gaussian: FloatArray) -> FloatArray:
    """Orthonormalize the rows of an (m, n) matrix, m <= n: QR of the transpose, twice."""
    q = gaussian.T
    for _ in range(2):
        q, r = np.linalg.qr(q)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        q = q * signs
    return np.ascontiguousarray(q.T)


def make_gaussian_operator(n: int, m: int, seed: int) -> DenseOperator:
    if not 1 <= m <= n:
        raise OperatorError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = make_rng(seed)
    gaussian = rng.generator.standard_normal((m, n))
    return DenseOperator(_orthonormal_rows(gaussian), seed=seed, row_orthonormal=True)


def make_fwht_operator(n: int, m: int, seed: int) -> FwhtOperator:
    if not is_power_of_2(n):
        raise OperatorError(f"fwht operator needs a power-of-2 signal length, got {n}")
    if not 1 <= m <= n:
        raise OperatorError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = make_rng(seed)
    rows = rng.generator.choice(n, size=m, replace=False)
    return FwhtOperator(n, rows, seed=seed)


def make_operator(kind: str, n: int, m: int, seed: int) -> MeasurementOperator:
    if kind == "gaussian" or kind == DenseOperator.kind:
        return make_gaussian_operator(n, m, seed)
    if kind == FwhtOperator.kind:
        return make_fwht_operator(n, m, seed)
    raise OperatorError(f"unknown operator kind {kind!r}; expected 'gaussian' or 'fwht'")


def measurement_count(n: int, rate: float) -> int:
    """M = round(rate * n), at least 1"""
    if not 0.0 < rate <= 1.0:
        raise OperatorError(f"measurement rate must be in (0, 1], got {rate}")
    return max(1, min(n, int(np.floor(rate * n + 0.5))))


def measure(op: MeasurementOperator, image, sigma: float = 0.0, rng: Optional[SeededRng] = None) -> Measurements:
    image = np.asarray(image, dtype=np.float64)
    if image.size != op.n:
        raise ShapeError(f"image has {image.size} pixels, operator expects {op.n}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    y = op.forward(image.reshape(-1))
    if sigma > 0:
        if rng is None:
            raise ValueError("noisy measurements need an rng")
        y = y + sigma * rng_gaussian(rng, op.m)
    shape = (int(image.shape[0]), int(image.shape[1])) if image.ndim == 2 else None
    return Measurements(values=y, sigma=float(sigma), image_shape=shape)


def residual(op: MeasurementOperator, x, y: Measurements) -> FloatArray:
    """Φx − y"""
    if y.m != op.m:
        raise ShapeError(f"operator has {op.m} rows but {y.m} measurements were given")
    return op.forward(np.asarray(x, dtype=np.float64).reshape(-1)) - y.values


def project_affine(op: MeasurementOperator, x, y: Measurements) -> FloatArray:
    """Euclidean projection onto {x : Φx = y}: x − Φᵀ(Φx − y) for row-orthonormal Φ."""
    if not op.row_orthonormal:
        raise OperatorError("projection requires a row-orthonormal operator (ΦΦᵀ = I)")
    x = np.asarray(x, dtype=np.float64)
    if x.size != op.n:
        raise ShapeError(f"image has {x.size} pixels, operator expects {op.n}")
    r = residual(op, x, y)
    return (x.reshape(-1) - op.adjoint(r)).reshape(x.shape)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def _write_header_file(path: PathLike, magic: str, fields: Dict[str, str], payload: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{magic} {FILE_VERSION}"] + [f"{key} {value}" for key, value in fields.items()]
    header = ("\n".join(lines) + "\n").encode("ascii") + _HEADER_END
    path.write_bytes(header + payload)
    return path


def _read_header_file(path: PathLike, magic: str) -> Tuple[Dict[str, str], bytes]:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"file not found: {path}")
    data = path.read_bytes()
    end = data.find(b"\n" + _HEADER_END)
    if end < 0:
        raise ModelFormatError(f"{path}: header is not terminated by an 'end' line")
    try:
        lines = data[:end].decode("ascii").split("\n")
    except UnicodeDecodeError:
        raise ModelFormatError(f"{path}: header is not ASCII text")
    first = lines[0].split()
    if len(first) != 2 or first[0] != magic:
        raise ModelFormatError(f"{path}: expected a {magic} file")
    if first[1] != str(FILE_VERSION):
        raise ModelVersionError(f"{path}: unsupported {magic} version {first[1]}")
    fields: Dict[str, str] = {}
    for line in lines[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
    return fields, data[end + 1 + len(_HEADER_END):]


def _require(fields: Dict[str, str], key: str, path: PathLike) -> str:
    if key not in fields:
        raise ModelFormatError(f"{path}: missing header field '{key}'")
    return fields[key]


def write_operator(op: MeasurementOperator, path: PathLike) -> Path:
    """Descriptor file: kind, n, m, seed; fwht adds the row indices, dense a matrix hash."""
    if op.seed is None:
        raise OperatorError("only seeded operators can be written to a descriptor")
    fields = {"kind": op.kind, "n": str(op.n), "m": str(op.m), "seed": str(op.seed)}
    payload = b""
    if isinstance(op, DenseOperator):
        fields["sha256"] = op.fingerprint()
    elif isinstance(op, FwhtOperator):
        payload = op.rows.astype("<i8").tobytes()
    return _write_header_file(path, OPERATOR_MAGIC, fields, payload)


def read_operator(path: PathLike) -> MeasurementOperator:
    fields, payload = _read_header_file(path, OPERATOR_MAGIC)
    try:
        kind = _require(fields, "kind", path)
        n = int(_require(fields, "n", path))
        m = int(_require(fields, "m", path))
        seed = int(_require(fields, "seed", path))
    except ValueError as e:
        raise ModelFormatError(f"{path}: bad header value ({e})")

    if kind == DenseOperator.kind:
        op = make_gaussian_operator(n, m, seed)
        expected = _require(fields, "sha256", path)
        if op.fingerprint() != expected:
            raise ModelFormatError(f"{path}: regenerated operator does not match its recorded SHA-256")
        return op
    if kind == FwhtOperator.kind:
        if len(payload) != 8 * m:
            raise ModelFormatError(f"{path}: expected {8 * m} bytes of row indices, found {len(payload)}")
        rows = np.frombuffer(payload, dtype="<i8").astype(np.int64)
        try:
            return FwhtOperator(n, rows, seed=seed)
        except OperatorError as e:
            raise ModelFormatError(f"{path}: {e}")
    raise ModelFormatError(f"{path}: unknown operator kind {kind!r}")


def write_measurements(y: Measurements, path: PathLike) -> Path:
    fields = {"m": str(y.m), "sigma": repr(float(y.sigma))}
    if y.image_shape is not None:
        fields["shape"] = f"{y.image_shape[0]}x{y.image_shape[1]}"
    return _write_header_file(path, MEASUREMENT_MAGIC, fields, y.values.astype("<f8").tobytes())


def read_measurements(path: PathLike) -> Measurements:
    fields, payload = _read_header_file(path, MEASUREMENT_MAGIC)
    try:
        m = int(_require(fields, "m", path))
        sigma = float(_require(fields, "sigma", path))
        shape = None
        if "shape" in fields:
            rows, cols = fields["shape"].split("x")
            shape = (int(rows), int(cols))
    except ValueError as e:
        raise ModelFormatError(f"{path}: bad header value ({e})")
    if len(payload) != 8 * m:
        raise ModelFormatError(f"{path}: expected {8 * m} bytes of measurements, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    try:
        return Measurements(values=values, sigma=sigma, image_shape=shape)
    except (ShapeError, ValueError) as e:
        raise ModelFormatError(f"{path}: {e}")
