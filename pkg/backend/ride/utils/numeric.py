"""
Numeric core: grid validation, seeded random streams, Adam and a
finite-difference gradient oracle.

Everything is float64. Random streams use the counter-based Philox
generator so a seed reproduces the same stream on every platform.
"""
import logging
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from ..core.config import settings
from ..core.exceptions import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

RNG_ALGORITHM = "philox4x64"


def as_grid(values, name: str = "grid") -> FloatArray:
    """Return values as a finite 2-D float64 array, or raise."""
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ShapeError(f"{name} must be a non-empty 2-D grid, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return grid


@dataclass
class SeededRng:
    """A seeded random stream; identical seeds give identical streams."""
    seed: int
    algorithm: str = RNG_ALGORITHM
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(self.seed))))


def make_rng(seed: int) -> SeededRng:
    return SeededRng(seed=int(seed))


def derive_seed(seed: int, purpose: str) -> int:
    """Fan one run seed out into an independent sub-seed per purpose."""
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(purpose.encode("utf-8"))])
    return int(sequence.generate_state(1, np.uint64)[0] >> np.uint64(1))


def rng_gaussian(rng: SeededRng, n: int) -> FloatArray:
    """n i.i.d. standard normal draws; advances the stream."""
    if n < 1:
        raise ValueError(f"rng_gaussian needs n >= 1, got {n}")
    return rng.generator.standard_normal(n)


def rng_uniform(rng: SeededRng, shape, low: float = 0.0, high: float = 1.0) -> FloatArray:
    return rng.generator.uniform(low, high, size=shape)


@dataclass
class AdamState:
    """Adam moment buffers and hyperparameters"""
    m: FloatArray
    v: FloatArray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def fresh(cls, size: int, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=np.zeros(size),
            v=np.zeros(size),
            step=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            learning_rate=learning_rate,
        )


def adam_step(params: FloatArray, grads: FloatArray, state: AdamState) -> Tuple[FloatArray, AdamState]:
    """
    One bias-corrected Adam descent step.

    Departs from textbook Adam in one place: an element whose gradient is
    exactly zero in this step keeps its value instead of coasting on its
    first moment, so an all-zero gradient is a fixed point. Its moments still
    decay. Inputs are not modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape or state.v.shape != params.shape:
        raise ShapeError(
            f"adam_step shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.m.shape}/{state.v.shape}"
        )
    if not np.all(np.isfinite(grads)):
        bad = int(np.count_nonzero(~np.isfinite(grads)))
        raise NonFiniteError(f"adam_step received {bad} non-finite gradient entries")

    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    update = np.where(grads != 0.0, update, 0.0)
    return params - update, replace(state, m=m, v=v, step=t)


def finite_diff_grad(f: Callable[[FloatArray], float], x, h: Optional[float] = None) -> FloatArray:
    """Central-difference gradient of a scalar function of a grid."""
    h = settings.FINITE_DIFF_STEP if h is None else h
    if not h > 0:
        raise ValueError("finite difference step must be > 0")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + h
        f_plus = float(f(x))
        flat[k] = original - h
        f_minus = float(f(x))
        flat[k] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"function is not finite near element {k}")
        out[k] = (f_plus - f_minus) / (2.0 * h)
    return grad


def flatten_params(arrays: Sequence[FloatArray]) -> FloatArray:
    """Concatenate parameter arrays into one flat vector."""
    return np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays])


def unflatten_params(vector: FloatArray, shapes: Sequence[Tuple[int, ...]]) -> List[FloatArray]:
    """Split a flat vector back into arrays of the given shapes."""
    sizes = [int(np.prod(s)) for s in shapes]
    if int(np.sum(sizes)) != vector.size:
        raise ShapeError(f"vector of length {vector.size} does not match shapes {list(shapes)}")
    out: List[FloatArray] = []
    offset = 0
    for shape, size in zip(shapes, sizes):
        out.append(vector[offset:offset + size].reshape(shape).copy())
        offset += size
    return out
