"""
Two-dimensional spatial LSTM.

At pixel (i, j) the cell reads z = [u_ij, h_{i,j-1}, h_{i-1,j}], where u_ij
holds the pixels at the causal window offsets (zero outside the image), and
computes

    i, o, f_left, f_top = sigmoid(W_* z + b_*)
    g = tanh(W_g z + b_g)
    c_ij = i * g + f_left * c_{i,j-1} + f_top * c_{i-1,j}
    h_ij = o * tanh(c_ij)

Cells on one anti-diagonal do not depend on each other, so forward and
backward passes sweep anti-diagonals and vectorize across them and across a
stack of images.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ..core.config import settings
from ..core.exceptions import NonFiniteError, ShapeError
from ..utils.numeric import FloatArray, SeededRng

logger = logging.getLogger(__name__)

# gate order along the first weight axis
GATE_INPUT, GATE_OUTPUT, GATE_FORGET_LEFT, GATE_FORGET_TOP, GATE_CELL = range(5)
NUM_GATES = 5

DEFAULT_OFFSETS: Tuple[Tuple[int, int], ...] = ((-1, -1), (-1, 0), (-1, 1), (0, -1))


@dataclass(frozen=True)
class CausalWindow:
    """Pixel offsets fed to the recurrence; every offset precedes (0, 0) in raster order."""
    offsets: Tuple[Tuple[int, int], ...] = DEFAULT_OFFSETS

    def __post_init__(self) -> None:
        if not self.offsets:
            raise ShapeError("causal window needs at least one offset")
        for dr, dc in self.offsets:
            if not (dr < 0 or (dr == 0 and dc < 0)):
                raise ShapeError(f"offset {(dr, dc)} is not strictly causal")
        if len(set(self.offsets)) != len(self.offsets):
            raise ShapeError("causal window offsets must be distinct")

    @property
    def size(self) -> int:
        return len(self.offsets)

    def padding(self) -> Tuple[int, int, int]:
        """Zero padding needed above, left and right of the image."""
        top = max(0, max(-dr for dr, _ in self.offsets))
        left = max(0, max(-dc for _, dc in self.offsets))
        right = max(0, max(dc for _, dc in self.offsets))
        return top, left, right

    def gather(self, images: FloatArray) -> FloatArray:
        """(B, H, W) images -> (B, H, W, D_in) window values."""
        B, H, W = images.shape
        top, left, right = self.padding()
        padded = np.zeros((B, H + top, W + left + right))
        padded[:, top:, left:left + W] = images
        out = np.empty((B, H, W, self.size))
        for k, (dr, dc) in enumerate(self.offsets):
            out[..., k] = padded[:, top + dr:top + dr + H, left + dc:left + dc + W]
        return out

    def scatter(self, window_grads: FloatArray) -> FloatArray:
        """Adjoint of gather: (B, H, W, D_in) -> (B, H, W)."""
        B, H, W, _ = window_grads.shape
        top, left, right = self.padding()
        padded = np.zeros((B, H + top, W + left + right))
        for k, (dr, dc) in enumerate(self.offsets):
            padded[:, top + dr:top + dr + H, left + dc:left + dc + W] += window_grads[..., k]
        return padded[:, top:, left:left + W]

    def at(self, image: FloatArray, i: int, j: int) -> FloatArray:
        """Window values at one pixel of a 2-D image."""
        rows, cols = image.shape
        out = np.zeros(self.size)
        for k, (dr, dc) in enumerate(self.offsets):
            r, c = i + dr, j + dc
            if 0 <= r < rows and 0 <= c < cols:
                out[k] = image[r, c]
        return out


@dataclass
class SlstmParams:
    """Stacked gate weights (5, H_d, D_in + 2 H_d) and biases (5, H_d)"""
    weights: FloatArray
    biases: FloatArray

    FIELDS = ("weights", "biases")

    @property
    def hidden_dim(self) -> int:
        return self.biases.shape[1]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[2] - 2 * self.hidden_dim

    def validate(self) -> "SlstmParams":
        if self.biases.ndim != 2 or self.biases.shape[0] != NUM_GATES:
            raise ShapeError(f"biases must be ({NUM_GATES}, H_d), got {self.biases.shape}")
        Hd = self.biases.shape[1]
        if self.weights.ndim != 3 or self.weights.shape[:2] != (NUM_GATES, Hd) or self.weights.shape[2] <= 2 * Hd:
            raise ShapeError(f"weights shape {self.weights.shape} inconsistent with H_d={Hd}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise NonFiniteError("slstm parameters contain non-finite values")
        return self

    def arrays(self) -> Tuple[FloatArray, ...]:
        return (self.weights, self.biases)

    def copy(self) -> "SlstmParams":
        return SlstmParams(self.weights.copy(), self.biases.copy())

    @classmethod
    def zeros(cls, hidden_dim: int, input_dim: int) -> "SlstmParams":
        return cls(
            weights=np.zeros((NUM_GATES, hidden_dim, input_dim + 2 * hidden_dim)),
            biases=np.zeros((NUM_GATES, hidden_dim)),
        )


def init_slstm(input_dim: int, rng: SeededRng, hidden_dim: Optional[int] = None) -> SlstmParams:
    """Uniform ±1/sqrt(fan-in) weights, forget biases at +1."""
    Hd = hidden_dim or settings.SLSTM_HIDDEN
    fan_in = input_dim + 2 * Hd
    bound = 1.0 / math.sqrt(fan_in)
    params = SlstmParams(
        weights=rng.generator.uniform(-bound, bound, size=(NUM_GATES, Hd, fan_in)),
        biases=np.zeros((NUM_GATES, Hd)),
    )
    params.biases[GATE_FORGET_LEFT] = 1.0
    params.biases[GATE_FORGET_TOP] = 1.0
    return params.validate()


@dataclass
class HiddenGrid:
    """
    Hidden and cell states of one forward pass, plus what backward needs.

    hidden_padded / cell_padded are (B, H+1, W+1, H_d) with row 0 and
    column 0 left at zero, so pixel (i, j) lives at [i+1, j+1].
    """
    hidden_padded: FloatArray
    cell_padded: FloatArray
    gates: FloatArray  # (B, H, W, 5, H_d) post-activation
    windows: FloatArray  # (B, H, W, D_in)
    window: CausalWindow
    batched: bool = True
    diagonals: List[Tuple[FloatArray, FloatArray]] = field(default_factory=list, repr=False)

    @property
    def hidden(self) -> FloatArray:
        """(B, H, W, H_d) or (H, W, H_d) for a single image."""
        h = self.hidden_padded[:, 1:, 1:, :]
        return h if self.batched else h[0]

    @property
    def cell(self) -> FloatArray:
        c = self.cell_padded[:, 1:, 1:, :]
        return c if self.batched else c[0]

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        B, H, W, _ = self.windows.shape
        return B, H, W


def anti_diagonals(rows: int, cols: int) -> List[Tuple[FloatArray, FloatArray]]:
    """Row / column index arrays of every anti-diagonal i + j = k, in order."""
    out = []
    for k in range(rows + cols - 1):
        i = np.arange(max(0, k - cols + 1), min(rows - 1, k) + 1)
        out.append((i, k - i))
    return out


def _as_stack(image) -> Tuple[FloatArray, bool]:
    images = np.asarray(image, dtype=np.float64)
    if images.ndim == 2:
        return images[None], False
    if images.ndim == 3:
        return images, True
    raise ShapeError(f"expected a 2-D image or a (B, H, W) stack, got shape {images.shape}")


def _cell(params: SlstmParams, z: FloatArray, c_left: FloatArray, c_top: FloatArray):
    """Gate activations, new cell and hidden state for a batch of inputs z (..., D_z)."""
    Hd = params.hidden_dim
    pre = z @ params.weights.reshape(NUM_GATES * Hd, -1).T + params.biases.reshape(-1)
    pre = pre.reshape(z.shape[:-1] + (NUM_GATES, Hd))
    gates = np.empty_like(pre)
    gates[..., :GATE_CELL, :] = expit(pre[..., :GATE_CELL, :])
    gates[..., GATE_CELL, :] = np.tanh(pre[..., GATE_CELL, :])
    cell = (
        gates[..., GATE_INPUT, :] * gates[..., GATE_CELL, :]
        + gates[..., GATE_FORGET_LEFT, :] * c_left
        + gates[..., GATE_FORGET_TOP, :] * c_top
    )
    hidden = gates[..., GATE_OUTPUT, :] * np.tanh(cell)
    return gates, cell, hidden


def step(
    params: SlstmParams,
    window_values: FloatArray,
    h_left: FloatArray,
    h_top: FloatArray,
    c_left: FloatArray,
    c_top: FloatArray,
) -> Tuple[FloatArray, FloatArray]:
    """One cell update; returns (hidden, cell)."""
    z = np.concatenate([window_values, h_left, h_top])
    _, cell, hidden = _cell(params, z, c_left, c_top)
    return hidden, cell


def forward(params: SlstmParams, image, window: CausalWindow = CausalWindow()) -> HiddenGrid:
    """Raster-causal forward pass over one image or a (B, H, W) stack."""
    images, batched = _as_stack(image)
    if window.size != params.input_dim:
        raise ShapeError(f"window has {window.size} taps but slstm expects {params.input_dim}")
    if not np.all(np.isfinite(images)):
        raise NonFiniteError("image contains non-finite values")
    B, H, W = images.shape
    Hd = params.hidden_dim

    windows = window.gather(images)
    hidden = np.zeros((B, H + 1, W + 1, Hd))
    cell = np.zeros((B, H + 1, W + 1, Hd))
    gates = np.empty((B, H, W, NUM_GATES, Hd))
    diagonals = anti_diagonals(H, W)

    for rows, cols in diagonals:
        h_left = hidden[:, rows + 1, cols, :]
        h_top = hidden[:, rows, cols + 1, :]
        z = np.concatenate([windows[:, rows, cols, :], h_left, h_top], axis=-1)
        g, c, h = _cell(params, z, cell[:, rows + 1, cols, :], cell[:, rows, cols + 1, :])
        gates[:, rows, cols] = g
        cell[:, rows + 1, cols + 1, :] = c
        hidden[:, rows + 1, cols + 1, :] = h

    if not np.all(np.isfinite(cell)):
        raise NonFiniteError("spatial LSTM state exploded (non-finite activation)")
    return HiddenGrid(
        hidden_padded=hidden,
        cell_padded=cell,
        gates=gates,
        windows=windows,
        window=window,
        batched=batched,
        diagonals=diagonals,
    )


def backward(params: SlstmParams, cache: HiddenGrid, upstream) -> Tuple[FloatArray, SlstmParams]:
    """
    Reverse-mode pass through the recurrence.

    upstream is dL/dh with the shape of cache.hidden. Returns dL/d image
    (shaped like the forward input) and parameter gradients.
    """
    B, H, W = cache.image_shape
    Hd = params.hidden_dim
    upstream = np.asarray(upstream, dtype=np.float64)
    if not cache.batched:
        upstream = upstream[None]
    if upstream.shape != (B, H, W, Hd):
        raise ShapeError(f"upstream gradient shape {upstream.shape} != {(B, H, W, Hd)}")
    if cache.windows.shape[-1] != params.input_dim:
        raise ShapeError("cache was produced with a different window size")

    D_in = params.input_dim
    weights_flat = params.weights.reshape(NUM_GATES * Hd, -1)
    d_hidden = np.zeros((B, H + 1, W + 1, Hd))
    d_hidden[:, 1:, 1:, :] = upstream
    d_cell = np.zeros((B, H + 1, W + 1, Hd))
    d_windows = np.zeros((B, H, W, D_in))
    d_weights = np.zeros_like(weights_flat)
    d_biases = np.zeros(NUM_GATES * Hd)
    hidden = cache.hidden_padded
    cell = cache.cell_padded

    for rows, cols in reversed(cache.diagonals or anti_diagonals(H, W)):
        g = cache.gates[:, rows, cols]  # (B, n, 5, Hd)
        gi = g[..., GATE_INPUT, :]
        go = g[..., GATE_OUTPUT, :]
        gfl = g[..., GATE_FORGET_LEFT, :]
        gft = g[..., GATE_FORGET_TOP, :]
        gc = g[..., GATE_CELL, :]
        c = cell[:, rows + 1, cols + 1, :]
        c_left = cell[:, rows + 1, cols, :]
        c_top = cell[:, rows, cols + 1, :]
        tanh_c = np.tanh(c)

        dh = d_hidden[:, rows + 1, cols + 1, :]
        dc = d_cell[:, rows + 1, cols + 1, :] + dh * go * (1.0 - tanh_c * tanh_c)

        d_pre = np.empty_like(g)
        d_pre[..., GATE_INPUT, :] = dc * gc * gi * (1.0 - gi)
        d_pre[..., GATE_OUTPUT, :] = dh * tanh_c * go * (1.0 - go)
        d_pre[..., GATE_FORGET_LEFT, :] = dc * c_left * gfl * (1.0 - gfl)
        d_pre[..., GATE_FORGET_TOP, :] = dc * c_top * gft * (1.0 - gft)
        d_pre[..., GATE_CELL, :] = dc * gi * (1.0 - gc * gc)
        d_pre = d_pre.reshape(B, rows.size, NUM_GATES * Hd)

        z = np.concatenate(
            [cache.windows[:, rows, cols, :], hidden[:, rows + 1, cols, :], hidden[:, rows, cols + 1, :]],
            axis=-1,
        )
        d_weights += np.einsum("bng,bnz->gz", d_pre, z)
        d_biases += d_pre.sum(axis=(0, 1))

        dz = d_pre @ weights_flat
        d_windows[:, rows, cols, :] = dz[..., :D_in]
        # left and top neighbours of one diagonal can coincide, so two separate updates
        d_hidden[:, rows + 1, cols, :] += dz[..., D_in:D_in + Hd]
        d_hidden[:, rows, cols + 1, :] += dz[..., D_in + Hd:]
        d_cell[:, rows + 1, cols, :] += dc * gfl
        d_cell[:, rows, cols + 1, :] += dc * gft

    d_image = cache.window.scatter(d_windows)
    if not cache.batched:
        d_image = d_image[0]
    grads = SlstmParams(
        weights=d_weights.reshape(params.weights.shape),
        biases=d_biases.reshape(params.biases.shape),
    )
    return d_image, grads


def window_from_offsets(offsets: Sequence[Sequence[int]]) -> CausalWindow:
    return CausalWindow(tuple((int(dr), int(dc)) for dr, dc in offsets))
