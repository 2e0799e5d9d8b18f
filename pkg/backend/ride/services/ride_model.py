"""
RIDE image density: p(x) = Π_ij p(x_ij | h_ij), where h_ij is the spatial
LSTM summary of the causal context and each factor is an MCGSM.

Provides whole-image log-likelihood, exact input gradients (backprop through
the recurrence), the four-flip gradient average, posterior entropy maps and
ancestral sampling.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from ..core.exceptions import NonFiniteError, ShapeError
from ..utils.numeric import FloatArray, SeededRng
from . import mcgsm, slstm
from .mcgsm import McgsmParams
from .slstm import CausalWindow, SlstmParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Preprocessing:
    """Intensity range the model was trained on and whether training dequantized"""
    intensity_min: float = 0.0
    intensity_max: float = 1.0
    dequantize: bool = True


@dataclass
class RideModel:
    slstm: SlstmParams
    mcgsm: McgsmParams
    window: CausalWindow = field(default_factory=CausalWindow)
    preprocessing: Preprocessing = field(default_factory=Preprocessing)

    def validate(self) -> "RideModel":
        self.slstm.validate()
        self.mcgsm.validate()
        if self.mcgsm.dim != self.slstm.hidden_dim:
            raise ShapeError(f"mcgsm dim {self.mcgsm.dim} != slstm hidden dim {self.slstm.hidden_dim}")
        if self.window.size != self.slstm.input_dim:
            raise ShapeError(f"window size {self.window.size} != slstm input dim {self.slstm.input_dim}")
        return self

    def copy(self) -> "RideModel":
        return RideModel(self.slstm.copy(), self.mcgsm.copy(), self.window, self.preprocessing)

    def param_arrays(self) -> Tuple[FloatArray, ...]:
        """All trainable arrays in a fixed order (slstm first, then mcgsm)."""
        return self.slstm.arrays() + self.mcgsm.arrays()

    @classmethod
    def from_arrays(cls, like: "RideModel", arrays) -> "RideModel":
        arrays = list(arrays)
        n = len(SlstmParams.FIELDS)
        return cls(SlstmParams(*arrays[:n]), McgsmParams(*arrays[n:]), like.window, like.preprocessing)

    @property
    def max_entropy(self) -> float:
        return float(np.log(self.mcgsm.num_components * self.mcgsm.num_scales))


@dataclass
class LikelihoodResult:
    total: float  # nats
    per_pixel: float
    pixel_log_densities: FloatArray  # (H, W)


@dataclass
class PriorTerms:
    """What one inference iteration needs from the prior"""
    log_prior: float
    gradient: FloatArray
    entropy: FloatArray


def init_model(
    rng: SeededRng,
    num_components: Optional[int] = None,
    num_scales: Optional[int] = None,
    hidden_dim: Optional[int] = None,
    window: Optional[CausalWindow] = None,
    rank: Optional[int] = None,
    preprocessing: Optional[Preprocessing] = None,
) -> RideModel:
    window = window or CausalWindow()
    slstm_params = slstm.init_slstm(window.size, rng, hidden_dim=hidden_dim)
    mcgsm_params = mcgsm.init_mcgsm(num_components, num_scales, slstm_params.hidden_dim, rng, rank=rank)
    return RideModel(slstm_params, mcgsm_params, window, preprocessing or Preprocessing()).validate()


def _check_image(model: RideModel, image) -> FloatArray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ShapeError(f"expected a non-empty 2-D image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise NonFiniteError("image contains non-finite values")
    return image


def _features(model: RideModel, images: FloatArray):
    cache = slstm.forward(model.slstm, images, model.window)
    return cache, cache.hidden.reshape(-1, model.slstm.hidden_dim)


def log_likelihood(model: RideModel, image) -> LikelihoodResult:
    """Σ_ij log p(x_ij | h_ij) with zero-padded context at the borders."""
    image = _check_image(model, image)
    _, feats = _features(model, image)
    per_pixel = mcgsm.cond_log_density_batch(model.mcgsm, feats, image.reshape(-1))
    total = float(np.sum(per_pixel))
    if not np.isfinite(total):
        raise NonFiniteError("log-likelihood is not finite")
    return LikelihoodResult(total=total, per_pixel=total / image.size, pixel_log_densities=per_pixel.reshape(image.shape))


def _input_gradient(model: RideModel, image: FloatArray) -> Tuple[FloatArray, float, FloatArray]:
    """∇_x log p(x), the log-likelihood and the flattened features, from one forward pass."""
    cache, feats = _features(model, image)
    pixels = image.reshape(-1)
    log_density = mcgsm.cond_log_density_batch(model.mcgsm, feats, pixels)
    d_pixel, d_feats, _ = mcgsm.cond_grads_batch(model.mcgsm, feats, pixels, with_params=False)
    d_image, _ = slstm.backward(model.slstm, cache, d_feats.reshape(cache.hidden.shape))
    grad = d_pixel.reshape(image.shape) + d_image
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("input gradient is not finite")
    return grad, float(np.sum(log_density)), feats


def grad_log_likelihood_input(model: RideModel, image) -> FloatArray:
    """Exact ∇_x log p(x): direct term plus backprop from every causal successor."""
    image = _check_image(model, image)
    return _input_gradient(model, image)[0]


FLIPS: List[Callable[[FloatArray], FloatArray]] = [
    lambda a: a,
    lambda a: a[:, ::-1],
    lambda a: a[::-1, :],
    lambda a: a[::-1, ::-1],
]


def grad_direction(model: RideModel, image, direction: int) -> FloatArray:
    """Gradient of the factorization that scans from the given corner."""
    image = _check_image(model, image)
    flip = FLIPS[direction]
    return np.ascontiguousarray(flip(grad_log_likelihood_input(model, np.ascontiguousarray(flip(image)))))


def _average_directions(model: RideModel, image: FloatArray, identity_grad: FloatArray) -> FloatArray:
    total = identity_grad.copy()
    for direction in range(1, len(FLIPS)):
        total += grad_direction(model, image, direction)
    return total / len(FLIPS)


def grad_log_likelihood_4dir(model: RideModel, image) -> FloatArray:
    """Average of the input gradients of the four flipped factorizations."""
    image = _check_image(model, image)
    return _average_directions(model, image, grad_direction(model, image, 0))


def entropy_map(model: RideModel, image) -> FloatArray:
    """Per-pixel posterior entropy (nats) of the mixture, using the observed value."""
    image = _check_image(model, image)
    _, feats = _features(model, image)
    return mcgsm.posterior_entropy_batch(model.mcgsm, feats, image.reshape(-1)).reshape(image.shape)


def prior_terms(model: RideModel, image, four_directions: bool = True) -> PriorTerms:
    """Log-prior, input gradient and identity entropy map sharing one forward pass."""
    image = _check_image(model, image)
    grad, log_prior, feats = _input_gradient(model, image)
    entropy = mcgsm.posterior_entropy_batch(model.mcgsm, feats, image.reshape(-1)).reshape(image.shape)
    if four_directions:
        grad = _average_directions(model, image, grad)
    return PriorTerms(log_prior=log_prior, gradient=grad, entropy=entropy)


def log_likelihood_and_param_grads(model: RideModel, images: FloatArray) -> Tuple[float, Tuple[FloatArray, ...]]:
    """Summed log-likelihood of a (B, H, W) stack and its gradient w.r.t. every parameter array."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ShapeError(f"expected a (B, H, W) stack, got shape {images.shape}")
    cache, feats = _features(model, images)
    pixels = images.reshape(-1)
    log_density = mcgsm.cond_log_density_batch(model.mcgsm, feats, pixels)
    _, d_feats, mcgsm_grads = mcgsm.cond_grads_batch(model.mcgsm, feats, pixels, with_params=True)
    assert mcgsm_grads is not None
    _, slstm_grads = slstm.backward(model.slstm, cache, d_feats.reshape(cache.hidden.shape))
    return float(np.sum(log_density)), slstm_grads.arrays() + mcgsm_grads.arrays()


def sample(model: RideModel, rows: int, cols: int, rng: SeededRng) -> FloatArray:
    """Raster-order ancestral sample."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"sample size must be at least 1x1, got {rows}x{cols}")
    Hd = model.slstm.hidden_dim
    image = np.zeros((rows, cols))
    hidden = np.zeros((rows + 1, cols + 1, Hd))
    cell = np.zeros((rows + 1, cols + 1, Hd))
    for i in range(rows):
        for j in range(cols):
            h, c = slstm.step(
                model.slstm,
                model.window.at(image, i, j),
                hidden[i + 1, j],
                hidden[i, j + 1],
                cell[i + 1, j],
                cell[i, j + 1],
            )
            hidden[i + 1, j + 1] = h
            cell[i + 1, j + 1] = c
            image[i, j] = mcgsm.sample_pixel(model.mcgsm, h, rng)
    if not np.all(np.isfinite(image)):
        raise NonFiniteError("sampled image is not finite")
    return image
