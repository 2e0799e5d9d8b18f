"""
Mixture of conditional Gaussian scale mixtures.

Per-pixel conditional density p(x | h) with a softmax gate over
(component, scale) pairs

    p(c, s | h) ∝ exp(eta_cs - 0.5 * exp(alpha_cs) * hᵀ K_c h),   K_c = B_cᵀ B_c

and Gaussian experts N(x; a_cᵀ h, exp(-alpha_cs)).

The *_batch functions evaluate N feature vectors at once and are what the
image model uses; the single-vector functions wrap them.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from ..core.config import settings
from ..core.exceptions import DegeneratePosteriorError, NonFiniteError, ShapeError
from ..utils.numeric import FloatArray, SeededRng

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class McgsmParams:
    """Gate biases, log-precisions, quadratic-form factors and linear predictors"""
    gate_bias: FloatArray  # (C, S)
    log_precision: FloatArray  # (C, S)
    quad_factors: FloatArray  # (C, R, D)
    predictors: FloatArray  # (C, D)

    FIELDS = ("gate_bias", "log_precision", "quad_factors", "predictors")

    @property
    def num_components(self) -> int:
        return self.gate_bias.shape[0]

    @property
    def num_scales(self) -> int:
        return self.gate_bias.shape[1]

    @property
    def rank(self) -> int:
        return self.quad_factors.shape[1]

    @property
    def dim(self) -> int:
        return self.predictors.shape[1]

    def validate(self) -> "McgsmParams":
        C, S = self.gate_bias.shape
        if self.log_precision.shape != (C, S):
            raise ShapeError(f"log_precision shape {self.log_precision.shape} != {(C, S)}")
        if self.quad_factors.ndim != 3 or self.quad_factors.shape[0] != C:
            raise ShapeError(f"quad_factors shape {self.quad_factors.shape} does not start with C={C}")
        R, D = self.quad_factors.shape[1:]
        if self.predictors.shape != (C, D):
            raise ShapeError(f"predictors shape {self.predictors.shape} != {(C, D)}")
        if min(C, S, R, D) < 1:
            raise ShapeError("C, S, R and D must all be >= 1")
        for name in self.FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteError(f"mcgsm.{name} contains non-finite values")
        return self

    def arrays(self) -> Tuple[FloatArray, ...]:
        return tuple(getattr(self, name) for name in self.FIELDS)

    def copy(self) -> "McgsmParams":
        return McgsmParams(*(a.copy() for a in self.arrays()))

    @classmethod
    def zeros_like(cls, other: "McgsmParams") -> "McgsmParams":
        return cls(*(np.zeros_like(a) for a in other.arrays()))


def init_mcgsm(
    num_components: Optional[int],
    num_scales: Optional[int],
    dim: int,
    rng: SeededRng,
    rank: Optional[int] = None,
) -> McgsmParams:
    """Random initialization with scales spread over a range of precisions."""
    C = num_components or settings.MCGSM_COMPONENTS
    S = num_scales or settings.MCGSM_SCALES
    R = rank or settings.MCGSM_RANK or dim
    gen = rng.generator
    scale_levels = np.linspace(1.0, 6.0, S) if S > 1 else np.array([3.0])
    params = McgsmParams(
        gate_bias=0.01 * gen.standard_normal((C, S)),
        log_precision=scale_levels[None, :] + 0.1 * gen.standard_normal((C, S)),
        quad_factors=gen.standard_normal((C, R, dim)) * (0.01 / math.sqrt(dim)),
        predictors=gen.standard_normal((C, dim)) * (0.01 / math.sqrt(dim)),
    )
    return params.validate()


def _check_features(params: McgsmParams, features: FloatArray) -> FloatArray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.dim:
        raise ShapeError(f"features must be (N, {params.dim}), got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise NonFiniteError("feature vector contains non-finite values")
    return features


def _check_pixels(pixels, n: int) -> FloatArray:
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1)
    if pixels.shape[0] != n:
        raise ShapeError(f"expected {n} pixel values, got {pixels.shape[0]}")
    if not np.all(np.isfinite(pixels)):
        raise NonFiniteError("pixel value is not finite")
    return pixels


def _gate_terms(params: McgsmParams, features: FloatArray):
    """Projections B_c h, quadratic forms, gate logits and gate log-probs."""
    projected = np.einsum("crd,nd->ncr", params.quad_factors, features)
    quad = np.sum(projected * projected, axis=2)  # (N, C)
    precision = np.exp(params.log_precision)  # (C, S)
    logits = params.gate_bias[None, :, :] - 0.5 * precision[None, :, :] * quad[:, :, None]
    log_gate = logits - logsumexp(logits, axis=(1, 2), keepdims=True)
    return projected, quad, precision, log_gate


def _joint_terms(params: McgsmParams, features: FloatArray, pixels: FloatArray):
    projected, quad, precision, log_gate = _gate_terms(params, features)
    means = features @ params.predictors.T  # (N, C)
    resid = pixels[:, None] - means  # (N, C)
    log_expert = (
        0.5 * params.log_precision[None, :, :]
        - 0.5 * LOG_2PI
        - 0.5 * precision[None, :, :] * (resid * resid)[:, :, None]
    )
    joint = log_gate + log_expert  # (N, C, S)
    log_density = logsumexp(joint, axis=(1, 2))
    return projected, quad, precision, log_gate, resid, joint, log_density


def gate_log_probs_batch(params: McgsmParams, features: FloatArray) -> FloatArray:
    """(N, C, S) gate log-probabilities."""
    features = _check_features(params, features)
    return _gate_terms(params, features)[3]


def cond_log_density_batch(params: McgsmParams, features: FloatArray, pixels) -> FloatArray:
    """(N,) conditional log-densities log p(x_n | h_n)."""
    features = _check_features(params, features)
    pixels = _check_pixels(pixels, features.shape[0])
    log_density = _joint_terms(params, features, pixels)[-1]
    if not np.all(np.isfinite(log_density)):
        raise NonFiniteError("conditional log-density is not finite")
    return log_density


def posterior_log_probs_batch(params: McgsmParams, features: FloatArray, pixels) -> FloatArray:
    """(N, C, S) log p(c, s | h, x)."""
    features = _check_features(params, features)
    pixels = _check_pixels(pixels, features.shape[0])
    joint, log_density = _joint_terms(params, features, pixels)[-2:]
    if not np.all(np.isfinite(log_density)):
        raise DegeneratePosteriorError("all mixture weights are numerically zero")
    return joint - log_density[:, None, None]


def posterior_batch(params: McgsmParams, features: FloatArray, pixels) -> FloatArray:
    return np.exp(posterior_log_probs_batch(params, features, pixels))


def posterior_entropy_batch(params: McgsmParams, features: FloatArray, pixels) -> FloatArray:
    """(N,) Shannon entropy of the mixture posterior, in nats."""
    log_post = posterior_log_probs_batch(params, features, pixels)
    post = np.exp(log_post)
    terms = np.where(post > 0.0, post * log_post, 0.0)
    entropy = -np.sum(terms, axis=(1, 2))
    return np.clip(entropy, 0.0, math.log(params.num_components * params.num_scales))


def cond_grads_batch(
    params: McgsmParams,
    features: FloatArray,
    pixels,
    with_params: bool = True,
) -> Tuple[FloatArray, FloatArray, Optional[McgsmParams]]:
    """
    Analytic gradients of log p(x_n | h_n).

    Returns d/dx (N,), d/dh (N, D) and, if requested, d/dθ summed over N.
    """
    features = _check_features(params, features)
    pixels = _check_pixels(pixels, features.shape[0])
    projected, quad, precision, log_gate, resid, joint, log_density = _joint_terms(params, features, pixels)
    if not np.all(np.isfinite(log_density)):
        raise NonFiniteError("conditional log-density is not finite")

    post = np.exp(joint - log_density[:, None, None])  # responsibilities r_ncs
    gate = np.exp(log_gate)
    d_logits = post - gate  # d log p / d gate logit

    weighted = post * precision[None, :, :]  # r * e^alpha
    d_pixel = -np.sum(weighted * resid[:, :, None], axis=(1, 2))
    d_mean = np.sum(weighted, axis=2) * resid  # (N, C)
    d_quad = -0.5 * np.sum(d_logits * precision[None, :, :], axis=2)  # (N, C)

    # d q_c / d h = 2 B_cᵀ B_c h
    d_features = 2.0 * np.einsum("nc,ncr,crd->nd", d_quad, projected, params.quad_factors)
    d_features += d_mean @ params.predictors

    if not (np.all(np.isfinite(d_pixel)) and np.all(np.isfinite(d_features))):
        raise NonFiniteError("non-finite gradient in mcgsm")
    if not with_params:
        return d_pixel, d_features, None

    sq_resid = (resid * resid)[:, :, None]
    d_log_precision = (
        d_logits * (-0.5 * precision[None, :, :] * quad[:, :, None])
        + post * (0.5 - 0.5 * precision[None, :, :] * sq_resid)
    )
    grads = McgsmParams(
        gate_bias=np.sum(d_logits, axis=0),
        log_precision=np.sum(d_log_precision, axis=0),
        quad_factors=2.0 * np.einsum("nc,ncr,nd->crd", d_quad, projected, features),
        predictors=d_mean.T @ features,
    )
    return d_pixel, d_features, grads


def sample_batch(params: McgsmParams, features: FloatArray, rng: SeededRng) -> FloatArray:
    """Draw one pixel per feature vector: (c, s) from the gate, then the expert."""
    features = _check_features(params, features)
    log_gate = _gate_terms(params, features)[3]
    n = features.shape[0]
    S = params.num_scales
    gate = np.exp(log_gate.reshape(n, -1))
    gate /= gate.sum(axis=1, keepdims=True)
    gen = rng.generator
    # inverse-CDF draw keeps exactly one uniform per pixel
    u = gen.random(n)
    picks = np.minimum((np.cumsum(gate, axis=1) < u[:, None]).sum(axis=1), gate.shape[1] - 1)
    comps, scales = np.divmod(picks, S)
    means = np.einsum("nd,nd->n", params.predictors[comps], features)
    std = np.exp(-0.5 * params.log_precision[comps, scales])
    return means + std * gen.standard_normal(n)


def gate_log_probs(params: McgsmParams, h) -> FloatArray:
    """(C, S) gate log-probabilities for a single feature vector."""
    return gate_log_probs_batch(params, np.atleast_2d(h))[0]


def cond_log_density(params: McgsmParams, h, x: float) -> float:
    return float(cond_log_density_batch(params, np.atleast_2d(h), [x])[0])


def posterior(params: McgsmParams, h, x: float) -> FloatArray:
    """(C, S) posterior p(c, s | h, x)."""
    return posterior_batch(params, np.atleast_2d(h), [x])[0]


def posterior_entropy(params: McgsmParams, h, x: float) -> float:
    return float(posterior_entropy_batch(params, np.atleast_2d(h), [x])[0])


def cond_grads(params: McgsmParams, h, x: float) -> Tuple[float, FloatArray, McgsmParams]:
    d_pixel, d_features, grads = cond_grads_batch(params, np.atleast_2d(h), [x])
    assert grads is not None
    return float(d_pixel[0]), d_features[0], grads


def sample_pixel(params: McgsmParams, h, rng: SeededRng) -> float:
    return float(sample_batch(params, np.atleast_2d(h), rng)[0])
