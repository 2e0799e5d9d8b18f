"""
MAP inference under the RIDE prior.

- inpaint:          prior-only ascent on the missing pixels
- cs_recover:       momentum ascent on the prior, projected back onto
                    {x : Φx = y} after every step
- cs_recover_noisy: momentum ascent on log p(x) − λ‖y − Φx‖², no projection

All three share the heavy-ball update v ← μv + η·g, x ← x + v and zero the
prior gradient wherever the identity-orientation posterior entropy exceeds
the threshold. inpaint and cs_recover_noisy clamp the iterate to the
configured range; cs_recover ends every iteration with the projection alone.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..core.exceptions import NonFiniteError, RecoveryDivergedError, ShapeError
from ..schemas.recovery import RecoveryConfig, TraceRow
from ..utils.numeric import FloatArray, as_grid, make_rng, rng_uniform
from .ride_model import RideModel, prior_terms
from .sensing import Measurements, MeasurementOperator, project_affine, residual

logger = logging.getLogger(__name__)

LOG_EVERY = 50


@dataclass
class RecoveryTrace:
    """One TraceRow per iteration"""
    rows: List[TraceRow] = field(default_factory=list)

    def append(self, iteration: int, log_prior: float, residual_norm: float, masked_fraction: float) -> None:
        self.rows.append(
            TraceRow(iteration=iteration, log_prior=log_prior, residual=residual_norm, masked_fraction=masked_fraction)
        )

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[TraceRow]:
        return iter(self.rows)

    def to_frame(self) -> pd.DataFrame:
        columns = list(TraceRow.model_fields)
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=columns)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        return path


def _masked_prior(
    model: RideModel, image: FloatArray, threshold: float, four_directions: bool = True
) -> Tuple[FloatArray, float, float]:
    """Masked prior gradient, log-prior of the image and the masked fraction."""
    terms = prior_terms(model, image, four_directions=four_directions)
    masked = terms.entropy > threshold
    grad = terms.gradient
    grad[masked] = 0.0
    return grad, terms.log_prior, float(np.mean(masked))


def masked_prior_grad(model: RideModel, image, threshold: float = np.inf, four_directions: bool = True) -> FloatArray:
    """
    Four-direction prior gradient with entropy masking.

    Every pixel whose identity-orientation posterior entropy exceeds
    threshold (nats) gets exactly 0.0. threshold=inf disables masking.
    """
    image = as_grid(image, "image")
    return _masked_prior(model, image, threshold, four_directions)[0]


def _clamp(x: FloatArray, cfg: RecoveryConfig) -> FloatArray:
    if cfg.clamp is None:
        return x
    return np.clip(x, cfg.clamp[0], cfg.clamp[1])


def _uniform_init(shape: Tuple[int, int], cfg: RecoveryConfig) -> FloatArray:
    return rng_uniform(make_rng(cfg.seed), shape, 0.0, 1.0)


def stable_step(eta: float, momentum: float, lam: float) -> float:
    """
    Step size for soft-constraint ascent with weight lam.

    The data term has curvature 2·lam along the row space of a
    row-orthonormal Φ. Capping eta·2·lam at 1 + momentum keeps the heavy-ball
    iteration contracting at rate sqrt(momentum) on that term.
    """
    if lam <= 0.0:
        return eta
    return min(eta, (1.0 + momentum) / (2.0 * lam))


def _diverged(message: str, trace: RecoveryTrace) -> RecoveryDivergedError:
    logger.error("recovery diverged after %d iterations: %s", len(trace), message)
    return RecoveryDivergedError(message, trace)


def inpaint(
    model: RideModel,
    observed,
    mask,
    cfg: Optional[RecoveryConfig] = None,
) -> Tuple[FloatArray, RecoveryTrace]:
    """
    Fill the pixels where mask is False by ascending the prior.

    Observed pixels (mask True) are returned bit-identical at every iteration.
    Holes start from uniform(0, 1) noise, or from the values already in
    observed when cfg.init_mode is "provided".
    """
    cfg = cfg or RecoveryConfig()
    observed = as_grid(observed, "observed")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != observed.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match image shape {observed.shape}")

    missing = ~mask
    x = observed.copy()
    if cfg.init_mode == "uniform":
        x[missing] = _uniform_init(observed.shape, cfg)[missing]
    x = np.where(mask, observed, _clamp(x, cfg))

    trace = RecoveryTrace()
    iterations = cfg.resolved_iterations()
    if not missing.any():
        logger.info("inpaint: nothing to fill")
        return observed.copy(), trace

    logger.info(
        "inpaint: %d missing pixels, %d iterations, eta=%g momentum=%g threshold=%g",
        int(missing.sum()), iterations, cfg.eta, cfg.momentum, cfg.threshold,
    )
    velocity = np.zeros_like(x)
    for it in range(iterations):
        try:
            grad, log_prior, masked_fraction = _masked_prior(model, x, cfg.threshold, cfg.four_directions)
        except NonFiniteError as e:
            raise _diverged(str(e), trace) from e
        grad[mask] = 0.0
        velocity = cfg.momentum * velocity + cfg.eta * grad
        x = np.where(mask, observed, _clamp(x + velocity, cfg))
        trace.append(it, log_prior, 0.0, masked_fraction)
        if not np.all(np.isfinite(x)):
            raise _diverged(f"non-finite iterate at iteration {it}", trace)
        if it % LOG_EVERY == 0:
            logger.debug("inpaint iteration %d: log prior %.4f, masked %.3f", it, log_prior, masked_fraction)

    logger.info("inpaint finished: final log prior %.4f", trace.rows[-1].log_prior if trace.rows else float("nan"))
    return x, trace


def _resolve_shape(op: MeasurementOperator, y: Measurements, shape: Optional[Tuple[int, int]]) -> Tuple[int, int]:
    shape = shape or y.image_shape
    if shape is None:
        side = int(round(np.sqrt(op.n)))
        if side * side != op.n:
            raise ShapeError(f"cannot infer an image shape for {op.n} pixels; pass it explicitly")
        shape = (side, side)
    if shape[0] * shape[1] != op.n:
        raise ShapeError(f"image shape {shape} does not have {op.n} pixels")
    if y.m != op.m:
        raise ShapeError(f"operator has {op.m} rows but {y.m} measurements were given")
    return int(shape[0]), int(shape[1])


def _initial_iterate(shape: Tuple[int, int], cfg: RecoveryConfig, init) -> FloatArray:
    if cfg.init_mode == "provided":
        if init is None:
            raise ShapeError("init_mode 'provided' needs an initial image")
        x = as_grid(init, "init")
        if x.shape != shape:
            raise ShapeError(f"initial image shape {x.shape} does not match {shape}")
        return x.copy()
    return _uniform_init(shape, cfg)


def cs_recover(
    model: RideModel,
    op: MeasurementOperator,
    y: Measurements,
    cfg: Optional[RecoveryConfig] = None,
    shape: Optional[Tuple[int, int]] = None,
    init=None,
) -> Tuple[FloatArray, RecoveryTrace]:
    """
    Noiseless compressive recovery by projected gradient ascent.

    Each iteration takes a momentum step along the masked prior gradient and
    projects onto {x : Φx = y}. No clamp is applied, so the result satisfies
    the measurements exactly and may leave the [0, 1] range.
    """
    cfg = cfg or RecoveryConfig()
    shape = _resolve_shape(op, y, shape)
    iterations = cfg.resolved_iterations(op.measurement_rate)
    x = _initial_iterate(shape, cfg, init)
    trace = RecoveryTrace()

    logger.info(
        "cs_recover: %s, rate %.3f, %d iterations, eta=%g momentum=%g threshold=%g",
        op, op.measurement_rate, iterations, cfg.eta, cfg.momentum, cfg.threshold,
    )
    if iterations == 0:
        return project_affine(op, x, y), trace

    velocity = np.zeros_like(x)
    for it in range(iterations):
        try:
            grad, log_prior, masked_fraction = _masked_prior(model, x, cfg.threshold, cfg.four_directions)
        except NonFiniteError as e:
            raise _diverged(str(e), trace) from e
        velocity = cfg.momentum * velocity + cfg.eta * grad
        x = project_affine(op, x + velocity, y)
        if not np.all(np.isfinite(x)):
            raise _diverged(f"non-finite iterate at iteration {it}", trace)
        res = float(np.linalg.norm(residual(op, x, y)))
        trace.append(it, log_prior, res, masked_fraction)
        if it % LOG_EVERY == 0:
            logger.debug("cs_recover iteration %d: log prior %.4f, residual %.3g, masked %.3f", it, log_prior, res, masked_fraction)

    logger.info("cs_recover finished: residual %.3g", trace.rows[-1].residual)
    return x, trace


def cs_recover_noisy(
    model: RideModel,
    op: MeasurementOperator,
    y: Measurements,
    cfg: Optional[RecoveryConfig] = None,
    shape: Optional[Tuple[int, int]] = None,
    init=None,
) -> Tuple[FloatArray, RecoveryTrace]:
    """
    Soft-constraint recovery: ascend log p(x) − λ‖y − Φx‖².

    λ comes from cfg.lam, or 1/σ² when only σ is set. λ = 0 is accepted and
    ignores the measurements entirely. The step is cfg.eta, lowered to
    stable_step(...) when λ is large enough to make it unstable.
    """
    cfg = cfg or RecoveryConfig()
    shape = _resolve_shape(op, y, shape)
    lam = cfg.soft_weight()
    eta = stable_step(cfg.eta, cfg.momentum, lam)
    iterations = cfg.resolved_iterations(op.measurement_rate)
    x = _initial_iterate(shape, cfg, init)
    trace = RecoveryTrace()

    if lam == 0.0:
        logger.info("cs_recover_noisy: lambda = 0, measurements are ignored (prior-only ascent)")
    logger.info(
        "cs_recover_noisy: %s, rate %.3f, %d iterations, lambda=%g eta=%g momentum=%g",
        op, op.measurement_rate, iterations, lam, eta, cfg.momentum,
    )
    if eta < cfg.eta:
        logger.info("cs_recover_noisy: step lowered from %g to %g for lambda=%g", cfg.eta, eta, lam)

    velocity = np.zeros_like(x)
    for it in range(iterations):
        try:
            grad, log_prior, masked_fraction = _masked_prior(model, x, cfg.threshold, cfg.four_directions)
        except NonFiniteError as e:
            raise _diverged(str(e), trace) from e
        r = residual(op, x, y)
        # entropy masking applies to the prior term only
        grad = grad - 2.0 * lam * op.adjoint(r).reshape(shape)
        velocity = cfg.momentum * velocity + eta * grad
        x = _clamp(x + velocity, cfg)
        if not np.all(np.isfinite(x)):
            raise _diverged(f"non-finite iterate at iteration {it}", trace)
        res = float(np.linalg.norm(residual(op, x, y)))
        trace.append(it, log_prior, res, masked_fraction)
        if it % LOG_EVERY == 0:
            logger.debug("cs_recover_noisy iteration %d: log prior %.4f, residual %.3g", it, log_prior, res)

    if trace.rows:
        logger.info("cs_recover_noisy finished: residual %.3g", trace.rows[-1].residual)
    return x, trace


def pseudo_inverse_baseline(op: MeasurementOperator, y: Measurements, shape: Optional[Tuple[int, int]] = None) -> FloatArray:
    """Minimum-energy solution Φᵀy (exact pseudo-inverse for row-orthonormal Φ)."""
    shape = _resolve_shape(op, y, shape)
    return op.adjoint(y.values).reshape(shape)


def mean_fill_baseline(observed, mask) -> FloatArray:
    """Missing pixels set to the mean of the observed ones (0.5 if none are observed)."""
    observed = as_grid(observed, "observed")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != observed.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match image shape {observed.shape}")
    fill = float(np.mean(observed[mask])) if mask.any() else 0.5
    return np.where(mask, observed, fill)
