"""
Maximum-likelihood training with the patch-size curriculum.

Epoch e trains on fresh random crops of size patch_start + e * patch_step
(capped at patch_end) with learning rate learning_rate * lr_decay**e, using
Adam on the negative mean log-likelihood per pixel. Minibatch gradients are
split into one chunk per worker, computed on a thread pool and reduced in
chunk order, so a fixed worker count always reproduces the same model.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import NonFiniteError, ShapeError, TrainingDivergedError
from ..schemas.training import EpochStats, TrainConfig, TrainTrace
from ..utils.numeric import AdamState, FloatArray, adam_step, derive_seed, flatten_params, make_rng, unflatten_params
from .imgio import extract_patches
from .ride_model import RideModel, log_likelihood_and_param_grads

logger = logging.getLogger(__name__)


def _chunks(n: int, parts: int) -> List[slice]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def batch_objective(
    model: RideModel,
    batch: FloatArray,
    executor: Optional[ThreadPoolExecutor] = None,
    max_workers: int = 1,
) -> Tuple[float, FloatArray]:
    """Summed log-likelihood of a patch stack and its flat parameter gradient."""
    slices = _chunks(batch.shape[0], max_workers)
    if executor is not None and len(slices) > 1:
        futures = [executor.submit(log_likelihood_and_param_grads, model, batch[s]) for s in slices]
        results = [fut.result() for fut in futures]
    else:
        results = [log_likelihood_and_param_grads(model, batch[s]) for s in slices]
    total = 0.0
    grad = None
    for loglik, grads in results:
        flat = flatten_params(grads)
        total += loglik
        grad = flat if grad is None else grad + flat
    assert grad is not None
    return total, grad


def average_log_likelihood(model: RideModel, patches: Sequence[FloatArray]) -> float:
    """Mean log-likelihood per pixel over a set of equally sized patches."""
    stack = np.stack(list(patches))
    total, _ = log_likelihood_and_param_grads(model, stack)
    return total / stack.size


def train(
    model: RideModel,
    images: Sequence[FloatArray],
    config: TrainConfig,
    holdout: Optional[Sequence[FloatArray]] = None,
) -> Tuple[RideModel, TrainTrace]:
    """
    Train a copy of the model; returns it with the per-epoch trace.

    images are the source grayscale images patches are cropped from; every
    image must be at least as large as the final patch size. holdout patches,
    if given, are scored after every epoch.
    """
    if config.epochs == 0:
        return model.copy(), []
    final_size = config.patch_size(config.epochs - 1)
    for idx, img in enumerate(images):
        if min(img.shape) < final_size:
            raise ShapeError(f"training image {idx} is {img.shape}, smaller than the final patch size {final_size}")

    model = model.copy().validate()
    shapes = [a.shape for a in model.param_arrays()]
    theta = flatten_params(model.param_arrays())
    state = AdamState.fresh(theta.size, learning_rate=config.learning_rate)
    trace: TrainTrace = []
    executor = ThreadPoolExecutor(max_workers=config.max_workers) if config.max_workers > 1 else None

    try:
        for epoch in range(config.epochs):
            size = config.patch_size(epoch)
            lr = config.epoch_learning_rate(epoch)
            state.learning_rate = lr
            rng = make_rng(derive_seed(config.seed, f"train-epoch-{epoch}"))
            patches = np.stack(extract_patches(images, size, config.patches_per_epoch, rng, dequantize=config.dequantize))

            epoch_total = 0.0
            epoch_pixels = 0
            for batch_idx, start in enumerate(range(0, patches.shape[0], config.batch_size)):
                batch = patches[start:start + config.batch_size]
                try:
                    total, grad = batch_objective(model, batch, executor, config.max_workers)
                except NonFiniteError as e:
                    raise TrainingDivergedError(str(e), epoch, batch_idx) from e
                if not (np.isfinite(total) and np.all(np.isfinite(grad))):
                    raise TrainingDivergedError("non-finite loss or gradient", epoch, batch_idx)
                # descend on the negative mean log-likelihood per pixel
                theta, state = adam_step(theta, -grad / batch.size, state)
                if not np.all(np.isfinite(theta)):
                    raise TrainingDivergedError("parameters became non-finite", epoch, batch_idx)
                model = RideModel.from_arrays(model, unflatten_params(theta, shapes))
                epoch_total += total
                epoch_pixels += batch.size

            stats = EpochStats(
                epoch=epoch,
                patch_size=size,
                learning_rate=lr,
                train_loglik_per_pixel=epoch_total / epoch_pixels,
                holdout_loglik_per_pixel=average_log_likelihood(model, holdout) if holdout else None,
            )
            trace.append(stats)
            logger.info(
                "epoch %d: patch %dx%d lr=%.3g train loglik/pixel=%.4f holdout=%s",
                epoch,
                size,
                size,
                lr,
                stats.train_loglik_per_pixel,
                "n/a" if stats.holdout_loglik_per_pixel is None else f"{stats.holdout_loglik_per_pixel:.4f}",
            )
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    return model.validate(), trace
