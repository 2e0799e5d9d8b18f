"""
Batch experiments over a set of test images.

Every sweep derives its operator, noise, mask and initialization seeds from
the run seed and the image id, so one seed reproduces a whole table. Each
reconstruction is scored with PSNR/SSIM next to its baseline:

- rate sweep:       noiseless recovery at several measurement rates, plus Φᵀy
- noise sweep:      soft-constraint recovery at several noise levels, plus Φᵀy
- threshold sweep:  noiseless recovery under several entropy thresholds
- inpainting:       prior fill of a random mask, plus mean fill
- directions:       iterations the four-direction run needs to reach the
                    single-direction run's final log-prior
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, TypeVar, Union

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from ..core.config import settings
from ..core.exceptions import OperatorError, ShapeError
from ..schemas.metrics import DirectionRow, MetricConfig, MetricsRow
from ..schemas.recovery import RecoveryConfig
from ..utils.numeric import FloatArray, derive_seed, make_rng
from . import imgio, metrics, recover, sensing
from .ride_model import RideModel

logger = logging.getLogger(__name__)

TEXTURE_STD = 0.18
TEXTURE_NOISE = 0.08

T = TypeVar("T")


@dataclass(frozen=True)
class EvalImage:
    image_id: str
    pixels: FloatArray


def center_crop(image: FloatArray, size: int) -> FloatArray:
    rows, cols = image.shape
    if rows < size or cols < size:
        raise ShapeError(f"image {image.shape} is smaller than the {size}x{size} crop")
    top = (rows - size) // 2
    left = (cols - size) // 2
    return image[top:top + size, left:left + size].copy()


def load_images(directory: Union[str, Path], crop: Optional[int] = None) -> List[EvalImage]:
    """Every image of a directory, optionally center-cropped, keyed by file stem."""
    images = []
    for path in imgio.list_images(directory):
        pixels = imgio.read_image(path)
        images.append(EvalImage(path.stem, center_crop(pixels, crop) if crop else pixels))
    if not images:
        raise ShapeError(f"no .pgm or .png images in {directory}")
    return images


def synthetic_textures(count: int, size: int, seed: int) -> List[FloatArray]:
    """
    Seeded stationary textures in [0, 1].

    White noise smoothed by an axis-aligned Gaussian filter of random width,
    scaled to TEXTURE_STD around 0.5, plus TEXTURE_NOISE of unsmoothed noise.
    """
    gen = make_rng(derive_seed(seed, "textures")).generator
    textures = []
    for _ in range(count):
        widths = gen.uniform(1.5, 3.0, size=2)
        field = gaussian_filter(gen.standard_normal((size, size)), sigma=widths, mode="wrap")
        field *= TEXTURE_STD / field.std()
        texture = 0.5 + field + TEXTURE_NOISE * gen.standard_normal((size, size))
        textures.append(np.clip(texture, 0.0, 1.0))
    return textures


def texture_images(count: int, size: int, seed: int) -> List[EvalImage]:
    return [EvalImage(f"texture{idx:03d}", tex) for idx, tex in enumerate(synthetic_textures(count, size, seed))]


def iterations_to_reach(values: Sequence[float], target: float) -> Optional[int]:
    """Index of the first value >= target, or None."""
    for idx, value in enumerate(values):
        if value >= target:
            return idx
    return None


def _map_images(fn: Callable[[EvalImage], List[T]], images: Sequence[EvalImage], max_workers: int) -> List[T]:
    if max_workers > 1 and len(images) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            results = list(executor.map(fn, images))
    else:
        results = [fn(img) for img in images]
    return [row for rows in results for row in rows]


def _operator(kind: str, n: int, mr: float, seed: int, image_id: str) -> sensing.MeasurementOperator:
    if kind == "gaussian" and n > settings.DENSE_OPERATOR_MAX_PIXELS:
        raise OperatorError(
            f"dense Gaussian operators are limited to {settings.DENSE_OPERATOR_MAX_PIXELS} pixels "
            f"(image has {n}); crop the images or use the fwht operator"
        )
    m = sensing.measurement_count(n, mr)
    return sensing.make_operator(kind, n, m, derive_seed(seed, f"operator:{image_id}:{mr:g}"))


def _init_seed(cfg: RecoveryConfig, image_id: str) -> RecoveryConfig:
    return cfg.model_copy(update={"seed": derive_seed(cfg.seed, f"init:{image_id}")})


def rate_sweep(
    model: RideModel,
    images: Sequence[EvalImage],
    rates: Sequence[float],
    cfg: Optional[RecoveryConfig] = None,
    op_kind: str = "gaussian",
    seed: int = 0,
    metric_cfg: Optional[MetricConfig] = None,
    max_workers: int = 1,
) -> List[MetricsRow]:
    """Noiseless recovery at every rate; iterations follow the rate unless cfg fixes them."""
    cfg = cfg or RecoveryConfig()

    def run(img: EvalImage) -> List[MetricsRow]:
        rows = []
        image_cfg = _init_seed(cfg, img.image_id)
        for mr in rates:
            op = _operator(op_kind, img.pixels.size, mr, seed, img.image_id)
            y = sensing.measure(op, img.pixels)
            result, _ = recover.cs_recover(model, op, y, image_cfg)
            baseline = recover.pseudo_inverse_baseline(op, y)
            rows.append(metrics.evaluate(img.pixels, result, img.image_id, mr, "ride", metric_cfg))
            rows.append(metrics.evaluate(img.pixels, baseline, img.image_id, mr, "pinv", metric_cfg))
            logger.info("%s @ %.2f: ride %.2f dB, pinv %.2f dB", img.image_id, mr, rows[-2].psnr_db, rows[-1].psnr_db)
        return rows

    return _map_images(run, images, max_workers)


def noise_sweep(
    model: RideModel,
    images: Sequence[EvalImage],
    sigmas: Sequence[float],
    mr: float,
    cfg: Optional[RecoveryConfig] = None,
    op_kind: str = "gaussian",
    seed: int = 0,
    metric_cfg: Optional[MetricConfig] = None,
    max_workers: int = 1,
) -> List[MetricsRow]:
    """Soft-constraint recovery with λ = 1/σ² at every noise level; σ = 0 uses the projection."""
    cfg = cfg or RecoveryConfig()

    def run(img: EvalImage) -> List[MetricsRow]:
        rows = []
        op = _operator(op_kind, img.pixels.size, mr, seed, img.image_id)
        for sigma in sigmas:
            noise_rng = make_rng(derive_seed(seed, f"noise:{img.image_id}:{sigma:g}"))
            y = sensing.measure(op, img.pixels, sigma, noise_rng)
            image_cfg = _init_seed(cfg, img.image_id).model_copy(update={"sigma": float(sigma)})
            if sigma > 0:
                result, _ = recover.cs_recover_noisy(model, op, y, image_cfg)
            else:
                result, _ = recover.cs_recover(model, op, y, image_cfg)
            baseline = recover.pseudo_inverse_baseline(op, y)
            rows.append(metrics.evaluate(img.pixels, result, img.image_id, mr, f"ride:sigma={sigma:g}", metric_cfg))
            rows.append(metrics.evaluate(img.pixels, baseline, img.image_id, mr, f"pinv:sigma={sigma:g}", metric_cfg))
        return rows

    return _map_images(run, images, max_workers)


def threshold_sweep(
    model: RideModel,
    images: Sequence[EvalImage],
    thresholds: Sequence[Optional[float]],
    mr: float,
    cfg: Optional[RecoveryConfig] = None,
    op_kind: str = "gaussian",
    seed: int = 0,
    metric_cfg: Optional[MetricConfig] = None,
    max_workers: int = 1,
) -> List[MetricsRow]:
    """Noiseless recovery under each entropy threshold; None turns masking off."""
    cfg = cfg or RecoveryConfig()

    def run(img: EvalImage) -> List[MetricsRow]:
        rows = []
        op = _operator(op_kind, img.pixels.size, mr, seed, img.image_id)
        y = sensing.measure(op, img.pixels)
        for tau in thresholds:
            image_cfg = _init_seed(cfg, img.image_id).model_copy(update={"entropy_threshold": tau})
            result, trace = recover.cs_recover(model, op, y, image_cfg)
            label = "off" if tau is None else f"{tau:g}"
            rows.append(metrics.evaluate(img.pixels, result, img.image_id, mr, f"ride:tau={label}", metric_cfg))
            masked = float(np.mean([row.masked_fraction for row in trace])) if len(trace) else 0.0
            logger.info("%s tau=%s: %.2f dB, mean masked fraction %.3f", img.image_id, label, rows[-1].psnr_db, masked)
        return rows

    return _map_images(run, images, max_workers)


def inpaint_sweep(
    model: RideModel,
    images: Sequence[EvalImage],
    missing_fraction: float,
    cfg: Optional[RecoveryConfig] = None,
    seed: int = 0,
    metric_cfg: Optional[MetricConfig] = None,
    max_workers: int = 1,
) -> List[MetricsRow]:
    """Inpainting of a random mask against mean fill; mr holds the observed fraction."""
    cfg = cfg or RecoveryConfig()
    observed_fraction = 1.0 - missing_fraction

    def run(img: EvalImage) -> List[MetricsRow]:
        rows_, cols_ = img.pixels.shape
        mask = imgio.random_mask(rows_, cols_, missing_fraction, make_rng(derive_seed(seed, f"mask:{img.image_id}")))
        observed = np.where(mask, img.pixels, 0.0)
        result, _ = recover.inpaint(model, observed, mask, _init_seed(cfg, img.image_id))
        baseline = recover.mean_fill_baseline(observed, mask)
        return [
            metrics.evaluate(img.pixels, result, img.image_id, observed_fraction, "ride", metric_cfg),
            metrics.evaluate(img.pixels, baseline, img.image_id, observed_fraction, "mean_fill", metric_cfg),
        ]

    return _map_images(run, images, max_workers)


def compare_traces(single: recover.RecoveryTrace, four: recover.RecoveryTrace, image_id: str, mr: float) -> DirectionRow:
    """How far into the four-direction trace the single-direction final log-prior is first reached."""
    if len(single) == 0:
        raise ShapeError("single-direction trace is empty")
    single_values = [row.log_prior for row in single]
    single_iterations = len(single_values) - 1
    four_iterations = iterations_to_reach([row.log_prior for row in four], single_values[-1])
    ratio = None
    if four_iterations is not None:
        ratio = four_iterations / single_iterations if single_iterations else 0.0
    return DirectionRow(
        image_id=image_id,
        mr=mr,
        single_iterations=single_iterations,
        four_iterations=four_iterations,
        ratio=ratio,
    )


def direction_comparison(
    model: RideModel,
    images: Sequence[EvalImage],
    mr: float,
    cfg: Optional[RecoveryConfig] = None,
    op_kind: str = "gaussian",
    seed: int = 0,
    max_workers: int = 1,
) -> List[DirectionRow]:
    """Run single- and four-direction recovery from the same start on every image."""
    cfg = cfg or RecoveryConfig()

    def run(img: EvalImage) -> List[DirectionRow]:
        op = _operator(op_kind, img.pixels.size, mr, seed, img.image_id)
        y = sensing.measure(op, img.pixels)
        image_cfg = _init_seed(cfg, img.image_id)
        _, single = recover.cs_recover(model, op, y, image_cfg.model_copy(update={"four_directions": False}))
        _, four = recover.cs_recover(model, op, y, image_cfg.model_copy(update={"four_directions": True}))
        row = compare_traces(single, four, img.image_id, mr)
        logger.info("%s: single %d iterations, four %s", img.image_id, row.single_iterations, row.four_iterations)
        return [row]

    return _map_images(run, images, max_workers)


def write_direction_csv(rows: Sequence[DirectionRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=list(DirectionRow.model_fields))
    frame.to_csv(path, index=False, float_format="%.6g")
    return path
