"""
PSNR and SSIM with a boundary trim.

Both metrics ignore a ring of `trim` pixels on every side. SSIM follows
Wang et al.: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
averaged over the positions where the whole window fits.
"""
import logging
import math
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from ..core.exceptions import ShapeError
from ..schemas.metrics import MetricConfig, MetricsRow
from ..utils.numeric import FloatArray

logger = logging.getLogger(__name__)

PSNR_INF = math.inf

METRICS_COLUMNS = list(MetricsRow.model_fields)


def _trimmed(a, b, cfg: MetricConfig):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"metric inputs must be 2-D grids of equal shape, got {a.shape} and {b.shape}")
    t = cfg.trim
    if a.shape[0] <= 2 * t or a.shape[1] <= 2 * t:
        raise ShapeError(f"image {a.shape} has no interior left after a {t}-pixel trim")
    if t:
        a = a[t:-t, t:-t]
        b = b[t:-t, t:-t]
    return a, b


def psnr(a, b, cfg: Optional[MetricConfig] = None) -> float:
    """10 log10(L² / MSE) over the trimmed interior; math.inf for identical images."""
    cfg = cfg or MetricConfig()
    a, b = _trimmed(a, b, cfg)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(cfg.data_range ** 2 / mse)


def ssim(a, b, cfg: Optional[MetricConfig] = None) -> float:
    """Mean local SSIM over the trimmed interior."""
    cfg = cfg or MetricConfig()
    a, b = _trimmed(a, b, cfg)
    win = cfg.win_size
    if a.shape[0] < win or a.shape[1] < win:
        raise ShapeError(f"trimmed image {a.shape} is smaller than the {win}x{win} SSIM window")

    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    radius = win // 2
    truncate = radius / cfg.gaussian_sigma

    def blur(x: FloatArray) -> FloatArray:
        return gaussian_filter(x, sigma=cfg.gaussian_sigma, truncate=truncate, mode="reflect")

    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b

    ssim_map = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    # keep only positions where the full window lies inside the image
    if radius:
        ssim_map = ssim_map[radius:-radius, radius:-radius]
    return float(np.mean(ssim_map))


def format_psnr(value: float) -> str:
    """CSV rendering; identical images are written as 'inf'."""
    return "inf" if math.isinf(value) else f"{value:.4f}"


def evaluate(
    reference,
    test,
    image_id: str,
    mr: Optional[float] = None,
    method: str = "ride",
    cfg: Optional[MetricConfig] = None,
) -> MetricsRow:
    """PSNR and SSIM of one reconstruction as a metrics CSV row."""
    cfg = cfg or MetricConfig()
    return MetricsRow(image_id=image_id, mr=mr, method=method, psnr_db=psnr(reference, test, cfg), ssim=ssim(reference, test, cfg))


def metrics_frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    records = [
        {
            "image_id": row.image_id,
            "mr": "" if row.mr is None else f"{row.mr:g}",
            "method": row.method,
            "psnr_db": format_psnr(row.psnr_db),
            "ssim": f"{row.ssim:.6f}",
        }
        for row in rows
    ]
    return pd.DataFrame(records, columns=METRICS_COLUMNS)


def write_metrics_csv(rows: Sequence[MetricsRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics_frame(rows).to_csv(path, index=False)
    return path
