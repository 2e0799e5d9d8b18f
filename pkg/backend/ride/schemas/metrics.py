"""
Image quality schemas
"""
from typing import Optional

from pydantic import BaseModel, Field


class MetricConfig(BaseModel):
    """PSNR / SSIM settings; defaults are the Wang et al. constants"""
    trim: int = Field(default=2, ge=0)
    data_range: float = Field(default=1.0, gt=0)
    win_size: int = Field(default=11, ge=1)
    gaussian_sigma: float = Field(default=1.5, gt=0)
    k1: float = 0.01
    k2: float = 0.03


class MetricsRow(BaseModel):
    """One row of the metrics CSV"""
    image_id: str
    mr: Optional[float] = None
    method: str = ""
    psnr_db: float
    ssim: float


class DirectionRow(BaseModel):
    """Four-direction vs single-direction convergence on one image"""
    image_id: str
    mr: float
    single_iterations: int  # iterations the single-direction run took to its final log-prior
    four_iterations: Optional[int] = None  # None: the four-direction run never reached it
    ratio: Optional[float] = None
