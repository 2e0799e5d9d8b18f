"""
MAP inference schemas
"""
import math
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from ..core.config import settings


class RecoveryConfig(BaseModel):
    """Settings shared by inpainting and compressive recovery"""
    eta: float = Field(default_factory=lambda: settings.RECOVERY_ETA, ge=0)  # 0 freezes the iterate
    momentum: float = Field(default_factory=lambda: settings.RECOVERY_MOMENTUM, ge=0, lt=1)
    iterations: Optional[int] = Field(default=None, ge=0)  # None -> 300, or 400 below 0.25 measurement rate
    entropy_threshold: Optional[float] = Field(default_factory=lambda: settings.ENTROPY_THRESHOLD)  # None disables
    lam: Optional[float] = Field(default=None, ge=0)  # soft-constraint weight; None -> 1/sigma^2 when sigma > 0
    sigma: float = Field(default=0.0, ge=0)
    init_mode: Literal["uniform", "provided"] = "uniform"
    seed: int = 0
    clamp: Optional[Tuple[float, float]] = (0.0, 1.0)
    four_directions: bool = True

    @model_validator(mode="after")
    def _check(self) -> "RecoveryConfig":
        if self.entropy_threshold is not None and not self.entropy_threshold > 0:
            raise ValueError("entropy_threshold must be > 0 when enabled")
        if self.clamp is not None and self.clamp[0] > self.clamp[1]:
            raise ValueError("clamp range is empty")
        return self

    @property
    def threshold(self) -> float:
        """Entropy threshold in nats; +inf when masking is disabled"""
        return math.inf if self.entropy_threshold is None else float(self.entropy_threshold)

    def resolved_iterations(self, measurement_rate: float = 1.0) -> int:
        if self.iterations is not None:
            return self.iterations
        return 300 if measurement_rate >= 0.25 else 400

    def soft_weight(self) -> float:
        if self.lam is not None:
            return float(self.lam)
        if self.sigma > 0:
            return 1.0 / (self.sigma * self.sigma)
        return 0.0


class TraceRow(BaseModel):
    """Diagnostics for one inference iteration"""
    iteration: int
    log_prior: float
    residual: float
    masked_fraction: float
