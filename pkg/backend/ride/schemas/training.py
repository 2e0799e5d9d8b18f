"""
Training schemas
"""
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from ..core.config import settings


class TrainConfig(BaseModel):
    """Maximum-likelihood training with a growing patch size per epoch"""
    epochs: int = Field(default=8, ge=0)
    patch_start: int = Field(default=8, ge=1)
    patch_end: int = Field(default=22, ge=1)
    patch_step: int = Field(default=2, ge=1)
    learning_rate: float = Field(default=1e-4, gt=0)
    lr_decay: float = Field(default=0.5, gt=0, le=1)  # lr multiplier applied after every epoch
    batch_size: int = Field(default_factory=lambda: settings.TRAIN_BATCH_SIZE, ge=1)
    patches_per_epoch: int = Field(default_factory=lambda: settings.TRAIN_PATCHES_PER_EPOCH, ge=1)
    dequantize: bool = True
    seed: int = 0
    max_workers: int = Field(default_factory=lambda: settings.TRAIN_MAX_WORKERS, ge=1)
    holdout_patches: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.patch_end < self.patch_start:
            raise ValueError("patch_end must be >= patch_start")
        return self

    def patch_size(self, epoch: int) -> int:
        """Patch size used during the given (0-based) epoch"""
        return min(self.patch_start + self.patch_step * epoch, self.patch_end)

    def epoch_learning_rate(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** epoch


class EpochStats(BaseModel):
    """One entry of the training trace"""
    epoch: int
    patch_size: int
    learning_rate: float
    train_loglik_per_pixel: float
    holdout_loglik_per_pixel: Optional[float] = None

    @field_validator("train_loglik_per_pixel")
    @classmethod
    def _finite(cls, value: float) -> float:
        if value != value:
            raise ValueError("log-likelihood is NaN")
        return value


TrainTrace = List[EpochStats]
