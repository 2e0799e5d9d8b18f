"""
Application configuration settings
"""
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings loaded from environment variables"""

    # Application
    APP_NAME: str = "RIDE Recovery"
    APP_VERSION: str = "1.0.0"

    # Logging / monitoring
    LOG_LEVEL: str = "INFO"
    SENTRY_DSN: str = ""

    # Model defaults
    MCGSM_COMPONENTS: int = 12
    MCGSM_SCALES: int = 4
    MCGSM_RANK: Optional[int] = None  # None -> full rank (R = D)
    SLSTM_HIDDEN: int = 64

    # Training
    TRAIN_BATCH_SIZE: int = 16
    TRAIN_PATCHES_PER_EPOCH: int = 1024
    TRAIN_MAX_WORKERS: int = 4  # 1 = sequential

    # Inference
    RECOVERY_ETA: float = 5e-3
    RECOVERY_MOMENTUM: float = 0.9
    ENTROPY_THRESHOLD: float = 3.5  # nats
    INPAINT_MISSING_FRACTION: float = 0.7

    # Sensing
    DENSE_OPERATOR_MAX_PIXELS: int = 16384

    # Gradient oracle
    FINITE_DIFF_STEP: float = 1e-5

    # Project paths
    PROJECT_ROOT: Path = Path(__file__).parent.parent.parent.parent  # up from backend/ride/core/config.py
    LOG_DIR: Path = PROJECT_ROOT / "logs"

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True
        extra = "ignore"


# Create settings instance
settings = Settings()
