"""
Pydantic schemas for run configuration and reporting
"""
from .training import TrainConfig, EpochStats
from .recovery import RecoveryConfig, TraceRow
from .metrics import DirectionRow, MetricConfig, MetricsRow
from .manifest import RunManifest

__all__ = [
    "TrainConfig",
    "EpochStats",
    "RecoveryConfig",
    "TraceRow",
    "MetricConfig",
    "MetricsRow",
    "DirectionRow",
    "RunManifest",
]
