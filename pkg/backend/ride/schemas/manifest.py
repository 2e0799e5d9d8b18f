"""
Run manifest schema
"""
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class RunManifest(BaseModel):
    """Everything needed to re-run a CLI command exactly"""
    command: str
    argv: List[str]
    config: Dict[str, str] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    model_sha256: Optional[str] = None
    duration_sec: float = 0.0
    app_version: str = ""
