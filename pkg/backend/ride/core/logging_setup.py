"""
Logging setup for the command-line front end
"""
import logging
from pathlib import Path
from typing import Optional

from .config import settings


def configure_logging(log_dir: Optional[Path] = None, level: Optional[str] = None) -> logging.Logger:
    """
    Send all ride.* loggers to logs/ride.log and the console.

    Safe to call more than once; handlers are only attached the first time
    for a given log file.
    """
    log_dir = Path(log_dir or settings.LOG_DIR)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / "ride.log"
    level_no = getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO)

    ride_logger = logging.getLogger("ride")
    ride_logger.setLevel(level_no)
    if not any(getattr(h, "baseFilename", None) == str(log_file) for h in ride_logger.handlers):
        # File handler for local persistence
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(level_no)
        file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s", datefmt="%Y-%m-%d %H:%M:%S"))
        ride_logger.addHandler(file_handler)

        # Stream handler for console visibility
        stream_handler = logging.StreamHandler()
        stream_handler.setLevel(level_no)
        stream_handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        ride_logger.addHandler(stream_handler)
    return ride_logger
