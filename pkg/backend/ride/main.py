"""
Command-line application: logging, optional Sentry reporting and dispatch
"""
import logging
import sys
import time
from typing import List, Optional

from .cli.commands import CommandResult
from .cli.manifest import manifest_path_for, write_manifest
from .cli.router import build_parser
from .core.config import settings
from .core.exceptions import RideError
from .core.logging_setup import configure_logging
from .schemas.manifest import RunManifest

logger = logging.getLogger(__name__)

try:
    import sentry_sdk
    SENTRY_AVAILABLE = True
except ImportError:
    sentry_sdk = None  # type: ignore[assignment]
    SENTRY_AVAILABLE = False


def init_monitoring() -> bool:
    """Report aborted runs to Sentry when SENTRY_DSN is configured."""
    if not settings.SENTRY_DSN:
        return False
    if not SENTRY_AVAILABLE or sentry_sdk is None:
        logger.warning("SENTRY_DSN is set but sentry-sdk is not installed; error reporting disabled")
        return False
    sentry_sdk.init(dsn=settings.SENTRY_DSN, release=f"{settings.APP_NAME}@{settings.APP_VERSION}")
    return True


def run(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse has already printed usage; --help and --version exit 0
        return int(e.code) if isinstance(e.code, int) else 2

    configure_logging(level=args.log_level)
    monitored = init_monitoring()

    started = time.perf_counter()
    try:
        result: CommandResult = args.handler(args)
        manifest = RunManifest(
            command=args.command,
            argv=argv,
            config={key: str(value) for key, value in result.config.items()},
            seeds=result.seeds,
            inputs=result.inputs,
            outputs=result.outputs,
            model_sha256=result.model_sha256,
            duration_sec=time.perf_counter() - started,
            app_version=settings.APP_VERSION,
        )
        path = write_manifest(manifest, manifest_path_for(result.primary_output))
    except RideError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        if monitored:
            sentry_sdk.capture_exception(e)
        return e.exit_code
    except OSError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        if monitored:
            sentry_sdk.capture_exception(e)
        return 1

    logger.info("%s finished in %.2fs; manifest %s", args.command, manifest.duration_sec, path)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
