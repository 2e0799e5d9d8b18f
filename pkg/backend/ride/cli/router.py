"""
Command-line parser that wires every subcommand to its handler
"""
import argparse

from ..core.config import settings
from . import commands


def _add_recovery_flags(parser: argparse.ArgumentParser, trace: bool = True) -> None:
    parser.add_argument("--iters", type=int, default=None, help="iterations (default 300, or 400 below 25%% measurement rate)")
    parser.add_argument("--eta", type=float, default=None, help=f"step size (default {settings.RECOVERY_ETA})")
    parser.add_argument("--momentum", type=float, default=None, help=f"momentum (default {settings.RECOVERY_MOMENTUM})")
    parser.add_argument("--tau", type=float, default=None, help=f"entropy threshold in nats (default {settings.ENTROPY_THRESHOLD})")
    parser.add_argument("--no-tau", action="store_true", help="disable entropy masking")
    parser.add_argument("--single-direction", action="store_true", help="use only the identity scan direction")
    parser.add_argument("--seed", type=int, default=0)
    if trace:
        parser.add_argument("--trace", default=None, help="write the per-iteration trace to this CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ride",
        description=f"{settings.APP_NAME}: recurrent image prior for inpainting and compressive recovery",
    )
    parser.add_argument("--version", action="version", version=settings.APP_VERSION)
    parser.add_argument("--log-level", default=None, help=f"logging level (default {settings.LOG_LEVEL})")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train a model on a directory of grayscale images")
    p.add_argument("--data", required=True, help="directory of .pgm/.png images")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--patch-start", type=int, default=8)
    p.add_argument("--patch-end", type=int, default=22)
    p.add_argument("--patch-step", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-decay", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patches-per-epoch", type=int, default=None)
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--scales", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--holdout-data", default=None, help="directory of held-out images scored after every epoch")
    p.add_argument("--holdout-patches", type=int, default=64, help="patches cropped from the held-out images")
    p.add_argument("--no-dequantize", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", default=None, help="write the per-epoch trace to this CSV")
    p.set_defaults(handler=commands.cmd_train)

    p = sub.add_parser("sample", help="draw an image from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--size", required=True, help="HxW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=commands.cmd_sample)

    p = sub.add_parser("mask", help="remove a random fraction of pixels")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--fraction", type=float, default=None, help=f"missing fraction (default {settings.INPAINT_MISSING_FRACTION})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-masked", required=True)
    p.add_argument("--out-mask", required=True)
    p.set_defaults(handler=commands.cmd_mask)

    p = sub.add_parser("inpaint", help="fill masked pixels under the prior")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mask", required=True, help="mask image, white = observed")
    p.add_argument("--out", required=True)
    _add_recovery_flags(p)
    p.set_defaults(handler=commands.cmd_inpaint)

    p = sub.add_parser("sense", help="take compressive measurements of an image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--op", choices=["gaussian", "fwht"], required=True)
    p.add_argument("--mr", type=float, required=True, help="measurement rate M/N in (0, 1]")
    p.add_argument("--sigma", type=float, default=0.0, help="measurement noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-y", required=True)
    p.add_argument("--out-op", required=True)
    p.set_defaults(handler=commands.cmd_sense)

    p = sub.add_parser("recover", help="recover an image from compressive measurements")
    p.add_argument("--model", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--op", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["project", "soft"], default=None,
                   help="project onto Φx = y, or soft constraint (default: soft when noisy or --lambda is given)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="soft-constraint weight (default 1/sigma^2)")
    _add_recovery_flags(p)
    p.set_defaults(handler=commands.cmd_recover)

    p = sub.add_parser("eval", help="PSNR and SSIM of a test image against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--trim", type=int, default=2)
    p.add_argument("--out", required=True, help="metrics CSV")
    p.add_argument("--image-id", default=None)
    p.add_argument("--mr", type=float, default=None)
    p.add_argument("--method", default="ride")
    p.set_defaults(handler=commands.cmd_eval)

    p = sub.add_parser("entropy", help="write the posterior entropy map of an image")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=commands.cmd_entropy)

    p = sub.add_parser("experiment", help="score recovery against its baseline over a set of images")
    p.add_argument("--kind", choices=["rates", "noise", "thresholds", "inpaint", "directions"], required=True)
    p.add_argument("--model", required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", default=None, help="directory of .pgm/.png test images")
    source.add_argument("--synthetic", type=int, default=None, help="use N seeded synthetic textures instead")
    p.add_argument("--crop", type=int, default=None, help="center-crop images to CxC (synthetic textures are CxC, default 32)")
    p.add_argument("--op", choices=["gaussian", "fwht"], default="gaussian")
    p.add_argument("--rates", default="0.4,0.3,0.25,0.15", help="comma-separated measurement rates for --kind rates")
    p.add_argument("--mr", type=float, default=0.4, help="measurement rate for the noise, threshold and direction runs")
    p.add_argument("--sigmas", default="0,0.01,0.05", help="comma-separated noise levels for --kind noise")
    p.add_argument("--taus", default=f"{settings.ENTROPY_THRESHOLD:g},none",
                   help="comma-separated entropy thresholds for --kind thresholds; 'none' disables masking")
    p.add_argument("--fraction", type=float, default=None,
                   help=f"missing fraction for --kind inpaint (default {settings.INPAINT_MISSING_FRACTION})")
    p.add_argument("--trim", type=int, default=2)
    p.add_argument("--workers", type=int, default=1, help="images processed in parallel")
    p.add_argument("--out", required=True, help="results CSV")
    _add_recovery_flags(p, trace=False)
    p.set_defaults(handler=commands.cmd_experiment)

    return parser
