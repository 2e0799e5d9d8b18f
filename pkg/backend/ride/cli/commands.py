"""
One handler per subcommand.

Each handler takes the parsed argparse namespace, does its work through the
services layer and returns a CommandResult describing what it read and
wrote, which the dispatcher turns into a RunManifest.
"""
import logging
from argparse import Namespace
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..core.config import settings
from ..core.exceptions import ConfigError, OperatorError
from ..schemas.metrics import MetricConfig
from ..schemas.recovery import RecoveryConfig
from ..schemas.training import TrainConfig
from ..services import experiments, imgio, metrics, model_store, recover, sensing
from ..services.ride_model import Preprocessing, entropy_map, init_model, sample
from ..services.training import average_log_likelihood, train
from ..utils.numeric import derive_seed, make_rng

logger = logging.getLogger(__name__)


@dataclass
class CommandResult:
    """What a command did, for the run manifest"""
    primary_output: Path
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    model_sha256: Optional[str] = None


def parse_size(text: str) -> Tuple[int, int]:
    """'HxW' -> (H, W)"""
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"size must look like HxW, got {text!r}")
    if rows < 1 or cols < 1:
        raise ConfigError(f"size must be at least 1x1, got {text!r}")
    return rows, cols


def _build(schema, **values):
    """Instantiate a config schema from the flags that were actually given."""
    try:
        return schema(**{k: v for k, v in values.items() if v is not None})
    except ValidationError as e:
        raise ConfigError(f"invalid {schema.__name__}: {e}")


def _recovery_config(args: Namespace, **extra) -> RecoveryConfig:
    cfg = _build(
        RecoveryConfig,
        eta=args.eta,
        momentum=args.momentum,
        iterations=args.iters,
        entropy_threshold=args.tau,
        seed=derive_seed(args.seed, "init"),
        four_directions=not args.single_direction,
        **extra,
    )
    if args.no_tau:
        cfg = cfg.model_copy(update={"entropy_threshold": None})
    return cfg


def _config_dump(cfg) -> Dict[str, str]:
    return {key: str(value) for key, value in cfg.model_dump().items()}


# ---------------------------------------------------------------------------
# train / sample
# ---------------------------------------------------------------------------

def cmd_train(args: Namespace) -> CommandResult:
    paths = imgio.list_images(args.data)
    if not paths:
        raise ConfigError(f"no .pgm or .png images in {args.data}")
    images = [imgio.read_image(p) for p in paths]
    logger.info("loaded %d training images from %s", len(images), args.data)

    config = _build(
        TrainConfig,
        epochs=args.epochs,
        patch_start=args.patch_start,
        patch_end=args.patch_end,
        patch_step=args.patch_step,
        learning_rate=args.lr,
        lr_decay=args.lr_decay,
        batch_size=args.batch_size,
        patches_per_epoch=args.patches_per_epoch,
        dequantize=not args.no_dequantize,
        seed=derive_seed(args.seed, "train"),
        max_workers=args.workers,
        holdout_patches=args.holdout_patches if args.holdout_data else 0,
    )
    init_seed = derive_seed(args.seed, "init")
    model = init_model(
        make_rng(init_seed),
        num_components=args.components,
        num_scales=args.scales,
        hidden_dim=args.hidden,
        rank=args.rank,
        preprocessing=Preprocessing(dequantize=config.dequantize),
    )

    seeds = {"run": args.seed, "init": init_seed, "train": config.seed}
    inputs = {"data": str(args.data)}
    holdout = None
    if args.holdout_data and config.holdout_patches:
        holdout_paths = imgio.list_images(args.holdout_data)
        if not holdout_paths:
            raise ConfigError(f"no .pgm or .png images in {args.holdout_data}")
        inputs["holdout_data"] = str(args.holdout_data)
        seeds["holdout"] = derive_seed(args.seed, "holdout")
        final_size = config.patch_size(max(config.epochs - 1, 0))
        holdout_images = [imgio.read_image(p) for p in holdout_paths]
        holdout = imgio.extract_patches(
            holdout_images, final_size, config.holdout_patches, make_rng(seeds["holdout"]), dequantize=config.dequantize
        )
        logger.info("holdout log-likelihood per pixel at initialization: %.4f", average_log_likelihood(model, holdout))

    model, trace = train(model, images, config, holdout=holdout)
    digest = model_store.save(model, args.out)

    result = CommandResult(
        primary_output=Path(args.out),
        config=_config_dump(config),
        seeds=seeds,
        inputs=inputs,
        outputs={"model": str(args.out)},
        model_sha256=digest,
    )
    result.config.update(components=str(model.mcgsm.num_components), scales=str(model.mcgsm.num_scales),
                         hidden=str(model.slstm.hidden_dim), rank=str(model.mcgsm.rank))
    if args.trace:
        frame = pd.DataFrame([row.model_dump() for row in trace])
        Path(args.trace).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.trace, index=False, float_format="%.10g")
        result.outputs["trace"] = str(args.trace)
    return result


def cmd_sample(args: Namespace) -> CommandResult:
    rows, cols = parse_size(args.size)
    model = model_store.load(args.model)
    sample_seed = derive_seed(args.seed, "sample")
    image = sample(model, rows, cols, make_rng(sample_seed))
    imgio.write_image(image, args.out)
    return CommandResult(
        primary_output=Path(args.out),
        config={"size": f"{rows}x{cols}"},
        seeds={"run": args.seed, "sample": sample_seed},
        inputs={"model": str(args.model)},
        outputs={"image": str(args.out)},
        model_sha256=model_store.file_sha256(args.model),
    )


# ---------------------------------------------------------------------------
# degradation
# ---------------------------------------------------------------------------

def cmd_mask(args: Namespace) -> CommandResult:
    image = imgio.read_image(args.input)
    fraction = settings.INPAINT_MISSING_FRACTION if args.fraction is None else args.fraction
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"--fraction must be in [0, 1], got {fraction}")
    mask_seed = derive_seed(args.seed, "mask")
    mask = imgio.random_mask(image.shape[0], image.shape[1], fraction, make_rng(mask_seed))
    imgio.write_image(np.where(mask, image, 0.0), args.out_masked)
    imgio.write_image(imgio.mask_to_grid(mask), args.out_mask)
    logger.info("masked %d of %d pixels", int((~mask).sum()), mask.size)
    return CommandResult(
        primary_output=Path(args.out_masked),
        config={"fraction": str(fraction)},
        seeds={"run": args.seed, "mask": mask_seed},
        inputs={"image": str(args.input)},
        outputs={"masked": str(args.out_masked), "mask": str(args.out_mask)},
    )


def cmd_sense(args: Namespace) -> CommandResult:
    image = imgio.read_image(args.input)
    n = image.size
    m = sensing.measurement_count(n, args.mr)
    if args.op == "gaussian" and n > settings.DENSE_OPERATOR_MAX_PIXELS:
        raise OperatorError(
            f"dense Gaussian operators are limited to {settings.DENSE_OPERATOR_MAX_PIXELS} pixels "
            f"(image has {n}); use --op fwht for larger images"
        )
    if args.sigma < 0:
        raise ConfigError(f"--sigma must be >= 0, got {args.sigma}")
    op_seed = derive_seed(args.seed, "operator")
    noise_seed = derive_seed(args.seed, "noise")
    op = sensing.make_operator(args.op, n, m, op_seed)
    y = sensing.measure(op, image, args.sigma, make_rng(noise_seed))
    sensing.write_operator(op, args.out_op)
    sensing.write_measurements(y, args.out_y)
    logger.info("%s: %d measurements of %d pixels (rate %.3f), sigma=%g", op.kind, m, n, op.measurement_rate, args.sigma)
    return CommandResult(
        primary_output=Path(args.out_y),
        config={"op": args.op, "mr": str(args.mr), "m": str(m), "n": str(n), "sigma": str(args.sigma)},
        seeds={"run": args.seed, "operator": op_seed, "noise": noise_seed},
        inputs={"image": str(args.input)},
        outputs={"y": str(args.out_y), "op": str(args.out_op)},
    )


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def _write_trace(trace: recover.RecoveryTrace, args: Namespace, result: CommandResult) -> None:
    if args.trace:
        trace.to_csv(args.trace)
        result.outputs["trace"] = str(args.trace)


def cmd_inpaint(args: Namespace) -> CommandResult:
    model = model_store.load(args.model)
    observed = imgio.read_image(args.input)
    mask = imgio.grid_to_mask(imgio.read_image(args.mask))
    cfg = _recovery_config(args)
    image, trace = recover.inpaint(model, observed, mask, cfg)
    imgio.write_image(image, args.out)
    result = CommandResult(
        primary_output=Path(args.out),
        config=_config_dump(cfg),
        seeds={"run": args.seed, "init": cfg.seed},
        inputs={"model": str(args.model), "image": str(args.input), "mask": str(args.mask)},
        outputs={"image": str(args.out)},
        model_sha256=model_store.file_sha256(args.model),
    )
    _write_trace(trace, args, result)
    return result


def cmd_recover(args: Namespace) -> CommandResult:
    model = model_store.load(args.model)
    op = sensing.read_operator(args.op)
    y = sensing.read_measurements(args.y)

    mode = args.mode
    if mode is None:
        mode = "soft" if (args.lam is not None or y.sigma > 0) else "project"
    if mode == "project" and args.lam is not None:
        raise ConfigError("--lambda applies to soft-constraint recovery; it contradicts --mode project")

    cfg = _recovery_config(args, lam=args.lam, sigma=y.sigma)
    if mode == "project":
        image, trace = recover.cs_recover(model, op, y, cfg)
    else:
        image, trace = recover.cs_recover_noisy(model, op, y, cfg)
    imgio.write_image(image, args.out)

    config = _config_dump(cfg)
    config.update(mode=mode, iterations_resolved=str(cfg.resolved_iterations(op.measurement_rate)))
    result = CommandResult(
        primary_output=Path(args.out),
        config=config,
        seeds={"run": args.seed, "init": cfg.seed},
        inputs={"model": str(args.model), "op": str(args.op), "y": str(args.y)},
        outputs={"image": str(args.out)},
        model_sha256=model_store.file_sha256(args.model),
    )
    _write_trace(trace, args, result)
    return result


def cmd_entropy(args: Namespace) -> CommandResult:
    model = model_store.load(args.model)
    image = imgio.read_image(args.input)
    entropy = entropy_map(model, image)
    scale = model.max_entropy
    imgio.write_image(entropy / scale if scale > 0 else np.zeros_like(entropy), args.out)
    logger.info("entropy map: mean %.3f nats, max %.3f of %.3f", float(entropy.mean()), float(entropy.max()), scale)
    return CommandResult(
        primary_output=Path(args.out),
        config={"max_entropy": f"{scale:.10g}"},
        inputs={"model": str(args.model), "image": str(args.input)},
        outputs={"image": str(args.out)},
        model_sha256=model_store.file_sha256(args.model),
    )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def cmd_eval(args: Namespace) -> CommandResult:
    ref = imgio.read_image(args.ref)
    test = imgio.read_image(args.test)
    cfg = _build(MetricConfig, trim=args.trim)
    image_id = args.image_id or Path(args.test).stem
    row = metrics.evaluate(ref, test, image_id, mr=args.mr, method=args.method, cfg=cfg)
    metrics.write_metrics_csv([row], args.out)
    logger.info("%s: PSNR %s dB, SSIM %.4f", image_id, metrics.format_psnr(row.psnr_db), row.ssim)
    return CommandResult(
        primary_output=Path(args.out),
        config=_config_dump(cfg),
        inputs={"ref": str(args.ref), "test": str(args.test)},
        outputs={"csv": str(args.out)},
    )


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def parse_floats(text: str, flag: str) -> List[float]:
    """'0.4,0.3' -> [0.4, 0.3]"""
    try:
        return [float(item) for item in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag} must be a comma-separated list of numbers, got {text!r}")


def parse_thresholds(text: str) -> List[Optional[float]]:
    """Like parse_floats, with 'none' or 'off' -> None (masking disabled)."""
    items = [item.strip().lower() for item in text.split(",")]
    return [None if item in ("none", "off") else parse_floats(item, "--taus")[0] for item in items]


def cmd_experiment(args: Namespace) -> CommandResult:
    model = model_store.load(args.model)
    if args.synthetic is not None:
        if args.synthetic < 1:
            raise ConfigError(f"--synthetic must be >= 1, got {args.synthetic}")
        images = experiments.texture_images(args.synthetic, args.crop or 32, args.seed)
        inputs = {"synthetic": f"{args.synthetic} textures of {args.crop or 32}x{args.crop or 32}"}
    else:
        images = experiments.load_images(args.data, args.crop)
        inputs = {"data": str(args.data)}
    inputs["model"] = str(args.model)

    cfg = _recovery_config(args)
    metric_cfg = _build(MetricConfig, trim=args.trim)
    workers = max(1, args.workers)
    if not 0.0 < args.mr <= 1.0:
        raise ConfigError(f"--mr must be in (0, 1], got {args.mr}")
    config = _config_dump(cfg)
    config.update(kind=args.kind, op=args.op, images=str(len(images)))
    seeds = {"run": args.seed, "init": cfg.seed}
    if args.synthetic is not None:
        seeds["textures"] = derive_seed(args.seed, "textures")

    if args.kind == "rates":
        rates = parse_floats(args.rates, "--rates")
        if any(not 0.0 < r <= 1.0 for r in rates):
            raise ConfigError(f"--rates must lie in (0, 1], got {args.rates}")
        config["rates"] = args.rates
        rows = experiments.rate_sweep(model, images, rates, cfg, args.op, args.seed, metric_cfg, workers)
    elif args.kind == "noise":
        sigmas = parse_floats(args.sigmas, "--sigmas")
        if any(s < 0 for s in sigmas):
            raise ConfigError(f"--sigmas must be >= 0, got {args.sigmas}")
        config.update(sigmas=args.sigmas, mr=str(args.mr))
        rows = experiments.noise_sweep(model, images, sigmas, args.mr, cfg, args.op, args.seed, metric_cfg, workers)
    elif args.kind == "thresholds":
        taus = parse_thresholds(args.taus)
        if any(t is not None and t <= 0 for t in taus):
            raise ConfigError(f"--taus must be > 0 or none, got {args.taus}")
        config.update(taus=args.taus, mr=str(args.mr))
        rows = experiments.threshold_sweep(model, images, taus, args.mr, cfg, args.op, args.seed, metric_cfg, workers)
    elif args.kind == "inpaint":
        fraction = settings.INPAINT_MISSING_FRACTION if args.fraction is None else args.fraction
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError(f"--fraction must be in [0, 1], got {fraction}")
        config["fraction"] = str(fraction)
        rows = experiments.inpaint_sweep(model, images, fraction, cfg, args.seed, metric_cfg, workers)
    else:
        config["mr"] = str(args.mr)
        directions = experiments.direction_comparison(model, images, args.mr, cfg, args.op, args.seed, workers)
        experiments.write_direction_csv(directions, args.out)
        rows = None

    if rows is not None:
        metrics.write_metrics_csv(rows, args.out)
        summary = pd.DataFrame([row.model_dump() for row in rows]).groupby("method")["psnr_db"].mean()
        for method, psnr in summary.items():
            logger.info("%s: mean PSNR %.2f dB over %d images", method, psnr, len(images))

    return CommandResult(
        primary_output=Path(args.out),
        config=config,
        seeds=seeds,
        inputs=inputs,
        outputs={"csv": str(args.out)},
        model_sha256=model_store.file_sha256(args.model),
    )
