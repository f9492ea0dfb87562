"""Command-line entry point: `python -m app <command>`."""
import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import torch
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import EXIT_OK, EXIT_USAGE, ConfigError, DataError, RePnPError, TrendViolation
from app.core.experiment import load_experiment_config, write_resolved_config
from app.core.logging import configure_logging
from app.models.degradation import Degradation, DegradationKind, Kernel
from app.models.experiment import ExperimentConfig
from app.services.denoiser import DRLDenoiser
from app.services.forward import gaussian_kernel, load_kernel
from app.services.image import DatasetService, list_images, load_dataset, load_image, psnr, save_image
from app.services.network import build_network, load_checkpoint, parameter_report, save_checkpoint
from app.services.pnp import (
    build_pnp_config,
    control_is_best,
    image_seed,
    restore_one,
    robustness_sweep,
    strictly_decreasing,
)
from app.services.ppo import train
from app.services.report import format_db, write_results, write_sweep, write_trace

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# Helpers

def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    for flag, key in (("seed", "experiment.seed"), ("jobs", "experiment.jobs"), ("out", "experiment.output_dir"),
                      ("checkpoint", "experiment.checkpoint"), ("eval_dir", "experiment.eval_dir"),
                      ("train_dir", "experiment.train_dir"), ("holdout_dir", "experiment.holdout_dir"),
                      ("sigma_est", "degradation.sigma_est"), ("factor", "degradation.factor"),
                      ("noise_sigma", "degradation.noise_sigma"), ("epochs", "ppo.total_epochs"),
                      ("batch_size", "ppo.batch_size"), ("patch_size", "ppo.patch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_experiment_config(args.config, overrides)


def _jobs(config: ExperimentConfig) -> int:
    return config.experiment.jobs or settings.effective_jobs


def _load_denoiser(config: ExperimentConfig) -> DRLDenoiser:
    path = config.experiment.checkpoint
    if not path:
        raise DataError("no checkpoint given (--checkpoint or experiment.checkpoint)")
    net = load_checkpoint(path)
    net.eval()
    return DRLDenoiser(net, config.episode, config.pnp.sigma_train)


def _true_kernel(config: ExperimentConfig) -> Kernel:
    section = config.degradation
    if section.kernel_file:
        return load_kernel(section.kernel_file)
    return gaussian_kernel(section.kernel_size, section.sigma_true)


def _degradations(config: ExperimentConfig, kind: DegradationKind, factor: int = 1):
    section = config.degradation
    factor = 1 if kind == DegradationKind.DEBLUR else factor
    true_deg = Degradation(kind, _true_kernel(config), factor, section.noise_for(kind))
    est_kernel = gaussian_kernel(true_deg.kernel.size, section.sigma_est)
    return true_deg, true_deg.with_kernel(est_kernel)


def _output_dir(config: ExperimentConfig) -> Path:
    path = Path(config.experiment.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _eval_set(config: ExperimentConfig):
    if not config.experiment.eval_dir:
        raise DataError("no evaluation directory given (--eval-dir or experiment.eval_dir)")
    paths = list_images(config.experiment.eval_dir, config.image.extensions)
    return paths, [load_image(p) for p in paths]


# Commands

def cmd_train_denoiser(config: ExperimentConfig) -> int:
    exp = config.experiment
    if not exp.train_dir:
        raise DataError("no training directory given (--train-dir or experiment.train_dir)")
    out = _output_dir(config)
    write_resolved_config(config, out)
    images = load_dataset(exp.train_dir, config.image.extensions)
    holdout = load_dataset(exp.holdout_dir, config.image.extensions) if exp.holdout_dir else None
    net = build_network(config.network, seed=exp.seed)
    result = train(images, net, config.ppo, config.episode, exp.seed, holdout=holdout, output_dir=out)
    final = save_checkpoint(result.net, out / "denoiser.ckpt", metadata={"seed": exp.seed, "epochs": len(result.metrics)})
    print(f"checkpoint: {final}")
    print(f"metrics: {out / 'metrics.csv'}")
    if result.best_holdout_psnr is not None:
        print(f"best holdout psnr: {result.best_holdout_psnr:.4f} dB")
    return EXIT_OK


def cmd_denoise(config: ExperimentConfig, input_path: str, output_path: Optional[str], reference: Optional[str]) -> int:
    denoiser = _load_denoiser(config)
    noisy = load_image(input_path)
    denoised = denoiser.denoise(noisy)
    out = Path(output_path) if output_path else Path(input_path).with_name(Path(input_path).stem + "_denoised.png")
    save_image(denoised, out)
    print(f"output: {out}")
    if reference:
        clean = load_image(reference)
        before, after = psnr(clean, noisy), psnr(clean, denoised)
        logger.info("denoise psnr %s -> %s dB", format_db(before), format_db(after))
        print(f"psnr input {format_db(before)} dB, denoised {format_db(after)} dB")
    return EXIT_OK


def _restore_set(config: ExperimentConfig, kind: DegradationKind, factor: int) -> int:
    exp = config.experiment
    denoiser = _load_denoiser(config)
    paths, images = _eval_set(config)
    true_deg, est_deg = _degradations(config, kind, factor)
    pnp_cfg = build_pnp_config(config.pnp, est_deg, config.cg)
    out = _output_dir(config)
    write_resolved_config(config, out)
    logger.info("%s: sigma_true %.2f sigma_est %.2f factor %d noise %.2f, sigma %.2f -> %.2f, lambda %.4g, border crop %s",
                kind.value, config.degradation.sigma_true, config.degradation.sigma_est, true_deg.factor,
                true_deg.noise_sigma, pnp_cfg.sigma_start, pnp_cfg.sigma_end, pnp_cfg.lam, config.pnp.border_crop)

    def run(i: int):
        return restore_one(images[i], true_deg, pnp_cfg, denoiser, image_seed(exp.seed, i), config.pnp.border_crop)

    with ThreadPoolExecutor(max_workers=_jobs(config)) as pool:
        outcomes = list(pool.map(run, range(len(images))))

    names = [p.name for p in paths]
    for path, outcome in zip(paths, outcomes):
        if exp.save_images:
            save_image(outcome.restored, out / "restored" / f"{path.stem}.png")
        if exp.trace:
            write_trace(out / "traces" / f"{path.stem}.csv", outcome.trace)
    results = write_results(out / "results.csv", names, [o.psnr_input for o in outcomes], [o.psnr_restored for o in outcomes])
    mean_in = sum(o.psnr_input for o in outcomes) / len(outcomes)
    mean_out = sum(o.psnr_restored for o in outcomes) / len(outcomes)
    print(f"{kind.value}: {len(outcomes)} images, mean psnr input {mean_in:.4f} dB, restored {mean_out:.4f} dB")
    print(f"results: {results}")
    return EXIT_OK


def cmd_deblur(config: ExperimentConfig) -> int:
    return _restore_set(config, DegradationKind.DEBLUR, 1)


def cmd_sisr(config: ExperimentConfig) -> int:
    if config.degradation.factor < 2:
        raise ConfigError("sisr needs a scale factor of at least 2 (--factor)")
    return _restore_set(config, DegradationKind.SISR, config.degradation.factor)


def cmd_sweep(config: ExperimentConfig, kind: DegradationKind) -> int:
    exp = config.experiment
    denoiser = _load_denoiser(config)
    _, images = _eval_set(config)
    out = _output_dir(config)
    write_resolved_config(config, out)
    factors = [1] if kind == DegradationKind.DEBLUR else list(exp.factors)
    # a kernel file has no sigma to label a control row with
    sigma_true = None if config.degradation.kernel_file else config.degradation.sigma_true
    violations = []
    for factor in factors:
        true_deg, est_deg = _degradations(config, kind, factor)
        template = build_pnp_config(config.pnp, est_deg, config.cg)
        rows = robustness_sweep(images, true_deg, exp.est_sigmas, template, denoiser, exp.seed, _jobs(config),
                                config.pnp.border_crop, sigma_true=sigma_true)
        name = "sweep_deblur.csv" if kind == DegradationKind.DEBLUR else f"sweep_sisr_x{factor}.csv"
        write_sweep(out / name, rows)
        print(f"{name}: " + ", ".join(f"{r.sigma_est:.2f}->{r.mean_psnr:.3f}" for r in rows))
        if not (strictly_decreasing(rows) and control_is_best(rows)):
            violations.append(name)
    if violations and exp.assert_trend:
        raise TrendViolation(f"mean PSNR is not strictly decreasing in sigma_est, or the control row is not best, for {', '.join(violations)}")
    return EXIT_OK


def cmd_psnr(reference: str, test: str) -> int:
    value = psnr(load_image(reference), load_image(test))
    print(format_db(value))
    return EXIT_OK


def cmd_verify_dataset(config: ExperimentConfig, directories: Sequence[str], min_size: int) -> int:
    for directory in directories:
        summary = DatasetService(directory, config.image.extensions).verify(min_size)
        print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_params(config: ExperimentConfig) -> int:
    if config.experiment.checkpoint:
        net = load_checkpoint(config.experiment.checkpoint)
    else:
        net = build_network(config.network, seed=config.experiment.seed)
    for name, count in parameter_report(net).items():
        print(f"{name}: {count}")
    return EXIT_OK


# Parser

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI experiment file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--log-level")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="repnp", description="Plug-and-Play restoration with a pixel-wise RL denoiser")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-denoiser", help="train the denoiser with PPO")
    _common(p)
    p.add_argument("--train-dir")
    p.add_argument("--holdout-dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patch-size", type=int)

    p = sub.add_parser("denoise", help="greedy denoising of one image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--steps", type=int, help="episode length T")
    p.add_argument("--reference", help="clean image for PSNR")

    for name in ("deblur", "sisr"):
        p = sub.add_parser(name, help=f"{name} an evaluation set")
        _common(p)
        p.add_argument("--checkpoint")
        p.add_argument("--eval-dir")
        p.add_argument("--sigma-est", type=float)
        p.add_argument("--trace", action="store_true", help="write per-iteration CSV traces")
        if name == "sisr":
            p.add_argument("--factor", type=int)
        p.add_argument("--noise-sigma", type=float)

    p = sub.add_parser("sweep", help="kernel-mismatch robustness sweep")
    _common(p)
    p.add_argument("task", choices=[k.value for k in DegradationKind])
    p.add_argument("--checkpoint")
    p.add_argument("--eval-dir")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--assert-trend", action="store_true")

    p = sub.add_parser("psnr", help="PSNR between two images")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--log-level")

    p = sub.add_parser("verify-dataset", help="check image counts and sizes")
    _common(p)
    p.add_argument("directories", nargs="+")
    p.add_argument("--min-size", type=int, default=1)

    p = sub.add_parser("params", help="report network parameter counts")
    _common(p)
    p.add_argument("--checkpoint")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    if settings.TORCH_THREADS > 0:
        torch.set_num_threads(settings.TORCH_THREADS)
    try:
        if args.command == "psnr":
            return cmd_psnr(args.reference, args.test)
        if args.command == "denoise" and args.steps is not None:
            args.set = list(args.set or []) + [f"episode.steps={args.steps}"]
        if getattr(args, "assert_trend", False):
            args.set = list(args.set or []) + ["experiment.assert_trend=true"]
        if getattr(args, "trace", False):
            args.set = list(args.set or []) + ["experiment.trace=true"]
        config = _config(args)
        if args.command == "train-denoiser":
            return cmd_train_denoiser(config)
        if args.command == "denoise":
            return cmd_denoise(config, args.input, args.output, args.reference)
        if args.command == "deblur":
            return cmd_deblur(config)
        if args.command == "sisr":
            return cmd_sisr(config)
        if args.command == "sweep":
            return cmd_sweep(config, DegradationKind(args.task))
        if args.command == "verify-dataset":
            return cmd_verify_dataset(config, args.directories, args.min_size)
        if args.command == "params":
            return cmd_params(config)
    except RePnPError as e:
        logger.error("%s", e.detail)
        return e.exit_code
    except ValidationError as e:
        logger.error("invalid parameters: %s", e)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
