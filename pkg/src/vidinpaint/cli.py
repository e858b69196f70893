"""Command-line front door: ``inpaint``, ``ablate``, ``sample`` plus preset/synthetic helpers.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import metrics
from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig, load_config, preset, save_config, dumps
from .diffusion import make_schedule
from .sampler import retained_checkpoints, sample_many
from .synthetic import drifting_texture, square_mask
from .trainer import make_interval_plan, run_interval_training
from .video_io import (crop_to, load_frame_sequence, load_mask_sequence,
                       resize_to_working_resolution, working_size, write_frame_sequence,
                       write_mask_sequence)

log = logging.getLogger("vidinpaint")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


@dataclass
class Inputs:
    video: torch.Tensor  # resized + padded
    mask: torch.Tensor
    size: tuple  # working (H, W) before padding
    truth: torch.Tensor | None = None  # cropped to ``size``

    def crop(self, x):
        return crop_to(x, self.size)


def load_inputs(cfg: ExperimentConfig) -> Inputs:
    raw = load_frame_sequence(cfg.video)
    mask = load_mask_sequence(cfg.mask, expected_shape=raw.shape[:3])
    size = working_size(*raw.shape[1:3])
    video, mask = resize_to_working_resolution(raw, mask)
    truth = None
    if cfg.ground_truth:
        gt = load_frame_sequence(cfg.ground_truth)
        if gt.shape != raw.shape:
            raise ValueError(f"ground truth shape {tuple(gt.shape)} differs from video {tuple(raw.shape)}")
        truth, _ = resize_to_working_resolution(gt, torch.zeros(*gt.shape[:3], 1))
        truth = crop_to(truth, size)
    return Inputs(video, mask, size, truth)


@dataclass
class InpaintOutcome:
    output: torch.Tensor
    report: metrics.MetricReport | None
    timing: dict
    output_dir: Path
    row: metrics.MetricRow | None = None


def _evaluate(cfg, name, truth, candidate, mask, samples=None):
    row = metrics.MetricRow(name, float("nan"), float("nan"))
    if cfg.psnr:
        row.psnr = metrics.psnr(truth, candidate)
        row.psnr_masked = metrics.psnr(truth, candidate, mask=mask)
    if cfg.ssim:
        row.ssim = metrics.ssim(truth, candidate)
    if cfg.diversity and samples is not None and len(samples) >= 2:
        row.diversity = metrics.diversity(samples, mask, truth)
    for plugin in cfg.plugins:
        row.plugins[plugin] = metrics.perceptual_plugin(plugin, truth, candidate)
    return row


def _write_report(report: metrics.MetricReport, directory: Path, stem: str = "metrics"):
    (directory / f"{stem}.csv").write_text(report.to_csv())
    (directory / f"{stem}.txt").write_text(report.summary() + "\n")


def run_inpaint(cfg: ExperimentConfig, resume=None, inputs: Inputs | None = None) -> InpaintOutcome:
    cfg.validate(need_inputs=inputs is None)
    wall = time.perf_counter()
    inputs = inputs or load_inputs(cfg)
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.ini")
    sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    plan = make_interval_plan(cfg.timesteps, cfg.interval_length, cfg.total_iterations)
    log.info("video %s, %d intervals of length %d, %d iterations each",
             tuple(inputs.video.shape), plan.N, plan.length, plan.K)
    result = run_interval_training(inputs.video, inputs.mask, plan, sched, cfg.train_config(),
                                   seed=cfg.seed, checkpoint_dir=out_dir / "checkpoints",
                                   retain=cfg.retain_checkpoints, resume=resume,
                                   checkpoint_every=cfg.checkpoint_every)
    output = inputs.crop(result.output)
    write_frame_sequence(output, out_dir / "result")
    frames = output.shape[0]
    timing = {
        "wall_seconds": time.perf_counter() - wall,
        "train_seconds": result.seconds_train,
        "inference_seconds": result.seconds_infer,
        "inference_seconds_per_frame": result.seconds_infer / frames,
        "frames": frames,
    }
    (out_dir / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    log.info("done in %.1fs (%.3f s/frame inference)", timing["wall_seconds"],
             timing["inference_seconds_per_frame"])
    report = row = None
    if inputs.truth is not None:
        report = metrics.MetricReport()
        row = report.add(_evaluate(cfg, Path(cfg.video).name, inputs.truth, output,
                                   inputs.crop(inputs.mask)))
        _write_report(report, out_dir)
        log.info("metrics: %s", report.summary())
    return InpaintOutcome(output, report, timing, out_dir, row)


@dataclass
class SampleOutcome:
    samples: list
    mean: torch.Tensor
    report: metrics.MetricReport | None
    directories: list = field(default_factory=list)


def run_sample(cfg: ExperimentConfig, n: int, inputs: Inputs | None = None) -> SampleOutcome:
    cfg.validate(need_inputs=inputs is None)
    inputs = inputs or load_inputs(cfg)
    out_dir = Path(cfg.output)
    paths = retained_checkpoints(out_dir / "checkpoints")
    log.info("replaying %d interval models for %d samples", len(paths), n)
    result = sample_many(paths, inputs.video, inputs.mask, n, seed=cfg.seed,
                         batch_size=cfg.sample_batch, window=cfg.inference_window)
    samples = [inputs.crop(s) for s in result.samples]
    mean = inputs.crop(result.mean)
    dirs = []
    for k, s in enumerate(samples):
        dirs.append(out_dir / "samples" / f"sample_{k:03d}")
        write_frame_sequence(s, dirs[-1])
    write_frame_sequence(mean, out_dir / "samples" / "mean")
    report = None
    if inputs.truth is not None:
        mask = inputs.crop(inputs.mask)
        report = metrics.MetricReport()
        for k, s in enumerate(samples):
            report.add(_evaluate(cfg, f"sample_{k:03d}", inputs.truth, s, mask))
        report.add(_evaluate(cfg, "mean", inputs.truth, mean, mask,
                             samples=samples if n >= 2 else None))
        _write_report(report, out_dir / "samples")
        log.info("sample metrics:\n%s", report.summary())
    return SampleOutcome(samples, mean, report, dirs)


ABLATION_COLUMNS = ("interval_length", "intervals", "iterations_per_interval", "psnr", "ssim",
                    "psnr_masked", "train_seconds", "inference_seconds")


def run_ablation(cfg: ExperimentConfig, lengths, inputs: Inputs | None = None) -> list[dict]:
    """One full run per interval length at the same total budget; returns the table rows."""
    cfg.validate(need_inputs=inputs is None)
    for length in lengths:
        if not 1 <= length <= cfg.timesteps:
            raise ConfigError(f"interval length {length} outside [1, {cfg.timesteps}]")
    inputs = inputs or load_inputs(cfg)
    root = Path(cfg.output) / "ablate"
    rows = []
    for length in lengths:
        run_cfg = cfg.replace(interval_length=length, output=str(root / f"length_{length:04d}"))
        outcome = run_inpaint(run_cfg, inputs=inputs)
        plan = make_interval_plan(cfg.timesteps, length, cfg.total_iterations)
        row = {"interval_length": length, "intervals": plan.N, "iterations_per_interval": plan.K,
               "train_seconds": outcome.timing["train_seconds"],
               "inference_seconds": outcome.timing["inference_seconds"]}
        if outcome.row is not None:
            row.update(psnr=outcome.row.psnr, ssim=outcome.row.ssim, psnr_masked=outcome.row.psnr_masked)
        rows.append(row)
    lines = [",".join(ABLATION_COLUMNS)]
    for row in rows:
        lines.append(",".join(metrics._fmt(row.get(c)) for c in ABLATION_COLUMNS))
    root.mkdir(parents=True, exist_ok=True)
    (root / "report.csv").write_text("\n".join(lines) + "\n")
    scored = [r for r in rows if r.get("psnr_masked") is not None]
    if scored:
        best = max(scored, key=lambda r: r["psnr_masked"])
        log.info("best masked PSNR %.2f dB at interval length %d", best["psnr_masked"], best["interval_length"])
    return rows


def write_toy_dataset(directory, seed: int = 0) -> ExperimentConfig:
    """Write a drifting-texture video, a square test mask and a matching toy config."""
    directory = Path(directory)
    video = drifting_texture(seed=seed)
    mask = square_mask(video.shape[0], video.shape[1], video.shape[2])
    write_frame_sequence(video, directory / "video")
    write_mask_sequence(mask, directory / "mask")
    cfg = preset("toy").replace(video=str(directory / "video"), mask=str(directory / "mask"),
                                ground_truth=str(directory / "video"), output=str(directory / "out"),
                                seed=seed)
    save_config(cfg, directory / "toy.ini")
    return cfg


def _load(args) -> ExperimentConfig:
    base = preset(args.preset) if args.preset else None
    cfg = load_config(args.config, base) if args.config else base
    if cfg is None:
        raise ConfigError("pass --config FILE and/or --preset NAME")
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidinpaint", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--preset", help="start from a preset (texture, object-removal, toy)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("inpaint", help="train on the video and inpaint its test mask")
    common(p)
    p.add_argument("--resume", help="boundary checkpoint to continue from")
    p = sub.add_parser("ablate", help="compare interval lengths at equal budget")
    common(p)
    p.add_argument("--lengths", default="1,10,50,100,1000")
    p = sub.add_parser("sample", help="draw extra samples from retained interval checkpoints")
    common(p)
    p.add_argument("--n", type=int, default=1)
    p = sub.add_parser("preset", help="print a preset config")
    p.add_argument("name")
    p = sub.add_parser("make-toy", help="write a synthetic dynamic-texture dataset and toy config")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "preset":
            sys.stdout.write(dumps(preset(args.name)))
            return EXIT_OK
        if args.command == "make-toy":
            write_toy_dataset(args.directory, args.seed)
            print(Path(args.directory) / "toy.ini")
            return EXIT_OK
        cfg = _load(args)
        if args.command == "inpaint":
            run_inpaint(cfg, resume=args.resume)
        elif args.command == "ablate":
            try:
                lengths = [int(x) for x in args.lengths.split(",") if x.strip()]
            except ValueError:
                raise ConfigError(f"bad --lengths {args.lengths!r}") from None
            run_ablation(cfg, lengths)
            print((Path(cfg.output) / "ablate" / "report.csv").read_text(), end="")
        elif args.command == "sample":
            if args.n < 1:
                raise ConfigError("--n must be >= 1")
            run_sample(cfg, args.n)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (CheckpointError, metrics.PluginUnavailableError, ValueError, OSError, RuntimeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
