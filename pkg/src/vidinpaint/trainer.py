"""Interval training: train on one block of timesteps, then immediately run its inference."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (CheckpointError, load_checkpoint, model_from_checkpoint,
                         model_params, save_checkpoint)
from .diffusion import DiffusionSchedule, standard_normal
from .masks import StrokeMaskConfig, build_conditioning, generate_stroke_mask, masked_loss
from .model import UNet3D, build_model, predict_x0
from .sampler import (InferenceState, advance_to, finalize, inference_stream, init_inference,
                      observed)
from .video_io import clip_start

log = logging.getLogger(__name__)

TRAIN_STREAM = 0
INFER_STREAM = 1


@dataclass(frozen=True)
class Interval:
    """A block of timesteps. Inference runs hi, hi-1, ..., lo; training draws t from ``train_range``."""

    index: int  # 1-based position counted from the clean end
    lo: int
    hi: int
    iters: int

    @property
    def train_range(self) -> tuple[int, int]:
        # [tau_i, tau_{i+1}], both ends inclusive; tau_i is the top of the next-cleaner block
        return (max(1, self.lo - 1), self.hi)

    @property
    def timesteps(self) -> range:
        return range(self.hi, self.lo - 1, -1)


@dataclass(frozen=True)
class IntervalPlan:
    T: int
    length: int
    total_iters: int
    intervals: tuple  # noisiest first, i.e. processing order

    @property
    def N(self) -> int:
        """Number of intervals."""
        return len(self.intervals)

    @property
    def K(self) -> int:
        return self.total_iters // self.N

    @property
    def boundaries(self) -> tuple[int, ...]:
        """tau_1 = 1, then the top timestep of every block from clean to noisy (tau_N = T)."""
        return (1,) + tuple(iv.hi for iv in reversed(self.intervals))


def make_interval_plan(T: int, length: int, total_iters: int) -> IntervalPlan:
    """Tile 1..T with blocks of ``length`` from the noisy end; the clean-end block takes the remainder.

    Each block gets ``total_iters // N`` iterations and the last-trained (cleanest)
    block also gets the leftover ``total_iters % N``.
    """
    if length < 1:
        raise ValueError("interval length must be >= 1")
    if length > T:
        raise ValueError(f"interval length {length} exceeds T = {T}")
    if total_iters < 0:
        raise ValueError("total_iters must be >= 0")
    tops = list(range(T, 0, -length))
    n = len(tops)
    base, rest = divmod(total_iters, n)
    intervals = []
    for pos, hi in enumerate(tops):
        lo = max(1, hi - length + 1)
        iters = base + (rest if pos == n - 1 else 0)
        intervals.append(Interval(index=n - pos, lo=lo, hi=hi, iters=iters))
    return IntervalPlan(T, length, total_iters, tuple(intervals))


@dataclass(frozen=True)
class TrainConfig:
    channels: int = 32
    clip_len: int = 20
    learning_rate: float = 1e-4
    masks: StrokeMaskConfig = field(default_factory=StrokeMaskConfig)
    mixed_precision: bool = False
    inference_window: int | None = None


@dataclass
class TrainerState:
    model: UNet3D
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    inference: InferenceState
    position: int = 0  # next interval in processing order
    iteration: int = 0
    losses: list = field(default_factory=list)
    trace: list | None = None


def make_optimizer(model: UNet3D, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)


def draw_timestep(interval: Interval, rng: np.random.Generator) -> int:
    lo, hi = interval.train_range
    return int(rng.integers(lo, hi + 1))


def train_step(model, optimizer, video, m_test, interval: Interval, sched: DiffusionSchedule,
               cfg: TrainConfig, rng: np.random.Generator) -> tuple[float, int]:
    """One Adam step on a random clip, stroke mask, noise draw and timestep. Returns (loss, t)."""
    L, h, w, _ = video.shape
    clip_len = min(cfg.clip_len, L)
    s = clip_start(L, clip_len, rng)
    x0, mt = video[s:s + clip_len], m_test[s:s + clip_len]
    m_train = generate_stroke_mask((clip_len, h, w), cfg.masks, rng)
    t = draw_timestep(interval, rng)
    eps = standard_normal(x0.shape, rng)
    bundle = build_conditioning(x0, mt, m_train, t, eps, sched)
    pred = predict_x0(model, bundle.x_tilde, bundle.y, t, bundle.M)
    loss = masked_loss(x0, pred, bundle.loss_mask)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return loss.item(), t


def train_interval(state: TrainerState, interval: Interval, video, m_test, sched, cfg: TrainConfig,
                   iters: int | None = None) -> list[float]:
    iters = interval.iters if iters is None else iters
    if state.trace is not None:
        state.trace.append(("train", interval.train_range, iters))
    losses = []
    for _ in range(iters):
        loss, t = train_step(state.model, state.optimizer, video, m_test, interval, sched, cfg, state.rng)
        losses.append(loss)
        if state.trace is not None:
            state.trace.append(("step", t))
        state.iteration += 1
    return losses


def new_state(video_shape, sched: DiffusionSchedule, cfg: TrainConfig, seed: int,
              trace: list | None = None) -> TrainerState:
    model = build_model(cfg.channels, seed=seed, T=sched.T, mixed_precision=cfg.mixed_precision)
    train_rng = inference_stream(seed, TRAIN_STREAM)
    inference = init_inference(video_shape, sched.T, inference_stream(seed, INFER_STREAM))
    return TrainerState(model, make_optimizer(model, cfg), train_rng, inference, trace=trace)


def _generator_from(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def state_payload(state: TrainerState, plan: IntervalPlan, sched: DiffusionSchedule) -> dict:
    return {
        "model": {"channels": state.model.channels, "mixed_precision": state.model.mixed_precision},
        "schedule": sched.metadata(),
        "params": model_params(state.model),
        "optimizer": state.optimizer.state_dict(),
        "cursor": {"interval": state.position, "timestep": state.inference.cursor,
                   "iteration": state.iteration},
        "rng": {"train": state.rng.bit_generator.state,
                "infer": state.inference.rng.bit_generator.state},
        "x_test": state.inference.x_test.clone(),
        "plan": {"length": plan.length, "total_iters": plan.total_iters},
        "losses": list(state.losses),
    }


def restore_state(path, plan: IntervalPlan, sched: DiffusionSchedule, cfg: TrainConfig,
                  trace: list | None = None) -> TrainerState:
    data = load_checkpoint(path)
    if data["schedule"] != sched.metadata():
        raise CheckpointError(f"checkpoint schedule {data['schedule']} differs from {sched.metadata()}")
    if data["plan"] != {"length": plan.length, "total_iters": plan.total_iters}:
        raise CheckpointError(f"checkpoint plan {data['plan']} differs from the configured plan")
    model = model_from_checkpoint(data)
    optimizer = make_optimizer(model, cfg)
    optimizer.load_state_dict(data["optimizer"])
    cursor = data["cursor"]
    inference = InferenceState(data["x_test"].clone(), int(cursor["timestep"]),
                               _generator_from(data["rng"]["infer"]))
    return TrainerState(model, optimizer, _generator_from(data["rng"]["train"]), inference,
                        position=int(cursor["interval"]), iteration=int(cursor["iteration"]),
                        losses=list(data.get("losses", [])), trace=trace)


@dataclass
class RunResult:
    output: torch.Tensor | None
    state: TrainerState
    checkpoints: list
    seconds_train: float = 0.0
    seconds_infer: float = 0.0


def run_interval_training(video: torch.Tensor, m_test: torch.Tensor, plan: IntervalPlan,
                          sched: DiffusionSchedule, cfg: TrainConfig, seed: int,
                          checkpoint_dir=None, retain: bool = False, resume=None,
                          stop_after: int | None = None, trace: list | None = None,
                          checkpoint_every: int = 1) -> RunResult:
    """Train/infer interval by interval from the noisiest block down to t = 1.

    ``stop_after`` returns early after that many intervals (output is then None);
    ``resume`` continues from a boundary checkpoint written by an earlier call.
    """
    if video.shape[:-1] != m_test.shape[:-1]:
        raise ValueError(f"video {tuple(video.shape)} and mask {tuple(m_test.shape)} disagree")
    if plan.T != sched.T:
        raise ValueError("plan and schedule disagree on T")
    if resume is not None:
        state = restore_state(resume, plan, sched, cfg, trace)
    else:
        state = new_state(video.shape, sched, cfg, seed, trace)
    if state.inference.x_test.shape != video.shape:
        raise CheckpointError("checkpointed x_test does not match the video shape")
    y_test = observed(video, m_test)
    written = []
    done = 0
    t_train = t_infer = 0.0
    while state.position < plan.N:
        if stop_after is not None and done >= stop_after:
            return RunResult(None, state, written, t_train, t_infer)
        interval = plan.intervals[state.position]
        start = time.perf_counter()
        losses = train_interval(state, interval, video, m_test, sched, cfg)
        mid = time.perf_counter()
        advance_to(state.inference, state.model, y_test, m_test, sched, interval.lo,
                   cfg.inference_window, state.trace)
        end = time.perf_counter()
        t_train += mid - start
        t_infer += end - mid
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        state.losses.append(mean_loss)
        state.position += 1
        done += 1
        log.info("interval %d (t %d..%d, %d iters): mean loss %.5g, %.1fs train, %.1fs infer",
                 interval.index, interval.hi, interval.lo, len(losses), mean_loss, mid - start, end - mid)
        if checkpoint_dir is not None and (retain or state.position % checkpoint_every == 0
                                           or state.position == plan.N):
            payload = state_payload(state, plan, sched)
            if retain:
                written.append(save_checkpoint(Path(checkpoint_dir) / f"interval_{state.position - 1:03d}.pt", payload))
            if state.position % checkpoint_every == 0 or state.position == plan.N:
                save_checkpoint(Path(checkpoint_dir) / "latest.pt", payload)
    return RunResult(finalize(state.inference, video, m_test), state, written, t_train, t_infer)


def train_then_sample(video, m_test, sched, cfg: TrainConfig, total_iters: int, seed: int,
                      trace: list | None = None) -> torch.Tensor:
    """Classic DDPM: train on all timesteps at once, then run the full reverse chain."""
    state = new_state(video.shape, sched, cfg, seed, trace)
    everything = Interval(index=1, lo=1, hi=sched.T, iters=total_iters)
    train_interval(state, everything, video, m_test, sched, cfg)
    advance_to(state.inference, state.model, observed(video, m_test), m_test, sched, 1,
               cfg.inference_window, trace)
    return finalize(state.inference, video, m_test)
