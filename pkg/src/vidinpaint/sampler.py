"""Reverse-diffusion inference on the evolving test state, compositing, and replayed sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, model_from_checkpoint
from .diffusion import DiffusionSchedule, make_schedule, reverse_step, standard_normal
from .model import UNet3D, predict_x0

TILE_FRAMES = 20
TILE_OVERLAP = 4


def inference_stream(seed: int, index: int) -> np.random.Generator:
    """Noise stream ``index`` of a run; index 0 is reserved for training data."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


@dataclass
class InferenceState:
    """x_test is (L, H, W, 3), or (B, L, H, W, 3) with one generator per batch item."""

    x_test: torch.Tensor
    cursor: int
    rng: np.random.Generator | list


def init_inference(shape, T: int, rng) -> InferenceState:
    return InferenceState(standard_normal(shape, rng), int(T), rng)


def observed(video: torch.Tensor, m_test: torch.Tensor) -> torch.Tensor:
    """y_test: the video with the test region zeroed."""
    return torch.where(m_test > 0, torch.zeros((), dtype=video.dtype), video)


def _tile_starts(L: int, window: int, overlap: int) -> list[int]:
    stride = window - overlap
    starts = list(range(0, max(L - window, 0) + 1, stride))
    if starts[-1] + window < L:
        starts.append(L - window)
    return starts


def predict_tiled(model: UNet3D, x_t, y, t, M, window: int = TILE_FRAMES, overlap: int = TILE_OVERLAP):
    """Temporal tiles of ``window`` frames, linearly cross-faded over the overlaps."""
    L = x_t.shape[-4]
    if L <= window:
        return predict_x0(model, x_t, y, t, M)
    out = torch.zeros_like(x_t)
    weight = torch.zeros(L, dtype=x_t.dtype)
    ramp = torch.ones(window, dtype=x_t.dtype)
    if overlap:
        edge = torch.arange(1, overlap + 1, dtype=x_t.dtype) / (overlap + 1)
        ramp[:overlap] = edge
        ramp[-overlap:] = edge.flip(0)
    for s in _tile_starts(L, window, overlap):
        sl = slice(s, s + window)
        pred = predict_x0(model, x_t[..., sl, :, :, :], y[..., sl, :, :, :], t, M[..., sl, :, :, :])
        out[..., sl, :, :, :] += pred * ramp.view(-1, 1, 1, 1)
        weight[sl] += ramp
    return out / weight.view(-1, 1, 1, 1)


@torch.no_grad()
def advance(state: InferenceState, model: UNet3D, y_test: torch.Tensor, m_test: torch.Tensor,
            sched: DiffusionSchedule, window: int | None = None) -> InferenceState:
    """Execute the reverse step at ``state.cursor`` and move the cursor down by one."""
    t = state.cursor
    if t < 1:
        raise ValueError("inference cursor underflow")
    x = state.x_test
    if x.dim() == 5 and y_test.dim() == 4:
        y_test = y_test.expand_as(x)
        m_test = m_test.expand(*x.shape[:-1], 1)
    if window is None:
        x_hat0 = predict_x0(model, x, y_test, t, m_test)
    else:
        x_hat0 = predict_tiled(model, x, y_test, t, m_test, window)
    state.x_test = reverse_step(x, x_hat0, t, sched, state.rng)
    state.cursor = t - 1
    return state


def advance_to(state: InferenceState, model, y_test, m_test, sched, lowest: int,
               window: int | None = None, trace: list | None = None) -> InferenceState:
    """Run reverse steps from the current cursor down to ``lowest`` inclusive."""
    while state.cursor >= lowest:
        if trace is not None:
            trace.append(("infer", state.cursor))
        advance(state, model, y_test, m_test, sched, window)
    return state


def finalize(state: InferenceState, original: torch.Tensor, m_test: torch.Tensor) -> torch.Tensor:
    """Composite generated content into the test region and keep known pixels bit-exact."""
    if state.cursor != 0:
        raise ValueError(f"inference not finished (cursor at {state.cursor})")
    x = state.x_test
    if x.dim() == 5:
        original = original.expand_as(x)
        m_test = m_test.expand(*x.shape[:-1], 1)
    return torch.where(m_test > 0, x, original).clamp(-1.0, 1.0)


@dataclass
class SampleSet:
    samples: list
    mean: torch.Tensor


def retained_checkpoints(directory) -> list[Path]:
    paths = sorted(Path(directory).glob("interval_*.pt"))
    if not paths:
        raise CheckpointError(f"no retained per-interval checkpoints in {directory}")
    return paths


def sample_many(checkpoints: Sequence, video: torch.Tensor, m_test: torch.Tensor, n: int,
                seed: int, batch_size: int = 8, window: int | None = None) -> SampleSet:
    """Replay the inference pass through stored per-interval models with ``n`` noise streams.

    Stream k (1-based) is ``inference_stream(seed, k)``; stream 1 is the one the
    training run itself used, so ``n = 1`` with the run's seed reproduces its output.
    """
    from .trainer import make_interval_plan  # trainer imports this module

    if n < 1:
        raise ValueError("n must be >= 1")
    if not checkpoints:
        raise CheckpointError("no checkpoints to replay")
    metas = [load_checkpoint(p) for p in checkpoints]
    first = metas[0]
    sched = make_schedule(**first["schedule"])
    plan = make_interval_plan(sched.T, first["plan"]["length"], first["plan"]["total_iters"])
    if len(metas) != plan.N:
        raise CheckpointError(f"expected {plan.N} interval checkpoints, found {len(metas)}")
    y_test = observed(video, m_test)
    samples = []
    for start in range(0, n, batch_size):
        ids = list(range(start + 1, min(n, start + batch_size) + 1))
        rngs = [inference_stream(seed, k) for k in ids]
        if len(ids) == 1:
            state = init_inference(video.shape, sched.T, rngs[0])
        else:
            state = init_inference((len(ids), *video.shape), sched.T, rngs)
        for interval, data in zip(plan.intervals, metas):
            model = model_from_checkpoint(data)
            advance_to(state, model, y_test, m_test, sched, interval.lo, window)
        out = finalize(state, video, m_test)
        samples.extend([out] if len(ids) == 1 else list(out))
    return SampleSet(samples, torch.stack(samples).mean(dim=0))
