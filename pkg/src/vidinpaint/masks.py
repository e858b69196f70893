"""Training-mask generation and the leakage-safe construction of network inputs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import cv2
import numpy as np
import torch

from .diffusion import DiffusionSchedule


@dataclass(frozen=True)
class StrokeMaskConfig:
    """Knobs of the animated random-stroke generator; every field is an inclusive range."""

    strokes_per_clip: tuple[int, int] = (1, 5)
    brush_width: tuple[int, int] = (10, 40)
    walk_steps: tuple[int, int] = (6, 14)
    segment_length: tuple[int, int] = (10, 40)
    drift_per_frame: tuple[float, float] = (0.0, 3.0)

    def __post_init__(self):
        for name, (lo, hi) in asdict(self).items():
            if lo < 0 or hi < lo:
                raise ValueError(f"{name}: invalid range ({lo}, {hi})")
        if self.brush_width[0] < 1 or self.walk_steps[0] < 1:
            raise ValueError("brush_width and walk_steps need positive lower bounds")


@dataclass(frozen=True)
class ConditioningBundle:
    x_tilde: torch.Tensor
    y: torch.Tensor
    M: torch.Tensor
    loss_mask: torch.Tensor


def _stroke_canvas(h: int, w: int, cfg: StrokeMaskConfig, rng: np.random.Generator) -> np.ndarray:
    canvas = np.zeros((h, w), np.uint8)
    width = int(rng.integers(cfg.brush_width[0], cfg.brush_width[1] + 1))
    steps = int(rng.integers(cfg.walk_steps[0], cfg.walk_steps[1] + 1))
    x, y = rng.uniform(0, w), rng.uniform(0, h)
    angle = rng.uniform(0, 2 * np.pi)
    points = [(x, y)]
    for _ in range(steps):
        angle += rng.uniform(-np.pi / 2, np.pi / 2)
        length = rng.uniform(cfg.segment_length[0], cfg.segment_length[1])
        x = float(np.clip(x + length * np.cos(angle), 0, w - 1))
        y = float(np.clip(y + length * np.sin(angle), 0, h - 1))
        points.append((x, y))
    pts = np.rint(np.array(points)).astype(np.int32)
    cv2.polylines(canvas, [pts], isClosed=False, color=1, thickness=width, lineType=cv2.LINE_8)
    for px, py in pts:
        cv2.circle(canvas, (int(px), int(py)), width // 2, 1, thickness=-1)
    return canvas


def _shifted(canvas: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = canvas.shape
    out = np.zeros_like(canvas)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    src = canvas[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return out


def generate_stroke_mask(shape, cfg: StrokeMaskConfig, rng: np.random.Generator) -> torch.Tensor:
    """Random-walk brush strokes that drift at a constant per-stroke velocity over frames.

    ``shape`` is (L, H, W); the result is an (L, H, W, 1) binary float32 tensor.
    """
    L, h, w = (int(s) for s in shape)
    mask = np.zeros((L, h, w), np.uint8)
    n = int(rng.integers(cfg.strokes_per_clip[0], cfg.strokes_per_clip[1] + 1))
    for _ in range(n):
        canvas = _stroke_canvas(h, w, cfg, rng)
        speed = rng.uniform(cfg.drift_per_frame[0], cfg.drift_per_frame[1])
        heading = rng.uniform(0, 2 * np.pi)
        vy, vx = speed * np.sin(heading), speed * np.cos(heading)
        # centre the motion on the middle frame so the stroke stays near where it was drawn
        for f in range(L):
            k = f - (L - 1) / 2
            mask[f] |= _shifted(canvas, int(round(k * vy)), int(round(k * vx)))
    return torch.from_numpy(mask.astype(np.float32))[..., None]


def _check_same(*tensors):
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"mask shapes disagree: {sorted(shapes)}")


def combine_masks(m_test: torch.Tensor, m_train: torch.Tensor) -> torch.Tensor:
    """Pointwise OR, written as 1 - (1 - a)(1 - b)."""
    _check_same(m_test, m_train)
    return 1.0 - (1.0 - m_test) * (1.0 - m_train)


def _zero_where(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    # torch.where yields +0.0 regardless of the hidden value, so poisoned input cannot change bits
    return torch.where(mask > 0, torch.zeros((), dtype=x.dtype), x)


def build_conditioning(x0: torch.Tensor, m_test: torch.Tensor, m_train: torch.Tensor, t: int,
                       eps: torch.Tensor, sched: DiffusionSchedule) -> ConditioningBundle:
    _check_same(m_test, m_train)
    if x0.shape[:-1] != m_test.shape[:-1] or x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {tuple(x0.shape)}, mask {tuple(m_test.shape)}, eps {tuple(eps.shape)}")
    t = sched.check_t(t)
    ab = sched.alpha_bar[t]
    visible = _zero_where(x0, m_test)
    x_tilde = float(np.sqrt(ab)) * visible + float(np.sqrt(1.0 - ab)) * eps
    M = combine_masks(m_test, m_train)
    y = _zero_where(visible, M)
    loss_mask = m_train * (1.0 - m_test)
    return ConditioningBundle(x_tilde, y, M, loss_mask)


def masked_loss(x0: torch.Tensor, prediction: torch.Tensor, loss_mask: torch.Tensor) -> torch.Tensor:
    """Unweighted sum of squared residuals over pixels where ``loss_mask`` is 1."""
    if x0.shape != prediction.shape or x0.shape[:-1] != loss_mask.shape[:-1]:
        raise ValueError(f"shape mismatch: {tuple(x0.shape)}, {tuple(prediction.shape)}, {tuple(loss_mask.shape)}")
    keep = (loss_mask > 0).expand_as(prediction)
    residual = torch.where(keep, x0 - prediction, torch.zeros((), dtype=prediction.dtype))
    return residual.square().sum()
