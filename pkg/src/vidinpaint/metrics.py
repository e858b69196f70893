"""Frame-wise PSNR / SSIM, a cross-sample diversity score, and perceptual-metric plugin seams.

All metrics take clips on the [-1, 1] scale and evaluate them de-normalized to [0, 1].
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def to_unit(video) -> np.ndarray:
    """[-1, 1] tensor or array -> float64 array on [0, 1]."""
    if hasattr(video, "detach"):
        video = video.detach().cpu().numpy()
    return (np.asarray(video, dtype=np.float64) + 1.0) / 2.0


def _as_bool(mask) -> np.ndarray:
    if hasattr(mask, "detach"):
        mask = mask.detach().cpu().numpy()
    return np.asarray(mask) > 0.5


def _check(reference, candidate):
    if reference.shape != candidate.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {candidate.shape}")


def psnr(reference, candidate, mask=None, cap: float = PSNR_CAP) -> float:
    """Mean over frames of per-frame PSNR with peak 1.0.

    With ``mask`` (L, H, W, 1), each frame's MSE covers only masked pixels and frames
    without masked pixels are skipped. Zero-MSE frames score ``cap``.
    """
    ref, cand = to_unit(reference), to_unit(candidate)
    _check(ref, cand)
    sq = (ref - cand) ** 2
    if mask is None:
        mse = sq.reshape(len(sq), -1).mean(axis=1)
    else:
        weight = np.broadcast_to(_as_bool(mask), sq.shape)
        count = weight.reshape(len(sq), -1).sum(axis=1)
        keep = count > 0
        if not keep.any():
            raise ValueError("mask selects no pixels")
        mse = (sq * weight).reshape(len(sq), -1).sum(axis=1)[keep] / count[keep]
    with np.errstate(divide="ignore"):
        per_frame = np.where(mse > 0, -10.0 * np.log10(mse), cap)
    return float(np.minimum(per_frame, cap).mean())


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    out = correlate1d(img, window, axis=0, mode="reflect")
    return correlate1d(out, window, axis=1, mode="reflect")


def ssim_frame(a: np.ndarray, b: np.ndarray, window: np.ndarray | None = None) -> float:
    """Single-scale SSIM of two [0, 1] grayscale frames (Gaussian window, population statistics).

    The mean excludes a border of half the window width where the frame is large enough.
    """
    window = gaussian_window() if window is None else window
    mu_a, mu_b = _blur(a, window), _blur(b, window)
    var_a = _blur(a * a, window) - mu_a ** 2
    var_b = _blur(b * b, window) - mu_b ** 2
    cov = _blur(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    smap = num / den
    r = len(window) // 2
    if min(a.shape) > 2 * r:
        smap = smap[r:-r, r:-r]
    return float(smap.mean())


def luminance(frames: np.ndarray) -> np.ndarray:
    return frames @ LUMA if frames.shape[-1] == 3 else frames[..., 0]


def ssim(reference, candidate) -> float:
    ref, cand = to_unit(reference), to_unit(candidate)
    _check(ref, cand)
    ref, cand = luminance(ref), luminance(cand)
    window = gaussian_window()
    return float(np.mean([ssim_frame(a, b, window) for a, b in zip(ref, cand)]))


def diversity(samples: Sequence, region, reference) -> float:
    """Per-pixel std across samples, averaged over ``region``, over the reference's std."""
    if len(samples) < 2:
        raise ValueError("diversity needs at least two samples")
    stack = np.stack([to_unit(s) for s in samples])
    ref = to_unit(reference)
    if stack.shape[1:] != ref.shape:
        raise ValueError(f"sample shape {stack.shape[1:]} differs from reference {ref.shape}")
    spread = stack.std(axis=0)
    sel = np.broadcast_to(_as_bool(region), spread.shape)
    if not sel.any():
        raise ValueError("region selects no pixels")
    scale = ref.std()
    if scale == 0:
        raise ValueError("reference video has zero variance")
    return float(spread[sel].mean() / scale)


# -- perceptual plugins ------------------------------------------------------------------------

class PluginUnavailableError(LookupError):
    pass


_PLUGINS: dict[str, Callable] = {}


def register_perceptual_metric(name: str, fn: Callable) -> None:
    """Register ``fn(reference, candidate) -> float`` for clips on [-1, 1]."""
    _PLUGINS[name] = fn


def unregister_perceptual_metric(name: str) -> None:
    _PLUGINS.pop(name, None)


def available_plugins() -> list[str]:
    return sorted(_PLUGINS)


def perceptual_plugin(name: str, reference, candidate) -> float:
    try:
        fn = _PLUGINS[name]
    except KeyError:
        raise PluginUnavailableError(
            f"perceptual metric {name!r} is not registered; install an adapter with "
            f"register_perceptual_metric({name!r}, fn)") from None
    return float(fn(reference, candidate))


# -- reports -----------------------------------------------------------------------------------

BASE_COLUMNS = ("sequence", "psnr", "ssim", "psnr_masked", "diversity")
PLUGIN_COLUMNS = ("lpips", "svfid")


@dataclass
class MetricRow:
    sequence: str
    psnr: float
    ssim: float
    psnr_masked: float | None = None
    diversity: float | None = None
    plugins: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        row = {"sequence": self.sequence, "psnr": self.psnr, "ssim": self.ssim,
               "psnr_masked": self.psnr_masked, "diversity": self.diversity}
        row.update(self.plugins)
        return row


def evaluate(name: str, reference, candidate, mask=None, samples: Sequence | None = None,
             plugins: Sequence[str] = ()) -> MetricRow:
    row = MetricRow(name, psnr(reference, candidate), ssim(reference, candidate))
    if mask is not None:
        row.psnr_masked = psnr(reference, candidate, mask=mask)
        if samples is not None and len(samples) >= 2:
            row.diversity = diversity(samples, mask, reference)
    for plugin in plugins:
        row.plugins[plugin] = perceptual_plugin(plugin, reference, candidate)
    return row


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, row: MetricRow) -> MetricRow:
        self.rows.append(row)
        return row

    def columns(self) -> list[str]:
        present = {k for r in self.rows for k in r.plugins}
        cols = [c for c in BASE_COLUMNS
                if c in ("sequence", "psnr", "ssim") or any(getattr(r, c) is not None for r in self.rows)]
        return cols + [c for c in PLUGIN_COLUMNS if c in present] + sorted(present - set(PLUGIN_COLUMNS))

    def aggregate(self) -> dict:
        out = {}
        for col in self.columns()[1:]:
            vals = [r.as_dict().get(col) for r in self.rows]
            vals = [v for v in vals if v is not None]
            out[col] = float(np.mean(vals)) if vals else None
        return out

    def to_csv(self) -> str:
        cols = self.columns()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for r in self.rows:
            d = r.as_dict()
            writer.writerow([_fmt(d.get(c)) for c in cols])
        if len(self.rows) > 1:
            agg = self.aggregate()
            writer.writerow(["mean"] + [_fmt(agg[c]) for c in cols[1:]])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for r in self.rows:
            d = r.as_dict()
            parts = [f"{c}={_fmt(d.get(c))}" for c in self.columns()[1:] if d.get(c) is not None]
            lines.append(f"{r.sequence}: " + ", ".join(parts))
        return "\n".join(lines)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)
