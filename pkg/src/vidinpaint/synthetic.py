"""Synthetic dynamic textures and test masks for desk-scale runs."""

from __future__ import annotations

import numpy as np
import torch


def drifting_texture(frames: int = 16, height: int = 64, width: int = 64, seed: int = 0,
                     cutoff: float = 0.08, velocity: tuple[float, float] = (0.9, 1.3),
                     std: float = 0.35) -> torch.Tensor:
    """Band-limited periodic noise translated by ``velocity`` (dy, dx) pixels per frame.

    The field is built in the Fourier domain with a radial cutoff in cycles/pixel, so the
    sub-pixel shifts are exact. Channels share structure through a random colour mixing.
    Returns (frames, height, width, 3) on [-1, 1].
    """
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    band = (np.hypot(fy, fx) <= cutoff).astype(np.float64)
    spectra = (rng.standard_normal((3, height, width))
               + 1j * rng.standard_normal((3, height, width))) * band
    mixing = np.eye(3) * 0.6 + 0.4 * rng.uniform(0.5, 1.0, size=(3, 3))
    out = np.empty((frames, height, width, 3))
    for f in range(frames):
        phase = np.exp(-2j * np.pi * (fy * velocity[0] * f + fx * velocity[1] * f))
        planes = np.real(np.fft.ifft2(spectra * phase, axes=(-2, -1)))
        out[f] = np.tensordot(planes, mixing, axes=([0], [1]))
    out -= out.mean()
    out *= std / out.std()
    return torch.from_numpy(np.clip(out, -1.0, 1.0).astype(np.float32))


def square_mask(frames: int = 16, height: int = 64, width: int = 64, side: int = 16) -> torch.Tensor:
    """Static centred square of ones, shape (frames, height, width, 1)."""
    mask = torch.zeros(frames, height, width, 1)
    top, left = (height - side) // 2, (width - side) // 2
    mask[:, top:top + side, left:left + side] = 1.0
    return mask
