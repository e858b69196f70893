"""Lightweight 4-level 3D UNet predicting x0 from (x_t, y, M, t).

Every convolution is 3x3x3 / stride 1 / padding 1. Pooling and upsampling act on
H and W only, so the frame axis keeps its length through the whole network.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

VIDEO_CHANNELS = 3
TIME_CHANNELS = 16
INPUT_CHANNELS = 2 * VIDEO_CHANNELS + 1 + TIME_CHANNELS  # x_t, y, M, time = 23
LEVELS = 4

# (name, input width multiplier, output width multiplier); widths are in units of
# ``channels`` except the None entries, which are the fixed 23-in / 3-out ends.
LAYER_TABLE = (
    ("conv1_0", None, 1), ("conv1_1", 1, 1), ("conv1_2", 1, 1),
    ("conv2_1", 1, 1), ("conv2_2", 1, 1),
    ("conv3_1", 1, 1), ("conv3_2", 1, 1),
    ("conv4_1", 1, 1), ("conv4_2", 1, 1),
    ("conv5_1", 2, 1), ("conv5_2", 1, 1),
    ("conv6_1", 2, 1), ("conv6_2", 1, 1),
    ("conv7_1", 2, 1), ("conv7_2", 1, 1),
    ("output", 1, None),
)


def _widths(channels: int):
    for name, cin, cout in LAYER_TABLE:
        yield (name,
               INPUT_CHANNELS if cin is None else cin * channels,
               VIDEO_CHANNELS if cout is None else cout * channels)


def expected_parameter_count(channels: int = 32) -> int:
    """Closed-form parameter count: 27 weights per (cin, cout) pair plus a bias per cout."""
    return sum(27 * cin * cout + cout for _, cin, cout in _widths(channels))


def encode_time(t: int, T: int) -> torch.Tensor:
    """16 sinusoidal channels of t / T at frequencies pi * 2**k, k = 0..7 (sines, then cosines)."""
    if not 1 <= int(t) <= int(T):
        raise ValueError(f"timestep {t} outside [1, {T}]")
    s = int(t) / int(T)
    freqs = math.pi * (2.0 ** torch.arange(TIME_CHANNELS // 2, dtype=torch.float64))
    angles = freqs * s
    return torch.cat([torch.sin(angles), torch.cos(angles)]).to(torch.float32)


class UNet3D(nn.Module):
    def __init__(self, channels: int = 32, T: int = 1000, mixed_precision: bool = False):
        super().__init__()
        if channels < 1:
            raise ValueError("channels must be >= 1")
        self.channels = channels
        self.T = T
        self.mixed_precision = mixed_precision
        for name, cin, cout in _widths(channels):
            self.add_module(name, nn.Conv3d(cin, cout, kernel_size=3, stride=1, padding=1))

    def reset_parameters(self, generator: torch.Generator | None = None):
        # fan-in scaled uniform, same bound as the torch default for Conv3d
        for conv in self.convs():
            bound = 1.0 / math.sqrt(conv.in_channels * 27)
            with torch.no_grad():
                conv.weight.uniform_(-bound, bound, generator=generator)
                conv.bias.uniform_(-bound, bound, generator=generator)

    def convs(self):
        return [getattr(self, name) for name, _, _ in LAYER_TABLE]

    @staticmethod
    def _pool(x):
        return F.max_pool3d(x, kernel_size=(1, 2, 2))

    @staticmethod
    def _up(x):
        return F.interpolate(x, scale_factor=(1, 2, 2), mode="nearest")

    def _forward(self, x):
        r = F.relu
        x = r(self.conv1_0(x))
        x = r(self.conv1_1(x))
        skip1 = r(self.conv1_2(x))
        x = r(self.conv2_1(self._pool(skip1)))
        skip2 = r(self.conv2_2(x))
        x = r(self.conv3_1(self._pool(skip2)))
        skip3 = r(self.conv3_2(x))
        x = r(self.conv4_1(self._pool(skip3)))
        x = r(self.conv4_2(x))
        x = r(self.conv5_1(torch.cat([self._up(x), skip3], dim=1)))
        x = r(self.conv5_2(x))
        x = r(self.conv6_1(torch.cat([self._up(x), skip2], dim=1)))
        x = r(self.conv6_2(x))
        x = r(self.conv7_1(torch.cat([self._up(x), skip1], dim=1)))
        x = r(self.conv7_2(x))
        return self.output(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 23, L, H, W) -> (B, 3, L, H, W)."""
        if self.mixed_precision and x.dtype == torch.float32:
            with torch.autocast(x.device.type, dtype=torch.bfloat16):
                out = self._forward(x)
            return out.float()
        return self._forward(x)


def build_model(channels: int = 32, seed: int = 0, T: int = 1000,
                mixed_precision: bool = False) -> UNet3D:
    model = UNet3D(channels, T=T, mixed_precision=mixed_precision)
    model.reset_parameters(torch.Generator().manual_seed(int(seed)))
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def predict_x0(model: UNet3D, x_t: torch.Tensor, y: torch.Tensor, t: int, M: torch.Tensor) -> torch.Tensor:
    """Predict x0 for clips laid out as (L, H, W, C) or batched (B, L, H, W, C)."""
    batched = x_t.dim() == 5
    if not batched:
        x_t, y, M = x_t[None], y[None], M[None]
    if x_t.shape != y.shape or x_t.shape[:-1] != M.shape[:-1] or M.shape[-1] != 1:
        raise ValueError(f"shape mismatch: x_t {tuple(x_t.shape)}, y {tuple(y.shape)}, M {tuple(M.shape)}")
    b, L, h, w, _ = x_t.shape
    step = 2 ** (LEVELS - 1)
    if h % step or w % step:
        raise ValueError(f"H and W must be divisible by {step}, got {h}x{w}")
    time = encode_time(t, model.T).to(dtype=x_t.dtype, device=x_t.device)
    time = time.view(1, 1, 1, 1, TIME_CHANNELS).expand(b, L, h, w, TIME_CHANNELS)
    inp = torch.cat([x_t, y, M.to(x_t.dtype), time], dim=-1).permute(0, 4, 1, 2, 3)
    out = model(inp).permute(0, 2, 3, 4, 1)
    return out if batched else out[0]
