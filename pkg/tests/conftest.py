import logging

import pytest
import torch
import torch.nn as nn

from vidinpaint.diffusion import make_schedule
from vidinpaint.masks import StrokeMaskConfig
from vidinpaint.synthetic import drifting_texture, square_mask
from vidinpaint.trainer import TrainConfig

TINY_MASKS = StrokeMaskConfig(strokes_per_clip=(1, 2), brush_width=(2, 5), walk_steps=(2, 4),
                              segment_length=(2, 6), drift_per_frame=(0.0, 1.0))


class OracleModel(nn.Module):
    """Stands in for the UNet and always predicts the stored clean clip."""

    def __init__(self, x0, T):
        super().__init__()
        self.T = T
        self.register_buffer("x0", x0)

    def forward(self, inp):
        b = inp.shape[0]
        return self.x0.permute(3, 0, 1, 2)[None].expand(b, -1, -1, -1, -1)


class EchoModel(nn.Module):
    """Returns the noisy-input channels unchanged (temporally local, so tiling is exact)."""

    def __init__(self, T):
        super().__init__()
        self.T = T

    def forward(self, inp):
        return inp[:, :3] * 0.5


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)


@pytest.fixture
def tiny_video():
    return drifting_texture(frames=6, height=16, width=16, seed=3, cutoff=0.2)


@pytest.fixture
def tiny_mask():
    return square_mask(6, 16, 16, side=6)


@pytest.fixture
def tiny_sched():
    return make_schedule(20, 1e-3, 0.2)


@pytest.fixture
def tiny_cfg():
    return TrainConfig(channels=2, clip_len=4, learning_rate=1e-3, masks=TINY_MASKS)


@pytest.fixture
def random_clip():
    g = torch.Generator().manual_seed(0)
    return torch.rand(4, 16, 16, 3, generator=g) * 2 - 1


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
