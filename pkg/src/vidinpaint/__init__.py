"""Single-video diffusion inpainting trained one timestep interval at a time."""

from .diffusion import DiffusionSchedule, make_schedule
from .model import UNet3D, build_model, predict_x0
from .trainer import IntervalPlan, TrainConfig, make_interval_plan, run_interval_training
from .sampler import sample_many

__version__ = "0.1.0"

__all__ = ["DiffusionSchedule", "make_schedule", "UNet3D", "build_model", "predict_x0",
           "IntervalPlan", "TrainConfig", "make_interval_plan", "run_interval_training",
           "sample_many"]
