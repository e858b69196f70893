"""Versioned checkpoint files written at interval boundaries.

Format (``torch.save`` of a plain dict, loadable with ``weights_only=True``)::

    format        "vidinpaint-checkpoint"
    version       1
    model         {"channels": int, "mixed_precision": bool}
    schedule      {"T": int, "beta_1": float, "beta_T": float}
    params        {name: tensor}, flat, one entry per parameter array
    optimizer     Adam state_dict (moments are carried across intervals)
    cursor        {"interval": next position in the noisiest-first order,
                   "timestep": next timestep the sampler will execute (0 = done),
                   "iteration": optimizer steps taken so far}
    rng           {"train": numpy bit-generator state, "infer": numpy bit-generator state}
    x_test        float32 tensor, the evolving inference state
    plan          {"length": int, "total_iters": int}
    losses        list of per-interval mean losses
"""

from __future__ import annotations

from pathlib import Path

import torch

from .model import UNet3D

FORMAT = "vidinpaint-checkpoint"
VERSION = 1
REQUIRED = ("model", "schedule", "params", "optimizer", "cursor", "rng", "x_test", "plan")


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save({"format": FORMAT, "version": VERSION, **payload}, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        data = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of types on truncated files
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(data, dict) or data.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if data.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {data.get('version')}")
    missing = [k for k in REQUIRED if k not in data]
    if missing:
        raise CheckpointError(f"checkpoint {path} lacks fields {missing}")
    return data


def model_params(model: UNet3D) -> dict:
    return {name: p.detach().clone() for name, p in model.named_parameters()}


def model_from_checkpoint(data: dict) -> UNet3D:
    arch = data["model"]
    model = UNet3D(arch["channels"], T=data["schedule"]["T"],
                   mixed_precision=arch.get("mixed_precision", False))
    try:
        model.load_state_dict(data["params"])
    except RuntimeError as exc:
        raise CheckpointError(f"parameter arrays do not fit the model: {exc}") from exc
    return model
