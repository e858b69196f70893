"""Frame-sequence I/O and geometry helpers.

Videos are float32 tensors of shape (L, H, W, 3) with values in [-1, 1]; masks
are float32 tensors of shape (L, H, W, 1) holding exactly 0 or 1 (1 = unknown).
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

WORKING_SIZE = (240, 432)  # (H, W)
SPATIAL_MULTIPLE = 8
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

_NUMBER = re.compile(r"(\d+)")


def _frame_key(path: Path):
    numbers = _NUMBER.findall(path.stem)
    return (int(numbers[-1]) if numbers else -1, path.name)


def list_frames(path) -> list[Path]:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"frame directory not found: {path}")
    frames = sorted(
        (p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=_frame_key,
    )
    if not frames:
        raise ValueError(f"no image frames in {path}")
    return frames


def _read_all(files: list[Path], mode: str) -> np.ndarray:
    with ThreadPoolExecutor(max_workers=4) as pool:
        arrays = list(pool.map(lambda p: np.asarray(Image.open(p).convert(mode)), files))
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent frame resolutions: {sorted(shapes)}")
    return np.stack(arrays)


def bytes_to_unit(values: np.ndarray) -> torch.Tensor:
    """Map 8-bit values affinely from [0, 255] to [-1, 1]."""
    return torch.from_numpy(values.astype(np.float32) * (2.0 / 255.0) - 1.0)


def unit_to_bytes(video: torch.Tensor) -> np.ndarray:
    scaled = (video.detach().to(torch.float32).cpu().numpy() + 1.0) * 127.5
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def load_frame_sequence(path) -> torch.Tensor:
    """Load a directory of numbered RGB frames as an (L, H, W, 3) clip in [-1, 1]."""
    return bytes_to_unit(_read_all(list_frames(path), "RGB"))


def load_mask_sequence(path, expected_shape=None) -> torch.Tensor:
    """Load grayscale mask frames; pixels at or above half intensity become 1.

    ``expected_shape`` is the (L, H, W) of the paired video, checked if given.
    """
    gray = _read_all(list_frames(path), "L").astype(np.float32) / 255.0
    if expected_shape is not None and tuple(gray.shape) != tuple(expected_shape):
        raise ValueError(
            f"mask shape {tuple(gray.shape)} does not match video shape {tuple(expected_shape)}"
        )
    return binarize(torch.from_numpy(gray)[..., None])


def binarize(mask: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    return (mask >= threshold).to(torch.float32)


def write_frame_sequence(video: torch.Tensor, path, start_index: int = 0) -> list[Path]:
    """Write an (L, H, W, 3) or (L, H, W, 1) clip as ``%05d.png`` frames."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    data = unit_to_bytes(video)
    if data.shape[-1] == 1:
        data = data[..., 0]
    files = [path / f"{start_index + i:05d}.png" for i in range(len(data))]
    with ThreadPoolExecutor(max_workers=4) as pool:
        list(pool.map(lambda item: Image.fromarray(item[1]).save(item[0]), zip(files, data)))
    return files


def write_mask_sequence(mask: torch.Tensor, path) -> list[Path]:
    # 0/1 -> -1/+1 so the shared writer maps occluded pixels to white.
    return write_frame_sequence(mask * 2.0 - 1.0, path)


def padded_size(height: int, width: int, multiple: int = SPATIAL_MULTIPLE) -> tuple[int, int]:
    return (-(-height // multiple) * multiple, -(-width // multiple) * multiple)


def pad_to_multiple(video: torch.Tensor, multiple: int = SPATIAL_MULTIPLE) -> torch.Tensor:
    """Reflect-pad H and W (bottom/right) up to the next multiple."""
    _, h, w, _ = video.shape
    ph, pw = padded_size(h, w, multiple)
    if (ph, pw) == (h, w):
        return video
    x = video.permute(0, 3, 1, 2)
    # reflect needs pad < size; fall back to replicate on tiny frames
    mode = "reflect" if ph - h < h and pw - w < w else "replicate"
    x = F.pad(x, (0, pw - w, 0, ph - h), mode=mode)
    return x.permute(0, 2, 3, 1).contiguous()


def crop_to(video: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    h, w = size
    return video[:, :h, :w]


def working_size(height: int, width: int, limit: tuple[int, int] = WORKING_SIZE) -> tuple[int, int]:
    """Spatial size after resizing: anything larger than the limit goes to the limit."""
    if height > limit[0] or width > limit[1]:
        return limit
    return (height, width)


def resize_to_working_resolution(video: torch.Tensor, mask: torch.Tensor,
                                 limit: tuple[int, int] = WORKING_SIZE):
    """Resize (bilinear for video, nearest for mask) and pad to the UNet grid.

    Returns the padded pair; crop outputs back with ``crop_to(x, working_size(H, W))``.
    """
    if video.shape[:3] != mask.shape[:3]:
        raise ValueError(f"video {tuple(video.shape)} and mask {tuple(mask.shape)} disagree")
    h, w = video.shape[1:3]
    target = working_size(h, w, limit)
    if target != (h, w):
        v = F.interpolate(video.permute(0, 3, 1, 2), size=target, mode="bilinear",
                          align_corners=False, antialias=True)
        video = v.clamp(-1.0, 1.0).permute(0, 2, 3, 1).contiguous()
        m = F.interpolate(mask.permute(0, 3, 1, 2), size=target, mode="nearest")
        mask = binarize(m.permute(0, 2, 3, 1).contiguous())
    return pad_to_multiple(video), binarize(pad_to_multiple(mask))


def clip_start(num_frames: int, clip_len: int, rng: np.random.Generator) -> int:
    if clip_len < 1 or clip_len > num_frames:
        raise ValueError(f"clip length {clip_len} invalid for a {num_frames}-frame video")
    return int(rng.integers(0, num_frames - clip_len + 1))


def sample_training_clip(video: torch.Tensor, clip_len: int, rng: np.random.Generator) -> torch.Tensor:
    """Return ``clip_len`` consecutive frames starting at a uniformly drawn index."""
    start = clip_start(video.shape[0], clip_len, rng)
    return video[start:start + clip_len]
