"""Input preprocessing matching the downstream pipeline's conventions.

RGB images: bilinear resize to 256x256, central 224 crop, x/255 minus the
ImageNet mean over the ImageNet std. Depth inputs arrive as already
colorized and standardized 3x224x224 tensors (NPY), produced by the
pipeline's own colorizer, and are fed to the backbone unchanged.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

RGB_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
RGB_STD = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def prepare_rgb(path: Path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    x = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
    x = torch.nn.functional.interpolate(
        x, size=(256, 256), mode="bilinear", align_corners=False, antialias=False
    )[0]
    x = x[:, 16:240, 16:240]
    return (x - RGB_MEAN) / RGB_STD


def prepare_tensor_input(path: Path) -> torch.Tensor:
    """Load an already standardized 3x224x224 NPY tensor (depth route)."""
    arr = np.load(path)
    if arr.shape != (3, 224, 224):
        raise ValueError(f"{path}: expected a (3, 224, 224) tensor, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))


def prepare_input(path: Path) -> torch.Tensor:
    if path.suffix.lower() == ".npy":
        return prepare_tensor_input(path)
    if path.suffix.lower() in IMAGE_SUFFIXES:
        return prepare_rgb(path)
    raise ValueError(f"unsupported input type: {path}")
