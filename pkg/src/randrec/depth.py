"""Depth colorization: metric depth -> RGB-like surface-normal image.

The chain is: fill missing depth with a 5x5 median interpolation, lift the
grid to a 3D point cloud with the camera intrinsics, estimate surface
normals by central differences on the organized cloud, then resize/crop to
the 224x224 backbone input and scale channels. Normal vectors are kept as
floating point values in [-1, 1]; they are never quantized to 0-255.

RGB standardization lives here too since it shares the resize/crop
conventions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, ValidationError
from .tensor_io import ActivationTensor

RGB_MEAN = (0.485, 0.456, 0.406)
RGB_STD = (0.229, 0.224, 0.225)

MISSING_DEPTH = 0.0
_MAX_FILL_PASSES = 10
_MIN_NORMAL_NORM = 1e-12


@dataclass
class DepthFrame:
    """Metric depth grid in meters; 0.0 encodes a missing measurement."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ShapeError(f"depth must be 2-D, got shape {d.shape}")
        if d.shape[0] < 5 or d.shape[1] < 5:
            raise ValidationError(
                f"depth frame must be at least 5x5, got {d.shape}"
            )
        if not np.isfinite(d).all():
            raise ValidationError("depth contains NaN or Inf")
        if (d < 0).any():
            raise ValidationError("depth values must be non-negative")
        self.depth = d

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")


@dataclass
class PointCloud:
    """Organized cloud on the depth raster plus a per-pixel validity mask."""

    points: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ShapeError(f"points must be (H, W, 3), got {self.points.shape}")
        if self.valid.shape != self.points.shape[:2]:
            raise ShapeError("validity mask does not match the point raster")


@dataclass
class NormalImage:
    """Per-pixel unit normals; invalid pixels hold the zero vector."""

    normals: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        if self.normals.ndim != 3 or self.normals.shape[2] != 3:
            raise ShapeError(f"normals must be (H, W, 3), got {self.normals.shape}")
        if self.valid.shape != self.normals.shape[:2]:
            raise ShapeError("validity mask does not match the normal raster")


def fill_missing_depth(frame: DepthFrame, max_passes: int = _MAX_FILL_PASSES) -> DepthFrame:
    """Fill missing pixels with the median of their valid 5x5 neighbors.

    Runs repeated passes (holes fill inward) until nothing changes or
    `max_passes` is reached; pixels that still lack any valid neighbor keep
    the missing sentinel. Originally valid pixels are never touched.
    """
    depth = frame.depth
    if not (depth != MISSING_DEPTH).any():
        raise ValidationError("depth frame is entirely missing; nothing to interpolate")
    filled = depth.copy()
    h, w = filled.shape
    for _ in range(max_passes):
        missing = filled == MISSING_DEPTH
        if not missing.any():
            break
        padded = np.pad(filled, 2, mode="edge")
        windows = sliding_window_view(padded, (5, 5)).reshape(h, w, 25)
        vals = windows.astype(np.float64, copy=True)
        vals[vals == MISSING_DEPTH] = np.nan
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
            med = np.nanmedian(vals, axis=2)
        fillable = missing & np.isfinite(med)
        if not fillable.any():
            break
        filled[fillable] = med[fillable]
    return DepthFrame(depth=filled)


def depth_to_pointcloud(frame: DepthFrame, intrinsics: CameraIntrinsics) -> PointCloud:
    """Back-project via the pinhole model; missing pixels stay invalid."""
    z = frame.depth
    valid = z > MISSING_DEPTH
    v, u = np.mgrid[0 : frame.height, 0 : frame.width].astype(np.float64)
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    points = np.stack([x, y, z], axis=-1)
    points[~valid] = 0.0
    return PointCloud(points=points, valid=valid)


def estimate_normals(cloud: PointCloud) -> NormalImage:
    """Central-difference cross-product normals on the organized cloud.

    Borders are handled by edge replication, which degenerates the central
    difference to a one-sided one. Normals are oriented to face the camera
    (non-positive dot product with the viewing ray). Pixels whose own point
    or whose four difference neighbors are invalid, or whose differences are
    degenerate, get the zero vector and an invalid flag.
    """
    p = np.pad(cloud.points, ((1, 1), (1, 1), (0, 0)), mode="edge")
    v = np.pad(cloud.valid, 1, mode="edge")
    du = p[1:-1, 2:, :] - p[1:-1, :-2, :]
    dv = p[2:, 1:-1, :] - p[:-2, 1:-1, :]
    normals = np.cross(du, dv)
    ok = (
        cloud.valid
        & v[1:-1, 2:]
        & v[1:-1, :-2]
        & v[2:, 1:-1]
        & v[:-2, 1:-1]
    )
    norms = np.linalg.norm(normals, axis=2)
    ok &= norms > _MIN_NORMAL_NORM
    normals = np.where(ok[..., None], normals / np.where(ok, norms, 1.0)[..., None], 0.0)
    # Face the camera: the viewing ray is the point itself (camera at origin).
    dots = np.einsum("ijk,ijk->ij", normals, cloud.points)
    flip = (dots > 0) | ((dots == 0) & (normals[..., 2] > 0))
    normals = np.where((ok & flip)[..., None], -normals, normals)
    return NormalImage(normals=normals, valid=ok)


def _nearest_indices(n_out: int, n_in: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def _resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    rows = _nearest_indices(out_h, img.shape[0])
    cols = _nearest_indices(out_w, img.shape[1])
    return img[np.ix_(rows, cols)]


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys), 0, in_h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, in_w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    img = img.astype(np.float64)
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def _resize_dims(h: int, w: int, short_side: bool) -> tuple[int, int]:
    if not short_side:
        return 256, 256
    if h <= w:
        return 256, max(256, round(w * 256 / h))
    return max(256, round(h * 256 / w)), 256


def _center_crop(img: np.ndarray, size: int = 224) -> np.ndarray:
    h, w = img.shape[:2]
    top = (h - size) // 2
    left = (w - size) // 2
    return img[top : top + size, left : left + size]


def resize_center_crop_depthlike(
    img: NormalImage, short_side: bool = False
) -> NormalImage:
    """Nearest-neighbor resize then central 224x224 crop.

    Default resizes to a square 256x256; `short_side` instead scales the
    short side to 256 preserving aspect. Nearest-neighbor selection means
    output values are always a subset of input values, which keeps the
    geometric structure of depth-derived data intact.
    """
    out_h, out_w = _resize_dims(*img.normals.shape[:2], short_side)
    resized = _resize_nearest(img.normals, out_h, out_w)
    valid = _resize_nearest(img.valid, out_h, out_w)
    return NormalImage(normals=_center_crop(resized), valid=_center_crop(valid))


def standardize_depth(img: NormalImage) -> ActivationTensor:
    """Scale each channel by 1/std with the ImageNet stds; no mean shift.

    Normal components already live in [-1, 1], so only the variance is
    matched to what RGB-pretrained backbones expect.
    """
    n = img.normals
    if n.shape[:2] != (224, 224):
        raise ShapeError(f"expected a 224x224 normal image, got {n.shape[:2]}")
    std = np.asarray(RGB_STD, dtype=np.float64)
    out = (n / std).transpose(2, 0, 1).astype(np.float32)
    return ActivationTensor(values=out)


def standardize_rgb(pixels: np.ndarray, short_side: bool = False) -> ActivationTensor:
    """Bilinear resize, central 224 crop, then (x/255 - mean)/std per channel."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got {pixels.shape}")
    out_h, out_w = _resize_dims(*pixels.shape[:2], short_side)
    resized = _resize_bilinear(pixels.astype(np.float64) / 255.0, out_h, out_w)
    cropped = _center_crop(resized)
    mean = np.asarray(RGB_MEAN, dtype=np.float64)
    std = np.asarray(RGB_STD, dtype=np.float64)
    out = ((cropped - mean) / std).transpose(2, 0, 1).astype(np.float32)
    return ActivationTensor(values=out)


def colorize_depth(
    frame: DepthFrame,
    intrinsics: CameraIntrinsics,
    short_side: bool = False,
    max_passes: int = _MAX_FILL_PASSES,
) -> ActivationTensor:
    """Full chain: fill -> point cloud -> normals -> resize/crop -> scale."""
    filled = fill_missing_depth(frame, max_passes=max_passes)
    cloud = depth_to_pointcloud(filled, intrinsics)
    normals = estimate_normals(cloud)
    cropped = resize_center_crop_depthlike(normals, short_side=short_side)
    return standardize_depth(cropped)


def load_depth_png(path, depth_scale: float = 0.001) -> DepthFrame:
    """Read a 16-bit depth PNG (sensor units -> meters via `depth_scale`)."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ValidationError(f"{path}: depth PNG must be single-channel")
    return DepthFrame(depth=arr.astype(np.float64) * depth_scale)


def load_rgb_image(path) -> np.ndarray:
    """Read an 8-bit RGB image as an (H, W, 3) uint8 array."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))
