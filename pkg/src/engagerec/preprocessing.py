"""Face standardization, two-stage normalization, and training augmentation.

Every model input follows the same pipeline: crop the largest detected face,
convert to 48x48 grayscale, center each image to mean 0 with Euclidean norm
100, then normalize each pixel position to mean 0 / std 1 with statistics
fitted on the training split only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import cv2
import numpy as np
from scipy import ndimage

from .data import IMAGE_SIZE

IMAGE_NORM_TARGET = 100.0
STD_FLOOR = 1e-6


class NormalizationError(ValueError):
    """Image cannot be normalized (constant pixels give a zero vector)."""


class ImageDecodeError(ValueError):
    """Source image bytes could not be decoded."""


@dataclass(frozen=True)
class FaceBox:
    """Axis-aligned detection box in source-image pixel coordinates."""

    x: int
    y: int
    width: int
    height: int
    score: float = 0.0

    @property
    def area(self) -> int:
        return self.width * self.height


class FaceDetector(Protocol):
    def detect(self, image: np.ndarray) -> list[FaceBox]: ...


class GradientBlobDetector:
    """Bundled fallback detector: boxes around high-gradient-energy blobs.

    A stand-in for an external CNN face detector; it finds contiguous regions
    of local structure (edges), which is enough for synthetic corpora and
    roughly-centered webcam frames. Swap in a real detector through the
    FaceDetector interface for production footage.
    """

    def __init__(self, smoothing_sigma: float = 2.0, min_side_fraction: float = 0.05):
        self.smoothing_sigma = smoothing_sigma
        self.min_side_fraction = min_side_fraction

    def detect(self, image: np.ndarray) -> list[FaceBox]:
        gray = to_grayscale(image).astype(np.float64)
        gy, gx = np.gradient(gray)
        energy = ndimage.gaussian_filter(np.hypot(gx, gy), self.smoothing_sigma)
        threshold = energy.mean() + 0.5 * energy.std()
        mask = energy > threshold
        labels, count = ndimage.label(mask)
        if count == 0:
            return []
        min_side = max(2, int(min(gray.shape) * self.min_side_fraction))
        boxes = []
        for index, slices in enumerate(ndimage.find_objects(labels), start=1):
            ys, xs = slices
            width = xs.stop - xs.start
            height = ys.stop - ys.start
            if width < min_side or height < min_side:
                continue
            score = float(energy[ys, xs][labels[ys, xs] == index].sum())
            boxes.append(FaceBox(x=xs.start, y=ys.start, width=width, height=height, score=score))
        return boxes


_default_detector: FaceDetector = GradientBlobDetector()


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to uint8 grayscale or RGB; raises ImageDecodeError."""
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageDecodeError(f"cannot decode image at {path}")
    if data.ndim == 3:
        if data.shape[2] == 4:
            data = cv2.cvtColor(data, cv2.COLOR_BGRA2BGR)
        data = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)
    return data


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luminance conversion for RGB input; grayscale passes through."""
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return cv2.cvtColor(image.astype(np.uint8), cv2.COLOR_RGB2GRAY)
    raise ValueError(f"expected HxW or HxWx3 image, got shape {image.shape}")


def detect_largest_face(
    image: np.ndarray, detector: FaceDetector | None = None
) -> FaceBox | None:
    """Run the detector and keep the biggest box; None when nothing is found.

    Ties on area break deterministically by position so the result does not
    depend on detector output order.
    """
    boxes = (detector or _default_detector).detect(image)
    if not boxes:
        return None
    return max(boxes, key=lambda b: (b.area, -b.y, -b.x, b.width, b.score))


def clamp_box(box: FaceBox, shape: tuple[int, ...]) -> FaceBox:
    height, width = shape[:2]
    x0 = min(max(box.x, 0), width)
    y0 = min(max(box.y, 0), height)
    x1 = min(max(box.x + box.width, 0), width)
    y1 = min(max(box.y + box.height, 0), height)
    return FaceBox(x=x0, y=y0, width=x1 - x0, height=y1 - y0, score=box.score)


def standardize_face(image: np.ndarray, box: FaceBox) -> np.ndarray:
    """Crop the box, convert to grayscale, and bilinearly resize to 48x48."""
    box = clamp_box(box, image.shape)
    if box.width <= 0 or box.height <= 0:
        raise ValueError(f"degenerate face box after clamping: {box}")
    crop = image[box.y : box.y + box.height, box.x : box.x + box.width]
    gray = to_grayscale(crop)
    if gray.shape != (IMAGE_SIZE, IMAGE_SIZE):
        gray = cv2.resize(gray, (IMAGE_SIZE, IMAGE_SIZE), interpolation=cv2.INTER_LINEAR)
    return gray.astype(np.uint8)


def normalize_image(pixels: np.ndarray) -> np.ndarray:
    """Center one image to mean 0 and scale its 2304-vector to norm 100.

    Raises NormalizationError for constant images, whose centered vector is
    zero and cannot be scaled.
    """
    grid = np.asarray(pixels, dtype=np.float64)
    if grid.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE} grid, got {grid.shape}")
    centered = grid - grid.mean()
    norm = np.linalg.norm(centered)
    if norm == 0.0:
        raise NormalizationError("constant image has zero norm after centering")
    return centered * (IMAGE_NORM_TARGET / norm)


@dataclass(frozen=True)
class PixelStats:
    """Per-position mean/std grids fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        if self.mean.shape != (IMAGE_SIZE, IMAGE_SIZE) or self.std.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError("pixel stats must be 48x48 grids")
        if np.any(self.std <= 0):
            raise ValueError("std grid must be strictly positive")

    def as_tensors(self) -> dict[str, np.ndarray]:
        return {
            "pixel_stats/mean": self.mean.astype(np.float32),
            "pixel_stats/std": self.std.astype(np.float32),
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "PixelStats":
        try:
            mean = tensors["pixel_stats/mean"]
            std = tensors["pixel_stats/std"]
        except KeyError as exc:
            raise KeyError(f"checkpoint has no pixel statistics ({exc})") from None
        return cls(mean=mean.astype(np.float64), std=std.astype(np.float64))


def fit_pixel_stats(images: np.ndarray) -> PixelStats:
    """Fit per-position mean/std over (N, 48, 48) image-normalized grids."""
    stack = np.asarray(images, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ValueError("need a non-empty (N, 48, 48) training stack")
    mean = stack.mean(axis=0)
    std = stack.std(axis=0)
    return PixelStats(mean=mean, std=np.maximum(std, STD_FLOOR))


def apply_pixel_stats(image: np.ndarray, stats: PixelStats) -> np.ndarray:
    return (np.asarray(image, dtype=np.float64) - stats.mean) / stats.std


def normalize_dataset(
    images: np.ndarray | Sequence[np.ndarray],
    stats: PixelStats | None = None,
) -> tuple[np.ndarray, PixelStats]:
    """Run both normalization stages over a stack of raw 48x48 images.

    When ``stats`` is None (training split), pixel statistics are fitted on
    the image-normalized stack and returned for reuse on the other splits.
    """
    stack = np.stack([normalize_image(img) for img in images])
    if stats is None:
        stats = fit_pixel_stats(stack)
    out = (stack - stats.mean) / stats.std
    return out.astype(np.float32), stats


@dataclass(frozen=True)
class AugmentParams:
    max_rotation_deg: float = 10.0
    crop_pad: int = 4


def augment(grid: np.ndarray, rng: np.random.Generator, params: AugmentParams) -> np.ndarray:
    """Random horizontal flip, zero-pad + random crop, and small rotation.

    Operates on normalized grids, where 0 is the neutral fill value. Output
    is always 48x48; identical RNG state reproduces the result bit-exactly.
    """
    out = np.asarray(grid)
    if out.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE} grid, got {out.shape}")
    if rng.random() < 0.5:
        out = out[:, ::-1]
    if params.crop_pad > 0:
        pad = params.crop_pad
        padded = np.zeros((IMAGE_SIZE + 2 * pad, IMAGE_SIZE + 2 * pad), dtype=out.dtype)
        padded[pad : pad + IMAGE_SIZE, pad : pad + IMAGE_SIZE] = out
        oy, ox = rng.integers(0, 2 * pad + 1, size=2)
        out = padded[oy : oy + IMAGE_SIZE, ox : ox + IMAGE_SIZE]
    if params.max_rotation_deg > 0:
        angle = rng.uniform(-params.max_rotation_deg, params.max_rotation_deg)
        out = ndimage.rotate(
            out.astype(np.float64), angle, reshape=False, order=1, mode="constant", cval=0.0
        )
    return np.ascontiguousarray(out)
