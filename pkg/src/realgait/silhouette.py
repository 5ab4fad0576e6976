"""From video frames and sparse pedestrian boxes to normalized silhouettes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .manifest import BoundingBox

CANVAS = 224
CENTER_COLUMN = CANVAS // 2
HEIGHT_EXPANSION = 1.1
WIDTH_EXPANSION = 1.35


class SilhouetteError(ValueError):
    pass


class EmptyMaskError(SilhouetteError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class GMMParams:
    history: int = 500
    var_threshold: float = 16.0
    detect_shadows: bool = True
    # None selects the adaptive rate 1/min(frames seen, history), which
    # settles at 1/history once the history is full.
    learning_rate: float | None = None
    morphology: int = 0  # opening kernel size; 0 disables


@dataclass
class SilhouetteFrame:
    grid: np.ndarray
    frame_index: int
    trajectory_point: tuple[float, float]


@dataclass
class SilhouetteSequence:
    frames: list[SilhouetteFrame]
    subject_id: str = ""
    camera_id: int = 0
    video_id: str = ""
    dropped: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.frames:
            raise SilhouetteError(f"{self.video_id}: empty silhouette sequence")
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise SilhouetteError(f"{self.video_id}: frame indices must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    def stack(self) -> np.ndarray:
        return np.stack([f.grid for f in self.frames])

    def trajectory(self) -> np.ndarray:
        return np.array([f.trajectory_point for f in self.frames], dtype=np.float64)


@dataclass(frozen=True)
class InputVariant:
    pedestrian_mode: str = "binary"      # color | binary | grayscale_quantized
    background_mode: str = "subtracted"  # color | subtracted
    bins: int = 0

    def __post_init__(self):
        if self.pedestrian_mode not in ("color", "binary", "grayscale_quantized"):
            raise SilhouetteError(f"unknown pedestrian mode {self.pedestrian_mode!r}")
        if self.background_mode not in ("color", "subtracted"):
            raise SilhouetteError(f"unknown background mode {self.background_mode!r}")
        if self.pedestrian_mode == "grayscale_quantized":
            if self.bins < 2:
                raise SilhouetteError("grayscale quantization needs at least 2 bins")
            if self.background_mode != "subtracted":
                raise SilhouetteError("grayscale quantization is defined on a subtracted background")

    @property
    def channels(self) -> int:
        if self.pedestrian_mode == "binary" and self.background_mode == "subtracted":
            return 1
        if self.pedestrian_mode == "grayscale_quantized":
            return 1
        return 3


def gmm_subtract(frames, params: GMMParams | None = None) -> list[np.ndarray]:
    """Adaptive Gaussian-mixture background subtraction.

    Returns one uint8 {0, 1} mask per frame. Shadow pixels count as background.
    A fresh model is built per call, so state never leaks between videos.
    """
    params = params or GMMParams()
    frames = list(frames)
    if not frames:
        raise SilhouetteError("no frames to subtract")
    shape = frames[0].shape
    sub = cv2.createBackgroundSubtractorMOG2(history=params.history,
                                             varThreshold=params.var_threshold,
                                             detectShadows=params.detect_shadows)
    rate = -1.0 if params.learning_rate is None else float(params.learning_rate)
    kernel = None
    if params.morphology:
        kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (params.morphology,) * 2)
    masks = []
    for i, frame in enumerate(frames):
        if frame.shape != shape:
            raise SilhouetteError(f"frame {i} has shape {frame.shape}, expected {shape}")
        raw = sub.apply(np.ascontiguousarray(frame), learningRate=rate)
        mask = (raw == 255).astype(np.uint8)
        if kernel is not None:
            mask = cv2.morphologyEx(mask, cv2.MORPH_OPEN, kernel)
        masks.append(mask)
    return masks


def interpolate_boxes(keyframes: list[BoundingBox], frame_index: int) -> BoundingBox:
    frames = [k.frame_index for k in keyframes]
    if not keyframes or not frames[0] <= frame_index <= frames[-1]:
        raise SilhouetteError(f"frame {frame_index} outside span of keyframes "
                              f"[{frames[0] if frames else '-'}, {frames[-1] if frames else '-'}]")
    j = int(np.searchsorted(frames, frame_index))
    if frames[j] == frame_index:
        k = keyframes[j]
        return BoundingBox(k.x_center, k.y_center, k.width, k.height, frame_index)
    a, b = keyframes[j - 1], keyframes[j]
    t = (frame_index - a.frame_index) / (b.frame_index - a.frame_index)
    lerp = lambda p, q: p + t * (q - p)
    return BoundingBox(lerp(a.x_center, b.x_center), lerp(a.y_center, b.y_center),
                       lerp(a.width, b.width), lerp(a.height, b.height), frame_index)


def expand_box(box: BoundingBox, height_factor: float = HEIGHT_EXPANSION,
               width_factor: float = WIDTH_EXPANSION) -> BoundingBox:
    return BoundingBox(box.x_center, box.y_center, box.width * width_factor,
                       box.height * height_factor, box.frame_index)


def box_bounds(box: BoundingBox) -> tuple[int, int, int, int]:
    """Integer (top, left, bottom, right) pixel bounds, end-exclusive."""
    left = round_half_up(box.x_center - box.width / 2)
    top = round_half_up(box.y_center - box.height / 2)
    return top, left, top + max(1, round_half_up(box.height)), left + max(1, round_half_up(box.width))


def crop(image: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Crop ``box`` from ``image``, zero-padding wherever the box leaves the frame."""
    top, left, bottom, right = box_bounds(box)
    h, w = image.shape[:2]
    if bottom <= 0 or right <= 0 or top >= h or left >= w:
        raise SilhouetteError(f"box {box} does not overlap the {w}x{h} frame")
    out = np.zeros((bottom - top, right - left) + image.shape[2:], dtype=image.dtype)
    sy, sx = max(top, 0), max(left, 0)
    ey, ex = min(bottom, h), min(right, w)
    out[sy - top:ey - top, sx - left:ex - left] = image[sy:ey, sx:ex]
    return out


@dataclass
class NormalizeTransform:
    """Geometry that maps a crop onto the normalized canvas."""
    rows: tuple[int, int]      # foreground row span in the crop, end-exclusive
    cols: tuple[int, int]      # foreground column span in the crop, end-exclusive
    size: tuple[int, int]      # (height, width) after isotropic rescale
    offset: int                # canvas column of the rescaled image's column 0

    def _resize(self, image: np.ndarray) -> np.ndarray:
        region = image[self.rows[0]:self.rows[1], self.cols[0]:self.cols[1]]
        h, w = self.size
        if region.shape[:2] == (h, w):
            return region.astype(np.float32)
        return cv2.resize(region.astype(np.float32), (w, h), interpolation=cv2.INTER_LINEAR)

    def _place(self, resized: np.ndarray) -> np.ndarray:
        canvas = np.zeros((CANVAS, CANVAS) + resized.shape[2:], dtype=resized.dtype)
        w = resized.shape[1]
        lo, hi = max(self.offset, 0), min(self.offset + w, CANVAS)
        if hi > lo:
            canvas[:, lo:hi] = resized[:, lo - self.offset:hi - self.offset]
        return canvas

    def apply_mask(self, mask: np.ndarray) -> np.ndarray:
        return self._place(_binarize_rescaled(self._resize(mask)))

    def apply_image(self, image: np.ndarray) -> np.ndarray:
        out = self._resize(image)
        if np.issubdtype(image.dtype, np.integer):
            out = np.clip(np.floor(out + 0.5), 0, np.iinfo(image.dtype).max).astype(image.dtype)
        return self._place(out)


def _binarize_rescaled(values: np.ndarray) -> np.ndarray:
    out = (values >= 0.5).astype(np.uint8)
    # Shrinking can drop a one-pixel-thick head or foot row below threshold;
    # keep the strongest response so the silhouette still spans the canvas height.
    for r in (0, out.shape[0] - 1):
        if not out[r].any() and values[r].max() > 0:
            out[r, values[r] == values[r].max()] = 1
    return out


def median_column(mask: np.ndarray) -> int:
    """Column where the cumulative foreground count first reaches half the total."""
    cum = np.cumsum(mask.sum(axis=0, dtype=np.int64))
    return int(np.searchsorted(cum, cum[-1] / 2.0))


def normalize_transform(mask_crop: np.ndarray) -> NormalizeTransform:
    fg = np.asarray(mask_crop) > 0
    if not fg.any():
        raise EmptyMaskError("mask has no foreground pixels")
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    top, bottom = int(rows[0]), int(rows[-1]) + 1
    left, right = int(cols[0]), int(cols[-1]) + 1
    height = bottom - top
    width = max(1, round_half_up((right - left) * CANVAS / height))
    t = NormalizeTransform((top, bottom), (left, right), (CANVAS, width), 0)
    resized = _binarize_rescaled(t._resize(fg.astype(np.uint8)))
    t.offset = CENTER_COLUMN - median_column(resized)
    return t


def normalize_silhouette(mask_crop: np.ndarray, frame_index: int = 0,
                         trajectory_point: tuple[float, float] = (0.0, 0.0)) -> SilhouetteFrame:
    """Crop to the foreground rows, rescale to height 224 and center on column 112.

    Foreground wider than the canvas is clipped. Raises EmptyMaskError on an
    all-background crop.
    """
    t = normalize_transform(mask_crop)
    grid = t.apply_mask((np.asarray(mask_crop) > 0).astype(np.uint8))
    return SilhouetteFrame(grid, frame_index, trajectory_point)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luminance 0.299 R + 0.587 G + 0.114 B for an RGB image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def quantize(gray: np.ndarray, bins: int) -> np.ndarray:
    """Uniform ``bins``-level quantization of [0, 255]; each bin maps to its center."""
    if bins < 2:
        raise SilhouetteError("quantization needs at least 2 bins")
    gray = np.asarray(gray, dtype=np.float64)
    width = 256.0 / bins
    idx = np.clip(np.floor(gray / width), 0, bins - 1)
    return np.floor(idx * width + width / 2).astype(np.uint8)


def compose_variant(color_crop: np.ndarray, mask_crop: np.ndarray, variant: InputVariant) -> np.ndarray:
    """Render one pedestrian/background combination of a crop (RGB, uint8)."""
    color_crop = np.asarray(color_crop)
    mask = np.asarray(mask_crop) > 0
    if color_crop.shape[:2] != mask.shape:
        raise SilhouetteError(f"crop shapes differ: {color_crop.shape[:2]} vs {mask.shape}")
    ped, bg = variant.pedestrian_mode, variant.background_mode
    if ped == "binary" and bg == "subtracted":
        return np.asarray(mask_crop).copy()
    if ped == "grayscale_quantized":
        return np.where(mask, quantize(to_grayscale(color_crop), variant.bins), 0).astype(np.uint8)
    if ped == "color" and bg == "color":
        return color_crop.copy()
    if ped == "color":
        return np.where(mask[..., None], color_crop, 0).astype(color_crop.dtype)
    white = np.full_like(color_crop, 255)
    return np.where(mask[..., None], white, color_crop)


@dataclass
class ExtractedVideo:
    sequence: SilhouetteSequence | None
    images: list[np.ndarray]       # normalized inputs per kept frame (variant-rendered)
    dropped: list[int]


def extract_video(frames, frame_indices, record, gmm: GMMParams | None = None,
                  variant: InputVariant | None = None) -> ExtractedVideo:
    """Run the full silhouette pipeline on one video record.

    ``frames`` are RGB uint8 images aligned with ``frame_indices``. Frames
    outside the keyframe span only feed the background model. Frames whose
    mask crop is empty or whose box misses the frame are dropped and listed.
    """
    frames = list(frames)
    frame_indices = [int(i) for i in frame_indices]
    if len(frames) != len(frame_indices):
        raise SilhouetteError("frames and frame indices differ in length")
    variant = variant or InputVariant()
    masks = gmm_subtract(frames, gmm)
    keys = list(record.keyframe_boxes)
    first, last = keys[0].frame_index, keys[-1].frame_index
    kept, images, dropped = [], [], []
    for frame, mask, idx in zip(frames, masks, frame_indices):
        if not first <= idx <= last or not record.frame_range[0] <= idx <= record.frame_range[1]:
            continue
        box = interpolate_boxes(keys, idx)
        big = expand_box(box)
        try:
            mask_crop = crop(mask, big)
            t = normalize_transform(mask_crop)
        except SilhouetteError:
            dropped.append(idx)
            continue
        grid = t.apply_mask(mask_crop)
        kept.append(SilhouetteFrame(grid, idx, (box.x_center, box.y_center)))
        if variant.pedestrian_mode == "binary" and variant.background_mode == "subtracted":
            images.append(grid)
        else:
            images.append(t.apply_image(compose_variant(crop(frame, big), mask_crop, variant)))
    seq = None
    if kept:
        seq = SilhouetteSequence(kept, record.subject_id, record.camera_id, record.video_id, dropped)
    return ExtractedVideo(seq, images, dropped)
