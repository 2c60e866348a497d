"""Geometry and cost kernels over masks, tracklets, and 1D spans.

RLE codec, IoU, Dice, clamped binary cross-entropy. All kernels are pure;
costs are computed in double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import AudioSegment, ImageMask, ModelError, Tracklet

DEFAULT_BCE_EPSILON = 1e-6


@dataclass(frozen=True)
class DenseMask:
    """Row-major boolean pixel grid, the working representation of a mask."""

    width: int
    height: int
    bits: np.ndarray

    def __init__(self, width: int, height: int, bits: np.ndarray):
        arr = np.asarray(bits, dtype=bool)
        if arr.ndim == 1:
            if arr.size != width * height:
                raise ModelError("BAD_DIMENSIONS", f"bit vector length {arr.size} != {width}x{height}")
            arr = arr.reshape(height, width)
        elif arr.shape != (height, width):
            raise ModelError("BAD_DIMENSIONS", f"bit array shape {arr.shape} != ({height}, {width})")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "bits", arr)

    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other):
        return (
            isinstance(other, DenseMask)
            and self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.bits, other.bits))
        )

    def __hash__(self):
        return hash((self.width, self.height, self.bits.tobytes()))


def rle_decode(mask: ImageMask) -> DenseMask:
    """Expand an RLE mask to its dense form (runs validated at construction)."""
    runs = np.asarray(mask.rle, dtype=np.int64)
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, runs)
    return DenseMask(mask.width, mask.height, flat.reshape(mask.height, mask.width))


def rle_encode(dense: DenseMask) -> ImageMask:
    """Produce the canonical RLE: background-first, no zero-length interior runs."""
    flat = dense.bits.ravel()
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return ImageMask(dense.width, dense.height, runs)


def _require_same_dims(a: DenseMask, b: DenseMask) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise ModelError(
            "DIMENSION_MISMATCH",
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}",
        )


def mask_iou(a: DenseMask, b: DenseMask) -> float:
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    _require_same_dims(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return inter / union


def dice_coefficient(a: DenseMask, b: DenseMask) -> float:
    _require_same_dims(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    total = a.area() + b.area()
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def dice_loss(a: DenseMask, b: DenseMask) -> float:
    return 1.0 - dice_coefficient(a, b)


def bce_loss(pred: DenseMask, gold: DenseMask, epsilon: float = DEFAULT_BCE_EPSILON) -> float:
    """Pixel-averaged binary cross-entropy with predictions clamped to [eps, 1-eps].

    Both inputs are hard binary masks, so the per-pixel loss takes only two
    values: -ln(1-eps) where the masks agree and -ln(eps) where they differ.
    """
    _require_same_dims(pred, gold)
    if not (0 < epsilon < 0.5):
        raise ModelError("BAD_EPSILON", f"epsilon must lie in (0, 0.5), got {epsilon}")
    n = pred.width * pred.height
    disagree = int(np.count_nonzero(pred.bits != gold.bits))
    agree = n - disagree
    return (agree * -math.log1p(-epsilon) + disagree * -math.log(epsilon)) / n


def span_iou_1d(a: AudioSegment, b: AudioSegment) -> float:
    """Interval IoU: overlap length over total covered length."""
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length() + b.length() - inter
    return inter / union


@dataclass(frozen=True)
class TrackletIoUProfile:
    per_frame: dict[int, float]
    mean: float


def tracklet_iou_profile(a: Tracklet, b: Tracklet) -> TrackletIoUProfile:
    """Per-frame IoU over the union of frame indices; one-sided frames score 0.

    The mean is the arithmetic mean over that union of frames.
    """
    frames = sorted(set(a.frames) | set(b.frames))
    per_frame: dict[int, float] = {}
    for f in frames:
        ma, mb = a.frames.get(f), b.frames.get(f)
        if ma is None or mb is None:
            per_frame[f] = 0.0
        else:
            per_frame[f] = mask_iou(rle_decode(ma), rle_decode(mb))
    mean = sum(per_frame.values()) / len(per_frame)
    return TrackletIoUProfile(per_frame=per_frame, mean=mean)
