"""
Region masks for frame-based video detection.

A frame is divided into `region_size` x `region_size` pixel regions, one per backbone token.
The static mask keeps the regions where objects appear most often in a training set, the
dynamic mask keeps the regions covered by the previous frame's detections, and every
`period`-th frame is processed without any mask.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from vidmask.constant import REGION_SIZE
from vidmask.custom_exception import BoxOutOfBoundsError, ConfigError, ShapeError, SpecMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BBox:
    """Pixel box, half-open on both axes: covers x1..x2-1 and y1..y2-1."""

    x1: int
    y1: int
    x2: int
    y2: int

    @classmethod
    def from_list(cls, values: Sequence[int]) -> BBox:
        if len(values) != 4:
            raise ShapeError(f"a box needs 4 coordinates, got {len(values)}")
        return cls(*(int(v) for v in values))

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return max(self.width, 0) * max(self.height, 0)

    def is_valid(self, frame_size: tuple[int, int]) -> bool:
        height, width = frame_size
        return 0 <= self.x1 < self.x2 <= width and 0 <= self.y1 < self.y2 <= height

    def translate(self, dx: int, dy: int) -> BBox:
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def clip(self, frame_size: tuple[int, int]) -> BBox | None:
        """Clip to the frame; None when nothing of the box is left inside."""
        height, width = frame_size
        box = BBox(max(self.x1, 0), max(self.y1, 0), min(self.x2, width), min(self.y2, height))
        return box if box.x1 < box.x2 and box.y1 < box.y2 else None


@dataclass(frozen=True)
class GridSpec:
    frame_size: tuple[int, int]
    region_size: int = REGION_SIZE

    def __post_init__(self):
        height, width = self.frame_size
        if self.region_size < 1:
            raise ConfigError(f"region size must be >= 1, got {self.region_size}")
        if height < 1 or width < 1:
            raise ConfigError(f"frame size must be positive, got {height}x{width}")
        if height % self.region_size or width % self.region_size:
            raise ConfigError(
                f"frame {height}x{width} is not a multiple of region size {self.region_size}; pad frames first"
            )
        object.__setattr__(self, "frame_size", (int(height), int(width)))

    @classmethod
    def padded(cls, frame_size: tuple[int, int], region_size: int = REGION_SIZE) -> GridSpec:
        return cls(padded_size(frame_size, region_size), region_size)

    @property
    def rows(self) -> int:
        return self.frame_size[0] // self.region_size

    @property
    def cols(self) -> int:
        return self.frame_size[1] // self.region_size

    @property
    def num_tokens(self) -> int:
        return self.rows * self.cols

    def region_box(self, location: int) -> BBox:
        row, col = divmod(int(location), self.cols)
        r = self.region_size
        return BBox(col * r, row * r, (col + 1) * r, (row + 1) * r)


def padded_size(frame_size: tuple[int, int], region_size: int = REGION_SIZE) -> tuple[int, int]:
    height, width = frame_size
    return (-(-height // region_size) * region_size, -(-width // region_size) * region_size)


def pad_frame(frame: np.ndarray, region_size: int = REGION_SIZE) -> np.ndarray:
    """Zero-pad a HxWxC frame on the bottom and right to a multiple of `region_size`."""
    height, width = frame.shape[:2]
    target_h, target_w = padded_size((height, width), region_size)
    if (target_h, target_w) == (height, width):
        return frame
    pad = [(0, target_h - height), (0, target_w - width)] + [(0, 0)] * (frame.ndim - 2)
    return np.pad(frame, pad, mode="constant", constant_values=0)


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray

    @property
    def frame_size(self) -> tuple[int, int]:
        return tuple(self.values.shape)


@dataclass(frozen=True, eq=False)
class RegionMask:
    grid: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        grid = np.array(self.grid, dtype=bool)
        if grid.shape != (self.spec.rows, self.spec.cols):
            raise ShapeError(f"mask grid {grid.shape} does not match {self.spec.rows}x{self.spec.cols} regions")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @classmethod
    def full(cls, spec: GridSpec) -> RegionMask:
        return cls(np.ones((spec.rows, spec.cols), dtype=bool), spec)

    @classmethod
    def empty(cls, spec: GridSpec) -> RegionMask:
        return cls(np.zeros((spec.rows, spec.cols), dtype=bool), spec)

    @classmethod
    def from_locations(cls, locations: Iterable[int], spec: GridSpec) -> RegionMask:
        flat = np.zeros(spec.num_tokens, dtype=bool)
        flat[np.asarray(list(locations), dtype=np.int64)] = True
        return cls(flat.reshape(spec.rows, spec.cols), spec)

    @property
    def keep_count(self) -> int:
        return int(self.grid.sum())

    @property
    def keep_rate(self) -> float:
        return self.keep_count / self.spec.num_tokens

    def locations(self) -> np.ndarray:
        """Row-major indices of the kept regions, strictly increasing."""
        return np.flatnonzero(self.grid.ravel())

    def __or__(self, other: RegionMask) -> RegionMask:
        return combined_mask(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RegionMask):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.grid, other.grid)

    def __hash__(self):
        return hash((self.spec, self.grid.tobytes()))


@dataclass(frozen=True)
class MaskSchedule:
    period: int
    static_keep_rate: float
    dilation: int = 0

    def __post_init__(self):
        if int(self.period) != self.period or self.period < 1:
            raise ConfigError(f"period must be an integer >= 1, got {self.period}")
        if not 0.0 <= self.static_keep_rate <= 1.0:
            raise ConfigError(f"static keep rate must be in [0, 1], got {self.static_keep_rate}")
        if int(self.dilation) != self.dilation or self.dilation < 0:
            raise ConfigError(f"dilation must be an integer >= 0, got {self.dilation}")


class FrameKind(Enum):
    FULL = "full"
    MASKED = "masked"


def _check_box(index: int, box: BBox, frame_size: tuple[int, int]) -> None:
    if not box.is_valid(frame_size):
        raise BoxOutOfBoundsError(index, box.as_list(), frame_size)


def accumulate_heatmap(annotations: Iterable[tuple[int, Sequence[BBox]]], spec: GridSpec) -> Heatmap:
    """
    Count, for every pixel, the annotation boxes covering it (`H[y1:y2, x1:x2] += 1` per box).

    Boxes are accumulated as corner increments of a 2-D difference table followed by two prefix
    sums, so the cost is linear in pixels plus boxes. Box indices in errors run across all frames.
    """
    height, width = spec.frame_size
    y1s, x1s, y2s, x2s = [], [], [], []
    index = 0
    for _, boxes in annotations:
        for box in boxes:
            _check_box(index, box, spec.frame_size)
            x1s.append(box.x1)
            y1s.append(box.y1)
            x2s.append(box.x2)
            y2s.append(box.y2)
            index += 1

    diff = np.zeros((height + 1, width + 1), dtype=np.int64)
    if index:
        x1s, y1s, x2s, y2s = (np.asarray(v, dtype=np.int64) for v in (x1s, y1s, x2s, y2s))
        np.add.at(diff, (y1s, x1s), 1)
        np.add.at(diff, (y1s, x2s), -1)
        np.add.at(diff, (y2s, x1s), -1)
        np.add.at(diff, (y2s, x2s), 1)
    values = diff.cumsum(axis=0).cumsum(axis=1)[:height, :width]
    logger.debug(f"Accumulated {index} boxes into a {height}x{width} heatmap")
    return Heatmap(values)


def region_scores(h: Heatmap, spec: GridSpec) -> np.ndarray:
    """Sum heatmap values over each region's pixel block."""
    if h.frame_size != spec.frame_size:
        raise ShapeError(f"heatmap {h.frame_size} does not match frame size {spec.frame_size}")
    r = spec.region_size
    blocks = h.values.astype(np.float64).reshape(spec.rows, r, spec.cols, r)
    return blocks.sum(axis=(1, 3))


def static_mask(scores: np.ndarray, k_s: float, spec: GridSpec) -> RegionMask:
    """Keep the floor(k_s * N) highest-scoring regions; equal scores go to the smaller row-major index."""
    if not 0.0 <= k_s <= 1.0:
        raise ConfigError(f"static keep rate must be in [0, 1], got {k_s}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (spec.rows, spec.cols):
        raise ShapeError(f"score grid {scores.shape} does not match {spec.rows}x{spec.cols} regions")
    n = spec.num_tokens
    k = math.floor(k_s * n)
    flat = scores.ravel()
    order = np.lexsort((np.arange(n), -flat))
    return RegionMask.from_locations(order[:k], spec)


def dynamic_mask(boxes: Sequence[BBox], spec: GridSpec, dilation: int = 0) -> RegionMask:
    """Keep every region whose pixel block intersects a box, grown by `dilation` regions (Chebyshev)."""
    r = spec.region_size
    grid = np.zeros((spec.rows, spec.cols), dtype=bool)
    for index, box in enumerate(boxes):
        _check_box(index, box, spec.frame_size)
        grid[box.y1 // r:(box.y2 - 1) // r + 1, box.x1 // r:(box.x2 - 1) // r + 1] = True
    if dilation > 0 and grid.any():
        grid = ndimage.binary_dilation(grid, structure=np.ones((3, 3), dtype=bool), iterations=dilation)
    return RegionMask(grid, spec)


def combined_mask(static: RegionMask, dynamic: RegionMask) -> RegionMask:
    if static.spec != dynamic.spec:
        raise SpecMismatchError(f"cannot combine masks over {static.spec} and {dynamic.spec}")
    return RegionMask(np.logical_or(static.grid, dynamic.grid), static.spec)


def schedule_frame(t: int, sched: MaskSchedule) -> FrameKind:
    if t < 0:
        raise ConfigError(f"frame index must be >= 0, got {t}")
    return FrameKind.FULL if t % sched.period == 0 else FrameKind.MASKED


def build_static_mask(annotations: Iterable[tuple[int, Sequence[BBox]]], spec: GridSpec, k_s: float) -> RegionMask:
    return static_mask(region_scores(accumulate_heatmap(annotations, spec), spec), k_s, spec)


def build_frame_mask(static: RegionMask, previous_boxes: Sequence[BBox], sched: MaskSchedule) -> RegionMask:
    """The input mask of a masked frame: static regions plus the previous frame's detections."""
    return combined_mask(static, dynamic_mask(previous_boxes, static.spec, sched.dilation))
