"""Spatio-temporal action proposal: merge per-frame human boxes into the
minimal cube covering them, extend it by a margin, and crop videos to it.

Human detection itself is pluggable: boxes come from sidecar CSV files
(e.g. ground truth, an external detector) or are derived as the minimum
bounding rectangle of per-frame skeleton key points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthio import DepthVideo
from .util import round_half_up


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in one frame; x/y is the top-left corner."""

    frame_index: int
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got {self.w}x{self.h}")


@dataclass(frozen=True)
class ProposalCube:
    """Spatio-temporal crop region: spatial bounds are half-open pixel
    intervals, temporal bounds inclusive frame indices."""

    x0: int
    y0: int
    x1: int
    y1: int
    t0: int
    t1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError("cube must have positive spatial extent")
        if self.t0 > self.t1:
            raise ValueError("cube must have t0 <= t1")


def boxes_from_skeleton(joints: dict[int, list[tuple[int, int]]]) -> list[BBox]:
    """Per frame, the tight axis-aligned rectangle over that frame's key
    points (at least 1x1). Frames listed with no joints are skipped."""
    boxes = []
    for frame_index in sorted(joints):
        pts = joints[frame_index]
        if not pts:
            continue
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        boxes.append(
            BBox(
                frame_index=frame_index,
                x=min(xs),
                y=min(ys),
                w=max(max(xs) - min(xs), 1),
                h=max(max(ys) - min(ys), 1),
            )
        )
    return boxes


def merge_boxes(boxes: list[BBox]) -> ProposalCube:
    """Minimal cube covering every input box, spatially and temporally."""
    if not boxes:
        raise ValueError("cannot merge an empty box list")
    return ProposalCube(
        x0=min(b.x for b in boxes),
        y0=min(b.y for b in boxes),
        x1=max(b.x + b.w for b in boxes),
        y1=max(b.y + b.h for b in boxes),
        t0=min(b.frame_index for b in boxes),
        t1=max(b.frame_index for b in boxes),
    )


def extend_cube(cube: ProposalCube, margin: int, frame_w: int, frame_h: int) -> ProposalCube:
    """Move each spatial side outward by margin pixels, clipped to the
    frame; the temporal extent is unchanged."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    return ProposalCube(
        x0=max(cube.x0 - margin, 0),
        y0=max(cube.y0 - margin, 0),
        x1=min(cube.x1 + margin, frame_w),
        y1=min(cube.y1 + margin, frame_h),
        t0=cube.t0,
        t1=cube.t1,
    )


def scaled_margin(margin: int, frame_w: int, native_w: int = 320) -> int:
    """Margin rescaled from a native-resolution convention to frame_w, so
    the relative extension stays comparable across resolutions."""
    return int(round_half_up(margin * frame_w / native_w))


def crop_video(video: DepthVideo, cube: ProposalCube) -> DepthVideo:
    """Crop frames t0..t1 to the cube's spatial window."""
    x0 = max(cube.x0, 0)
    y0 = max(cube.y0, 0)
    x1 = min(cube.x1, video.width)
    y1 = min(cube.y1, video.height)
    t0 = max(cube.t0, 0)
    t1 = min(cube.t1, video.num_frames - 1)
    if x0 >= x1 or y0 >= y1 or t0 > t1:
        raise ValueError("cube does not intersect the video")
    return DepthVideo(np.ascontiguousarray(video.frames[t0:t1 + 1, y0:y1, x0:x1]))


def propose_and_crop(
    video: DepthVideo, boxes: list[BBox], margin: int
) -> tuple[DepthVideo, ProposalCube]:
    """Merge boxes, extend by the margin, and crop; the crop always spans
    the full trimmed video in time (frames without boxes included)."""
    cube = merge_boxes(boxes)
    cube = extend_cube(cube, margin, video.width, video.height)
    cube = ProposalCube(cube.x0, cube.y0, cube.x1, cube.y1, 0, video.num_frames - 1)
    return crop_video(video, cube), cube
