"""Virtual-viewpoint synthesis for depth videos.

A depth frame is lifted to 3-D by treating pixel offsets from the frame
center as x/y and scaled depth as z (no camera intrinsics involved: the
focal length of a depth sensor is often unknown, and the method works
without it). The point set is rotated by a virtual camera pose and
re-imaged onto a pixel grid with nearest-depth collision handling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .depthio import DepthVideo
from .util import round_half_up


@dataclass(frozen=True)
class ViewSpec:
    """Virtual camera pose: alpha rotates about the vertical (y) axis,
    beta about the horizontal (x) axis, both in degrees."""

    alpha: float
    beta: float = 0.0

    def __post_init__(self):
        if not -180.0 <= self.alpha <= 180.0:
            raise ValueError(f"alpha out of [-180, 180]: {self.alpha}")
        if not -180.0 <= self.beta <= 180.0:
            raise ValueError(f"beta out of [-180, 180]: {self.beta}")


@dataclass(frozen=True)
class ViewGroup:
    group_id: int
    views: tuple[ViewSpec, ...]

    def __post_init__(self):
        if not self.views:
            raise ValueError("a view group needs at least one view")


@dataclass(frozen=True)
class ProjectionConfig:
    """Reprojection settings.

    depth_scale converts sensor depth units into pixel-commensurate
    lengths (default 0.1 keeps typical depths on the order of the pixel
    offsets). hole_fill_radius > 0 runs one median pass over resampling
    holes. Output size defaults to the input frame size.
    """

    depth_scale: float = 0.1
    hole_fill_radius: int = 1
    out_width: int | None = None
    out_height: int | None = None

    def __post_init__(self):
        if not (self.depth_scale > 0 and math.isfinite(self.depth_scale)):
            raise ValueError("depth_scale must be finite and > 0")
        if self.hole_fill_radius < 0:
            raise ValueError("hole_fill_radius must be >= 0")


# Five bundles of adjacent alpha angles; views in a bundle later share one
# fully-connected stream in the classifier network.
_GROUP_ALPHAS = (
    (-90.0, -40.0),
    (-20.0, -10.0, -5.0),
    (0.0,),
    (5.0, 10.0, 20.0),
    (40.0, 90.0),
)


def default_view_groups() -> list[ViewGroup]:
    """The standard five-group partition of the eleven virtual viewpoints,
    all with beta = 0."""
    return [
        ViewGroup(group_id=i + 1, views=tuple(ViewSpec(alpha=a) for a in alphas))
        for i, alphas in enumerate(_GROUP_ALPHAS)
    ]


def all_default_views() -> list[ViewSpec]:
    return [v for g in default_view_groups() for v in g.views]


def rotation_matrix(view: ViewSpec) -> np.ndarray:
    """3x3 right-handed rotation for a view: first alpha about the
    vertical axis, then beta about the horizontal axis; the original
    camera viewpoint is the angle origin."""
    a = math.radians(view.alpha)
    b = math.radians(view.beta)
    r_vert = np.array(
        [
            [math.cos(a), 0.0, math.sin(a)],
            [0.0, 1.0, 0.0],
            [-math.sin(a), 0.0, math.cos(a)],
        ]
    )
    r_horiz = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, math.cos(b), -math.sin(b)],
            [0.0, math.sin(b), math.cos(b)],
        ]
    )
    return r_horiz @ r_vert


def _fill_holes(frame: np.ndarray, radius: int) -> np.ndarray:
    """One median pass over zero pixels, using only non-zero neighbors
    within the given Chebyshev radius of the unfilled buffer. Even-count
    medians take the lower middle value so results stay integral."""
    h, w = frame.shape
    shifts = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = np.zeros_like(frame)
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            if ys0 < ys1 and xs0 < xs1:
                shifted[ys0:ys1, xs0:xs1] = frame[
                    ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx
                ]
            shifts.append(shifted)
    stack = np.stack(shifts)  # (K, H, W)
    count = (stack > 0).sum(axis=0)
    stack.sort(axis=0)  # zeros sort to the front
    k = stack.shape[0]
    med_idx = np.where(count > 0, k - count + (count - 1) // 2, 0)
    median = np.take_along_axis(stack, med_idx[None], axis=0)[0]
    out = frame.copy()
    holes = (frame == 0) & (count > 0)
    out[holes] = median[holes]
    return out


def reproject_frame(frame: np.ndarray, view: ViewSpec, cfg: ProjectionConfig) -> np.ndarray:
    """Re-image one depth frame from a virtual viewpoint.

    Every pixel with depth > 0 becomes the point
    (x - cx, y - cy, depth * depth_scale), is rotated, and lands on the
    rounded output pixel with depth round(z' / depth_scale) clamped to
    [1, 65535]. Collisions keep the smallest depth; points falling
    outside the output are discarded; remaining zeros are optionally
    median-filled.
    """
    frame = np.asarray(frame)
    h, w = frame.shape
    out_w = cfg.out_width or w
    out_h = cfg.out_height or h
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    rot = rotation_matrix(view)

    ys, xs = np.nonzero(frame)
    canvas = np.full((out_h, out_w), 0x10000, dtype=np.int64)
    if xs.size:
        pts = np.stack(
            [
                xs - cx,
                ys - cy,
                frame[ys, xs].astype(np.float64) * cfg.depth_scale,
            ]
        )
        moved = rot @ pts
        ox = round_half_up(moved[0] + cx)
        oy = round_half_up(moved[1] + cy)
        od = np.clip(round_half_up(moved[2] / cfg.depth_scale), 1, 0xFFFF)
        ok = (ox >= 0) & (ox < out_w) & (oy >= 0) & (oy < out_h)
        np.minimum.at(canvas, (oy[ok], ox[ok]), od[ok])
    canvas[canvas == 0x10000] = 0
    result = canvas.astype(np.uint16)
    if cfg.hole_fill_radius > 0:
        result = _fill_holes(result, cfg.hole_fill_radius)
    return result


def project_video(
    video: DepthVideo, views: list[ViewSpec], cfg: ProjectionConfig
) -> list[DepthVideo]:
    """Synthesize one depth video per requested viewpoint."""
    if not views:
        raise ValueError("at least one view required")
    out = []
    for view in views:
        frames = np.stack(
            [reproject_frame(video.frames[t], view, cfg) for t in range(video.num_frames)]
        )
        out.append(DepthVideo(frames))
    return out
