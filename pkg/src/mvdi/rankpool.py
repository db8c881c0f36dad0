"""Temporal rank pooling: compress a depth video into a single image.

A linear scoring function is fit so that scores increase along the
video's temporal order; its weight vector u, reshaped to 2-D and
normalized to 8 bits, is the dynamic image. Both the exact ranking-SVM
formulation (hinge loss over all ordered frame pairs, solved by
deterministic subgradient descent) and fast closed-form approximations
are provided, along with overlapping temporal segmentation and the
order-blind motion-map baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .depthio import DepthVideo
from .errors import NumericError
from .util import round_half_up
from .viewsynth import ProjectionConfig, ViewSpec, project_video

POOL_VARIANTS = ("exact_ranksvm", "approx_prefix", "approx_frames")


@dataclass(frozen=True)
class PoolConfig:
    """Pooling settings. lam is the quadratic regularizer weight of the
    exact solver; step_size None means 1e-3 / d, scaled to the frame
    dimension."""

    variant: str = "approx_frames"
    lam: float = 1.0
    max_iters: int = 200
    step_size: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.variant not in POOL_VARIANTS:
            raise ValueError(f"unknown pooling variant: {self.variant}")
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class RankingVector:
    """Pooled representation: weight vector u plus the frame shape it
    reshapes to."""

    u: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64).ravel()
        if self.u.size != self.width * self.height:
            raise ValueError(
                f"u has {self.u.size} entries, expected {self.width * self.height}"
            )
        if not np.all(np.isfinite(self.u)):
            raise NumericError("ranking vector contains non-finite entries")


@dataclass
class PrefixMeans:
    """Running frame averages V_t = mean(I_1..I_t), flattened to 64-bit
    reals, shape (T, width*height)."""

    values: np.ndarray
    width: int
    height: int


@dataclass
class DynamicImage:
    """8-bit image form of a pooled video (or of the motion-map
    baseline), tagged with its source view and temporal segment index
    (None = whole video)."""

    pixels: np.ndarray
    view: ViewSpec | None = None
    segment_index: int | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 2:
            raise ValueError("dynamic image pixels must be a 2-D uint8 grid")


@dataclass(frozen=True)
class SegmentSpec:
    num_segments: int = 4
    overlap_ratio: float = 0.5

    def __post_init__(self):
        if self.num_segments < 1:
            raise ValueError("num_segments must be >= 1")
        if not 0.0 <= self.overlap_ratio < 1.0:
            raise ValueError("overlap_ratio must be in [0, 1)")


def _flat_frames(video: DepthVideo) -> np.ndarray:
    return video.frames.reshape(video.num_frames, -1).astype(np.float64)


def prefix_means(video: DepthVideo) -> PrefixMeans:
    """V_t = (1/t) * sum(I_1..I_t) over flattened frames, 64-bit."""
    flat = _flat_frames(video)
    sums = np.cumsum(flat, axis=0)
    counts = np.arange(1, video.num_frames + 1, dtype=np.float64)
    return PrefixMeans(sums / counts[:, None], video.width, video.height)


def score(u: RankingVector, v: np.ndarray) -> float:
    """Ranking score <u, v>."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != u.u.size:
        raise ValueError(f"dimension mismatch: u has {u.u.size}, v has {v.size}")
    return float(np.dot(u.u, v))


def _pair_diffs(values: np.ndarray) -> np.ndarray:
    """All V_q - V_t rows for ordered pairs q > t."""
    t_idx, q_idx = np.triu_indices(values.shape[0], k=1)
    return values[q_idx] - values[t_idx]


def pairwise_objective(u: np.ndarray, diffs: np.ndarray, lam: float, weight: float) -> float:
    margins = 1.0 - diffs @ u
    return 0.5 * lam * float(u @ u) + weight * float(margins[margins > 0].sum())


def exact_rank_pool(means: PrefixMeans, cfg: PoolConfig) -> RankingVector:
    """Minimize the pairwise-hinge ranking objective

        lam/2 ||u||^2 + 2/(T(T-2)) * sum_{q>t} max(0, 1 - <u, V_q - V_t>)

    by full-batch subgradient descent from u = 0 with step_size/sqrt(k)
    decay, returning the best iterate seen. The pair weight is undefined
    at T = 2, so T >= 3 is required. Deterministic for fixed settings.
    """
    T, d = means.values.shape
    if T < 3:
        raise ValueError(f"exact rank pooling needs T >= 3, got T={T}")
    diffs = _pair_diffs(means.values)
    weight = 2.0 / (T * (T - 2))
    step0 = cfg.step_size if cfg.step_size is not None else 1e-3 / d

    u = np.zeros(d)
    best_u = u.copy()
    best_obj = pairwise_objective(u, diffs, cfg.lam, weight)
    for k in range(1, cfg.max_iters + 1):
        margins = 1.0 - diffs @ u
        active = margins > 0
        grad = cfg.lam * u - weight * (active.astype(np.float64) @ diffs)
        u = u - (step0 / math.sqrt(k)) * grad
        if not np.all(np.isfinite(u)):
            raise NumericError("subgradient descent diverged to non-finite values")
        obj = pairwise_objective(u, diffs, cfg.lam, weight)
        if obj < best_obj:
            best_obj = obj
            best_u = u.copy()
    return RankingVector(best_u, means.width, means.height)


def approx_coefficients(T: int, variant: str) -> np.ndarray:
    """Closed-form per-frame pooling coefficients.

    'approx_frames' ranks raw frames: coefficient 2t - T - 1.
    'approx_prefix' expands the ranking of prefix means into per-frame
    coefficients 2(T - t + 1) - (T + 1)(H_T - H_{t-1}) with harmonic
    numbers H_k.
    """
    t = np.arange(1, T + 1, dtype=np.float64)
    if variant == "approx_frames":
        return 2.0 * t - T - 1.0
    if variant == "approx_prefix":
        harmonics = np.concatenate([[0.0], np.cumsum(1.0 / t)])  # H_0..H_T
        return 2.0 * (T - t + 1.0) - (T + 1.0) * (harmonics[T] - harmonics[:-1])
    raise ValueError(f"not an approximate variant: {variant}")


def approx_rank_pool(video: DepthVideo, cfg: PoolConfig) -> RankingVector:
    """Closed-form approximate rank pooling: u = sum_t coeff_t * I_t."""
    coeffs = approx_coefficients(video.num_frames, cfg.variant)
    u = coeffs @ _flat_frames(video)
    return RankingVector(u, video.width, video.height)


def pool_video(video: DepthVideo, cfg: PoolConfig) -> RankingVector:
    """Dispatch to the exact or approximate solver per cfg.variant."""
    if cfg.variant == "exact_ranksvm":
        return exact_rank_pool(prefix_means(video), cfg)
    return approx_rank_pool(video, cfg)


def to_dynamic_image(u: RankingVector) -> DynamicImage:
    """Min-max normalize u to [0, 255] (round half up) and reshape to the
    source frame grid. A constant u maps to all-128."""
    grid = u.u.reshape(u.height, u.width)
    lo = grid.min()
    hi = grid.max()
    if hi > lo:
        pixels = np.clip(round_half_up((grid - lo) * (255.0 / (hi - lo))), 0, 255)
    else:
        pixels = np.full(grid.shape, 128, dtype=np.int64)
    return DynamicImage(pixels.astype(np.uint8))


def temporal_segments(video: DepthVideo, spec: SegmentSpec) -> list[DepthVideo]:
    """Split a video into overlapping segments that cover every frame.

    Segment length L = ceil(T / (1 + (n-1)*(1-overlap))) and stride
    round(L*(1-overlap)), at least 1. Starts advance by the stride but
    never past T - L, and the final segment always ends at frame T-1.
    The stride is raised to ceil((T-L)/(n-1)) in the rare cases where the
    rounded value cannot reach the final start, which keeps it <= L and
    guarantees gap-free coverage.
    """
    T = video.num_frames
    n = spec.num_segments
    if T < n:
        raise ValueError(f"cannot cut {n} segments from {T} frames")
    if n == 1:
        return [DepthVideo(video.frames.copy())]
    cover = 1.0 + (n - 1) * (1.0 - spec.overlap_ratio)
    length = math.ceil(T / cover)
    stride = max(1, int(round_half_up(length * (1.0 - spec.overlap_ratio))))
    stride = max(stride, math.ceil((T - length) / (n - 1)))
    starts = [min(i * stride, T - length) for i in range(n - 1)]
    starts.append(T - length)
    return [DepthVideo(video.frames[s:s + length].copy()) for s in starts]


def extract_mvdi(
    video: DepthVideo,
    views: list[ViewSpec],
    cfg: PoolConfig,
    spec: SegmentSpec,
    pcfg: ProjectionConfig,
) -> dict[ViewSpec, list[DynamicImage]]:
    """Multi-view dynamic images: per view, one whole-video image plus one
    per temporal segment (so num_segments + 1 each)."""
    out: dict[ViewSpec, list[DynamicImage]] = {}
    for view in views:
        projected = project_video(video, [view], pcfg)[0]
        images = [
            replace(to_dynamic_image(pool_video(projected, cfg)), view=view)
        ]
        for idx, segment in enumerate(temporal_segments(projected, spec)):
            images.append(
                replace(
                    to_dynamic_image(pool_video(segment, cfg)),
                    view=view,
                    segment_index=idx,
                )
            )
        out[view] = images
    return out


def compute_dmm(video: DepthVideo, epsilon: float = 50.0) -> DynamicImage:
    """Depth motion map baseline: per pixel, count frame-to-frame depth
    changes exceeding epsilon, then normalize like a dynamic image. Blind
    to temporal order by construction."""
    if video.num_frames < 2:
        raise ValueError("motion map needs at least 2 frames")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    signed = video.frames.astype(np.int64)
    counts = (np.abs(np.diff(signed, axis=0)) > epsilon).sum(axis=0).astype(np.float64)
    return to_dynamic_image(RankingVector(counts.ravel(), video.width, video.height))
