"""Rank pooling tests: prefix means, exact and approximate solvers,
dynamic-image normalization, temporal segmentation, motion-map baseline."""

import numpy as np
import pytest

from mvdi.depthio import DepthVideo
from mvdi.rankpool import (
    PoolConfig,
    PrefixMeans,
    RankingVector,
    SegmentSpec,
    approx_coefficients,
    approx_rank_pool,
    compute_dmm,
    exact_rank_pool,
    extract_mvdi,
    pairwise_objective,
    prefix_means,
    score,
    temporal_segments,
    to_dynamic_image,
    _pair_diffs,
)
from mvdi.viewsynth import ProjectionConfig, ViewSpec, all_default_views


def make_video(frames) -> DepthVideo:
    return DepthVideo(np.asarray(frames, dtype=np.uint16))


def random_video(rng, t=6, h=4, w=4, hi=1000) -> DepthVideo:
    return DepthVideo(rng.integers(0, hi, size=(t, h, w)).astype(np.uint16))


class TestPrefixMeans:
    def test_constant_video(self):
        frame = np.full((3, 3), 42, dtype=np.uint16)
        means = prefix_means(make_video([frame] * 4))
        for t in range(4):
            np.testing.assert_array_equal(means.values[t], np.full(9, 42.0))

    def test_two_frame_average(self):
        means = prefix_means(
            make_video([np.zeros((2, 2)), np.full((2, 2), 2)])
        )
        np.testing.assert_array_equal(means.values[0], np.zeros(4))
        np.testing.assert_array_equal(means.values[1], np.ones(4))

    def test_matches_naive_resummation(self):
        """Cumulative means agree with per-t re-summation to 1e-9."""
        rng = np.random.default_rng(0)
        video = random_video(rng, t=5)
        means = prefix_means(video)
        flat = video.frames.reshape(5, -1).astype(np.float64)
        for t in range(5):
            naive = sum(flat[i] for i in range(t + 1)) / (t + 1)
            assert np.abs(means.values[t] - naive).max() < 1e-9


class TestScore:
    def test_zero_vector(self):
        u = RankingVector(np.zeros(4), 2, 2)
        assert score(u, [1.0, 2.0, 3.0, 4.0]) == 0.0

    def test_basis_projection(self):
        u = RankingVector(np.eye(4)[2], 2, 2)
        assert score(u, [5.0, 6.0, 7.0, 8.0]) == 7.0

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(1)
        u = RankingVector(rng.normal(size=10), 5, 2)
        v = rng.normal(size=10)
        expected = sum(a * b for a, b in zip(u.u, v))
        assert abs(score(u, v) - expected) < 1e-12

    def test_dimension_mismatch(self):
        u = RankingVector(np.zeros(4), 2, 2)
        with pytest.raises(ValueError):
            score(u, np.zeros(5))


def grid_search_1d(diffs, lam, weight, lo=-20.0, hi=20.0):
    """Coarse-to-fine scalar grid minimizer of the pairwise objective."""
    grid = None
    for _ in range(4):
        grid = np.linspace(lo, hi, 20001)
        margins = 1.0 - np.outer(grid, diffs.ravel())
        obj = 0.5 * lam * grid**2 + weight * np.where(margins > 0, margins, 0).sum(
            axis=1
        )
        k = int(np.argmin(obj))
        lo, hi = grid[max(0, k - 2)], grid[min(len(grid) - 1, k + 2)]
    return float(grid[k])


class TestExactRankPool:
    def test_constant_video_gives_zero(self):
        """All prefix means equal: the hinge term cannot depend on u, so
        only the regularizer binds and the solver stays at zero."""
        video = make_video([np.full((3, 3), 100)] * 5)
        u = exact_rank_pool(prefix_means(video), PoolConfig(variant="exact_ranksvm"))
        np.testing.assert_array_equal(u.u, np.zeros(9))

    def test_monotone_ramp_orders_pairs(self):
        """frame t = t*ones, T=8: at least 95% of the 28 ordered pairs get
        increasing scores, checked by brute-force enumeration."""
        video = make_video([np.full((4, 4), t) for t in range(1, 9)])
        means = prefix_means(video)
        u = exact_rank_pool(means, PoolConfig(variant="exact_ranksvm", lam=1.0))
        good = total = 0
        for t in range(8):
            for q in range(t + 1, 8):
                total += 1
                good += score(u, means.values[q]) > score(u, means.values[t])
        assert total == 28
        assert good / total >= 0.95

    def test_matches_scalar_grid_search(self):
        """d=1, V=[1,2,3]: solver lands within 1e-3 of the grid minimizer."""
        means = PrefixMeans(np.array([[1.0], [2.0], [3.0]]), 1, 1)
        cfg = PoolConfig(variant="exact_ranksvm", lam=1.0, max_iters=50000, step_size=0.5)
        u = exact_rank_pool(means, cfg).u[0]
        diffs = _pair_diffs(means.values)
        expected = grid_search_1d(diffs, 1.0, 2.0 / 3.0)
        assert abs(u - expected) < 1e-3

    def test_objective_never_worse_than_zero(self):
        """Returned u scores at most the objective of the zero start."""
        rng = np.random.default_rng(2)
        for _ in range(10):
            video = random_video(rng, t=int(rng.integers(3, 9)), h=3, w=3)
            means = prefix_means(video)
            cfg = PoolConfig(variant="exact_ranksvm", max_iters=50)
            u = exact_rank_pool(means, cfg)
            diffs = _pair_diffs(means.values)
            T = means.values.shape[0]
            weight = 2.0 / (T * (T - 2))
            at_u = pairwise_objective(u.u, diffs, cfg.lam, weight)
            at_zero = pairwise_objective(np.zeros_like(u.u), diffs, cfg.lam, weight)
            assert at_u <= at_zero + 1e-12

    def test_rejects_short_videos(self):
        video = make_video([np.zeros((2, 2)), np.ones((2, 2))])
        with pytest.raises(ValueError, match="T >= 3"):
            exact_rank_pool(prefix_means(video), PoolConfig(variant="exact_ranksvm"))


class TestApproxRankPool:
    def test_single_frame_is_zero(self):
        video = make_video([np.full((2, 2), 9)])
        for variant in ("approx_frames", "approx_prefix"):
            u = approx_rank_pool(video, PoolConfig(variant=variant))
            np.testing.assert_array_equal(u.u, np.zeros(4))

    def test_frame_coefficients_t3(self):
        np.testing.assert_array_equal(
            approx_coefficients(3, "approx_frames"), [-2.0, 0.0, 2.0]
        )

    def test_frame_coefficients_match_exact_direction(self):
        """On a d=1 increasing ramp both the closed form and the exact
        solver produce a positive pooled weight."""
        video = make_video(np.arange(1, 6).reshape(5, 1, 1) * 100)
        approx = approx_rank_pool(video, PoolConfig(variant="approx_frames"))
        exact = exact_rank_pool(
            prefix_means(video),
            PoolConfig(variant="exact_ranksvm", max_iters=2000, step_size=0.05),
        )
        assert approx.u[0] > 0
        assert exact.u[0] > 0

    def test_prefix_coefficients_expand_prefix_mean_pooling(self):
        """The harmonic-number coefficients equal the expansion of
        sum_t (2t - T - 1) * V_t into per-frame weights."""
        rng = np.random.default_rng(3)
        for T in (1, 2, 3, 7, 16):
            video = random_video(rng, t=T)
            means = prefix_means(video)
            ranked_means = approx_coefficients(T, "approx_frames") @ means.values
            direct = approx_rank_pool(video, PoolConfig(variant="approx_prefix"))
            np.testing.assert_allclose(direct.u, ranked_means, rtol=1e-9, atol=1e-9)

    def test_time_reversal_antisymmetry(self):
        """Reversing the video negates the frame-variant result exactly."""
        rng = np.random.default_rng(4)
        for _ in range(20):
            video = random_video(rng, t=int(rng.integers(1, 9)))
            fwd = approx_rank_pool(video, PoolConfig(variant="approx_frames"))
            rev = approx_rank_pool(
                DepthVideo(video.frames[::-1].copy()),
                PoolConfig(variant="approx_frames"),
            )
            np.testing.assert_array_equal(rev.u, -fwd.u)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(5)
        video = random_video(rng, t=5, hi=100)
        for variant in ("approx_frames", "approx_prefix"):
            u1 = approx_rank_pool(video, PoolConfig(variant=variant)).u
            scaled = DepthVideo((video.frames * 3).astype(np.uint16))
            u3 = approx_rank_pool(scaled, PoolConfig(variant=variant)).u
            np.testing.assert_allclose(u3, 3.0 * u1, rtol=1e-9)


class TestToDynamicImage:
    def test_constant_maps_to_128(self):
        img = to_dynamic_image(RankingVector(np.zeros(6), 3, 2))
        np.testing.assert_array_equal(img.pixels, np.full((2, 3), 128, dtype=np.uint8))

    def test_affine_endpoints(self):
        u = RankingVector(np.array([-1.0, 1.0, 0.0, 0.5]), 2, 2)
        img = to_dynamic_image(u)
        assert img.pixels[0, 0] == 0
        assert img.pixels[0, 1] == 255
        assert img.pixels[1, 0] == 128  # round(127.5) half-up

    def test_matches_per_element_oracle(self):
        rng = np.random.default_rng(6)
        values = rng.normal(size=12)
        img = to_dynamic_image(RankingVector(values, 4, 3))
        lo, hi = values.min(), values.max()
        import math

        expected = [
            math.floor((v - lo) * 255.0 / (hi - lo) + 0.5) for v in values
        ]
        np.testing.assert_array_equal(
            img.pixels.ravel(), np.array(expected, dtype=np.uint8)
        )

    def test_range_property(self):
        """Output min is 0 (or 128 when degenerate), max 255 (or 128)."""
        rng = np.random.default_rng(7)
        for _ in range(30):
            values = rng.normal(size=9) * rng.uniform(0, 10)
            img = to_dynamic_image(RankingVector(values, 3, 3))
            assert img.pixels.min() in (0, 128)
            assert img.pixels.max() in (128, 255)


class TestTemporalSegments:
    def test_worked_example_t100(self):
        video = make_video(np.arange(100).reshape(100, 1, 1))
        segs = temporal_segments(video, SegmentSpec(4, 0.5))
        spans = [(int(s.frames[0, 0, 0]), int(s.frames[-1, 0, 0])) for s in segs]
        assert spans == [(0, 39), (20, 59), (40, 79), (60, 99)]

    def test_single_segment_is_whole_video(self):
        rng = np.random.default_rng(8)
        video = random_video(rng, t=7)
        segs = temporal_segments(video, SegmentSpec(1, 0.5))
        assert len(segs) == 1
        assert segs[0] == video

    def test_worked_example_t8(self):
        video = make_video(np.arange(8).reshape(8, 1, 1))
        segs = temporal_segments(video, SegmentSpec(4, 0.5))
        spans = [(int(s.frames[0, 0, 0]), int(s.frames[-1, 0, 0])) for s in segs]
        assert spans == [(0, 3), (2, 5), (4, 7), (4, 7)]

    def test_coverage_union_property(self):
        """Brute-force union of segment frames covers 0..T-1 and the last
        segment ends exactly at T-1, across a parameter sweep."""
        for T in range(1, 60):
            for n in (1, 2, 3, 4, 6, 8):
                if T < n:
                    continue
                for ov in (0.0, 0.25, 0.5, 0.75, 0.9):
                    video = make_video(np.arange(T).reshape(T, 1, 1))
                    segs = temporal_segments(video, SegmentSpec(n, ov))
                    assert len(segs) == n
                    union = set()
                    for s in segs:
                        union.update(int(v) for v in s.frames.ravel())
                    assert union == set(range(T)), (T, n, ov)
                    assert int(segs[-1].frames[-1, 0, 0]) == T - 1

    def test_too_few_frames(self):
        video = make_video(np.arange(3).reshape(3, 1, 1))
        with pytest.raises(ValueError):
            temporal_segments(video, SegmentSpec(4, 0.5))


class TestExtractMvdi:
    def test_default_views_yield_55_images(self):
        rng = np.random.default_rng(9)
        video = random_video(rng, t=16, h=8, w=8, hi=80)
        out = extract_mvdi(
            video,
            all_default_views(),
            PoolConfig(variant="approx_frames"),
            SegmentSpec(),
            ProjectionConfig(),
        )
        assert len(out) == 11
        assert sum(len(images) for images in out.values()) == 55
        for view, images in out.items():
            assert images[0].segment_index is None
            assert [im.segment_index for im in images[1:]] == [0, 1, 2, 3]
            assert all(im.view == view for im in images)

    def test_degenerate_pipeline_equals_plain_dynamic_image(self):
        rng = np.random.default_rng(10)
        video = random_video(rng, t=5, hi=90)
        cfg = PoolConfig(variant="approx_frames")
        out = extract_mvdi(
            video,
            [ViewSpec(0.0, 0.0)],
            cfg,
            SegmentSpec(num_segments=1),
            ProjectionConfig(hole_fill_radius=0),
        )
        plain = to_dynamic_image(approx_rank_pool(video, cfg))
        images = out[ViewSpec(0.0, 0.0)]
        assert len(images) == 2  # whole video + single full-length segment
        for im in images:
            np.testing.assert_array_equal(im.pixels, plain.pixels)

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        video = random_video(rng, t=12, h=6, w=6, hi=70)
        args = (
            [ViewSpec(alpha=10.0)],
            PoolConfig(variant="approx_prefix"),
            SegmentSpec(),
            ProjectionConfig(),
        )
        a = extract_mvdi(video, *args)
        b = extract_mvdi(video, *args)
        for view in a:
            for im1, im2 in zip(a[view], b[view]):
                np.testing.assert_array_equal(im1.pixels, im2.pixels)


class TestComputeDmm:
    def test_constant_video_all_128(self):
        video = make_video([np.full((3, 3), 7)] * 4)
        img = compute_dmm(video, epsilon=10.0)
        np.testing.assert_array_equal(img.pixels, np.full((3, 3), 128, dtype=np.uint8))

    def test_threshold_rule_single_pixel(self):
        a = np.zeros((3, 3), dtype=np.uint16)
        b = a.copy()
        b[1, 2] = 20  # exceeds epsilon=10 at exactly one pixel
        img = compute_dmm(make_video([a, b]), epsilon=10.0)
        assert img.pixels[1, 2] == 255
        assert (img.pixels == 0).sum() == 8

    def test_matches_counting_oracle(self):
        """DMM equals a per-pixel loop that counts threshold crossings."""
        rng = np.random.default_rng(12)
        video = random_video(rng, t=6, h=4, w=4, hi=60)
        eps = 10.0
        counts = np.zeros((4, 4))
        for i in range(5):
            for y in range(4):
                for x in range(4):
                    d = abs(int(video.frames[i + 1, y, x]) - int(video.frames[i, y, x]))
                    counts[y, x] += d > eps
        lo, hi = counts.min(), counts.max()
        if hi > lo:
            expected = np.floor((counts - lo) * 255.0 / (hi - lo) + 0.5).astype(np.uint8)
        else:
            expected = np.full((4, 4), 128, dtype=np.uint8)
        np.testing.assert_array_equal(compute_dmm(video, eps).pixels, expected)

    def test_order_blind_while_dynamic_image_negates(self):
        """Reversing time leaves the motion map bit-identical, whereas the
        approximate dynamic-image weights negate exactly."""
        rng = np.random.default_rng(13)
        for _ in range(10):
            video = random_video(rng, t=int(rng.integers(2, 8)), hi=120)
            rev = DepthVideo(video.frames[::-1].copy())
            np.testing.assert_array_equal(
                compute_dmm(video, 25.0).pixels, compute_dmm(rev, 25.0).pixels
            )
            fwd_u = approx_rank_pool(video, PoolConfig(variant="approx_frames")).u
            rev_u = approx_rank_pool(rev, PoolConfig(variant="approx_frames")).u
            np.testing.assert_array_equal(rev_u, -fwd_u)

    def test_needs_two_frames(self):
        with pytest.raises(ValueError):
            compute_dmm(make_video([np.zeros((2, 2))]), 1.0)
