"""Action-proposal tests: skeleton boxes, cube merging, margins, crops."""

import numpy as np
import pytest

from mvdi.depthio import DepthVideo
from mvdi.proposal import (
    BBox,
    ProposalCube,
    boxes_from_skeleton,
    crop_video,
    extend_cube,
    merge_boxes,
    propose_and_crop,
    scaled_margin,
)


def random_boxes(rng, n, frame_w=64, frame_h=48, frames=10):
    boxes = []
    for _ in range(n):
        w = int(rng.integers(1, frame_w // 2))
        h = int(rng.integers(1, frame_h // 2))
        boxes.append(
            BBox(
                frame_index=int(rng.integers(0, frames)),
                x=int(rng.integers(0, frame_w - w)),
                y=int(rng.integers(0, frame_h - h)),
                w=w,
                h=h,
            )
        )
    return boxes


class TestBoxesFromSkeleton:
    def test_two_joints(self):
        boxes = boxes_from_skeleton({0: [(5, 5), (10, 20)]})
        assert boxes == [BBox(frame_index=0, x=5, y=5, w=5, h=15)]

    def test_single_joint_is_unit_box(self):
        boxes = boxes_from_skeleton({3: [(7, 9)]})
        assert boxes == [BBox(frame_index=3, x=7, y=9, w=1, h=1)]

    def test_empty_frames_skipped(self):
        boxes = boxes_from_skeleton({0: [], 1: [(2, 2)]})
        assert [b.frame_index for b in boxes] == [1]

    def test_matches_minmax_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pts = [
                (int(rng.integers(0, 100)), int(rng.integers(0, 100)))
                for _ in range(10)
            ]
            (box,) = boxes_from_skeleton({0: pts})
            xs = sorted(p[0] for p in pts)
            ys = sorted(p[1] for p in pts)
            assert box.x == xs[0] and box.y == ys[0]
            assert box.w == max(xs[-1] - xs[0], 1)
            assert box.h == max(ys[-1] - ys[0], 1)


class TestMergeBoxes:
    def test_single_box_identity(self):
        cube = merge_boxes([BBox(3, 10, 10, 20, 20)])
        assert cube == ProposalCube(x0=10, y0=10, x1=30, y1=30, t0=3, t1=3)

    def test_two_boxes(self):
        cube = merge_boxes([BBox(1, 10, 10, 20, 20), BBox(2, 30, 40, 20, 20)])
        assert cube == ProposalCube(x0=10, y0=10, x1=50, y1=60, t0=1, t1=2)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(1)
        boxes = random_boxes(rng, 50)
        cube = merge_boxes(boxes)
        assert cube.x0 == min(b.x for b in boxes)
        assert cube.x1 == max(b.x + b.w for b in boxes)
        assert cube.y0 == min(b.y for b in boxes)
        assert cube.y1 == max(b.y + b.h for b in boxes)
        assert cube.t0 == min(b.frame_index for b in boxes)
        assert cube.t1 == max(b.frame_index for b in boxes)

    def test_coverage_and_minimality(self):
        """The merged cube contains every box; shrinking any single bound
        by one pixel/frame excludes at least one box."""
        rng = np.random.default_rng(2)
        for _ in range(30):
            boxes = random_boxes(rng, int(rng.integers(1, 20)))
            cube = merge_boxes(boxes)
            for b in boxes:
                assert cube.x0 <= b.x and b.x + b.w <= cube.x1
                assert cube.y0 <= b.y and b.y + b.h <= cube.y1
                assert cube.t0 <= b.frame_index <= cube.t1
            assert any(b.x == cube.x0 for b in boxes)
            assert any(b.x + b.w == cube.x1 for b in boxes)
            assert any(b.y == cube.y0 for b in boxes)
            assert any(b.y + b.h == cube.y1 for b in boxes)
            assert any(b.frame_index == cube.t0 for b in boxes)
            assert any(b.frame_index == cube.t1 for b in boxes)

    def test_order_invariance(self):
        rng = np.random.default_rng(3)
        boxes = random_boxes(rng, 12)
        shuffled = list(boxes)
        rng.shuffle(shuffled)
        assert merge_boxes(boxes) == merge_boxes(shuffled)

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            merge_boxes([])


class TestExtendCube:
    def test_thirty_pixel_extension(self):
        """x in [40,80) extended by 30 in a 320-wide frame -> [10,110)."""
        cube = ProposalCube(x0=40, y0=50, x1=80, y1=90, t0=0, t1=5)
        out = extend_cube(cube, 30, frame_w=320, frame_h=240)
        assert (out.x0, out.x1) == (10, 110)
        assert (out.y0, out.y1) == (20, 120)
        assert (out.t0, out.t1) == (0, 5)

    def test_clipped_at_frame_bounds(self):
        cube = ProposalCube(x0=10, y0=10, x1=300, y1=230, t0=0, t1=0)
        out = extend_cube(cube, 30, frame_w=320, frame_h=240)
        assert (out.x0, out.x1) == (0, 320)
        assert (out.y0, out.y1) == (0, 240)

    def test_zero_margin_identity(self):
        cube = ProposalCube(x0=4, y0=5, x1=9, y1=11, t0=1, t1=2)
        assert extend_cube(cube, 0, 64, 64) == cube

    def test_monotone(self):
        """Extension is outward-only: output always contains the input."""
        rng = np.random.default_rng(4)
        for _ in range(30):
            cube = merge_boxes(random_boxes(rng, 5))
            margin = int(rng.integers(0, 40))
            out = extend_cube(cube, margin, 64, 48)
            assert out.x0 <= cube.x0 and out.x1 >= min(cube.x1, 64)
            assert out.y0 <= cube.y0 and out.y1 >= min(cube.y1, 48)

    def test_scaled_margin(self):
        assert scaled_margin(30, 320) == 30
        assert scaled_margin(30, 32) == 3
        assert scaled_margin(30, 160) == 15


class TestCropVideo:
    def test_full_frame_identity(self):
        rng = np.random.default_rng(5)
        frames = rng.integers(0, 500, size=(4, 6, 8)).astype(np.uint16)
        video = DepthVideo(frames)
        cube = ProposalCube(0, 0, 8, 6, 0, 3)
        assert crop_video(video, cube) == video

    def test_minimal_crop(self):
        rng = np.random.default_rng(6)
        frames = rng.integers(0, 500, size=(4, 6, 8)).astype(np.uint16)
        out = crop_video(DepthVideo(frames), ProposalCube(2, 3, 3, 4, 1, 1))
        assert out.frames.shape == (1, 1, 1)
        assert out.frames[0, 0, 0] == frames[1, 3, 2]

    def test_matches_indexing_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            frames = rng.integers(0, 500, size=(6, 10, 12)).astype(np.uint16)
            x0 = int(rng.integers(0, 11))
            x1 = int(rng.integers(x0 + 1, 13))
            y0 = int(rng.integers(0, 9))
            y1 = int(rng.integers(y0 + 1, 11))
            t0 = int(rng.integers(0, 5))
            t1 = int(rng.integers(t0, 6))
            cube = ProposalCube(x0, y0, x1, y1, t0, t1)
            out = crop_video(DepthVideo(frames), cube)
            for ti, t in enumerate(range(t0, t1 + 1)):
                for yi, y in enumerate(range(y0, y1)):
                    for xi, x in enumerate(range(x0, x1)):
                        assert out.frames[ti, yi, xi] == frames[t, y, x]

    def test_empty_intersection_rejected(self):
        video = DepthVideo(np.zeros((2, 4, 4), dtype=np.uint16))
        with pytest.raises(ValueError):
            crop_video(video, ProposalCube(0, 0, 4, 4, 5, 9))


class TestProposeAndCrop:
    def test_spans_whole_video_in_time(self):
        """Frames without boxes are still part of the cropped video."""
        rng = np.random.default_rng(8)
        frames = rng.integers(0, 500, size=(8, 16, 16)).astype(np.uint16)
        video = DepthVideo(frames)
        boxes = [BBox(2, 4, 4, 3, 3), BBox(5, 8, 6, 2, 4)]
        cropped, cube = propose_and_crop(video, boxes, margin=1)
        assert cropped.num_frames == 8
        assert (cube.t0, cube.t1) == (0, 7)
        assert cube.x0 == 3 and cube.x1 == 11
        assert cube.y0 == 3 and cube.y1 == 11

    def test_deterministic_and_order_invariant(self):
        rng = np.random.default_rng(9)
        frames = rng.integers(0, 500, size=(10, 20, 20)).astype(np.uint16)
        video = DepthVideo(frames)
        boxes = random_boxes(rng, 15, frame_w=20, frame_h=20, frames=10)
        a, _ = propose_and_crop(video, boxes, margin=2)
        shuffled = list(boxes)
        rng.shuffle(shuffled)
        b, _ = propose_and_crop(video, shuffled, margin=2)
        assert a == b
