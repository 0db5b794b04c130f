import numpy as np
import pytest

from motionsrc.exceptions import CoverageError, LengthError, MotionSrcError
from motionsrc.features import (
    LIN_VEL,
    POS,
    ROT,
    ROT_VEL,
    SPARSE_DIM,
    build_sparse_input,
    mask_tracking_loss,
    sparse_head_positions,
    stitch,
    window,
)
from motionsrc.rotations import IDENTITY_6D
from motionsrc.skeleton import forward_kinematics, motion_rotations

from .conftest import random_motion


def _tracker(p, k, part):
    return p[:, 18 * k + part.start: 18 * k + part.stop]


class TestSparseInput:
    def test_width(self, tree, rng):
        motion, root = random_motion(tree, rng, 7)
        assert build_sparse_input(tree, motion, root).shape == (7, SPARSE_DIM)

    def test_static_pose(self, tree, rng):
        motion, _ = random_motion(tree, rng, 1)
        motion = np.repeat(motion, 5, axis=0)
        root = np.tile([0.0, 0.9, 0.0], (5, 1))
        p = build_sparse_input(tree, motion, root)
        for k in range(3):
            np.testing.assert_array_equal(_tracker(p, k, LIN_VEL), 0.0)
            np.testing.assert_allclose(_tracker(p, k, ROT_VEL), np.tile(IDENTITY_6D, (5, 1)), atol=1e-12)

    def test_constant_head_velocity(self, tree):
        motion = np.tile(IDENTITY_6D, (6, tree.joint_count))
        root = np.zeros((6, 3))
        root[:, 0] = 0.6 * np.arange(6) / 60.0
        p = build_sparse_input(tree, motion, root, fps=60)
        head_vel = _tracker(p, 0, LIN_VEL)
        np.testing.assert_array_equal(head_vel[0], 0.0)
        np.testing.assert_allclose(head_vel[1:], np.tile([0.6, 0.0, 0.0], (5, 1)), atol=1e-9)

    def test_head_position_channels(self, tree, rng):
        motion, root = random_motion(tree, rng, 4)
        p = build_sparse_input(tree, motion, root)
        fk = forward_kinematics(tree, motion_rotations(tree, motion), root)
        np.testing.assert_allclose(sparse_head_positions(p), fk.global_pos[:, tree.head])
        np.testing.assert_allclose(_tracker(p, 2, POS), fk.global_pos[:, tree.hands[1]])

    def test_translation_moves_positions_only(self, tree, rng):
        motion, root = random_motion(tree, rng, 5)
        a = build_sparse_input(tree, motion, root)
        b = build_sparse_input(tree, motion, root + [3.0, 0.0, -2.0])
        for k in range(3):
            np.testing.assert_array_equal(_tracker(a, k, ROT), _tracker(b, k, ROT))
            np.testing.assert_allclose(_tracker(b, k, POS) - _tracker(a, k, POS), np.tile([3.0, 0, -2.0], (5, 1)), atol=1e-9)
            np.testing.assert_allclose(_tracker(a, k, LIN_VEL), _tracker(b, k, LIN_VEL), atol=1e-6)

    def test_bad_fps(self, tree, rng):
        motion, root = random_motion(tree, rng, 3)
        with pytest.raises(MotionSrcError):
            build_sparse_input(tree, motion, root, fps=0)


class TestWindow:
    def test_exact_length(self):
        chunks = window(np.zeros((196, 2)), 196)
        assert [o for o, _ in chunks] == [0]

    def test_tail_rule(self):
        chunks = window(np.zeros((200, 2)), 196, 196)
        assert [o for o, _ in chunks] == [0, 4]
        assert all(c.shape == (196, 2) for _, c in chunks)

    def test_even_split(self):
        assert [o for o, _ in window(np.zeros((588, 1)), 196, 196)] == [0, 196, 392]

    def test_small_stride(self):
        assert [o for o, _ in window(np.zeros((10, 1)), 4, 3)] == [0, 3, 6]

    def test_too_short(self):
        with pytest.raises(LengthError):
            window(np.zeros((10, 1)), 16)


class TestStitch:
    def test_single_chunk(self, rng):
        x = rng.normal(size=(8, 3))
        np.testing.assert_array_equal(stitch([(0, x)], 8), x)

    def test_later_chunk_wins(self):
        a = np.full((6, 1), 1.0)
        b = np.full((6, 1), 2.0)
        out = stitch([(0, a), (2, b)], 8)
        np.testing.assert_array_equal(out[:2, 0], 1.0)
        np.testing.assert_array_equal(out[2:, 0], 2.0)

    def test_partition_round_trip(self, rng):
        x = rng.normal(size=(50, 4))
        np.testing.assert_array_equal(stitch(window(x, 16, 16), 50), x)

    def test_gap(self):
        with pytest.raises(CoverageError):
            stitch([(0, np.zeros((3, 1))), (5, np.zeros((3, 1)))], 8)

    def test_out_of_range(self):
        with pytest.raises(CoverageError):
            stitch([(0, np.zeros((9, 1)))], 8)


class TestTrackingLoss:
    def test_zero_fraction(self, rng):
        p = rng.normal(size=(196, 54))
        np.testing.assert_array_equal(mask_tracking_loss(p, 0.0, rng=1), p)

    def test_full_fraction(self, rng):
        assert not mask_tracking_loss(rng.normal(size=(20, 54)), 1.0, rng=1).any()

    def test_frame_count(self, rng):
        out = mask_tracking_loss(rng.normal(size=(196, 54)) + 5.0, 0.1, rng=3)
        assert int((~out.any(axis=1)).sum()) == 19

    @pytest.mark.parametrize("fraction,frames,expected", [(0.29, 100, 29), (0.1, 196, 19), (0.57, 100, 57)])
    def test_count_survives_float_rounding(self, rng, fraction, frames, expected):
        out = mask_tracking_loss(rng.normal(size=(frames, 54)) + 5.0, fraction, rng=2)
        assert int((~out.any(axis=1)).sum()) == expected

    def test_seeded(self, rng):
        p = rng.normal(size=(50, 54))
        np.testing.assert_array_equal(mask_tracking_loss(p, 0.3, rng=9), mask_tracking_loss(p, 0.3, rng=9))

    def test_input_untouched(self, rng):
        p = rng.normal(size=(10, 54))
        before = p.copy()
        mask_tracking_loss(p, 0.5, rng=0)
        np.testing.assert_array_equal(p, before)

    def test_bad_fraction(self):
        with pytest.raises(MotionSrcError):
            mask_tracking_loss(np.zeros((4, 54)), 1.5)
