"""
Sparse conditioning signal, windowing and tracking-loss simulation.

SparseInput layout, 54 channels per frame: for head, left hand, right hand in
that order, 18 channels each:

    [ 0: 6]  global orientation (6D)
    [ 6:12]  orientation velocity (6D of R_prev^T R_cur; identity on frame 0)
    [12:15]  global position (m)
    [15:18]  linear velocity (m/s; zero on frame 0)
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import FPS
from .exceptions import CoverageError, DimensionError, LengthError, MotionSrcError
from .rotations import matrix_to_rot6d, sequence_deltas
from .skeleton import SkeletonTree, forward_kinematics, motion_rotations

logger = logging.getLogger(__name__)

CHANNELS_PER_TRACKER = 18
TRACKER_COUNT = 3
SPARSE_DIM = CHANNELS_PER_TRACKER * TRACKER_COUNT  # 54
MOTION_DIM = 22 * 6  # 132

ROT = slice(0, 6)
ROT_VEL = slice(6, 12)
POS = slice(12, 15)
LIN_VEL = slice(15, 18)

FRACTION_TOL = 1e-9  # 0.29 * 100 is 28.999999999999996


def tracked_joints(tree: SkeletonTree) -> Tuple[int, ...]:
    if len(tree.hands) != 2:
        raise DimensionError(f"Sparse input needs two hand joints, tree has {tree.hands}")
    return (tree.head,) + tuple(tree.hands)


def build_sparse_input(
    tree: SkeletonTree, motion: np.ndarray, root_trans: np.ndarray, fps: float = FPS
) -> np.ndarray:
    """[N, 132] motion + [N, 3] root translation -> [N, 54] sparse input."""
    if fps <= 0:
        raise MotionSrcError(f"fps must be positive, got {fps}")
    if motion.ndim != 2 or root_trans.shape != (motion.shape[0], 3):
        raise DimensionError(f"Motion {motion.shape} / root {root_trans.shape} mismatch")

    fk = forward_kinematics(tree, motion_rotations(tree, motion), root_trans)
    N = motion.shape[0]
    out = np.zeros((N, SPARSE_DIM), dtype=motion.dtype)
    for k, j in enumerate(tracked_joints(tree)):
        base = k * CHANNELS_PER_TRACKER
        R = fk.global_rot[:, j]
        pos = fk.global_pos[:, j]
        out[:, base + ROT.start: base + ROT.stop] = matrix_to_rot6d(R)
        out[:, base + ROT_VEL.start: base + ROT_VEL.stop] = matrix_to_rot6d(sequence_deltas(R))
        out[:, base + POS.start: base + POS.stop] = pos
        vel = np.zeros_like(pos)
        vel[1:] = (pos[1:] - pos[:-1]) * fps
        out[:, base + LIN_VEL.start: base + LIN_VEL.stop] = vel
    return out


def sparse_head_positions(p: np.ndarray) -> np.ndarray:
    """Head global position channels of a sparse input, [..., 3]."""
    return p[..., POS]


def window(sequence: np.ndarray, N: int, stride: Optional[int] = None) -> List[Tuple[int, np.ndarray]]:
    """
    Cut [L, C] into N-frame chunks at 0, stride, 2*stride, ...; the last chunk
    is always the final N frames. Returns (offset, chunk) pairs.
    """
    stride = stride or N
    L = sequence.shape[0]
    if L < N:
        raise LengthError(f"Sequence of {L} frames is shorter than the window N={N}")
    if stride < 1:
        raise LengthError(f"Stride must be >= 1, got {stride}")

    offsets = list(range(0, L - N + 1, stride))
    if offsets[-1] != L - N:
        offsets.append(L - N)
    return [(o, sequence[o:o + N]) for o in offsets]


def stitch(chunks: Sequence[Tuple[int, np.ndarray]], total: int) -> np.ndarray:
    """Reassemble windows; where they overlap the later chunk wins."""
    if not chunks:
        raise CoverageError("Nothing to stitch")
    width = chunks[0][1].shape[1:]
    out = np.zeros((total,) + width, dtype=chunks[0][1].dtype)
    covered = np.zeros(total, dtype=bool)
    for offset, chunk in sorted(chunks, key=lambda c: c[0]):
        end = offset + chunk.shape[0]
        if offset < 0 or end > total:
            raise CoverageError(f"Chunk [{offset}, {end}) falls outside [0, {total})")
        out[offset:end] = chunk
        covered[offset:end] = True
    if not covered.all():
        gap = int(np.flatnonzero(~covered)[0])
        raise CoverageError(f"Frames from {gap} are not covered by any chunk")
    return out


def mask_tracking_loss(
    p: np.ndarray, fraction: float, rng: Union[int, np.random.Generator, None] = None
) -> np.ndarray:
    """Zero floor(fraction*N) distinct whole frames, picked by the seeded generator."""
    if not 0.0 <= fraction <= 1.0:
        raise MotionSrcError(f"Mask fraction must be in [0, 1], got {fraction}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    N = p.shape[0]
    count = int(np.floor(fraction * N + FRACTION_TOL))
    out = p.copy()
    if count:
        frames = rng.choice(N, size=count, replace=False)
        out[frames] = 0
    return out
