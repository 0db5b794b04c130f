"""
The 22-joint body tree, forward kinematics and head-anchored root recovery.

Joint order follows the SMPL body convention:

    0 pelvis        6 spine2        12 neck           18 left_elbow
    1 left_hip      7 left_ankle    13 left_collar    19 right_elbow
    2 right_hip     8 right_ankle   14 right_collar   20 left_wrist
    3 spine1        9 spine3        15 head           21 right_wrist
    4 left_knee    10 left_foot     16 left_shoulder
    5 right_knee   11 right_foot    17 right_shoulder

Coordinates are meters, y up, z forward, +x to the body's left.
"""

import logging
import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np

from .exceptions import DimensionError, TopologyError
from .rotations import rot6d_to_matrix

logger = logging.getLogger(__name__)

JOINT_COUNT = 22
ROOT_PARENT = -1

SMPL_JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)
SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)

HEAD = 15
HANDS = (20, 21)
FEET = (10, 11)
LOWER_BODY = (1, 2, 4, 5, 7, 8, 10, 11)

# Rest-pose bone vectors from each joint's parent (T-pose, ~1.7 m tall).
DEFAULT_OFFSETS = (
    (0.000, 0.000, 0.000),    # pelvis
    (0.070, -0.090, 0.000),   # left_hip
    (-0.070, -0.090, 0.000),  # right_hip
    (0.000, 0.110, 0.000),    # spine1
    (0.000, -0.380, 0.000),   # left_knee
    (0.000, -0.380, 0.000),   # right_knee
    (0.000, 0.130, 0.000),    # spine2
    (0.000, -0.400, 0.000),   # left_ankle
    (0.000, -0.400, 0.000),   # right_ankle
    (0.000, 0.050, 0.000),    # spine3
    (0.000, -0.060, 0.120),   # left_foot
    (0.000, -0.060, 0.120),   # right_foot
    (0.000, 0.210, 0.000),    # neck
    (0.070, 0.120, 0.000),    # left_collar
    (-0.070, 0.120, 0.000),   # right_collar
    (0.000, 0.120, 0.020),    # head
    (0.120, 0.020, 0.000),    # left_shoulder
    (-0.120, 0.020, 0.000),   # right_shoulder
    (0.260, 0.000, 0.000),    # left_elbow
    (-0.260, 0.000, 0.000),   # right_elbow
    (0.250, 0.000, 0.000),    # left_wrist
    (-0.250, 0.000, 0.000),   # right_wrist
)


@dataclass(frozen=True, eq=False)
class SkeletonTree:
    names: Tuple[str, ...]
    parents: Tuple[int, ...]
    offsets: np.ndarray
    head: int = HEAD
    hands: Tuple[int, ...] = HANDS
    feet: Tuple[int, ...] = FEET
    lower: Tuple[int, ...] = LOWER_BODY

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", offsets)
        offsets.setflags(write=False)
        J = len(self.parents)
        if len(self.names) != J or offsets.shape != (J, 3):
            raise TopologyError(
                f"{len(self.names)} names, {J} parents and offsets {offsets.shape} disagree"
            )
        roots = [j for j, p in enumerate(self.parents) if p == ROOT_PARENT]
        if roots != [0]:
            raise TopologyError(f"Exactly one root at index 0 required, found {roots}")
        for j, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < j:
                raise TopologyError(f"Joint {j} has parent {p}; parents must precede children")
        if not np.all(np.isfinite(offsets)):
            raise TopologyError("Non-finite bone offset")
        for group in (self.hands, self.feet, self.lower, (self.head,)):
            for j in group:
                if not 0 <= j < J:
                    raise TopologyError(f"Group joint {j} outside [0, {J})")

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def root(self) -> Tuple[int, ...]:
        return (0,)

    @property
    def upper(self) -> Tuple[int, ...]:
        lower = set(self.lower)
        return tuple(j for j in range(1, self.joint_count) if j not in lower)


def default_test_skeleton() -> SkeletonTree:
    return SkeletonTree(
        names=SMPL_JOINT_NAMES,
        parents=SMPL_PARENTS,
        offsets=np.array(DEFAULT_OFFSETS),
    )


# ---------------------------------------------------------------------
#  SKELETON FILES
# ---------------------------------------------------------------------
def load_skeleton(path: str) -> SkeletonTree:
    """
    One joint per line: `name parent ox oy oz` (parent -1 for the root).
    Groups: `@head 15`, `@hands 20 21`, `@feet 10 11`, `@lower 1 2 ...`.
    """
    names, parents, offsets = [], [], []
    groups = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0].startswith("@"):
                groups[parts[0][1:]] = tuple(int(p) for p in parts[1:])
                continue
            if len(parts) != 5:
                raise TopologyError(f"{path}:{lineno}: expected 'name parent ox oy oz'")
            names.append(parts[0])
            parents.append(int(parts[1]))
            offsets.append([float(v) for v in parts[2:]])

    kwargs = {}
    if "head" in groups:
        kwargs["head"] = groups["head"][0]
    for key in ("hands", "feet", "lower"):
        if key in groups:
            kwargs[key] = groups[key]
    tree = SkeletonTree(tuple(names), tuple(parents), np.array(offsets), **kwargs)
    logger.info("Loaded %d-joint skeleton from %s", tree.joint_count, path)
    return tree


def save_skeleton(tree: SkeletonTree, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# name parent ox oy oz (meters)\n")
        for name, parent, off in zip(tree.names, tree.parents, tree.offsets):
            f.write(f"{name} {parent} {off[0]:.17g} {off[1]:.17g} {off[2]:.17g}\n")
        f.write(f"@head {tree.head}\n")
        f.write("@hands " + " ".join(map(str, tree.hands)) + "\n")
        f.write("@feet " + " ".join(map(str, tree.feet)) + "\n")
        f.write("@lower " + " ".join(map(str, tree.lower)) + "\n")


# ---------------------------------------------------------------------
#  FORWARD KINEMATICS
# ---------------------------------------------------------------------
class FkResult(NamedTuple):
    global_rot: np.ndarray  # [..., J, 3, 3]
    global_pos: np.ndarray  # [..., J, 3]


def forward_kinematics(tree: SkeletonTree, local_rots: np.ndarray, root_trans: np.ndarray) -> FkResult:
    """
    local_rots [..., J, 3, 3], root_trans [..., 3]. Leading axes are frames
    (and optionally batch).
    """
    J = tree.joint_count
    if local_rots.shape[-3:] != (J, 3, 3):
        raise DimensionError(f"Expected [..., {J}, 3, 3] rotations, got {local_rots.shape}")
    if root_trans.shape != local_rots.shape[:-3] + (3,):
        raise DimensionError(
            f"Root translation {root_trans.shape} doesn't match rotations {local_rots.shape}"
        )

    dtype = np.result_type(local_rots, root_trans)
    g_rot = np.empty(local_rots.shape, dtype=dtype)
    g_pos = np.empty(local_rots.shape[:-2] + (3,), dtype=dtype)
    offsets = tree.offsets.astype(dtype)

    g_rot[..., 0, :, :] = local_rots[..., 0, :, :]
    g_pos[..., 0, :] = root_trans
    for j in range(1, J):
        p = tree.parents[j]
        g_rot[..., j, :, :] = g_rot[..., p, :, :] @ local_rots[..., j, :, :]
        g_pos[..., j, :] = g_pos[..., p, :] + g_rot[..., p, :, :] @ offsets[j]
    return FkResult(g_rot, g_pos)


def forward_kinematics_backward(
    tree: SkeletonTree, local_rots: np.ndarray, fk: FkResult, d_pos: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Reverse pass of forward_kinematics for a loss on global positions only.
    Returns (d_local_rots, d_root_trans).
    """
    J = tree.joint_count
    d_pos = d_pos.copy()
    d_grot = np.zeros_like(fk.global_rot)
    d_local = np.zeros_like(local_rots)
    offsets = tree.offsets.astype(d_pos.dtype)

    for j in range(J - 1, 0, -1):
        p = tree.parents[j]
        d_pos[..., p, :] += d_pos[..., j, :]
        d_grot[..., p, :, :] += d_pos[..., j, :, None] * offsets[j][None, :]
        d_grot[..., p, :, :] += d_grot[..., j, :, :] @ np.swapaxes(local_rots[..., j, :, :], -1, -2)
        d_local[..., j, :, :] = np.swapaxes(fk.global_rot[..., p, :, :], -1, -2) @ d_grot[..., j, :, :]
    d_local[..., 0, :, :] = d_grot[..., 0, :, :]
    return d_local, d_pos[..., 0, :]


def recover_root_translation(
    tree: SkeletonTree, local_rots: np.ndarray, head_global_pos: np.ndarray
) -> np.ndarray:
    """Root translation that puts the FK head exactly on head_global_pos."""
    zero = np.zeros(local_rots.shape[:-3] + (3,), dtype=local_rots.dtype)
    h0 = forward_kinematics(tree, local_rots, zero).global_pos[..., tree.head, :]
    return head_global_pos - h0


def motion_positions(tree: SkeletonTree, motion6d: np.ndarray, root_trans: np.ndarray) -> np.ndarray:
    """[..., J*6] local 6D rotations -> [..., J, 3] global joint positions."""
    rots = motion_rotations(tree, motion6d)
    return forward_kinematics(tree, rots, root_trans).global_pos


def motion_rotations(tree: SkeletonTree, motion6d: np.ndarray) -> np.ndarray:
    J = tree.joint_count
    if motion6d.shape[-1] != J * 6:
        raise DimensionError(f"Motion needs {J * 6} channels, got {motion6d.shape[-1]}")
    return rot6d_to_matrix(motion6d.reshape(motion6d.shape[:-1] + (J, 6)))


def chain_skeleton(offsets: Sequence[Sequence[float]]) -> SkeletonTree:
    """A simple serial chain, handy for small kinematic checks."""
    n = len(offsets)
    return SkeletonTree(
        names=tuple(f"j{i}" for i in range(n)),
        parents=tuple([ROOT_PARENT] + list(range(n - 1))),
        offsets=np.array(offsets, dtype=np.float64),
        head=n - 1,
        hands=(),
        feet=(),
        lower=(),
    )
