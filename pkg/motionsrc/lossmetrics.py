"""
Geometric training losses and the evaluation metrics.

Positions come from forward kinematics of the 6D motion using the ground-truth
root translation. Losses work in meters; metrics report centimeters (position),
cm/s (velocity), degrees (rotation) and 10^2 m/s^3 (jerk).
"""

import json
import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import FPS
from .exceptions import LengthError
from .rotations import geodesic_deg, replace_degenerate_6d, rot6d_to_matrix, rot6d_to_matrix_backward
from .skeleton import (
    SkeletonTree,
    forward_kinematics,
    forward_kinematics_backward,
    motion_positions,
    motion_rotations,
    recover_root_translation,
)

logger = logging.getLogger(__name__)

CONTACT_SPEED = 0.01  # m/s
JITTER_SCALE = 100.0  # reported in 10^2 m/s^3


def _check_aligned(y: np.ndarray, x0_hat: np.ndarray) -> None:
    if y.shape != x0_hat.shape:
        raise LengthError(f"Ground truth {y.shape} and prediction {x0_hat.shape} differ")


# ---------------------------------------------------------------------
#  LOSSES
# ---------------------------------------------------------------------
def loss_pos(tree: SkeletonTree, y: np.ndarray, x0_hat: np.ndarray, root_trans: np.ndarray) -> float:
    """Mean over frames and joints of the squared position error (m^2)."""
    _check_aligned(y, x0_hat)
    d = motion_positions(tree, x0_hat, root_trans) - motion_positions(tree, y, root_trans)
    return float(np.mean(np.sum(d**2, axis=-1)))


def loss_vel(tree: SkeletonTree, y: np.ndarray, x0_hat: np.ndarray, root_trans: np.ndarray) -> float:
    """Squared error of raw frame-to-frame position deltas, over N-1 frames."""
    _check_aligned(y, x0_hat)
    if y.shape[-2] < 2:
        raise LengthError("Velocity loss needs at least 2 frames")
    P = motion_positions(tree, y, root_trans)
    Q = motion_positions(tree, x0_hat, root_trans)
    e = np.diff(Q, axis=-3) - np.diff(P, axis=-3)
    return float(np.mean(np.sum(e**2, axis=-1)))


def foot_contact_mask(
    tree: SkeletonTree,
    y: np.ndarray,
    root_trans: np.ndarray,
    speed_threshold: float = CONTACT_SPEED,
    fps: float = FPS,
) -> np.ndarray:
    """[..., N, len(feet)] booleans; True where the foot joint is slower than the threshold."""
    if y.shape[-2] < 2:
        raise LengthError("Contact detection needs at least 2 frames")
    feet = list(tree.feet)
    P = motion_positions(tree, y, root_trans)[..., feet, :]
    speed = np.linalg.norm(np.diff(P, axis=-3), axis=-1) * fps
    contact = speed < speed_threshold
    return np.concatenate([contact[..., :1, :], contact], axis=-2)


def loss_foot(
    tree: SkeletonTree, y: np.ndarray, x0_hat: np.ndarray, root_trans: np.ndarray, mask: np.ndarray
) -> float:
    _check_aligned(y, x0_hat)
    feet = list(tree.feet)
    d = (motion_positions(tree, x0_hat, root_trans) - motion_positions(tree, y, root_trans))[..., feet, :]
    if mask.shape != d.shape[:-1]:
        raise LengthError(f"Contact mask {mask.shape} doesn't align with feet {d.shape[:-1]}")
    count = int(mask.sum())
    if count == 0:
        return 0.0
    return float(np.sum(np.sum(d**2, axis=-1) * mask) / count)


@dataclass
class LossWeights:
    pos: float = 0.0
    vel: float = 0.0
    foot: float = 0.0

    @property
    def any(self) -> bool:
        return bool(self.pos or self.vel or self.foot)


def geometric_losses(
    tree: SkeletonTree,
    y: np.ndarray,
    x0_hat: np.ndarray,
    root_trans: np.ndarray,
    weights: LossWeights,
    mask: Optional[np.ndarray] = None,
) -> Tuple[Dict[str, float], np.ndarray]:
    """
    Weighted pos/vel/foot terms and their gradient w.r.t. x0_hat.
    Degenerate predicted encodings (a fresh network outputs zeros) decode as
    the identity and get no gradient.
    Returns ({"pos": w*L, ...} for enabled terms, d_x0_hat).
    """
    _check_aligned(y, x0_hat)
    J = tree.joint_count
    r_hat, degenerate = replace_degenerate_6d(x0_hat.reshape(x0_hat.shape[:-1] + (J, 6)))
    if degenerate.any():
        logger.debug("Decoding %d degenerate 6D predictions as identity", int(degenerate.sum()))
    rots = rot6d_to_matrix(r_hat)
    root = np.asarray(root_trans, dtype=np.float64)
    fk = forward_kinematics(tree, rots, root)
    Q = fk.global_pos
    P = motion_positions(tree, y.astype(np.float64), root)
    d_pos = np.zeros_like(Q)
    terms: Dict[str, float] = {}

    if weights.pos:
        e = Q - P
        count = e[..., 0].size
        terms["pos"] = weights.pos * float(np.sum(e**2) / count)
        d_pos += weights.pos * 2.0 * e / count

    if weights.vel:
        if y.shape[-2] < 2:
            raise LengthError("Velocity loss needs at least 2 frames")
        e = np.diff(Q, axis=-3) - np.diff(P, axis=-3)
        count = e[..., 0].size
        terms["vel"] = weights.vel * float(np.sum(e**2) / count)
        g = weights.vel * 2.0 * e / count
        d_pos[..., 1:, :, :] += g
        d_pos[..., :-1, :, :] -= g

    if weights.foot:
        if mask is None:
            mask = foot_contact_mask(tree, y, root)
        feet = list(tree.feet)
        e = (Q - P)[..., feet, :]
        count = int(mask.sum())
        value = 0.0
        if count:
            value = float(np.sum(np.sum(e**2, axis=-1) * mask) / count)
            d_pos[..., feet, :] += weights.foot * 2.0 * e * mask[..., None] / count
        terms["foot"] = weights.foot * value

    if not terms:
        return terms, np.zeros_like(x0_hat)
    d_local, _ = forward_kinematics_backward(tree, rots, fk, d_pos)
    d_r = rot6d_to_matrix_backward(r_hat, d_local)
    # swapped rows are constant in x0_hat
    d_r[degenerate] = 0.0
    return terms, d_r.reshape(x0_hat.shape).astype(x0_hat.dtype)


# ---------------------------------------------------------------------
#  METRICS
# ---------------------------------------------------------------------
@dataclass
class MetricReport:
    mpjre: float = 0.0
    mpjpe: float = 0.0
    mpjve: float = 0.0
    jitter: float = 0.0
    hand_pe: float = 0.0
    upper_pe: float = 0.0
    lower_pe: float = 0.0
    root_pe: float = 0.0
    upper_jitter: float = 0.0
    lower_jitter: float = 0.0
    gt_jitter: float = 0.0

    def to_text(self) -> str:
        return "".join(f"{k}: {v:.6f}\n" for k, v in asdict(self).items())

    def to_record(self, **extra) -> str:
        record = dict(extra)
        record.update(asdict(self))
        return json.dumps(record, sort_keys=False)

    @classmethod
    def mean(cls, reports: Sequence["MetricReport"]) -> "MetricReport":
        if not reports:
            raise LengthError("No reports to average")
        return cls(**{
            f.name: float(np.mean([getattr(r, f.name) for r in reports])) for f in fields(cls)
        })


def _mean_norm(d: np.ndarray, joints=None) -> float:
    if joints is not None:
        d = d[..., list(joints), :]
    if d.shape[-2] == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(d, axis=-1)))


def _jerk(P: np.ndarray, fps: float) -> np.ndarray:
    """Third forward difference along frames, scaled to m/s^3."""
    return (P[3:] - 3.0 * P[2:-1] + 3.0 * P[1:-2] - P[:-3]) * fps**3


def evaluate(
    tree: SkeletonTree,
    gt_motion: np.ndarray,
    gt_root_trans: np.ndarray,
    pred_motion: np.ndarray,
    fps: float = FPS,
    head_trajectory: Optional[np.ndarray] = None,
    pred_root_trans: Optional[np.ndarray] = None,
) -> MetricReport:
    """
    Metrics for one sequence. The prediction's root translation is recovered
    from the ground-truth head trajectory unless pred_root_trans is given.
    """
    if gt_motion.shape != pred_motion.shape:
        raise LengthError(f"Ground truth {gt_motion.shape} and prediction {pred_motion.shape} differ")
    N = gt_motion.shape[0]
    if N < 4:
        raise LengthError(f"Jitter needs at least 4 frames, got {N}")

    gt_motion = gt_motion.astype(np.float64)
    pred_motion = pred_motion.astype(np.float64)
    gt_root = np.asarray(gt_root_trans, dtype=np.float64)
    gt_rots = motion_rotations(tree, gt_motion)
    pred_rots = motion_rotations(tree, pred_motion)
    P = forward_kinematics(tree, gt_rots, gt_root).global_pos

    if pred_root_trans is None:
        head = P[:, tree.head] if head_trajectory is None else np.asarray(head_trajectory, np.float64)
        pred_root = recover_root_translation(tree, pred_rots, head)
    else:
        pred_root = np.asarray(pred_root_trans, dtype=np.float64)
    Q = forward_kinematics(tree, pred_rots, pred_root).global_pos

    err = Q - P
    vel_err = np.diff(Q, axis=0) * fps - np.diff(P, axis=0) * fps
    jerk_pred = _jerk(Q, fps)
    cm = 100.0
    return MetricReport(
        mpjre=float(np.mean(geodesic_deg(pred_rots, gt_rots))),
        mpjpe=_mean_norm(err) * cm,
        mpjve=_mean_norm(vel_err) * cm,
        jitter=_mean_norm(jerk_pred) / JITTER_SCALE,
        hand_pe=_mean_norm(err, tree.hands) * cm,
        upper_pe=_mean_norm(err, tree.upper) * cm,
        lower_pe=_mean_norm(err, tree.lower) * cm,
        root_pe=_mean_norm(err, tree.root) * cm,
        upper_jitter=_mean_norm(jerk_pred, tree.upper) / JITTER_SCALE,
        lower_jitter=_mean_norm(jerk_pred, tree.lower) / JITTER_SCALE,
        gt_jitter=_mean_norm(_jerk(P, fps)) / JITTER_SCALE,
    )
