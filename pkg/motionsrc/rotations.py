"""
6D rotation encoding and the rotation-matrix helpers built on it.

A 6D encoding is the first two columns of a rotation matrix, column-major:
[a1x, a1y, a1z, a2x, a2y, a2z]. Every function broadcasts over leading axes,
so a [frames, joints, 6] motion decodes in one call.
"""

import numpy as np

from .exceptions import DegeneracyError, NormalizationError

DEGENERACY_TOL = 1e-8
AXIS_TOL = 1e-6

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt decode: [..., 6] -> [..., 3, 3] with columns b1, b2, b3."""
    r = np.asarray(r)
    if r.shape[-1] != 6:
        raise DegeneracyError(f"6D encoding needs a trailing axis of 6, got {r.shape}")
    a1 = r[..., 0:3]
    a2 = r[..., 3:6]

    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < DEGENERACY_TOL):
        raise DegeneracyError("6D encoding has a zero first column")
    b1 = a1 / n1
    u = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(n2 < DEGENERACY_TOL):
        raise DegeneracyError("6D encoding has parallel or zero columns")
    b2 = u / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def replace_degenerate_6d(r: np.ndarray, tol: float = DEGENERACY_TOL):
    """
    Copy of r with every encoding rot6d_to_matrix would reject swapped for the
    identity, plus the boolean mask of swapped rows [...]. For network outputs,
    which start at zero; data files still go through the strict decode.
    """
    r = np.array(r, dtype=np.float64)
    a1 = r[..., 0:3]
    a2 = r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    b1 = a1 / np.where(n1 < tol, 1.0, n1)
    u = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u, axis=-1)
    bad = (n1[..., 0] < tol) | (n2 < tol)
    r[bad] = IDENTITY_6D
    return r, bad


def rot6d_to_matrix_backward(r: np.ndarray, d_R: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the 6D input, given dL/dR [..., 3, 3]."""
    a1 = r[..., 0:3]
    a2 = r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    b1 = a1 / n1
    s = np.sum(b1 * a2, axis=-1, keepdims=True)
    u = a2 - s * b1
    n2 = np.linalg.norm(u, axis=-1, keepdims=True)
    b2 = u / n2

    d_b1 = d_R[..., :, 0].copy()
    d_b2 = d_R[..., :, 1].copy()
    d_b3 = d_R[..., :, 2]

    # b3 = b1 x b2
    d_b1 += np.cross(b2, d_b3)
    d_b2 += np.cross(d_b3, b1)

    # b2 = u / |u|
    d_u = (d_b2 - b2 * np.sum(b2 * d_b2, axis=-1, keepdims=True)) / n2

    # u = a2 - (b1 . a2) b1
    du_dot_b1 = np.sum(d_u * b1, axis=-1, keepdims=True)
    d_a2 = d_u - du_dot_b1 * b1
    d_b1 += -du_dot_b1 * a2 - s * d_u

    # b1 = a1 / |a1|
    d_a1 = (d_b1 - b1 * np.sum(b1 * d_b1, axis=-1, keepdims=True)) / n1
    return np.concatenate([d_a1, d_a2], axis=-1)


def matrix_to_rot6d(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def axisangle_to_matrix(axis, angle) -> np.ndarray:
    """Rodrigues. axis [..., 3] must be unit length; angle in radians, broadcast."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    norms = np.linalg.norm(axis, axis=-1)
    if np.any(np.abs(norms - 1.0) > AXIS_TOL):
        raise NormalizationError(f"Rotation axis must be unit length (got norm {norms})")

    shape = np.broadcast_shapes(axis.shape[:-1], angle.shape)
    axis = np.broadcast_to(axis, shape + (3,))
    angle = np.broadcast_to(angle, shape)

    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros(shape)
    K = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    eye = np.broadcast_to(np.eye(3), shape + (3, 3))
    return eye + s * K + (1.0 - c) * (K @ K)


def rot_x(angle) -> np.ndarray:
    return axisangle_to_matrix([1.0, 0.0, 0.0], angle)


def rot_y(angle) -> np.ndarray:
    return axisangle_to_matrix([0.0, 1.0, 0.0], angle)


def rot_z(angle) -> np.ndarray:
    return axisangle_to_matrix([0.0, 0.0, 1.0], angle)


def geodesic_deg(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Angle of Ra^T Rb in degrees, in [0, 180]."""
    rel_trace = np.einsum("...ji,...ji->...", Ra, Rb)
    cos = np.clip((rel_trace - 1.0) / 2.0, -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def frame_delta(R_prev: np.ndarray, R_cur: np.ndarray) -> np.ndarray:
    """R_prev^T R_cur"""
    return np.swapaxes(R_prev, -1, -2) @ R_cur


def sequence_deltas(R: np.ndarray) -> np.ndarray:
    """Per-frame deltas along axis 0; frame 0 gets the identity."""
    out = np.empty_like(R)
    if len(R) == 0:
        return out
    out[0] = np.eye(3)
    out[1:] = frame_delta(R[:-1], R[1:])
    return out


def random_rotations(rng: np.random.Generator, count: int, max_angle: float = np.pi) -> np.ndarray:
    """Random axis (uniform on the sphere), angle uniform in [0, max_angle)."""
    axes = rng.standard_normal((count, 3))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    angles = rng.uniform(0.0, max_angle, size=count)
    return axisangle_to_matrix(axes, angles)
