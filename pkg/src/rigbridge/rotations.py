"""Rotation encodings and small SO(3) helpers.

Conventions used across the package:

* axis-angle: 3-vector whose norm is the angle in radians
* 6D: first two columns of the rotation matrix, flattened column-major,
  i.e. ``[R00, R10, R20, R01, R11, R21]``; decoded by Gram-Schmidt
* matrices are world-from-local, applied to column vectors
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues formula, batched over leading dimensions."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    # Guard the zero-angle case; sin(x)/x and (1-cos x)/x^2 limits.
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    k = aa / safe
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zeros = np.zeros_like(kx)
    K = np.stack(
        [
            np.stack([zeros, -kz, ky], axis=-1),
            np.stack([kz, zeros, -kx], axis=-1),
            np.stack([-ky, kx, zeros], axis=-1),
        ],
        axis=-2,
    )
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + s * K + (1.0 - c) * (K @ K)
    if np.any(small):
        # First-order expansion keeps tiny rotations exact enough and smooth.
        aa_x = _skew(aa)
        R = np.where(small[..., None], eye + aa_x, R)
    return R


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zeros = np.zeros_like(x)
    return np.stack(
        [
            np.stack([zeros, -z, y], axis=-1),
            np.stack([z, zeros, -x], axis=-1),
            np.stack([-y, x, zeros], axis=-1),
        ],
        axis=-2,
    )


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues, batched; stable near 0 and pi."""
    R = np.asarray(R, dtype=np.float64)
    trace = np.clip(np.trace(R, axis1=-2, axis2=-1), -1.0, 3.0)
    angle = np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))
    axis = np.stack(
        [
            R[..., 2, 1] - R[..., 1, 2],
            R[..., 0, 2] - R[..., 2, 0],
            R[..., 1, 0] - R[..., 0, 1],
        ],
        axis=-1,
    )
    sin = np.linalg.norm(axis, axis=-1, keepdims=True) / 2.0
    generic = axis / np.where(sin < _EPS, 1.0, 2.0 * sin)

    # Near pi the off-diagonal difference vanishes; recover the axis from
    # the dominant column of R + I instead.
    near_pi = angle[..., None] > np.pi - 1e-4
    M = R + np.eye(3)
    col_norms = np.linalg.norm(M, axis=-2)
    best = np.argmax(col_norms, axis=-1)
    pi_axis = np.take_along_axis(M, best[..., None, None], axis=-1)[..., 0]
    pi_axis = pi_axis / np.maximum(np.linalg.norm(pi_axis, axis=-1, keepdims=True), _EPS)
    axis_unit = np.where(near_pi, pi_axis, generic)
    return axis_unit * angle[..., None]


def matrix_to_rot6d(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_to_matrix(r6: np.ndarray) -> np.ndarray:
    r6 = np.asarray(r6, dtype=np.float64)
    a = r6[..., :3]
    b = r6[..., 3:]
    b1 = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), _EPS)
    b2 = b - np.sum(b1 * b, axis=-1, keepdims=True) * b1
    b2 = b2 / np.maximum(np.linalg.norm(b2, axis=-1, keepdims=True), _EPS)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def shortest_arc_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation with the smallest angle mapping direction ``a`` onto ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / max(np.linalg.norm(a), _EPS)
    b = b / max(np.linalg.norm(b), _EPS)
    w = np.cross(a, b)
    c = float(np.dot(a, b))
    if c < -1.0 + 1e-9:
        # Antiparallel: rotate by pi about any axis orthogonal to a.
        helper = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, helper)
        axis /= np.linalg.norm(axis)
        return axis_angle_to_matrix(axis * np.pi)
    W = _skew(w)
    return np.eye(3) + W + W @ W / (1.0 + c)


def geodesic_angle(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    """Angle in radians of the relative rotation R1^T R2, batched."""
    R1 = np.asarray(R1, dtype=np.float64)
    R2 = np.asarray(R2, dtype=np.float64)
    rel = np.swapaxes(R1, -1, -2) @ R2
    trace = np.trace(rel, axis1=-2, axis2=-1)
    return np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))


def rotation_defect(R: np.ndarray) -> float:
    """Frobenius distance of R^T R from the identity (orthonormality check)."""
    R = np.asarray(R, dtype=np.float64)
    RtR = np.swapaxes(R, -1, -2) @ R
    return float(np.max(np.linalg.norm(RtR - np.eye(3), axis=(-2, -1))))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
