"""Quaternion algebra for attitude representation.

Quaternions are stored scalar-first as length-4 numpy arrays
``q = [q_s, q_x, q_y, q_z]``.  Arithmetic never normalizes its
operands: the unit-norm property is a physical invariant that callers
monitor (or enforce at construction via :func:`unit`), not something
silently repaired inside products.
"""

from __future__ import annotations

import numpy as np

UNIT_TOL = 1e-9

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat(s: float, v) -> np.ndarray:
    """Assemble a quaternion from scalar part and 3-vector part."""
    v = np.asarray(v, dtype=float)
    return np.concatenate(([float(s)], v))


def pure(v) -> np.ndarray:
    """Embed a 3-vector as a pure quaternion [0; v]."""
    return quat(0.0, v)


def norm(q) -> float:
    """Euclidean norm of the 4-vector (agrees with the quaternion norm)."""
    return float(np.linalg.norm(q))


def conj(q) -> np.ndarray:
    """Quaternion conjugate: flips the sign of the vector part."""
    q = np.asarray(q, dtype=float)
    return np.concatenate((q[:1], -q[1:]))


def unit(q, tol: float = UNIT_TOL) -> np.ndarray:
    """Validate that ``q`` is a unit quaternion and return it as an array.

    Raises
    ------
    ValueError
        If ``| ||q|| - 1 | > tol``.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have shape (4,), got {q.shape}")
    err = abs(np.linalg.norm(q) - 1.0)
    if err > tol:
        raise ValueError(f"quaternion norm deviates from 1 by {err:.3e} (tol {tol:.1e})")
    return q


def hat(w) -> np.ndarray:
    """Skew matrix of a 3-vector: hat(w) @ v == cross(w, v)."""
    wx, wy, wz = np.asarray(w, dtype=float)
    return np.array([
        [0.0, -wz, wy],
        [wz, 0.0, -wx],
        [-wy, wx, 0.0],
    ])


def left_matrix(q) -> np.ndarray:
    """4x4 matrix O_L(q) such that O_L(q) @ p == qprod(q, p)."""
    q = np.asarray(q, dtype=float)
    s, v = q[0], q[1:]
    out = np.empty((4, 4))
    out[0, 0] = s
    out[0, 1:] = -v
    out[1:, 0] = v
    out[1:, 1:] = s * np.eye(3) + hat(v)
    return out


def right_matrix(p) -> np.ndarray:
    """4x4 matrix O_R(p) such that O_R(p) @ q == qprod(q, p)."""
    p = np.asarray(p, dtype=float)
    s, v = p[0], p[1:]
    out = np.empty((4, 4))
    out[0, 0] = s
    out[0, 1:] = -v
    out[1:, 0] = v
    out[1:, 1:] = s * np.eye(3) - hat(v)
    return out


def qprod(q, p) -> np.ndarray:
    """Quaternion product of q and p."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    qs, qv = q[0], q[1:]
    ps, pv = p[0], p[1:]
    return np.concatenate((
        [qs * ps - qv @ pv],
        qs * pv + ps * qv + np.cross(qv, pv),
    ))


def rotm(q) -> np.ndarray:
    """Rotation matrix C(q) mapping body vectors to the inertial frame.

    Requires a unit quaternion; C(q) @ v equals the vector part of
    q * [0; v] * conj(q).
    """
    q = unit(q)
    s, v = q[0], q[1:]
    vh = hat(v)
    return s * s * np.eye(3) + 2.0 * s * vh + np.outer(v, v) + vh @ vh


def rotm_unchecked(q) -> np.ndarray:
    """C(q) without the unit-norm gate (quadratic in q; used by constraints)."""
    q = np.asarray(q, dtype=float)
    s, v = q[0], q[1:]
    vh = hat(v)
    return s * s * np.eye(3) + 2.0 * s * vh + np.outer(v, v) + vh @ vh


def rotate(q, v) -> np.ndarray:
    """Rotate a 3-vector via the quaternion sandwich q * [0; v] * conj(q)."""
    return qprod(qprod(q, pure(v)), conj(q))[1:]


def from_axis_angle(axis, angle: float) -> np.ndarray:
    """Unit quaternion for a rotation of ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle
    return quat(np.cos(half), np.sin(half) * axis / n)


def attitude_error(q, q_d) -> float:
    """Geodesic rotation angle (radians) between two attitudes.

    Uses the absolute inner product so that q and -q (the same physical
    attitude) give zero error.
    """
    q = unit(q)
    q_d = unit(q_d)
    inner = min(1.0, abs(float(q @ q_d)))
    return 2.0 * np.arccos(inner)


def random_unit(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random unit quaternion (normalized 4-d standard Gaussian)."""
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)
