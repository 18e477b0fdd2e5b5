"""CMG array geometry, configuration-dependent inertias, and actuator Jacobians.

Each CMG carries a right-handed axis triad (gimbal a_g, spin a_s,
transverse a_t = a_s x a_g).  The gimbal axes are fixed in the body
frame; spin/transverse axes rotate with the gimbal angles delta.  All
per-CMG inertias are kept as length-m vectors (the diagonals of the
paper-style m x m matrices).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRIAD_TOL = 1e-12


@dataclass(frozen=True)
class ArrayGeometry:
    """Geometry and inertia data for an array of m single-gimbal CMGs.

    Attributes
    ----------
    a_g, a_s0, a_t0 : (3, m) arrays
        Gimbal axes and the default (delta = 0) spin/transverse axes,
        unit columns in the body frame with a_t0 = a_s0 x a_g.
    r : (m, 3) array
        CMG mounting positions relative to the spacecraft center of
        mass, meters.
    mass : (m,) array
        CMG masses, kg.
    jg, jsw, jsg, jt : (m,) arrays
        Per-CMG inertias (kg m^2) about the gimbal axis, the wheel and
        gimbal-structure contributions about the spin axis, and the
        transverse axis.  The full spin-axis inertia is js = jsw + jsg.
    """

    a_g: np.ndarray
    a_s0: np.ndarray
    a_t0: np.ndarray
    r: np.ndarray
    mass: np.ndarray
    jg: np.ndarray
    jsw: np.ndarray
    jsg: np.ndarray
    jt: np.ndarray

    def __post_init__(self):
        m = self.m
        for name in ("a_g", "a_s0", "a_t0"):
            mat = getattr(self, name)
            if mat.shape != (3, m):
                raise ValueError(f"{name} must be 3x{m}, got {mat.shape}")
            if np.max(np.abs(np.linalg.norm(mat, axis=0) - 1.0)) > TRIAD_TOL:
                raise ValueError(f"{name} columns must be unit vectors")
        cross = np.cross(self.a_s0.T, self.a_g.T).T
        if np.max(np.abs(cross - self.a_t0)) > TRIAD_TOL:
            raise ValueError("a_t0 must equal a_s0 x a_g column-wise")
        for name in ("jg", "jsw", "jsg", "jt"):
            vec = getattr(self, name)
            if vec.shape != (m,) or np.any(vec <= 0.0):
                raise ValueError(f"{name} must be {m} strictly positive inertias")
        if self.mass.shape != (m,) or np.any(self.mass < 0.0):
            raise ValueError("mass must be m nonnegative values")
        if self.r.shape != (m, 3):
            raise ValueError(f"r must be {m}x3, got {self.r.shape}")

    @property
    def m(self) -> int:
        return self.a_g.shape[1]

    @property
    def js(self) -> np.ndarray:
        """Total spin-axis inertia per CMG: wheel plus gimbal structure."""
        return self.jsw + self.jsg


@dataclass(frozen=True)
class SatelliteParams:
    """Body inertia plus CMG array; J is the combined constant inertia.

    J folds the CMG masses into the body inertia by the parallel-axis
    theorem; it is computed once at construction.
    """

    j_body: np.ndarray
    geometry: ArrayGeometry
    J: np.ndarray = field(init=False)

    def __post_init__(self):
        jb = np.asarray(self.j_body, dtype=float)
        if jb.shape != (3, 3):
            raise ValueError("j_body must be a 3x3 matrix")
        J = jb.copy()
        for mi, ri in zip(self.geometry.mass, self.geometry.r):
            J += mi * (np.eye(3) * (ri @ ri) - np.outer(ri, ri))
        object.__setattr__(self, "J", J)
        if np.max(np.abs(J - J.T)) > 1e-12 or np.any(np.linalg.eigvalsh(J) <= 0.0):
            raise ValueError("combined inertia must be symmetric positive definite")

    @property
    def m(self) -> int:
        return self.geometry.m


def _default_inertias(m: int, jg=0.115, jsw=0.075, jsg=0.015, jt=0.001):
    ones = np.ones(m)
    return dict(jg=jg * ones, jsw=jsw * ones, jsg=jsg * ones, jt=jt * ones)


def rooftop(m: int, beta: float, **inertia_overrides) -> ArrayGeometry:
    """Rooftop array: two groups of m/2 CMGs on roof faces tilted +-beta.

    The roof ridge runs along the body y-axis.  Gimbal axes are the
    face normals [+-sin(beta); 0; cos(beta)] (first half of the CMGs on
    the +x face, second half on the -x face) and every default spin
    axis points along the ridge, a_s0 = y.  At delta = 0 all transverse
    axes lie in the x-z plane, so the gimbal-only torque space is rank
    deficient with null direction y.
    """
    if m < 4 or m % 2 != 0:
        raise ValueError("rooftop array requires an even CMG count m >= 4")
    sb, cb = np.sin(beta), np.cos(beta)
    a_g = np.zeros((3, m))
    a_s0 = np.zeros((3, m))
    half = m // 2
    a_g[:, :half] = np.array([[sb], [0.0], [cb]])
    a_g[:, half:] = np.array([[-sb], [0.0], [cb]])
    a_s0[1, :] = 1.0
    a_t0 = np.cross(a_s0.T, a_g.T).T
    return ArrayGeometry(
        a_g=a_g, a_s0=a_s0, a_t0=a_t0,
        r=np.zeros((m, 3)), mass=np.zeros(m),
        **{**_default_inertias(m), **inertia_overrides},
    )


def pyramid(beta: float, **inertia_overrides) -> ArrayGeometry:
    """Four-CMG pyramid: gimbal axes normal to faces inclined by beta.

    Faces are spaced 90 degrees in azimuth.  Default spin axes point up
    each face toward the apex, which places every default transverse
    axis in the body x-y plane: at delta = 0 the gimbal-only torque
    space cannot produce torque about z.
    """
    if not 0.0 < beta < np.pi / 2:
        raise ValueError("pyramid inclination must lie in (0, pi/2)")
    m = 4
    sb, cb = np.sin(beta), np.cos(beta)
    phi = np.arange(m) * (np.pi / 2.0)
    a_g = np.vstack((sb * np.cos(phi), sb * np.sin(phi), cb * np.ones(m)))
    a_s0 = np.vstack((-cb * np.cos(phi), -cb * np.sin(phi), sb * np.ones(m)))
    a_t0 = np.cross(a_s0.T, a_g.T).T
    return ArrayGeometry(
        a_g=a_g, a_s0=a_s0, a_t0=a_t0,
        r=np.zeros((m, 3)), mass=np.zeros(m),
        **{**_default_inertias(m), **inertia_overrides},
    )


def frame_matrices(geom: ArrayGeometry, delta) -> tuple[np.ndarray, np.ndarray]:
    """Spin and transverse axis matrices A_s(delta), A_t(delta)."""
    delta = np.asarray(delta, dtype=float)
    c, s = np.cos(delta), np.sin(delta)
    a_s = geom.a_s0 * c - geom.a_t0 * s
    a_t = geom.a_t0 * c + geom.a_s0 * s
    return a_s, a_t


def inertia_jstg(params: SatelliteParams, delta) -> np.ndarray:
    """Total moment of inertia including gimbal-axis terms."""
    g = params.geometry
    a_s, a_t = frame_matrices(g, delta)
    return (params.J + (g.a_g * g.jg) @ g.a_g.T
            + (a_s * g.js) @ a_s.T + (a_t * g.jt) @ a_t.T)


def inertia_jst(params: SatelliteParams, delta) -> np.ndarray:
    """Moment of inertia with spin/transverse CMG terms (no gimbal term)."""
    g = params.geometry
    a_s, a_t = frame_matrices(g, delta)
    return params.J + (a_s * g.js) @ a_s.T + (a_t * g.jt) @ a_t.T


def inertia_jsta(params: SatelliteParams, delta) -> np.ndarray:
    """Apparent inertia with the wheel contribution removed from the spin axis."""
    g = params.geometry
    a_s, a_t = frame_matrices(g, delta)
    return params.J + (a_s * g.jsg) @ a_s.T + (a_t * g.jt) @ a_t.T


def hbar(params: SatelliteParams, omega, delta, h_swr, h_ga) -> np.ndarray:
    """Body-frame total angular momentum."""
    g = params.geometry
    a_s, _ = frame_matrices(g, delta)
    return inertia_jst(params, delta) @ omega + a_s @ h_swr + g.a_g @ h_ga


def wbar(params: SatelliteParams, h, delta, h_swr, h_ga) -> np.ndarray:
    """Body rate recovered from total momentum (inverse of :func:`hbar`)."""
    g = params.geometry
    a_s, _ = frame_matrices(g, delta)
    rhs = np.asarray(h, dtype=float) - a_s @ h_swr - g.a_g @ h_ga
    return np.linalg.solve(inertia_jst(params, delta), rhs)


def jacobian_d(geom: ArrayGeometry, omega, delta, h_swr) -> np.ndarray:
    """3 x m actuator Jacobian D = d(hbar)/d(delta)."""
    a_s, a_t = frame_matrices(geom, delta)
    p = a_t.T @ omega
    s = a_s.T @ omega
    jdiff = geom.jt - geom.js
    return (a_s * (p * jdiff) + a_t * (s * jdiff)) - a_t * h_swr


def jacobian_da(geom: ArrayGeometry, omega, delta, h_swa) -> np.ndarray:
    """Apparent actuator Jacobian D_a (uses absolute wheel momenta h_swa)."""
    a_s, a_t = frame_matrices(geom, delta)
    p = a_t.T @ omega
    s = a_s.T @ omega
    jdiff = geom.jt - geom.jsg
    return (a_s * (p * jdiff) + a_t * (s * jdiff)) - a_t * h_swa


def h_sw_absolute(geom: ArrayGeometry, omega, delta, h_swr) -> np.ndarray:
    """Absolute wheel spin momenta h_swa = h_swr + Jsw * A_s(delta)^T omega."""
    a_s, _ = frame_matrices(geom, delta)
    return np.asarray(h_swr, dtype=float) + geom.jsw * (a_s.T @ omega)


def singularity_measure(geom: ArrayGeometry, delta) -> float:
    """Smallest singular value of A_t(delta).

    Zero exactly when the gimbal-only torque space is rank deficient
    (a singular array configuration).
    """
    _, a_t = frame_matrices(geom, delta)
    return float(np.linalg.svd(a_t, compute_uv=False)[-1])
