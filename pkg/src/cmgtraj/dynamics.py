"""Momentum-conserving state dynamics for a CMG-driven satellite.

The state is the (3m+7)-vector ``x = [q; h_swr; omega; delta; h_ga]``
(attitude quaternion, relative wheel momenta, body rate, gimbal angles,
absolute gimbal momenta) and the control is ``u = [u_g; u_w]`` (gimbal
and wheel motor torques).  The vector field redistributes angular
momentum internally, so the unit-quaternion and inertial-momentum
constraints are conserved by construction; integration drift in those
quantities is a correctness signal and is never repaired silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import quat
from .geometry import ArrayGeometry, SatelliteParams, frame_matrices, jacobian_d

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-10
DEFAULT_METHOD = "DOP853"


class DegenerateStateError(RuntimeError):
    """Raised when the constraint Jacobian loses rank at a state."""


def _cross(a, b) -> np.ndarray:
    # np.cross carries ~15x avoidable overhead for plain 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


@dataclass(frozen=True)
class Workspace:
    """Configuration-dependent quantities shared by f and its Jacobian."""

    a_s: np.ndarray
    a_t: np.ndarray
    p: np.ndarray       # A_t^T omega
    s: np.ndarray       # A_s^T omega
    jst: np.ndarray
    jsta: np.ndarray
    h_bar: np.ndarray
    h_swa: np.ndarray
    d_jac: np.ndarray   # D
    da_jac: np.ndarray  # D_a
    f_delta: np.ndarray
    f_hga: np.ndarray
    f_h: np.ndarray
    f_omega: np.ndarray
    f_hswr: np.ndarray
    f_q: np.ndarray


class CmgSatellite:
    """Dynamics, constraints, and linearization for one satellite model."""

    def __init__(self, params: SatelliteParams):
        self.params = params
        g = params.geometry
        m = g.m
        self.m = m
        self.nx = 3 * m + 7
        self.nu = 2 * m
        self.sl_q = slice(0, 4)
        self.sl_hswr = slice(4, 4 + m)
        self.sl_omega = slice(4 + m, 7 + m)
        self.sl_delta = slice(7 + m, 7 + 2 * m)
        self.sl_hga = slice(7 + 2 * m, 7 + 3 * m)
        # constants pulled out of the hot path
        self._a_g = g.a_g
        self._jg = g.jg
        self._jg_inv = 1.0 / g.jg
        self._jsw = g.jsw
        self._jsg = g.jsg
        self._jt = g.jt
        self._js = g.js
        self._J = params.J

    # ------------------------------------------------------------------
    # state packing

    def pack(self, q, h_swr, omega, delta, h_ga) -> np.ndarray:
        x = np.empty(self.nx)
        x[self.sl_q] = q
        x[self.sl_hswr] = h_swr
        x[self.sl_omega] = omega
        x[self.sl_delta] = delta
        x[self.sl_hga] = h_ga
        return x

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        return (x[self.sl_q], x[self.sl_hswr], x[self.sl_omega],
                x[self.sl_delta], x[self.sl_hga])

    def equilibrium(self, q, delta, h_swr) -> np.ndarray:
        """Rest state (omega = 0, h_ga = 0) at the given configuration."""
        m = self.m
        return self.pack(q, np.broadcast_to(h_swr, (m,)), np.zeros(3),
                         delta, np.zeros(m))

    # ------------------------------------------------------------------
    # vector field

    def workspace(self, x, u, tau_e=None) -> Workspace:
        """Evaluate all dynamics blocks in dependency order."""
        g = self.params.geometry
        q, w, om, d, hga = self.unpack(x)
        u = np.asarray(u, dtype=float)
        ug, uw = u[:self.m], u[self.m:]

        c, sn = np.cos(d), np.sin(d)
        a_s = g.a_s0 * c - g.a_t0 * sn
        a_t = g.a_t0 * c + g.a_s0 * sn
        p = a_t.T @ om
        s = a_s.T @ om
        jst = self._J + (a_s * self._js) @ a_s.T + (a_t * self._jt) @ a_t.T
        jsta = self._J + (a_s * self._jsg) @ a_s.T + (a_t * self._jt) @ a_t.T
        h_bar = jst @ om + a_s @ w + self._a_g @ hga
        h_swa = w + self._jsw * s
        jdiff = self._jt - self._js
        d_jac = a_s * (p * jdiff) + a_t * (s * jdiff) - a_t * w
        jdiff_a = self._jt - self._jsg
        da_jac = a_s * (p * jdiff_a) + a_t * (s * jdiff_a) - a_t * h_swa

        f_delta = self._jg_inv * hga - self._a_g.T @ om
        f_hga = p * (jdiff * s - w) + ug
        f_h = _cross(h_bar, om)
        if tau_e is not None:
            f_h = f_h + tau_e
        f_omega = np.linalg.solve(
            jsta, f_h - da_jac @ f_delta - self._a_g @ f_hga - a_s @ uw)
        f_hswr = self._jsw * (p * f_delta - a_s.T @ f_omega) + uw
        qs, qv = q[0], q[1:]
        f_q = 0.5 * np.concatenate(([-qv @ om], qs * om + _cross(qv, om)))

        return Workspace(a_s=a_s, a_t=a_t, p=p, s=s, jst=jst, jsta=jsta,
                         h_bar=h_bar, h_swa=h_swa, d_jac=d_jac, da_jac=da_jac,
                         f_delta=f_delta, f_hga=f_hga, f_h=f_h,
                         f_omega=f_omega, f_hswr=f_hswr, f_q=f_q)

    def f(self, x, u, tau_e=None) -> np.ndarray:
        """State derivative f(x, u) (+ external body torque if given)."""
        ws = self.workspace(x, u, tau_e)
        out = np.empty(self.nx)
        out[self.sl_q] = ws.f_q
        out[self.sl_hswr] = ws.f_hswr
        out[self.sl_omega] = ws.f_omega
        out[self.sl_delta] = ws.f_delta
        out[self.sl_hga] = ws.f_hga
        return out

    def h_bar(self, x) -> np.ndarray:
        q, w, om, d, hga = self.unpack(x)
        a_s, a_t = frame_matrices(self.params.geometry, d)
        jst = self._J + (a_s * self._js) @ a_s.T + (a_t * self._jt) @ a_t.T
        return jst @ om + a_s @ w + self._a_g @ hga

    # ------------------------------------------------------------------
    # constraints and their Jacobian

    def constraints(self, x, h0) -> tuple[float, np.ndarray]:
        """Residuals of the unit-norm and momentum-conservation constraints."""
        q = np.asarray(x, dtype=float)[self.sl_q]
        c_mat = quat.rotm_unchecked(q)
        return (float(np.linalg.norm(q)) - 1.0,
                c_mat @ self.h_bar(x) - np.asarray(h0, dtype=float))

    def constraint_jacobian(self, x) -> np.ndarray:
        """4 x (3m+7) constraint Jacobian Z(x).

        Row 1 is the gradient of ||q||; rows 2-4 are the gradient of the
        conserved inertial momentum re-expressed in the body frame
        (premultiplied by C(q)^T), which gives the compact closed form
        ``[2 [h_bar, -hat(h_bar)] O_L(q*), A_s, J_st, D, A_g]``.
        """
        q, w, om, d, hga = self.unpack(x)
        ws = self.workspace(x, np.zeros(self.nu))
        z = np.zeros((4, self.nx))
        z[0, self.sl_q] = q / np.linalg.norm(q)
        blk = np.empty((3, 4))
        blk[:, 0] = ws.h_bar
        blk[:, 1:] = -quat.hat(ws.h_bar)
        z[1:, self.sl_q] = 2.0 * blk @ quat.left_matrix(quat.conj(q))
        z[1:, self.sl_hswr] = ws.a_s
        z[1:, self.sl_omega] = ws.jst
        z[1:, self.sl_delta] = ws.d_jac
        z[1:, self.sl_hga] = self._a_g
        return z

    def tangent_basis(self, x, rank_tol: float = 1e-8) -> np.ndarray:
        """Orthonormal rows spanning the tangent space of the constraint manifold.

        Computed from the SVD of Z(x); the sign of each row is fixed so
        its first significantly nonzero entry is positive, which makes
        lifted cost matrices reproducible run to run.
        """
        z = self.constraint_jacobian(x)
        _, sv, vt = np.linalg.svd(z, full_matrices=True)
        if sv[-1] <= rank_tol * sv[0]:
            raise DegenerateStateError(
                f"constraint Jacobian is rank deficient (sv ratio {sv[-1] / sv[0]:.2e})")
        basis = vt[4:]
        for row in basis:
            big = np.abs(row) > 1e-12 * np.abs(row).max()
            lead = row[np.argmax(big)]
            if lead < 0.0:
                row *= -1.0
        return basis

    # ------------------------------------------------------------------
    # linearization

    def linearize(self, x, u, tau_e=None, method: str = "analytic"):
        """Jacobians A = df/dx and B = df/du at (x, u)."""
        if method == "fd":
            return self._linearize_fd(x, u, tau_e)
        if method != "analytic":
            raise ValueError(f"unknown linearize method {method!r}")
        g = self.params.geometry
        m = self.m
        q, w, om, d, hga = self.unpack(x)
        u = np.asarray(u, dtype=float)
        ug, uw = u[:m], u[m:]
        ws = self.workspace(x, u, tau_e)
        a_s, a_t, p, s = ws.a_s, ws.a_t, ws.p, ws.s
        fd, fw = ws.f_delta, ws.f_omega
        om_hat = quat.hat(om)
        jdiff = self._jt - self._js
        r = jdiff * s - w

        A = np.zeros((self.nx, self.nx))
        B = np.zeros((self.nx, self.nu))
        sq, sw, so, sd, sg = (self.sl_q, self.sl_hswr, self.sl_omega,
                              self.sl_delta, self.sl_hga)

        # gimbal rates: f_delta = h_ga / jg - A_g^T omega
        A[sd, sg] = np.diag(self._jg_inv)
        A[sd, so] = -self._a_g.T

        # gimbal momenta: f_hga = p * (jdiff * s - w) + u_g
        A[sg, sw] = -np.diag(p)
        dfg_dom = r[:, None] * a_t.T + (p * jdiff)[:, None] * a_s.T
        A[sg, so] = dfg_dom
        A[sg, sd] = np.diag(s * r - jdiff * p * p)
        B[sg, :m] = np.eye(m)

        # body momentum rate: f_h = h_bar x omega  (h_bar gradient blocks)
        dfh_dw = -om_hat @ a_s
        dfh_dom = quat.hat(ws.h_bar) - om_hat @ ws.jst
        dfh_dd = -om_hat @ ws.d_jac
        dfh_dg = -om_hat @ self._a_g

        # m_tilde = f_h - D_a f_delta - A_g f_hga - A_s u_w
        c_a = (self._jt - self._jsg) * fd
        dmt_dw = dfh_dw + a_t * fd + self._a_g * p
        dmt_dg = dfh_dg - ws.da_jac * self._jg_inv
        da_om = ((a_s * c_a) @ a_t.T + (a_t * c_a) @ a_s.T
                 - (a_t * (self._jsw * fd)) @ a_s.T)
        dmt_dom = dfh_dom + ws.da_jac @ self._a_g.T - da_om - self._a_g @ dfg_dom
        dmt_dd = (dfh_dd
                  - (a_s * (2.0 * s * c_a - ws.h_swa * fd)
                     + a_t * (-2.0 * p * c_a + self._jsw * p * fd))
                  - self._a_g * (s * r - jdiff * p * p)
                  + a_t * uw)

        jsta = ws.jsta
        dfw_dw = np.linalg.solve(jsta, dmt_dw)
        dfw_dom = np.linalg.solve(jsta, dmt_dom)
        dfw_dg = np.linalg.solve(jsta, dmt_dg)
        jdiff_a = self._jt - self._jsg
        djsta_fw = (a_s * (jdiff_a * (a_t.T @ fw))
                    + a_t * (jdiff_a * (a_s.T @ fw)))
        dfw_dd = np.linalg.solve(jsta, dmt_dd - djsta_fw)
        A[so, sw] = dfw_dw
        A[so, so] = dfw_dom
        A[so, sd] = dfw_dd
        A[so, sg] = dfw_dg
        sol_as = np.linalg.solve(jsta, a_s)
        sol_ag = np.linalg.solve(jsta, self._a_g)
        B[so, :m] = -sol_ag
        B[so, m:] = -sol_as

        # wheel momenta: f_hswr = jsw * (p * f_delta - A_s^T f_omega) + u_w
        jsw_col = self._jsw[:, None]
        A[sw, sw] = jsw_col * (-a_s.T @ dfw_dw)
        A[sw, so] = jsw_col * (fd[:, None] * a_t.T - p[:, None] * self._a_g.T
                               - a_s.T @ dfw_dom)
        A[sw, sg] = jsw_col * (np.diag(p * self._jg_inv) - a_s.T @ dfw_dg)
        A[sw, sd] = jsw_col * (np.diag(fd * s + a_t.T @ fw) - a_s.T @ dfw_dd)
        B[sw, :m] = jsw_col * (a_s.T @ sol_ag)
        B[sw, m:] = np.eye(m) + jsw_col * (a_s.T @ sol_as)

        # quaternion kinematics: f_q = O_R(omega_tilde) q / 2
        A[sq, sq] = 0.5 * quat.right_matrix(quat.pure(om))
        A[sq, so] = 0.5 * quat.left_matrix(q)[:, 1:]

        return A, B

    def _linearize_fd(self, x, u, tau_e=None, step: float = 1e-6):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        A = np.empty((self.nx, self.nx))
        for i in range(self.nx):
            dx = np.zeros(self.nx)
            dx[i] = step
            A[:, i] = (self.f(x + dx, u, tau_e) - self.f(x - dx, u, tau_e)) / (2 * step)
        B = np.empty((self.nx, self.nu))
        for i in range(self.nu):
            du = np.zeros(self.nu)
            du[i] = step
            B[:, i] = (self.f(x, u + du, tau_e) - self.f(x, u - du, tau_e)) / (2 * step)
        return A, B

    def reduce(self, A, B, basis) -> tuple[np.ndarray, np.ndarray]:
        """Restrict an ambient linearization to the tangent space."""
        return basis @ A @ basis.T, basis @ B

    # ------------------------------------------------------------------
    # integration

    def integrate(self, x0, control, t_span, t_eval=None, tau_e=None,
                  rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                  method: str = "RK45", dense_output: bool = False):
        """Integrate the dynamics with ``u = control(t, x)``.

        Returns the scipy solution object; raises RuntimeError if the
        integrator fails to cover the requested span.
        """
        def rhs(t, x):
            return self.f(x, control(t, x), tau_e)

        sol = solve_ivp(rhs, t_span, np.asarray(x0, dtype=float),
                        method=method, t_eval=t_eval, rtol=rtol, atol=atol,
                        dense_output=dense_output)
        if not sol.success:
            raise RuntimeError(f"integration failed: {sol.message}")
        return sol


def find_zero_momentum_config(params: SatelliteParams, h_swr_target: float,
                              seed: int = 0, smin_floor: float = 0.1,
                              residual_tol: float = 1e-10,
                              max_restarts: int = 100) -> np.ndarray:
    """Find gimbal angles with zero net wheel momentum, away from singularity.

    Solves ``A_s(delta) (h_swr_target 1) = 0`` by damped Newton steps on
    the minimum-norm correction, restarting from seeded random angles
    until the residual bound holds and the smallest singular value of
    ``A_t(delta)`` stays above ``smin_floor``.
    """
    g = params.geometry
    if g.m < 4:
        raise ValueError("zero-momentum configurations require at least 4 CMGs")
    h_vec = np.full(g.m, float(h_swr_target))
    rng = np.random.default_rng(seed)
    for _ in range(max_restarts):
        delta = rng.uniform(0.0, 2.0 * np.pi, g.m)
        for _ in range(60):
            a_s, a_t = frame_matrices(g, delta)
            res = a_s @ h_vec
            if np.linalg.norm(res) <= residual_tol:
                break
            jac = -a_t * h_vec
            step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
            if np.linalg.norm(step) > 1.0:
                step *= 1.0 / np.linalg.norm(step)
            delta = delta + step
        a_s, a_t = frame_matrices(g, delta)
        if (np.linalg.norm(a_s @ h_vec) <= residual_tol
                and np.linalg.svd(a_t, compute_uv=False)[-1] >= smin_floor):
            return np.mod(delta, 2.0 * np.pi)
    raise RuntimeError(
        f"no non-singular zero-momentum configuration found in {max_restarts} restarts")
