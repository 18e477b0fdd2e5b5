"""Singularity-robust steering baseline for initial-guess trajectories.

A classical cascade: a saturated PD attitude law produces a body torque
command, a regularized pseudo-inverse converts it to gimbal rates, and
an inner servo realizes those rates with the gimbal motors while the
wheel motors hold the wheel momenta at their target.  The pseudo-inverse
regularization grows exponentially as the actuator Jacobian approaches
singularity, so the commanded rates stay finite everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import quat
from .dynamics import CmgSatellite, DEFAULT_ATOL, DEFAULT_METHOD, DEFAULT_RTOL
from .geometry import jacobian_d
from .trajectory import Trajectory, uniform_grid


class GuessDivergenceError(RuntimeError):
    """Attitude error still growing in the second half of the horizon."""


@dataclass(frozen=True)
class SrParams:
    """Gains and limits for the steering-law baseline controller.

    The attitude loop tracks an eigenaxis slew reference with a
    trapezoidal rate profile (``omega_ref``, ``accel_ref``); a bare PD
    pull toward a far-away target would dump the full platform momentum
    into the array and pin it on the singular envelope, where the
    gimbal-only steering law cannot brake.
    """

    k_p: float = 0.2          # attitude proportional gain, 1/s^2
    k_d: float = 0.6          # attitude rate gain, 1/s
    k_delta: float = 10.0     # gimbal-rate servo gain, 1/s
    k_w: float = 1.0          # wheel-momentum hold gain, 1/s
    tau_max: float = 1.2      # torque command saturation, N m
    ddelta_max: float = 1.0   # gimbal rate limit, rad/s
    lam0: float = 0.01        # base pseudo-inverse regularization
    sigma_ref: float | None = None  # singularity-measure scale; default 0.1*|h_swr target|
    omega_ref: float = 0.026  # slew reference cruise rate, rad/s
    accel_ref: float = 5.5e-4  # slew reference acceleration, rad/s^2

    def __post_init__(self):
        for name in ("k_p", "k_d", "k_delta", "k_w", "tau_max", "ddelta_max",
                     "lam0", "omega_ref", "accel_ref"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_ref is not None and self.sigma_ref <= 0.0:
            raise ValueError("sigma_ref must be positive")

    def resolved(self, h_swr_target: float) -> "SrParams":
        if self.sigma_ref is not None:
            return self
        return replace(self, sigma_ref=0.1 * abs(float(h_swr_target)))


_SIGN_WIDTH = 0.01  # error-quaternion scalar scale of the smooth sign switch


def torque_command(J, q, omega, q_d, params: SrParams,
                   sign_override: float | None = None) -> np.ndarray:
    """Saturated PD body-torque command toward the target attitude.

    The error-quaternion scalar sign is folded in so that q and -q
    command the same physical torque.  By default the switch is a steep
    tanh rather than a hard sign: identical outside a ~0.1 deg
    neighborhood of the 180-degree ambiguity, but smooth enough there
    that adaptive integrators do not chatter on the discontinuity.
    Closed-loop runs instead lock the sign branch once at the start
    (``sign_override``), which removes the switching surface entirely;
    for maneuvers that begin exactly at 180 degrees the smooth switch
    alone would stall on the unstable equilibrium.
    """
    q_e = quat.qprod(quat.conj(q_d), q)
    sgn = np.tanh(q_e[0] / _SIGN_WIDTH) if sign_override is None else sign_override
    tau = -params.k_p * (J @ q_e[1:]) * sgn - params.k_d * (J @ omega)
    return np.clip(tau, -params.tau_max, params.tau_max)


def sr_gimbal_rates(d_jac, tau_r, params: SrParams) -> np.ndarray:
    """Regularized least-squares gimbal rates realizing a torque command."""
    d_jac = np.asarray(d_jac, dtype=float)
    sigma_min = np.linalg.svd(d_jac, compute_uv=False)[-1]
    lam = params.lam0 * np.exp(-sigma_min / params.sigma_ref)
    gram = d_jac @ d_jac.T + lam * np.eye(3)
    rates = d_jac.T @ np.linalg.solve(gram, np.asarray(tau_r, dtype=float))
    return np.clip(rates, -params.ddelta_max, params.ddelta_max)


def inner_loop(model: CmgSatellite, x, ddelta_cmd, h_swr_target,
               params: SrParams) -> np.ndarray:
    """Motor torques realizing commanded gimbal rates and wheel-momentum hold.

    The gimbal channel cancels the gyroscopic drift of the gimbal
    momenta and closes a rate servo with bandwidth ``k_delta``.  The
    wheel channel solves the (small) implicit feedforward system so the
    wheel momenta obey ``d(h_swr)/dt = k_w (target - h_swr)`` exactly.
    """
    g = model.params.geometry
    q, w, om, d, hga = model.unpack(x)
    ws = model.workspace(x, np.zeros(model.nu))

    ddelta = ws.f_delta
    drift = ws.p * ((g.jt - g.js) * ws.s - w)
    u_g = g.jg * (params.k_delta * (np.asarray(ddelta_cmd) - ddelta)) - drift

    f_hga = drift + u_g
    c0 = np.linalg.solve(ws.jsta, ws.f_h - ws.da_jac @ ddelta - g.a_g @ f_hga)
    gram = g.jsw[:, None] * (ws.a_s.T @ np.linalg.solve(ws.jsta, ws.a_s))
    rhs = (g.jsw * ((ws.a_s.T @ c0) - ws.p * ddelta)
           + params.k_w * (np.broadcast_to(h_swr_target, (model.m,)) - w))
    u_w = np.linalg.solve(np.eye(model.m) + gram, rhs)
    return np.concatenate([u_g, u_w])


def steering_control(model: CmgSatellite, x, q_d, h_swr_target,
                     params: SrParams,
                     sign_override: float | None = None) -> np.ndarray:
    """Full baseline feedback: PD torque -> SR rates -> inner servo.

    Gimbal motion changes the array's internal momentum, so the torque
    delivered to the body is minus the momentum rate D delta_dot; the
    rate solver is therefore fed -tau_r.
    """
    q, w, om, d, _ = model.unpack(x)
    tau_r = torque_command(model.params.J, q, om, q_d, params, sign_override)
    d_jac = jacobian_d(model.params.geometry, om, d, w)
    ddelta_cmd = sr_gimbal_rates(d_jac, -tau_r, params)
    return inner_loop(model, x, ddelta_cmd, h_swr_target, params)


class SlewReference:
    """Eigenaxis slew from q0 to q_d with a trapezoidal rate profile.

    The rotation angle follows accel / cruise / decel segments sized to
    finish inside ``fit_fraction`` of the horizon when feasible, leaving
    the remainder for terminal regulation at the fixed target.
    """

    def __init__(self, q0, q_d, horizon: float, params: SrParams,
                 fit_fraction: float = 0.92):
        self.q0 = np.asarray(q0, dtype=float)
        q_err = quat.qprod(quat.conj(self.q0), np.asarray(q_d, dtype=float))
        if q_err[0] < 0.0:
            q_err = -q_err  # short-way branch of the double cover
        self.angle = 2.0 * np.arccos(min(1.0, q_err[0]))
        vn = np.linalg.norm(q_err[1:])
        self.axis = q_err[1:] / vn if vn > 1e-12 else np.array([0.0, 0.0, 1.0])

        a = params.accel_ref
        w = params.omega_ref
        t_avail = fit_fraction * horizon
        phi = self.angle
        if phi > 1e-12:
            # shrink cruise rate onto a triangular profile for small angles
            w = min(w, np.sqrt(a * phi))
            if phi / w + w / a > t_avail:
                # fastest trapezoid that still fits, if one exists
                disc = t_avail * t_avail / 4.0 - phi / a
                if disc > 0.0:
                    w = a * (t_avail / 2.0 - np.sqrt(disc))
                else:
                    w = a * t_avail / 2.0
        self.rate = w
        self.accel = a
        self.t_ramp = w / a
        self.t_cruise = max(phi / w - self.t_ramp, 0.0) if phi > 1e-12 else 0.0
        self.t_end = 2.0 * self.t_ramp + self.t_cruise

    def angle_at(self, t: float) -> float:
        a, w = self.accel, self.rate
        t1, t2 = self.t_ramp, self.t_ramp + self.t_cruise
        if t <= 0.0:
            return 0.0
        if t < t1:
            return 0.5 * a * t * t
        if t < t2:
            return 0.5 * a * t1 * t1 + w * (t - t1)
        if t < self.t_end:
            dt_b = self.t_end - t
            return self.angle - 0.5 * a * dt_b * dt_b
        return self.angle

    def attitude(self, t: float) -> np.ndarray:
        half = 0.5 * self.angle_at(t)
        step = np.concatenate(([np.cos(half)], np.sin(half) * self.axis))
        return quat.qprod(self.q0, step)


def closed_loop_curve(model: CmgSatellite, x0, q_d, h_swr_target, horizon: float,
                      params: SrParams, dt: float = 0.05,
                      rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                      method: str = DEFAULT_METHOD) -> Trajectory:
    """Simulate the steering law and sample the run on the uniform grid."""
    params = params.resolved(np.median(np.broadcast_to(h_swr_target, (model.m,))))
    grid = uniform_grid(horizon, dt)
    x0 = np.asarray(x0, dtype=float)
    reference = SlewReference(x0[model.sl_q], q_d, horizon, params)

    # lock the error-sign branch from the initial state for the whole run
    q_e0 = quat.qprod(quat.conj(q_d), x0[model.sl_q])
    sign_lock = 1.0 if q_e0[0] >= 0.0 else -1.0

    def law(t, x):
        return steering_control(model, x, reference.attitude(t), h_swr_target,
                                params, sign_lock)

    sol = model.integrate(x0, law, (grid[0], grid[-1]), t_eval=grid,
                          rtol=rtol, atol=atol, method=method)
    states = sol.y.T.copy()
    controls = np.empty((len(grid), model.nu))
    xdot = np.empty_like(states)
    for k in range(len(grid)):
        controls[k] = law(grid[k], states[k])
        xdot[k] = model.f(states[k], controls[k])
    return Trajectory(t=grid, x=states, u=controls, xdot=xdot)


def check_convergence(model: CmgSatellite, traj: Trajectory, q_d,
                      tol_deg: float = 0.01) -> None:
    """Raise if the attitude error is still growing in the second half."""
    n = len(traj.t)

    def err(k):
        q = traj.x[k, model.sl_q]
        return np.rad2deg(quat.attitude_error(q / np.linalg.norm(q), q_d))

    e_mid, e_end = err(n // 2), err(n - 1)
    if e_end > e_mid + tol_deg:
        raise GuessDivergenceError(
            f"attitude error grew from {e_mid:.3f} deg at T/2 to {e_end:.3f} deg at T")
