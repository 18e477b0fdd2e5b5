"""Projection-operator Newton trajectory optimizer.

Iterates on feasible trajectories: a time-varying LQR built along the
current iterate defines a projection that maps perturbed curves back
onto the dynamics; an LQ subproblem along the linearized dynamics
yields a descent direction; an Armijo backtracking search on the
projected cost picks the step.  Every iterate is itself a feasible
trajectory, so feasibility is never deferred to convergence.

Two quadratic models drive the descent.  The first-order model reuses
the projection regulator's Riccati sweep (cheap and uniformly well
conditioned).  The second-order model uses the objective's own Hessian
plus optional adjoint-weighted dynamics curvature; along strongly
unstable arcs its Riccati can escape in finite time, which is detected
and reported as a fallback to the first-order model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import CmgSatellite
from .regulator import CostFunctional, FeedbackGain, assemble_qc, assemble_r
from .trajectory import Trajectory, simpson_weights


class ProjectionBlowupError(RuntimeError):
    """Projected state left the configured bound (regulator lost the curve)."""


class RiccatiBlowupError(RuntimeError):
    """Backward Riccati sweep diverged along the trajectory."""


@dataclass(frozen=True)
class SolverConfig:
    """Iteration limits, tolerances, and descent-order policy."""

    max_iters: int = 100
    theta_tol: float = 1e-6
    armijo_alpha: float = 0.4
    contraction: float = 0.5
    min_step: float = 1e-8
    descent_order: str = "auto"          # "first" | "second" | "auto"
    second_order_threshold: float = 1e-3  # |theta| below which "auto" adds curvature
    curvature_stride: int = 8             # grid stride for FD curvature samples
    state_bound: float = 1e6
    rtol: float = 1e-9
    atol: float = 1e-10
    sweep_rtol: float = 1e-8
    sweep_atol: float = 1e-9
    method: str = "DOP853"

    def __post_init__(self):
        if self.theta_tol <= 0 or self.min_step <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.contraction < 1 or not 0 < self.armijo_alpha < 1:
            raise ValueError("line-search constants must lie in (0, 1)")
        if self.descent_order not in ("first", "second", "auto"):
            raise ValueError("descent_order must be first, second, or auto")


@dataclass
class IterationRecord:
    cost: float
    theta: float
    step: float
    order: str
    fallback: bool = False


@dataclass
class SolverReport:
    trajectory: Trajectory
    iterations: list[IterationRecord] = field(default_factory=list)
    termination: str = "unknown"
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def costs(self) -> np.ndarray:
        return np.array([rec.cost for rec in self.iterations])


class _GridData:
    """Per-sample linearizations along a uniform trajectory grid."""

    def __init__(self, model: CmgSatellite, traj: Trajectory):
        n = len(traj.t)
        self.t0 = float(traj.t[0])
        self.dt = float(traj.t[1] - traj.t[0])
        self.n = n
        self.A = np.empty((n, model.nx, model.nx))
        self.B = np.empty((n, model.nx, model.nu))
        for k in range(n):
            self.A[k], self.B[k] = model.linearize(traj.x[k], traj.u[k])

    def ab(self, tq: float) -> tuple[np.ndarray, np.ndarray]:
        s = (tq - self.t0) / self.dt
        i = int(s)
        i = min(max(i, 0), self.n - 2)
        a = min(max(s - i, 0.0), 1.0)
        return ((1.0 - a) * self.A[i] + a * self.A[i + 1],
                (1.0 - a) * self.B[i] + a * self.B[i + 1])


@dataclass
class RegulatorSweep:
    """Projection-regulator gains and Riccati samples along a trajectory."""

    gains: np.ndarray       # (N, nu, nx)
    riccati: np.ndarray     # (N, nx, nx)
    r_inv: np.ndarray       # (nu, nu) inverse regulator control weight


def _lerp_rows(values: np.ndarray, t0: float, dt: float, tq: float) -> np.ndarray:
    s = (tq - t0) / dt
    i = int(s)
    i = min(max(i, 0), values.shape[0] - 2)
    a = min(max(s - i, 0.0), 1.0)
    return (1.0 - a) * values[i] + a * values[i + 1]


def trajectory_cost(traj: Trajectory, cost: CostFunctional) -> float:
    """Composite-Simpson value of the optimization objective on the grid."""
    e = traj.x - cost.x_d
    stage = 0.5 * np.einsum("ij,jk,ik->i", e, cost.Q, e)
    stage += 0.5 * np.einsum("ij,jk,ik->i", traj.u, cost.R, traj.u)
    w = simpson_weights(len(traj.t), float(traj.t[1] - traj.t[0]))
    return float(w @ stage) + cost.terminal(traj.x[-1])


def project(model: CmgSatellite, curve: Trajectory, gain: np.ndarray, x0,
            config: SolverConfig = SolverConfig()) -> Trajectory:
    """Map a (possibly infeasible) curve onto the dynamics.

    Integrates ``xdot = f(x, u_bar + K(t)(x_bar - x))`` from ``x0``; the
    result is a trajectory by construction and a fixed point of this map
    when the input curve is already feasible.
    """
    x0 = np.asarray(x0, dtype=float)
    grid = curve.t
    t0 = float(grid[0])
    dt = float(grid[1] - grid[0])
    bound = config.state_bound

    def feedback(t, x):
        x_ref = curve.state(t)
        u_ref = curve.control(t)
        k_mat = _lerp_rows(gain, t0, dt, t)
        return u_ref + k_mat @ (x_ref - x)

    def rhs(t, x):
        if np.abs(x).max() > bound:
            raise ProjectionBlowupError(f"state norm exceeded {bound:.1e} at t={t:.2f}")
        return model.f(x, feedback(t, x))

    sol = solve_ivp(rhs, (grid[0], grid[-1]), x0, t_eval=grid,
                    method=config.method, rtol=config.rtol, atol=config.atol)
    if not sol.success:
        raise ProjectionBlowupError(f"projection integration failed: {sol.message}")
    states = sol.y.T.copy()
    controls = np.empty((len(grid), model.nu))
    xdot = np.empty_like(states)
    for k in range(len(grid)):
        controls[k] = feedback(grid[k], states[k])
        xdot[k] = model.f(states[k], controls[k])
    return Trajectory(t=grid, x=states, u=controls, xdot=xdot)


def tv_regulator(model: CmgSatellite, traj: Trajectory, qc_diag: np.ndarray,
                 r_mat: np.ndarray, p_terminal: np.ndarray,
                 config: SolverConfig = SolverConfig(),
                 grid_data: _GridData | None = None) -> RegulatorSweep:
    """Time-varying projection regulator along the trajectory grid.

    Integrates the finite-horizon Riccati equation backward with the
    regulator state weight re-lifted onto the tangent space at every
    sample (so constraint-normal directions stay unpenalized) and the
    supplied lifted terminal weight.
    """
    data = grid_data if grid_data is not None else _GridData(model, traj)
    n, nx = data.n, model.nx
    qc = np.asarray(qc_diag, dtype=float)
    q_lift = np.empty((n, nx, nx))
    for k in range(n):
        basis = model.tangent_basis(traj.x[k])
        proj = basis.T @ basis
        q_lift[k] = proj @ (qc[:, None] * proj)
    r_inv = np.linalg.inv(r_mat)
    t_end = float(traj.t[-1])
    p_t = np.asarray(p_terminal, dtype=float)
    bound = 1e9 * max(1.0, np.abs(p_t).max())

    def rhs(s, pvec):
        # reversed time: s = t_end - t
        p = pvec.reshape(nx, nx)
        if np.abs(p).max() > bound:
            raise RiccatiBlowupError(f"regulator Riccati diverged at t={t_end - s:.2f}")
        t = t_end - s
        a_mat, b_mat = data.ab(t)
        q_mat = _lerp_rows(q_lift, data.t0, data.dt, t)
        dp = a_mat.T @ p + p @ a_mat - p @ b_mat @ r_inv @ (b_mat.T @ p) + q_mat
        return dp.reshape(-1)

    sol = solve_ivp(rhs, (0.0, t_end - traj.t[0]), p_t.reshape(-1),
                    t_eval=t_end - traj.t[::-1], method=config.method,
                    rtol=config.sweep_rtol, atol=config.sweep_atol)
    if not sol.success:
        raise RiccatiBlowupError(f"regulator Riccati sweep failed: {sol.message}")
    riccati = sol.y.T[::-1].reshape(n, nx, nx).copy()
    gains = np.empty((n, model.nu, nx))
    for k in range(n):
        gains[k] = r_inv @ (data.B[k].T @ riccati[k])
    return RegulatorSweep(gains=gains, riccati=riccati, r_inv=r_inv)


def _curvature_terms(model: CmgSatellite, traj: Trajectory, lam: np.ndarray,
                     stride: int, step: float = 1e-5):
    """FD second-derivative contractions lam^T d2f/dx2 and lam^T d2f/dxdu.

    Evaluated on a strided subset of the grid and held piecewise constant
    in between; the descent direction only needs a descent-improving
    quadratic model, not an exact Hessian.
    """
    n = len(traj.t)
    nx, nu = model.nx, model.nu
    idx = list(range(0, n, stride))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    w_full = np.zeros((n, nx, nx))
    s_full = np.zeros((n, nx, nu))
    for out_i, k in enumerate(idx):
        x, u, lam_k = traj.x[k], traj.u[k], lam[k]
        grad = np.empty((nx, nx))
        gradu = np.empty((nx, nu))
        for i in range(nx):
            dx = np.zeros(nx)
            dx[i] = step
            ap, _ = model.linearize(x + dx, u)
            am, _ = model.linearize(x - dx, u)
            grad[i] = (ap - am).T @ lam_k / (2 * step)
        for i in range(nu):
            du = np.zeros(nu)
            du[i] = step
            ap, _ = model.linearize(x, u + du)
            am, _ = model.linearize(x, u - du)
            gradu[:, i] = (ap - am).T @ lam_k / (2 * step)
        k_next = idx[out_i + 1] if out_i + 1 < len(idx) else n
        w_full[k:k_next] = 0.5 * (grad + grad.T)
        s_full[k:k_next] = gradu
    return w_full, s_full


def _adjoint(model, traj, a_grad, r_term, data, config):
    """Costate of the current trajectory (backward sweep)."""
    t_end = float(traj.t[-1])

    def rhs(s, lam):
        t = t_end - s
        a_mat, _ = data.ab(t)
        grad = _lerp_rows(a_grad, data.t0, data.dt, t)
        return a_mat.T @ lam + grad

    sol = solve_ivp(rhs, (0.0, t_end - traj.t[0]), r_term,
                    t_eval=t_end - traj.t[::-1], method=config.method,
                    rtol=config.sweep_rtol, atol=config.sweep_atol)
    if not sol.success:
        raise RiccatiBlowupError(f"adjoint sweep failed: {sol.message}")
    return sol.y.T[::-1].copy()


def _solve_lq(model, traj, data, p_all, r_inv, a_grad, b_grad, r_term,
              s_full, config):
    """Backward linear sweep and forward state sweep of one LQ subproblem.

    ``p_all`` holds the Riccati samples of whichever quadratic model is
    in use; returns (z, v, theta).
    """
    n, nx, nu = data.n, model.nx, model.nu
    t_end = float(traj.t[-1])

    def pb_of(t):
        p = _lerp_rows(p_all, data.t0, data.dt, t)
        _, b_mat = data.ab(t)
        if s_full is None:
            return b_mat, p @ b_mat
        return b_mat, p @ b_mat + _lerp_rows(s_full, data.t0, data.dt, t)

    def rhs_r(s, r_vec):
        t = t_end - s
        a_mat, b_mat = data.ab(t)
        p = _lerp_rows(p_all, data.t0, data.dt, t)
        pb = p @ b_mat if s_full is None else p @ b_mat + _lerp_rows(
            s_full, data.t0, data.dt, t)
        a_v = _lerp_rows(a_grad, data.t0, data.dt, t)
        b_v = _lerp_rows(b_grad, data.t0, data.dt, t)
        acl = a_mat - b_mat @ (r_inv @ pb.T)
        dr = acl.T @ r_vec + a_v - pb @ (r_inv @ b_v)
        if np.abs(dr).max() > 1e12:
            raise RiccatiBlowupError(f"linear sweep diverged at t={t:.2f}")
        return dr

    sol_r = solve_ivp(rhs_r, (0.0, t_end - traj.t[0]), r_term,
                      t_eval=t_end - traj.t[::-1], method=config.method,
                      rtol=config.sweep_rtol, atol=config.sweep_atol)
    if not sol_r.success:
        raise RiccatiBlowupError(f"linear sweep failed: {sol_r.message}")
    r_all = sol_r.y.T[::-1].copy()

    def control_law(t, z):
        b_mat, pb = pb_of(t)
        r_vec = _lerp_rows(r_all, data.t0, data.dt, t)
        b_v = _lerp_rows(b_grad, data.t0, data.dt, t)
        return -r_inv @ (pb.T @ z + b_mat.T @ r_vec + b_v)

    def zdot(t, z):
        a_mat, b_mat = data.ab(t)
        return a_mat @ z + b_mat @ control_law(t, z)

    sol_z = solve_ivp(zdot, (traj.t[0], t_end), np.zeros(nx), t_eval=traj.t,
                      method=config.method, rtol=config.sweep_rtol,
                      atol=config.sweep_atol)
    if not sol_z.success:
        raise RiccatiBlowupError(f"forward sweep failed: {sol_z.message}")
    z = sol_z.y.T.copy()
    v = np.empty((n, nu))
    for k in range(n):
        v[k] = control_law(traj.t[k], z[k])

    w = simpson_weights(n, data.dt)
    theta = float(w @ (np.sum(a_grad * z, axis=1) + np.sum(b_grad * v, axis=1)))
    theta += float(r_term @ z[-1])
    return z, v, theta


def _cost_hessian_riccati(model, traj, data, cost, w_full, config):
    """Backward Riccati sweep with the objective's quadratic model."""
    n, nx = data.n, model.nx
    t_end = float(traj.t[-1])
    r_inv = np.linalg.inv(cost.R)
    p_t = cost.P
    bound = 1e7 * max(1.0, np.abs(p_t).max())

    def rhs(s, pvec):
        p = pvec.reshape(nx, nx)
        if np.abs(p).max() > bound:
            raise RiccatiBlowupError(
                f"objective Riccati escaped at t={t_end - s:.2f} (nonconvex subproblem)")
        t = t_end - s
        a_mat, b_mat = data.ab(t)
        q_mat = cost.Q if w_full is None else cost.Q + _lerp_rows(
            w_full, data.t0, data.dt, t)
        dp = a_mat.T @ p + p @ a_mat - p @ b_mat @ r_inv @ (b_mat.T @ p) + q_mat
        return dp.reshape(-1)

    sol = solve_ivp(rhs, (0.0, t_end - traj.t[0]), p_t.reshape(-1),
                    t_eval=t_end - traj.t[::-1], method=config.method,
                    rtol=config.sweep_rtol, atol=config.sweep_atol)
    if not sol.success:
        raise RiccatiBlowupError(f"objective Riccati sweep failed: {sol.message}")
    return sol.y.T[::-1].reshape(n, nx, nx).copy(), r_inv


def descent_direction(model: CmgSatellite, traj: Trajectory, cost: CostFunctional,
                      order: str = "first", config: SolverConfig = SolverConfig(),
                      grid_data: _GridData | None = None):
    """LQ descent direction along the trajectory and its descent value theta.

    Returns ``(z, v, theta, used_order)`` with z, v sampled on the grid.
    ``theta`` is the directional derivative of the objective along the
    direction; it is negative whenever the trajectory is not stationary.
    First order uses the exact quadratic cost model over the linearized
    dynamics (Gauss-Newton); second order adds adjoint-weighted dynamics
    curvature and falls back to first order if its Riccati escapes
    (subproblem nonconvexity along unstable arcs).
    """
    data = grid_data if grid_data is not None else _GridData(model, traj)
    e = traj.x - cost.x_d
    a_grad = e @ cost.Q.T
    b_grad = traj.u @ cost.R.T
    r_term = cost.terminal_gradient(traj.x[-1])

    if order == "second":
        try:
            lam = _adjoint(model, traj, a_grad, r_term, data, config)
            w_full, s_full = _curvature_terms(model, traj, lam, config.curvature_stride)
            p_all, r_inv = _cost_hessian_riccati(model, traj, data, cost, w_full, config)
            z, v, theta = _solve_lq(model, traj, data, p_all, r_inv,
                                    a_grad, b_grad, r_term, s_full, config)
            return z, v, theta, "second"
        except RiccatiBlowupError:
            order = "first-fallback"
    p_all, r_inv = _cost_hessian_riccati(model, traj, data, cost, None, config)
    z, v, theta = _solve_lq(model, traj, data, p_all, r_inv,
                            a_grad, b_grad, r_term, None, config)
    return z, v, theta, order if order == "first-fallback" else "first"


def direction_curvature(traj: Trajectory, z: np.ndarray, v: np.ndarray,
                        cost: CostFunctional) -> float:
    """Quadratic form of the objective along a descent direction.

    For the exact-Newton direction this equals |theta|, so the unit step
    is recovered; for mismatched descent models it rescales the first
    line-search trial onto the quadratic-model optimum.
    """
    quad = np.einsum("ij,jk,ik->i", z, cost.Q, z)
    quad += np.einsum("ij,jk,ik->i", v, cost.R, v)
    w = simpson_weights(len(traj.t), float(traj.t[1] - traj.t[0]))
    total = float(w @ quad) + float(z[-1] @ cost.P @ z[-1])
    return 0.5 * total


def line_search(model: CmgSatellite, traj: Trajectory, z: np.ndarray, v: np.ndarray,
                theta: float, cost: CostFunctional, gain: np.ndarray,
                config: SolverConfig = SolverConfig(),
                current_cost: float | None = None, gamma_init: float | None = None):
    """Backtracking Armijo search on the projected objective.

    The first trial step is the minimizer of the quadratic cost model
    along the direction (clipped to 1), unless ``gamma_init`` overrides
    it.  Returns ``(gamma, new_traj, new_cost)``; raises RuntimeError
    when the step underflows ``config.min_step`` (solver stall).
    """
    if theta >= 0.0:
        raise ValueError("line search requires a descent direction (theta < 0)")
    h0 = trajectory_cost(traj, cost) if current_cost is None else current_cost
    if gamma_init is None:
        quad = direction_curvature(traj, z, v, cost)
        gamma_init = -theta / (2.0 * quad) if quad > 0.0 else 1.0
    gamma = min(1.0, gamma_init)
    x0 = traj.x[0]
    while gamma >= config.min_step:
        candidate = Trajectory(t=traj.t, x=traj.x + gamma * z,
                               u=traj.u + gamma * v, xdot=traj.xdot)
        try:
            projected = project(model, candidate, gain, x0, config)
            h_trial = trajectory_cost(projected, cost)
        except (ProjectionBlowupError, RuntimeError):
            gamma *= config.contraction
            continue
        if h_trial <= h0 + config.armijo_alpha * gamma * theta:
            return gamma, projected, h_trial
        gamma *= config.contraction
    raise RuntimeError(f"line search stalled: step underflow below {config.min_step:.1e}")


def solve(model: CmgSatellite, x0, cost: CostFunctional, guess: Trajectory,
          gain_design: FeedbackGain, reg_weights, config: SolverConfig = SolverConfig(),
          callback=None) -> SolverReport:
    """Run the full optimizer from a feasible guess trajectory.

    Each iteration rebuilds the projection regulator along the current
    iterate, computes an LQ descent direction, line searches on the
    projected cost, and records the history.  Terminates when the
    descent value |theta| drops below ``config.theta_tol``.
    """
    t_start = time.perf_counter()
    m = model.m
    qc_reg = np.diag(assemble_qc(reg_weights, m))
    r_reg = assemble_r(reg_weights, m)
    report = SolverReport(trajectory=guess)

    traj = guess
    current_cost = trajectory_cost(traj, cost)
    gamma_prev = 1.0
    second_order_ok = True
    for it in range(config.max_iters):
        grid_data = _GridData(model, traj)
        try:
            sweep = tv_regulator(model, traj, qc_reg, r_reg,
                                 gain_design.P_lift, config, grid_data)
        except RiccatiBlowupError as exc:
            report.termination = f"regulator failure: {exc}"
            break

        if config.descent_order == "first":
            order = "first"
        elif config.descent_order == "second":
            order = "second"
        else:
            prev_theta = report.iterations[-1].theta if report.iterations else -np.inf
            order = ("second" if second_order_ok
                     and abs(prev_theta) < config.second_order_threshold else "first")
        z, v, theta, used_order = descent_direction(model, traj, cost, order,
                                                    config, grid_data)
        if used_order == "first-fallback":
            second_order_ok = False

        if abs(theta) <= config.theta_tol:
            report.iterations.append(IterationRecord(
                cost=current_cost, theta=theta, step=0.0, order=used_order))
            report.termination = "converged"
            break
        if theta > 0.0:
            report.termination = f"ascent direction (theta={theta:.3e})"
            break

        try:
            gamma, traj, current_cost = line_search(
                model, traj, z, v, theta, cost, sweep.gains, config,
                current_cost)
        except RuntimeError as exc:
            report.termination = f"stalled: {exc}"
            report.iterations.append(IterationRecord(
                cost=current_cost, theta=theta, step=0.0, order=used_order))
            break
        gamma_prev = gamma
        report.iterations.append(IterationRecord(
            cost=current_cost, theta=theta, step=gamma, order=used_order,
            fallback=used_order.endswith("fallback")))
        if callback is not None:
            callback(it, current_cost, theta, gamma)
    else:
        report.termination = "max_iters"

    report.trajectory = traj
    report.wall_time = time.perf_counter() - t_start
    return report
