"""Tangent-space LQR design and its lift to ambient cost functionals.

The dynamics are only controllable on the constraint manifold, so the
Riccati problem is posed in tangent coordinates ``A_s = M A M^T``,
``B_s = M B`` and the resulting state cost, terminal cost, and feedback
gain are lifted back with the orthonormal basis M.  Lifted matrices are
positive definite on the tangent space and annihilate the constraint
normal directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dynamics import CmgSatellite


class ControllabilityError(RuntimeError):
    """Reduced pair fails the numerical controllability test."""

    def __init__(self, rank: int, expected: int):
        super().__init__(
            f"pair is not controllable: staircase rank {rank} < {expected}")
        self.rank = rank
        self.expected = expected


class AreSolverError(RuntimeError):
    """Hamiltonian eigen-split or residual refinement failed."""


@dataclass(frozen=True)
class LqrWeights:
    """Scalar weights for the block-diagonal state and control costs."""

    rho_q: float
    rho_hswr: float
    rho_omega: float
    rho_delta: float
    rho_hga: float
    rho_ug: float
    rho_uw: float

    def __post_init__(self):
        state = (self.rho_q, self.rho_hswr, self.rho_omega,
                 self.rho_delta, self.rho_hga)
        if any(v < 0.0 for v in state):
            raise ValueError("state weights must be nonnegative")
        if self.rho_ug <= 0.0 or self.rho_uw <= 0.0:
            raise ValueError("control weights must be strictly positive")

    @classmethod
    def from_vectors(cls, state, control) -> "LqrWeights":
        return cls(*state, *control)


def assemble_qc(weights: LqrWeights, m: int) -> np.ndarray:
    """Diagonal ambient state weight: blocks [q(4), h_swr(m), omega(3), delta(m), h_ga(m)]."""
    return np.diag(np.concatenate([
        np.full(4, weights.rho_q),
        np.full(m, weights.rho_hswr),
        np.full(3, weights.rho_omega),
        np.full(m, weights.rho_delta),
        np.full(m, weights.rho_hga),
    ]))


def assemble_r(weights: LqrWeights, m: int) -> np.ndarray:
    """Diagonal control weight: blocks [u_g(m), u_w(m)]."""
    return np.diag(np.concatenate([
        np.full(m, weights.rho_ug),
        np.full(m, weights.rho_uw),
    ]))


def controllability_rank(A, B, tol: float = 1e-10) -> int:
    """Dimension of the reachable subspace of (A, B).

    Grows an orthonormal basis of the Krylov space span[B, AB, ...] one
    block at a time (staircase style), which avoids the catastrophic
    conditioning of the raw controllability matrix.  Directions whose
    residual after re-orthogonalization falls below ``tol`` relative to
    the incoming block are discarded.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.ndim == 2 and B.shape[0] != A.shape[0]:
        B = B.T
    n = A.shape[0]
    basis = np.zeros((n, 0))
    block = B
    for _ in range(n):
        if basis.shape[1] > 0:
            block = block - basis @ (basis.T @ block)
        u, sv, _ = np.linalg.svd(block, full_matrices=False)
        scale = max(sv[0] if sv.size else 0.0, np.linalg.norm(B, 2))
        keep = sv > tol * scale
        if not keep.any():
            break
        new = u[:, keep]
        # second orthogonalization pass for numerical safety
        if basis.shape[1] > 0:
            new = new - basis @ (basis.T @ new)
            new, sv2, _ = np.linalg.svd(new, full_matrices=False)
            new = new[:, sv2 > tol * scale]
        basis = np.hstack([basis, new])
        if basis.shape[1] >= n:
            return n
        block = A @ new
    return basis.shape[1]


def solve_are(A, B, Q, R, residual_tol: float = 1e-8,
              require_controllable: bool = True) -> np.ndarray:
    """Solve A^T P + P A - P B R^-1 B^T P + Q = 0 for symmetric P > 0.

    Uses the ordered Schur decomposition of the Hamiltonian matrix to
    extract the stable invariant subspace, then polishes with Newton
    defect-correction (a Lyapunov solve per step) until the residual is
    below ``residual_tol`` relative to ||P||.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != A.shape[0]:
        B = B.T
    Q = np.asarray(Q, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if require_controllable:
        rank = controllability_rank(A, B)
        if rank < n:
            raise ControllabilityError(rank, n)

    g = B @ np.linalg.solve(R, B.T)
    ham = np.block([[A, -g], [-Q, -A.T]])
    _, u, k = scipy.linalg.schur(ham, sort="lhp")
    if k != n:
        raise AreSolverError(
            f"Hamiltonian eigen-split failed: {k} stable eigenvalues, expected {n}")
    u1 = u[:n, :n]
    u2 = u[n:, :n]
    try:
        p = np.linalg.solve(u1.T, u2.T).T
    except np.linalg.LinAlgError as exc:
        raise AreSolverError("stable subspace is not a graph over the state space") from exc
    p = 0.5 * (p + p.T)

    for _ in range(5):
        res = A.T @ p + p @ A - p @ g @ p + Q
        if np.linalg.norm(res) <= residual_tol * max(np.linalg.norm(p), 1e-300):
            return p
        acl = A - g @ p
        corr = scipy.linalg.solve_continuous_lyapunov(acl.T, -res)
        p = 0.5 * (p + corr + (p + corr).T)
    res = A.T @ p + p @ A - p @ g @ p + Q
    if np.linalg.norm(res) > residual_tol * np.linalg.norm(p):
        raise AreSolverError(
            f"residual {np.linalg.norm(res):.2e} above tolerance after refinement")
    return p


def lift(p_s, q_s, k_s, basis):
    """Lift reduced cost/gain matrices into the ambient space via M."""
    q_amb = basis.T @ q_s @ basis
    p_amb = basis.T @ p_s @ basis
    k_amb = k_s @ basis
    return q_amb, p_amb, k_amb


@dataclass(frozen=True)
class CostFunctional:
    """Quadratic stage/terminal costs around a target state.

    Q and P are the lifted (rank 3m+3) state weights; R is the positive
    definite control weight.
    """

    x_d: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    R: np.ndarray

    def stage(self, x, u) -> float:
        e = np.asarray(x, dtype=float) - self.x_d
        u = np.asarray(u, dtype=float)
        return 0.5 * float(e @ self.Q @ e) + 0.5 * float(u @ self.R @ u)

    def terminal(self, x) -> float:
        e = np.asarray(x, dtype=float) - self.x_d
        return 0.5 * float(e @ self.P @ e)

    def stage_gradients(self, x, u):
        e = np.asarray(x, dtype=float) - self.x_d
        return self.Q @ e, self.R @ np.asarray(u, dtype=float)

    def terminal_gradient(self, x):
        return self.P @ (np.asarray(x, dtype=float) - self.x_d)


@dataclass(frozen=True)
class FeedbackGain:
    """Lifted LQR feedback with the data needed to rebuild it."""

    K: np.ndarray
    P_lift: np.ndarray      # lifted Riccati solution of the regulator weights
    basis: np.ndarray       # tangent basis at the design point
    A_s: np.ndarray
    B_s: np.ndarray
    P_s: np.ndarray
    K_s: np.ndarray


def stage_cost(cf: CostFunctional, x, u) -> float:
    return cf.stage(x, u)


def terminal_cost(cf: CostFunctional, x) -> float:
    return cf.terminal(x)


def design(model: CmgSatellite, x_d, cost_weights: LqrWeights,
           reg_weights: LqrWeights) -> tuple[CostFunctional, FeedbackGain]:
    """Full LQR co-design pipeline at a target equilibrium.

    Linearizes at (x_d, 0), reduces onto the tangent space, solves one
    ARE per weight set (objective weights and projection-regulator
    weights), and lifts everything back to the ambient space.
    """
    x_d = np.asarray(x_d, dtype=float)
    m = model.m
    A, B = model.linearize(x_d, np.zeros(model.nu))
    basis = model.tangent_basis(x_d)
    a_s, b_s = model.reduce(A, B, basis)

    rank = controllability_rank(a_s, b_s)
    if rank < a_s.shape[0]:
        raise ControllabilityError(rank, a_s.shape[0])

    # objective cost
    qc = assemble_qc(cost_weights, m)
    r_cost = assemble_r(cost_weights, m)
    qs_cost = basis @ qc @ basis.T
    ps_cost = solve_are(a_s, b_s, qs_cost, r_cost, require_controllable=False)
    q_amb, p_amb, _ = lift(ps_cost, qs_cost, np.zeros((2 * m, a_s.shape[0])), basis)
    cost = CostFunctional(x_d=x_d, Q=q_amb, P=p_amb, R=r_cost)

    # stabilizing regulator
    qc_reg = assemble_qc(reg_weights, m)
    r_reg = assemble_r(reg_weights, m)
    qs_reg = basis @ qc_reg @ basis.T
    ps_reg = solve_are(a_s, b_s, qs_reg, r_reg, require_controllable=False)
    k_s = np.linalg.solve(r_reg, b_s.T @ ps_reg)
    _, p_reg_amb, k_amb = lift(ps_reg, qs_reg, k_s, basis)
    gain = FeedbackGain(K=k_amb, P_lift=p_reg_amb, basis=basis,
                        A_s=a_s, B_s=b_s, P_s=ps_reg, K_s=k_s)
    return cost, gain
