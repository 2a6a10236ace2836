"""Reference controllers: an exact active-set QP solve of the condensed
problem (exact MPC) and a continuation/GMRES controller.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .errors import CyclingError, DimensionError
from .model import DiscretePlant
from .ocp import CondensedQp

__all__ = [
    "QpSolution",
    "solve_qp",
    "qp_solve",
    "fischer_burmeister",
    "cgmres_residual",
    "CgmresState",
    "cgmres_init",
    "cgmres_step",
    "MpcOracleController",
    "CgmresController",
]


@dataclass
class QpSolution:
    u_seq: np.ndarray
    active_set: tuple
    objective: float
    kkt_residual: float
    iterations: int
    multipliers: np.ndarray = field(repr=False, default=None)
    eq_multipliers: np.ndarray = field(repr=False, default=None)


def _kkt(H, q, A, b, Aeq, beq, x, z, y):
    stat = H @ x + q + A.T @ z
    if Aeq is not None:
        stat = stat + Aeq.T @ y
    r = [np.abs(stat).max(initial=0.0)]
    slack = A @ x - b
    r.append(np.maximum(slack, 0.0).max(initial=0.0))
    r.append(np.maximum(-z, 0.0).max(initial=0.0))
    r.append(np.abs(z * slack).max(initial=0.0))
    if Aeq is not None:
        r.append(np.abs(Aeq @ x - beq).max(initial=0.0))
    return float(max(r))


def _phase_one(A, b, Aeq, beq) -> np.ndarray:
    """Feasible point with the largest uniform slack (capped at 1), via an LP."""
    nv = A.shape[1]
    k = A.shape[0]
    c = np.r_[np.zeros(nv), -1.0]
    A_ub = np.hstack([A, np.ones((k, 1))]) if k else None
    A_eq = None if Aeq is None else np.hstack([Aeq, np.zeros((Aeq.shape[0], 1))])
    res = linprog(c, A_ub=A_ub, b_ub=b if k else None, A_eq=A_eq, b_eq=beq,
                  bounds=[(None, None)] * nv + [(None, 1.0)], method="highs")
    if res.status != 0 or res.x[-1] < 0:
        raise ValueError("QP constraints are infeasible")
    return res.x[:nv]


def solve_qp(H, q, A=None, b=None, Aeq=None, beq=None, x0=None, tol: float = 1e-9,
             max_iter: int | None = None) -> QpSolution:
    """Primal active-set method for ``min 1/2 x'Hx + q'x`` s.t. ``Ax <= b``, ``Aeq x = beq``.

    ``H`` must be positive definite. The start point ``x0`` must be feasible;
    without one the origin is used, which requires ``b >= 0`` and no
    equality rows, or the equality-constrained minimiser is tried.
    Ties in the entering/leaving choice go to the lowest index.
    """
    H = np.asarray(H, dtype=float)
    q = np.asarray(q, dtype=float).ravel()
    nv = H.shape[0]
    A = np.zeros((0, nv)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    if A.shape[0] == 0:
        A = np.zeros((0, nv))
    ne = 0
    if Aeq is not None:
        Aeq = np.atleast_2d(np.asarray(Aeq, dtype=float))
        beq = np.asarray(beq, dtype=float).ravel()
        ne = Aeq.shape[0]
    if A.shape != (b.size, nv) or q.size != nv:
        raise DimensionError("QP data dimensions are inconsistent")
    ftol = 1e-10 * max(1.0, np.abs(b).max(initial=0.0))

    def eqp(active):
        Aw = A[list(active)]
        rows = [Aw] if Aeq is None else [Aeq, Aw]
        Ak = np.vstack(rows) if rows else np.zeros((0, nv))
        k = Ak.shape[0]
        KKT = np.block([[H, Ak.T], [Ak, np.zeros((k, k))]])
        return KKT, Ak

    def infeasible(x):
        return bool(np.any(A @ x - b > ftol) or (ne and np.abs(Aeq @ x - beq).max() > 1e-8))

    if x0 is None:
        if ne:
            KKT, Ak = eqp(())
            sol = np.linalg.lstsq(KKT, np.r_[-q, beq], rcond=None)[0]
            x = sol[:nv]
            if infeasible(x):
                x = np.linalg.lstsq(Aeq, beq, rcond=None)[0]
        else:
            x = np.zeros(nv)
        if infeasible(x):
            x = _phase_one(A, b, Aeq if ne else None, beq if ne else None)
    else:
        x = np.asarray(x0, dtype=float).copy()
    if infeasible(x):
        raise ValueError("active-set start point is infeasible")

    active = [i for i in range(A.shape[0]) if A[i] @ x - b[i] >= -ftol]
    # keep a linearly independent working set
    indep = []
    for i in active:
        trial = np.vstack([A[indep + [i]]] + ([Aeq] if ne else []))
        if np.linalg.matrix_rank(trial) == trial.shape[0]:
            indep.append(i)
    active = sorted(indep)
    if max_iter is None:
        max_iter = 10 * (nv + A.shape[0]) + 50
    trace = []
    z = np.zeros(A.shape[0])
    y = np.zeros(ne)
    for it in range(1, max_iter + 1):
        trace.append(tuple(active))
        KKT, Ak = eqp(active)
        grad = H @ x + q
        rhs = np.r_[-grad, np.zeros(Ak.shape[0])]
        sol = np.linalg.solve(KKT, rhs)
        p = sol[:nv]
        mult = sol[nv:]
        if np.linalg.norm(p) <= 1e-12 * max(1.0, np.linalg.norm(x)):
            y = mult[:ne]
            lam_w = mult[ne:]
            z = np.zeros(A.shape[0])
            z[active] = lam_w
            if lam_w.size == 0 or lam_w.min() >= -tol:
                z = np.maximum(z, 0.0)
                res = _kkt(H, q, A, b, Aeq, beq, x, z, y)
                obj = float(0.5 * x @ H @ x + q @ x)
                return QpSolution(x, tuple(active), obj, res, it, z, y)
            worst = int(np.argmin(lam_w))
            active.pop(worst)
            continue
        step = 1.0
        block = None
        Ap = A @ p
        for i in range(A.shape[0]):
            if i in active or Ap[i] <= 1e-14:
                continue
            t = (b[i] - A[i] @ x) / Ap[i]
            if t < step - 1e-15:
                step, block = max(t, 0.0), i
        x = x + step * p
        if block is not None:
            active = sorted(active + [block])
    raise CyclingError(f"active-set iteration did not terminate in {max_iter} steps", trace=trace)


def qp_solve(qp: CondensedQp, x, tol: float = 1e-9, warm: np.ndarray | None = None) -> QpSolution:
    """Solve the condensed MPC problem at plant state ``x``.

    ``warm`` is an optional previous input sequence, used when feasible.
    """
    x = np.asarray(x, dtype=float)
    q = qp.linear_term(x)
    b = -qp.offset(x)
    x0 = None
    if warm is not None and np.all(qp.G_u @ warm - b <= 1e-12):
        x0 = warm
    sol = solve_qp(qp.H, q, qp.G_u, b, x0=x0, tol=tol)
    sol.objective = qp.objective(sol.u_seq, x)
    return sol


def fischer_burmeister(a, b):
    """``a + b - sqrt(a^2 + b^2)``, zero exactly when a, b >= 0 and a b = 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a + b - np.hypot(a, b)


def cgmres_residual(omega, x, qp: CondensedQp) -> np.ndarray:
    """Optimality residual ``[grad f + grad g nu; phi(-g, nu)]`` on the condensed problem."""
    omega = np.asarray(omega, dtype=float)
    nu_n = qp.G_u.shape[0]
    nv = qp.H.shape[0]
    if omega.size != nv + nu_n:
        raise DimensionError(f"omega has {omega.size} entries, expected {nv + nu_n}")
    u, nu = omega[:nv], omega[nv:]
    g = qp.G_u @ u + qp.offset(x)
    stat = qp.H @ u + qp.linear_term(x) + qp.G_u.T @ nu
    return np.r_[stat, fischer_burmeister(-g, nu)]


@dataclass
class CgmresState:
    omega: np.ndarray
    xi: float
    gmres_iters: int
    fd_step: float = 1e-6
    omega_dot: np.ndarray | None = None
    breakdown: bool = False
    residual_norm: float = math.nan
    warm_start: bool = False

    def __post_init__(self):
        if self.gmres_iters < 1:
            raise ValueError("gmres_iters must be >= 1")
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.omega_dot is None:
            self.omega_dot = np.zeros_like(self.omega)


def cgmres_init(qp: CondensedQp, x0, xi: float, gmres_iters: int, fd_step: float = 1e-6,
                warm_start: bool = False) -> CgmresState:
    """Unconstrained condensed minimiser for the inputs, zero multipliers."""
    u = np.linalg.solve(qp.H, -qp.linear_term(x0))
    omega = np.r_[u, np.zeros(qp.G_u.shape[0])]
    st = CgmresState(omega=omega, xi=xi, gmres_iters=gmres_iters, fd_step=fd_step,
                     warm_start=warm_start)
    st.residual_norm = float(np.linalg.norm(cgmres_residual(omega, x0, qp)))
    return st


def _gmres(matvec, b, x0, k):
    """At most ``k`` Arnoldi steps of GMRES from ``x0``. Returns (x, breakdown)."""
    r0 = b - matvec(x0)
    beta = float(np.linalg.norm(r0))
    if beta == 0.0:
        return x0, True
    n = b.size
    V = np.zeros((n, k + 1))
    Hh = np.zeros((k + 1, k))
    V[:, 0] = r0 / beta
    used = k
    for j in range(k):
        wv = matvec(V[:, j])
        for i in range(j + 1):
            Hh[i, j] = wv @ V[:, i]
            wv = wv - Hh[i, j] * V[:, i]
        Hh[j + 1, j] = np.linalg.norm(wv)
        if Hh[j + 1, j] <= 1e-14 * beta:
            used = j + 1
            break
        V[:, j + 1] = wv / Hh[j + 1, j]
    e1 = np.zeros(used + 1)
    e1[0] = beta
    y = np.linalg.lstsq(Hh[:used + 1, :used], e1, rcond=None)[0]
    return x0 + V[:, :used] @ y, False


def cgmres_step(state: CgmresState, x, x_pred, dt: float, qp: CondensedQp) -> CgmresState:
    """One continuation update ``omega <- omega + dt * omega_dot``.

    ``omega_dot`` solves ``dF/domega omega_dot = -(xi F + dF/dt)`` with a
    fixed number of matrix-free GMRES iterations; both derivatives are
    forward differences. ``x_pred`` is the predicted next plant state.
    """
    x = np.asarray(x, dtype=float)
    om = state.omega
    F = cgmres_residual(om, x, qp)
    dFdt = (cgmres_residual(om, x_pred, qp) - F) / dt
    rhs = -(state.xi * F + dFdt)
    h = state.fd_step

    def jv(v):
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return np.zeros_like(v)
        eps = h * max(1.0, float(np.linalg.norm(om))) / nv
        return (cgmres_residual(om + eps * v, x, qp) - F) / eps

    # a warm start from the previous omega_dot destabilises 1-iteration runs
    guess = state.omega_dot if state.warm_start else np.zeros_like(om)
    od, broke = _gmres(jv, rhs, guess, state.gmres_iters)
    if broke:
        warnings.warn("GMRES breakdown: zero initial residual, omega left unchanged", RuntimeWarning,
                      stacklevel=2)
        return replace(state, breakdown=True, residual_norm=float(np.linalg.norm(F)))
    new = om + dt * od
    return replace(state, omega=new, omega_dot=od, breakdown=False,
                   residual_norm=float(np.linalg.norm(F)))


class MpcOracleController:
    """Applies the first input of the exact condensed QP solution at every sample."""

    iterations_label = "active-set iterations"

    def __init__(self, qp: CondensedQp, tol: float = 1e-9):
        self.qp = qp
        self.tol = tol
        self.last: QpSolution | None = None
        self._warm = None

    def reset(self):
        self.last = None
        self._warm = None

    def control(self, x) -> np.ndarray:
        sol = qp_solve(self.qp, x, self.tol, warm=self._warm)
        self.last = sol
        m, N = self.qp.m, self.qp.N
        # shifted warm start: drop u_0, repeat the tail
        self._warm = np.r_[sol.u_seq[m:], sol.u_seq[-m:]] if N > 1 else sol.u_seq.copy()
        return sol.u_seq[:m].copy()

    def horizon_inputs(self) -> np.ndarray:
        return self.last.u_seq

    @property
    def iterations(self) -> int:
        return self.last.iterations


class CgmresController:
    """Continuation/GMRES controller; ``xi`` is taken equal to the PDG gain."""

    def __init__(self, qp: CondensedQp, plant_dt: DiscretePlant, xi: float, gmres_iters: int,
                 fd_step: float = 1e-6, warm_start: bool = False):
        self.qp = qp
        self.plant_dt = plant_dt
        self.xi = xi
        self.gmres_iters = gmres_iters
        self.fd_step = fd_step
        self.warm_start = warm_start
        self.state: CgmresState | None = None
        self._horizon = None

    def reset(self):
        self.state = None
        self._horizon = None

    def control(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.state is None:
            self.state = cgmres_init(self.qp, x, self.xi, self.gmres_iters, self.fd_step,
                                     self.warm_start)
        m = self.qp.m
        u = self.state.omega[:m].copy()
        self._horizon = self.state.omega[: self.qp.H.shape[0]].copy()
        x_pred = self.plant_dt.advance(x, u)
        self.state = cgmres_step(self.state, x, x_pred, self.plant_dt.step, self.qp)
        return u

    def horizon_inputs(self) -> np.ndarray:
        return self._horizon

    @property
    def iterations(self) -> int:
        return self.gmres_iters
