"""Matrix form of the finite-horizon optimal control problem.

The decision vector is ``w = [u_0; ...; u_{N-1}; x_1; ...; x_N]``. The
objective is ``f(w) = cost_scale * w^T P w``, inequalities are affine
``g(w) = G w + g0 <= 0`` and the equalities are ``h(w; x) = C w + D x = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionError, DimensionError, DomainError, SingularMatrixError
from .model import ContinuousPlant, SteadyTarget, discretize
from .numkit import as_matrix, solve_linear

__all__ = [
    "OcpSpec",
    "ProjectionPair",
    "CondensedQp",
    "build_equality",
    "build_inequality",
    "build_objective",
    "build_projection",
    "build_ocp",
    "condense",
]

WEIGHT_ORDERS = ("physical", "literal")


@dataclass(frozen=True)
class OcpSpec:
    N: int
    n: int
    m: int
    dtau: float
    P: np.ndarray
    G: np.ndarray
    g0: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    sigma: float
    rho: float
    cost_scale: float = 0.5
    A_h: np.ndarray | None = None
    B_h: np.ndarray | None = None
    n_dyn: int = field(default=0)

    def __post_init__(self):
        nw = (self.n + self.m) * self.N
        checks = {
            "P": (self.P.shape, (nw, nw)),
            "E": (self.E.shape, (self.m, nw)),
        }
        for name, (got, want) in checks.items():
            if got != want:
                raise DimensionError(f"{name} has shape {got}, expected {want}")
        if self.G.shape[1] != nw or self.G.shape[0] != self.g0.size:
            raise DimensionError(f"G {self.G.shape} / g0 {self.g0.shape} inconsistent with nw={nw}")
        if self.C.shape[1] != nw or self.D.shape != (self.C.shape[0], self.n):
            raise DimensionError(f"C {self.C.shape} / D {self.D.shape} inconsistent")
        if np.any(self.g0 >= 0):
            raise AssumptionError("g(0) < 0 is required: every entry of g0 must be negative")
        if not 0 < self.sigma <= self.rho:
            raise AssumptionError("P must be symmetric positive definite")
        if self.n_dyn == 0:
            object.__setattr__(self, "n_dyn", self.n * self.N)

    @property
    def nw(self) -> int:
        return (self.n + self.m) * self.N

    @property
    def n_mu(self) -> int:
        return self.G.shape[0]

    @property
    def n_lambda(self) -> int:
        return self.C.shape[0]

    @property
    def hessian(self) -> np.ndarray:
        """Hessian of f, i.e. ``2 * cost_scale * P``."""
        return 2.0 * self.cost_scale * self.P

    @property
    def strong_convexity(self) -> float:
        return 2.0 * self.cost_scale * self.sigma

    @property
    def smoothness(self) -> float:
        return 2.0 * self.cost_scale * self.rho

    def f(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(self.cost_scale * w @ self.P @ w)

    def grad_f(self, w) -> np.ndarray:
        return self.hessian @ np.asarray(w, dtype=float)

    def g(self, w) -> np.ndarray:
        return self.G @ np.asarray(w, dtype=float) + self.g0

    def h(self, w, x) -> np.ndarray:
        return self.C @ np.asarray(w, dtype=float) + self.D @ np.asarray(x, dtype=float)

    def input_of(self, w) -> np.ndarray:
        return self.E @ np.asarray(w, dtype=float)


@dataclass(frozen=True)
class ProjectionPair:
    """``w_proj = K w + L x`` is the closest point to ``w`` with ``h(w_proj; x) = 0``."""

    K: np.ndarray
    L: np.ndarray

    def apply(self, w, x) -> np.ndarray:
        return self.K @ w + self.L @ x


@dataclass(frozen=True)
class CondensedQp:
    """Input-only form: ``min 1/2 u^T H u + (q_map x)^T u`` s.t. ``G_u u + g0_u + g_map x <= 0``.

    ``w = S u + T x`` recovers the full decision vector; ``r_map`` gives the
    constant term so that the condensed objective equals ``f(w)``.
    """

    H: np.ndarray
    q_map: np.ndarray
    G_u: np.ndarray
    g0_u: np.ndarray
    g_map: np.ndarray
    S: np.ndarray
    T: np.ndarray
    r_map: np.ndarray
    m: int
    N: int

    def linear_term(self, x) -> np.ndarray:
        return self.q_map @ np.asarray(x, dtype=float)

    def offset(self, x) -> np.ndarray:
        return self.g0_u + self.g_map @ np.asarray(x, dtype=float)

    def objective(self, u, x) -> float:
        u = np.asarray(u, dtype=float)
        x = np.asarray(x, dtype=float)
        return float(0.5 * u @ self.H @ u + self.linear_term(x) @ u + 0.5 * x @ self.r_map @ x)

    def expand(self, u, x) -> np.ndarray:
        return self.S @ np.asarray(u, dtype=float) + self.T @ np.asarray(x, dtype=float)


def build_equality(A_h, B_h, N: int):
    """Stack the N one-step dynamics residuals as ``h(w; x) = C w + D x``."""
    A_h = as_matrix(A_h, "A_h", square=True)
    B_h = as_matrix(B_h, "B_h")
    n, m = B_h.shape
    if A_h.shape[0] != n:
        raise DimensionError(f"A_h is {A_h.shape} but B_h has {n} rows")
    if N < 1:
        raise DomainError("horizon N must be >= 1")
    nw = (n + m) * N
    C = np.zeros((n * N, nw))
    D = np.zeros((n * N, n))
    xoff = m * N
    for k in range(N):
        rows = slice(k * n, (k + 1) * n)
        C[rows, k * m:(k + 1) * m] = -B_h
        C[rows, xoff + k * n:xoff + (k + 1) * n] = np.eye(n)
        if k == 0:
            D[rows] = -A_h
        else:
            C[rows, xoff + (k - 1) * n:xoff + k * n] = -A_h
    return C, D


def build_inequality(upper, N: int, n: int, m: int):
    """Upper input bounds ``u_k <= upper`` in shifted coordinates.

    ``upper`` is the bound minus the steady input and must be positive so
    that ``g(0) < 0``.
    """
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if upper.size != m:
        raise DimensionError(f"bound has {upper.size} entries, expected m={m}")
    if np.any(upper <= 0):
        raise AssumptionError(
            "shifted input bound must be positive so that g(0) < 0 holds "
            f"(got {upper.tolist()})"
        )
    G = np.zeros((m * N, (n + m) * N))
    G[:, :m * N] = np.eye(m * N)
    g0 = -np.tile(upper, N)
    return G, g0


def build_objective(state_weight: float, input_weight: float, N: int, n: int, m: int,
                    weight_order: str = "physical"):
    """Diagonal weight matrix P aligned with ``w = [u; x]``.

    ``weight_order="physical"`` puts ``input_weight`` on the input block and
    ``state_weight`` on the state block. ``"literal"`` applies the blocks in
    the order (state-sized block, input-sized block) to the raw positions of
    ``w``, which is how ``blockdiag(I_{nN}, I_{mN}/10)`` reads when taken at
    face value.

    Returns ``(P, sigma, rho)``.
    """
    if state_weight <= 0 or input_weight <= 0:
        raise DomainError("objective weights must be positive")
    if weight_order == "physical":
        diag = np.r_[np.full(m * N, input_weight), np.full(n * N, state_weight)]
    elif weight_order == "literal":
        diag = np.r_[np.full(n * N, state_weight), np.full(m * N, input_weight)]
    else:
        raise DomainError(f"weight_order must be one of {WEIGHT_ORDERS}, got {weight_order!r}")
    return np.diag(diag), float(diag.min()), float(diag.max())


def build_projection(C, D) -> ProjectionPair:
    C = as_matrix(C, "C")
    D = as_matrix(D, "D")
    try:
        Y = solve_linear(C @ C.T, np.hstack([C, D]))
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            "C C^T is singular: equality constraints are rank deficient", pivot=exc.pivot
        ) from exc
    nw = C.shape[1]
    K = np.eye(nw) - C.T @ Y[:, :nw]
    L = -C.T @ Y[:, nw:]
    return ProjectionPair(K=K, L=L)


def build_ocp(plant: ContinuousPlant, target: SteadyTarget, *, N: int, dtau: float,
              state_weight: float, input_weight: float, u_upper,
              weight_order: str = "physical", cost_scale: float = 0.5,
              extra_eq=None, extra_ineq=None) -> OcpSpec:
    """Assemble the full problem in error coordinates around ``target``.

    ``extra_eq`` is an optional ``(C_extra, D_extra)`` pair of additional
    equality rows; ``extra_ineq`` an optional ``(G_extra, g0_extra)`` pair.
    """
    if cost_scale <= 0:
        raise DomainError("cost_scale must be positive")
    disc = discretize(plant, dtau)
    n, m = plant.n, plant.m
    C, D = build_equality(disc.A_d, disc.B_d, N)
    n_dyn = C.shape[0]
    if extra_eq is not None:
        Ce, De = (as_matrix(a) for a in extra_eq)
        C, D = np.vstack([C, Ce]), np.vstack([D, De])
    G, g0 = build_inequality(np.asarray(u_upper, dtype=float) - target.u_ref, N, n, m)
    if extra_ineq is not None:
        Ge = as_matrix(extra_ineq[0])
        G = np.vstack([G, Ge])
        g0 = np.r_[g0, np.asarray(extra_ineq[1], dtype=float).ravel()]
    P, sigma, rho = build_objective(state_weight, input_weight, N, n, m, weight_order)
    E = np.zeros((m, (n + m) * N))
    E[:, :m] = np.eye(m)
    return OcpSpec(N=N, n=n, m=m, dtau=float(dtau), P=P, G=G, g0=g0, C=C, D=D, E=E,
                   sigma=sigma, rho=rho, cost_scale=float(cost_scale),
                   A_h=disc.A_d, B_h=disc.B_d, n_dyn=n_dyn)


def condense(spec: OcpSpec, A_h=None, B_h=None) -> CondensedQp:
    """Eliminate the predicted states with ``x_{1:N} = Phi x_0 + Gamma u``."""
    A_h = spec.A_h if A_h is None else as_matrix(A_h, "A_h", square=True)
    B_h = spec.B_h if B_h is None else as_matrix(B_h, "B_h")
    if A_h is None or B_h is None:
        raise DimensionError("condense needs the prediction model (A_h, B_h)")
    if spec.n_lambda != spec.n_dyn:
        raise DomainError("condensing supports dynamics-only equality constraints")
    n, m, N = spec.n, spec.m, spec.N
    if A_h.shape != (n, n) or B_h.shape != (n, m):
        raise DimensionError("prediction model does not match the problem dimensions")
    Phi = np.zeros((n * N, n))
    Gamma = np.zeros((n * N, m * N))
    Ak = np.eye(n)
    powers = []
    for k in range(N):
        powers.append(Ak)
        Ak = A_h @ Ak
        Phi[k * n:(k + 1) * n] = Ak
    for i in range(N):
        for j in range(i + 1):
            Gamma[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - j] @ B_h
    S = np.vstack([np.eye(m * N), Gamma])
    T = np.vstack([np.zeros((m * N, n)), Phi])
    Q = spec.hessian
    H = S.T @ Q @ S
    return CondensedQp(
        H=0.5 * (H + H.T),
        q_map=S.T @ Q @ T,
        G_u=spec.G @ S,
        g0_u=spec.g0.copy(),
        g_map=spec.G @ T,
        S=S,
        T=T,
        r_map=T.T @ Q @ T,
        m=m,
        N=N,
    )
