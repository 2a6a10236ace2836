"""Primal-dual gradient controller, continuous field and sampled-data update.

The controller state is ``(w, mu, lam)``: primal decision vector, inequality
multipliers (kept nonnegative) and equality multipliers. The discrete update
scales the inequality step by ``eta = gamma * eta_bar`` where ``eta_bar``
stops each multiplier exactly at zero instead of crossing it, and ``gamma``
is backtracked until the closed-loop Lyapunov function decreases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CertificationError, DomainError, NonConvergenceError
from .model import DiscretePlant
from .ocp import OcpSpec, ProjectionPair

__all__ = [
    "PdgParams",
    "PdgState",
    "StepOutcome",
    "plus_op",
    "cont_field",
    "eta_bar",
    "candidate",
    "delta_V",
    "lyapunov",
    "find_gamma",
    "analytic_gamma",
    "step",
    "equilibrium_probe",
    "PdgController",
]

MAX_BACKTRACKS = 200


@dataclass(frozen=True)
class PdgParams:
    alpha: float
    beta: float
    zeta: float
    dt: float
    c: float = 0.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not self.beta >= 0:
            raise DomainError("beta must be nonnegative")
        if not self.zeta > 0:
            raise DomainError("zeta must be positive")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if not 0 < self.c < 1:
            raise DomainError("backtracking factor c must lie in (0, 1)")

    @property
    def kappa(self) -> float:
        return 1.0 + 2.0 * self.alpha * self.beta

    @property
    def tau(self) -> float:
        return 1.0 / (1.0 + self.alpha * self.beta)

    @property
    def zeta_dt(self) -> float:
        return self.zeta * self.dt


@dataclass
class PdgState:
    w: np.ndarray
    mu: np.ndarray
    lam: np.ndarray

    @classmethod
    def zeros(cls, spec: OcpSpec) -> "PdgState":
        return cls(np.zeros(spec.nw), np.zeros(spec.n_mu), np.zeros(spec.n_lambda))

    def copy(self) -> "PdgState":
        return PdgState(self.w.copy(), self.mu.copy(), self.lam.copy())

    def storage(self) -> float:
        """Controller storage 1/2 (|w|^2 + |mu|^2 + |lam|^2)."""
        return 0.5 * float(self.w @ self.w + self.mu @ self.mu + self.lam @ self.lam)

    def is_zero(self) -> bool:
        return not (np.any(self.w) or np.any(self.mu) or np.any(self.lam))


@dataclass
class StepOutcome:
    next: PdgState
    u: np.ndarray
    gamma: float
    backtracks: int
    delta_V: float
    x_next: np.ndarray
    w_applied: np.ndarray = field(repr=False, default=None)


def plus_op(a, b) -> np.ndarray:
    """Componentwise ``a`` where ``b > 0`` and ``max(0, a)`` where ``b == 0``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    if np.any(b < 0):
        raise DomainError("second argument of plus_op must be nonnegative")
    return np.where(b > 0, a, np.maximum(a, 0.0))


def cont_field(state: PdgState, x, params: PdgParams, spec: OcpSpec):
    """Right-hand side ``(wdot, mudot, lamdot)`` of the continuous-time controller."""
    zeta, tau, alpha = params.zeta, params.tau, params.alpha
    h = spec.h(state.w, x)
    lamdot = zeta * tau * (-alpha * state.lam + h)
    mudot = zeta * plus_op(spec.g(state.w), state.mu)
    wdot = -zeta * (
        spec.grad_f(state.w)
        + spec.G.T @ state.mu
        + params.kappa * (spec.C.T @ (state.lam + (params.beta / zeta) * lamdot))
    )
    return wdot, mudot, lamdot


def eta_bar(mu, gplus, zeta_dt: float) -> np.ndarray:
    """Per-multiplier step fraction that lands a shrinking multiplier on zero."""
    mu = np.asarray(mu, dtype=float)
    gplus = np.asarray(gplus, dtype=float)
    trial = mu + zeta_dt * gplus
    out = np.ones_like(mu)
    low = trial < 0
    # low implies gplus < 0, so the division is safe
    out[low] = -mu[low] / (zeta_dt * gplus[low])
    return out


class _Parts:
    """Gamma-independent pieces of one controller update."""

    __slots__ = ("h", "gplus", "ebar", "low", "dlam", "dw0", "dw_mu", "dmu1")

    def __init__(self, state: PdgState, x, params: PdgParams, spec: OcpSpec):
        zdt = params.zeta_dt
        self.h = spec.h(state.w, x)
        self.gplus = plus_op(spec.g(state.w), state.mu)
        self.ebar = eta_bar(state.mu, self.gplus, zdt)
        self.low = state.mu + zdt * self.gplus < 0
        self.dlam = params.tau * zdt * (-params.alpha * state.lam + self.h)
        lam_eff = state.lam + params.beta * self.dlam / zdt
        self.dw0 = -zdt * (spec.grad_f(state.w) + params.kappa * (spec.C.T @ lam_eff))
        self.dw_mu = -zdt * (spec.G.T @ (self.ebar * state.mu))
        dmu1 = zdt * self.ebar * self.gplus
        # exact landing: eta_bar * zeta_dt * gplus equals -mu on the clipped entries
        dmu1[self.low] = -state.mu[self.low]
        self.dmu1 = dmu1

    def at(self, gamma: float):
        return self.dw0 + gamma * self.dw_mu, gamma * self.dmu1, self.dlam


def candidate(state: PdgState, x, gamma: float, params: PdgParams, spec: OcpSpec):
    """Increments ``(dw, dmu, dlam)`` of the sampled-data controller at a given ``gamma``."""
    if not 0 < gamma <= 1:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    return _Parts(state, x, params, spec).at(gamma)


def _applied_w(state: PdgState, x, projection: ProjectionPair | None) -> np.ndarray:
    if projection is None:
        return state.w
    return projection.apply(state.w, x)


def lyapunov(state: PdgState, x, delta_star: float, params: PdgParams) -> float:
    """``V = S_C + delta * zeta * S_P`` with both storages half squared norms."""
    x = np.asarray(x, dtype=float)
    return state.storage() + delta_star * params.zeta * 0.5 * float(x @ x)


def _dV(state: PdgState, inc, x, dx, delta_star: float, zeta: float) -> float:
    dw, dmu, dlam = inc
    dSc = (state.w @ dw + 0.5 * dw @ dw
           + state.mu @ dmu + 0.5 * dmu @ dmu
           + state.lam @ dlam + 0.5 * dlam @ dlam)
    dSp = x @ dx + 0.5 * dx @ dx
    return float(dSc + delta_star * zeta * dSp)


def delta_V(state: PdgState, x, inc, delta_star: float, params: PdgParams,
            plant_dt: DiscretePlant, spec: OcpSpec,
            projection: ProjectionPair | None = None) -> float:
    """One-step change of the Lyapunov function for the increment ``inc``.

    Differences are formed analytically (``w.dw + |dw|^2 / 2`` and so on) to
    avoid cancellation close to the origin.
    """
    x = np.asarray(x, dtype=float)
    u = spec.E @ _applied_w(state, x, projection)
    dx = plant_dt.A_d @ x + plant_dt.B_d @ u - x
    return _dV(state, inc, x, dx, delta_star, params.zeta)


def _delta_of(certificate) -> float:
    return float(getattr(certificate, "delta_star", certificate))


def find_gamma(state: PdgState, x, params: PdgParams, certificate,
               plant_dt: DiscretePlant, spec: OcpSpec,
               projection: ProjectionPair | None = None,
               max_backtracks: int = MAX_BACKTRACKS):
    """Backtrack ``gamma = c**j`` until the Lyapunov function strictly decreases.

    Returns ``(gamma, backtracks)``. ``certificate`` may be a certificate
    object or the coupling scalar delta itself.
    """
    gamma, j, _, _ = _search_gamma(
        state, np.asarray(x, dtype=float), params, _delta_of(certificate), plant_dt, spec,
        projection, max_backtracks, _Parts(state, x, params, spec))
    return gamma, j


def _search_gamma(state, x, params, delta_star, plant_dt, spec, projection, max_backtracks, parts):
    u = spec.E @ _applied_w(state, x, projection)
    dx = plant_dt.A_d @ x + plant_dt.B_d @ u - x
    if state.is_zero() and not np.any(x):
        inc = parts.at(1.0)
        return 1.0, 0, _dV(state, inc, x, dx, delta_star, params.zeta), inc
    gamma = 1.0
    for j in range(max_backtracks + 1):
        inc = parts.at(gamma)
        dv = _dV(state, inc, x, dx, delta_star, params.zeta)
        if dv < 0:
            return gamma, j, dv, inc
        gamma *= params.c
    raise CertificationError(
        f"no Lyapunov-decreasing step after {max_backtracks} backtracks "
        f"(last delta_V = {dv:.3e}); the stability certificate does not hold here"
    )


def analytic_gamma(state: PdgState, x, params: PdgParams, spec: OcpSpec, Hbar_d) -> float:
    """Positive root of ``a g^2 + b g - |z|^2_{-Hbar_d} = 0``.

    Any ``gamma`` below the returned bound makes the Lyapunov increment
    negative. Returns ``inf`` when the quadratic never crosses zero.
    """
    Hbar_d = np.asarray(Hbar_d, dtype=float)
    if np.linalg.eigvalsh(0.5 * (Hbar_d + Hbar_d.T))[-1] >= 0:
        raise DomainError("analytic_gamma requires a negative definite Hbar_d")
    x = np.asarray(x, dtype=float)
    zdt = params.zeta_dt
    g = spec.g(state.w)
    gplus = plus_op(g, state.mu)
    ebar = eta_bar(state.mu, gplus, zdt)
    em = ebar * state.mu
    h = spec.h(state.w, x)
    v = spec.grad_f(state.w) + params.tau * params.kappa * (spec.C.T @ (state.lam + params.beta * h))
    b1 = em @ (gplus - spec.G @ state.w)
    b2 = em @ (spec.G @ v)
    Gem = spec.G.T @ em
    a2 = 0.5 * (float((ebar * gplus) @ (ebar * gplus)) + float(Gem @ Gem))
    a = zdt * a2
    b = float(b1 + zdt * b2)
    z = np.r_[state.w, x, state.lam]
    c0 = float(-(z @ Hbar_d @ z))
    if a > 0:
        return (-b + math.sqrt(b * b + 4.0 * a * c0)) / (2.0 * a)
    if b > 0:
        return c0 / b
    return math.inf


def step(state: PdgState, x, params: PdgParams, certificate, plant_dt: DiscretePlant,
         spec: OcpSpec, projection: ProjectionPair | None = None,
         gamma_rule: str = "backtrack", max_backtracks: int = MAX_BACKTRACKS) -> StepOutcome:
    """Advance the controller by one sampling period.

    ``gamma_rule="backtrack"`` runs the Lyapunov backtracking search;
    ``"unit"`` fixes ``gamma = 1`` (naive Euler step with only the
    nonnegativity fraction ``eta_bar``).
    """
    x = np.asarray(x, dtype=float)
    delta_star = _delta_of(certificate)
    parts = _Parts(state, x, params, spec)
    w_app = _applied_w(state, x, projection)
    u = spec.E @ w_app
    x_next = plant_dt.A_d @ x + plant_dt.B_d @ u
    if gamma_rule == "backtrack":
        gamma, j, dv, inc = _search_gamma(state, x, params, delta_star, plant_dt, spec,
                                          projection, max_backtracks, parts)
    elif gamma_rule == "unit":
        gamma, j = 1.0, 0
        inc = parts.at(1.0)
        dv = _dV(state, inc, x, x_next - x, delta_star, params.zeta)
    else:
        raise DomainError(f"unknown gamma_rule {gamma_rule!r}")
    dw, dmu, dlam = inc
    mu_next = state.mu + dmu
    # guard against -0.0 and sub-ulp negatives from rounding
    np.maximum(mu_next, 0.0, out=mu_next)
    nxt = PdgState(state.w + dw, mu_next, state.lam + dlam)
    return StepOutcome(next=nxt, u=u, gamma=gamma, backtracks=j, delta_V=dv,
                       x_next=x_next, w_applied=w_app)


def equilibrium_probe(x_fixed, params: PdgParams, spec: OcpSpec, tol: float = 1e-10,
                      max_iters: int = 500_000, state: PdgState | None = None) -> PdgState:
    """Iterate the controller with the plant state frozen until it stops moving.

    Uses ``gamma = 1``; with ``x`` frozen there is no plant storage to trade
    against, so the backtracking rule is not meaningful here.

    Raises
    ------
    NonConvergenceError
        If the increment norm is still above ``tol`` after ``max_iters``.
    """
    x = np.asarray(x_fixed, dtype=float)
    st = PdgState.zeros(spec) if state is None else state.copy()
    inc_norm = math.inf
    for _ in range(max_iters):
        dw, dmu, dlam = _Parts(st, x, params, spec).at(1.0)
        st.w = st.w + dw
        st.mu = np.maximum(st.mu + dmu, 0.0)
        st.lam = st.lam + dlam
        inc_norm = math.sqrt(float(dw @ dw + dmu @ dmu + dlam @ dlam))
        if inc_norm <= tol:
            return st
    g = spec.g(st.w)
    raise NonConvergenceError(
        f"controller did not settle within {max_iters} iterations (last increment {inc_norm:.3e})",
        residuals={
            "increment": inc_norm,
            "max_g": float(g.max()) if g.size else -math.inf,
            "equilibrium_gap": float(np.linalg.norm(spec.h(st.w, x) - params.alpha * st.lam)),
        },
        state=st,
    )


class PdgController:
    """Stateful wrapper used by the closed-loop harness.

    Parameters
    ----------
    spec, params : problem and controller constants.
    certificate : object with ``delta_star`` (or the scalar itself).
    plant_dt : exact discretisation of the plant at ``params.dt``.
    projection : optional projection pair; when given the applied input is
        taken from the projected decision vector.
    gamma_rule : ``"backtrack"`` or ``"unit"``.
    """

    def __init__(self, spec: OcpSpec, params: PdgParams, certificate, plant_dt: DiscretePlant,
                 projection: ProjectionPair | None = None, gamma_rule: str = "backtrack"):
        if abs(plant_dt.step - params.dt) > 1e-12 * max(1.0, params.dt):
            raise DomainError("plant discretisation step must equal the controller period")
        self.spec = spec
        self.params = params
        self.delta_star = _delta_of(certificate)
        self.plant_dt = plant_dt
        self.projection = projection
        self.gamma_rule = gamma_rule
        self.state = PdgState.zeros(spec)
        self.last: StepOutcome | None = None

    def reset(self, state: PdgState | None = None):
        self.state = PdgState.zeros(self.spec) if state is None else state.copy()
        self.last = None

    def value(self, x) -> float:
        return lyapunov(self.state, x, self.delta_star, self.params)

    def control(self, x) -> np.ndarray:
        out = step(self.state, x, self.params, self.delta_star, self.plant_dt, self.spec,
                   self.projection, self.gamma_rule)
        self.last = out
        self.state = out.next
        return out.u
