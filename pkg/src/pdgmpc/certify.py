"""Dissipativity matrices and eigenvalue-based stability certificates.

A certificate is the scalar ``delta > 0`` minimising the largest eigenvalue
of a symmetric pencil ``M0 + delta * M1``; the closed loop is certified when
that minimum is negative. The continuous-time pencil acts on ``[w; x]`` and
the sampled-data pencil on ``[w; x; lam]``.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AssumptionError, DimensionError, DomainError
from .model import ContinuousPlant, DiscretePlant
from .numkit import golden_min_log10, sym, sym_eig_max
from .ocp import OcpSpec, ProjectionPair
from .pdg import PdgParams

__all__ = [
    "PlantSupply",
    "ControllerSupply",
    "Certificate",
    "plant_supply_ct",
    "pre_stabilize",
    "plant_supply_dt",
    "controller_supply_ct",
    "smoothness_matrices",
    "build_W",
    "ct_pencil",
    "dt_pencil",
    "minimize_pencil",
    "certify_ct",
    "certify_dt",
]

log = logging.getLogger(__name__)

DELTA_BOUNDS = (1e-6, 1e6)
LOG_TOL = 1e-6


@dataclass(frozen=True)
class PlantSupply:
    H_P_c: np.ndarray | None
    H_P_d: np.ndarray | None
    P_P_d: np.ndarray | None


@dataclass(frozen=True)
class ControllerSupply:
    H_C_c: np.ndarray
    Hbar_C_c: np.ndarray
    Pbar: np.ndarray
    Pbar_C_d: np.ndarray
    X: np.ndarray


@dataclass
class Certificate:
    delta_star: float
    lambda_max_star: float
    feasible: bool
    kind: str
    matrices_hash: str
    variant: dict = field(default_factory=dict)
    zeta_dt: float | None = None
    boundary_hit: bool = False
    dimension: int = 0
    matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("matrix")
        return d


def _check_nd(block, what: str):
    if sym_eig_max(block).max_eigenvalue >= 0:
        raise AssumptionError(f"{what} is not negative definite")


def plant_supply_ct(plant: ContinuousPlant) -> np.ndarray:
    """Quadratic supply rate for storage ``|x|^2 / 2``.

    Raises
    ------
    AssumptionError
        When ``Sym(A_c)`` is not negative definite; see :func:`pre_stabilize`.
    """
    SA = sym(plant.A_c)
    if sym_eig_max(SA).max_eigenvalue >= 0:
        raise AssumptionError(
            "Sym(A_c) is not negative definite; apply pre_stabilize() to the plant first"
        )
    m = plant.m
    return np.block([[SA, plant.B_c / 2], [plant.B_c.T / 2, np.zeros((m, m))]])


def pre_stabilize(plant: ContinuousPlant, margins=None):
    """Find ``K_pre`` with ``Sym(A_c + B_c K_pre)`` negative definite.

    Tries ``K_pre = -k B_c^T`` for increasing ``k``. That family succeeds
    exactly when ``Sym(A_c)`` is negative definite on the kernel of
    ``B_c^T``; otherwise no static gain works with identity storage.

    Returns ``(K_pre, ContinuousPlant(A_c + B_c K_pre, B_c))``.
    """
    A, B = plant.A_c, plant.B_c
    if sym_eig_max(sym(A)).max_eigenvalue < 0:
        return np.zeros((plant.m, plant.n)), plant
    if margins is None:
        margins = [2.0**j for j in range(0, 41)]
    tried = []
    for k in margins:
        K = -k * B.T
        lam = sym_eig_max(sym(A + B @ K)).max_eigenvalue
        tried.append((k, lam))
        if lam < 0:
            return K, ContinuousPlant(A + B @ K, B)
    detail = ", ".join(f"k={k:g}: {lam:.3g}" for k, lam in tried[:6])
    raise AssumptionError(
        "pre-stabilisation failed: Sym(A_c + B_c K) stayed indefinite for gains "
        f"K = -k B_c^T ({detail}, ...; {len(tried)} margins tried). "
        "Sym(A_c) must be negative definite on ker(B_c^T) for a static gain to exist."
    )


def plant_supply_dt(plant_dt: DiscretePlant):
    """Sampled-data supply matrices ``(H_P_d, P_P_d)``."""
    dt = plant_dt.step
    n, m = plant_dt.n, plant_dt.m
    Ad, Bd = plant_dt.A_d, plant_dt.B_d
    upper = (sym(Ad) - np.eye(n)) / dt
    if sym_eig_max(upper).max_eigenvalue >= 0:
        raise AssumptionError("upper-left block of H_P_d is not negative definite")
    H = np.block([[sym(Ad) - np.eye(n), Bd / 2], [Bd.T / 2, np.zeros((m, m))]]) / dt
    M = np.hstack([Ad - np.eye(n), Bd])
    Pp = M.T @ M / (2.0 * dt * dt)
    return H, Pp


def _weight_block(spec: OcpSpec, use_P_variant: bool) -> np.ndarray:
    if use_P_variant:
        return spec.hessian
    return spec.strong_convexity * np.eye(spec.nw)


def controller_supply_ct(spec: OcpSpec, params: PdgParams, use_P_variant: bool = True):
    """``(H_C_c, Hbar_C_c)`` for the continuous controller.

    With ``use_P_variant`` the curvature block is the objective Hessian
    instead of its smallest eigenvalue times identity.
    """
    a, b, k, t = params.alpha, params.beta, params.kappa, params.tau
    C, D = spec.C, spec.D
    Wb = _weight_block(spec, use_P_variant)
    n, nl = spec.n, spec.n_lambda
    H = np.block([
        [-Wb - b * C.T @ C, -b * C.T @ D],
        [-b * D.T @ C, t / (4 * a) * D.T @ D],
    ])
    Hbar = np.block([
        [-Wb - t * k * b * C.T @ C, -t * k * b / 2 * C.T @ D, -t * a * b * C.T],
        [-t * k * b / 2 * D.T @ C, np.zeros((n, n)), t / 2 * D.T],
        [-t * a * b * C, t / 2 * D, -t * a * np.eye(nl)],
    ])
    return sym(H), sym(Hbar)


def smoothness_matrices(spec: OcpSpec, params: PdgParams, quadratic: bool = True):
    """``(X, Pbar, Pbar_C_d)`` bounding the squared gradient step.

    ``X z = tau kappa C^T (lam + beta h)`` for ``z = [w; x; lam]``. The
    quadratic form is exact for quadratic objectives; the generic form only
    uses the smoothness constant.
    """
    b, t, k, a = params.beta, params.tau, params.kappa, params.alpha
    C, D = spec.C, spec.D
    nl, nw, n = spec.n_lambda, spec.nw, spec.n
    X = t * k * C.T @ np.hstack([b * C, b * D, np.eye(nl)])
    if quadratic:
        F = np.hstack([spec.hessian, np.zeros((nw, n + nl))]) + X
        Pbar = F.T @ F
    else:
        rho = spec.smoothness
        xn = float(np.linalg.norm(X, 2))
        Pbar = (rho**2 + 2 * rho * xn) * np.eye(nw + n + nl) + X.T @ X
    R = np.hstack([C, D, -a * np.eye(nl)])
    Pbar_C_d = 0.5 * (Pbar + t * t * R.T @ R)
    return X, sym(Pbar), sym(Pbar_C_d)


def build_W(E, n: int, n_lambda: int = 0, projection: ProjectionPair | None = None):
    """Maps from controller coordinates to plant supply coordinates ``[x; u]``.

    Returns ``(W, Wbar)``; ``W`` acts on ``[w; x]`` and ``Wbar = [W | 0]`` on
    ``[w; x; lam]``.
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    m, nw = E.shape
    W = np.zeros((n + m, nw + n))
    W[:n, nw:] = np.eye(n)
    if projection is None:
        W[n:, :nw] = E
    else:
        if projection.K.shape != (nw, nw) or projection.L.shape != (nw, n):
            raise DimensionError("projection pair does not match E")
        W[n:, :nw] = E @ projection.K
        W[n:, nw:] = E @ projection.L
    Wbar = np.hstack([W, np.zeros((n + m, n_lambda))])
    return W, Wbar


def ct_pencil(spec: OcpSpec, params: PdgParams, plant: ContinuousPlant,
              use_P_variant: bool = True, projection: ProjectionPair | None = None,
              lifted: bool = False):
    """``(M0, M1)`` with ``H_c(delta) = M0 + delta M1``.

    ``lifted=True`` gives the sign-equivalent pencil on ``[w; x; lam]``,
    which is the small-step limit of the sampled-data pencil.
    """
    H_C_c, Hbar_C_c = controller_supply_ct(spec, params, use_P_variant)
    H_P_c = plant_supply_ct(plant)
    W, Wbar = build_W(spec.E, spec.n, spec.n_lambda, projection)
    if lifted:
        return Hbar_C_c, sym(Wbar.T @ H_P_c @ Wbar)
    return H_C_c, sym(W.T @ H_P_c @ W)


def dt_pencil(spec: OcpSpec, params: PdgParams, plant_dt: DiscretePlant,
              use_P_variant: bool = True, projection: ProjectionPair | None = None,
              quadratic: bool = True):
    """``(M0, M1)`` with ``Hbar_d(delta) = M0 + delta M1``."""
    _, Hbar_C_c = controller_supply_ct(spec, params, use_P_variant)
    _, _, Pbar_C_d = smoothness_matrices(spec, params, quadratic)
    H_P_d, P_P_d = plant_supply_dt(plant_dt)
    _, Wbar = build_W(spec.E, spec.n, spec.n_lambda, projection)
    dt = plant_dt.step
    M0 = Hbar_C_c + params.zeta * dt * Pbar_C_d
    M1 = Wbar.T @ (H_P_d + dt * P_P_d) @ Wbar
    return sym(M0), sym(M1)


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.round(np.asarray(a, dtype=float), 12))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


def minimize_pencil(M0, M1, bounds=DELTA_BOUNDS, tol: float = LOG_TOL):
    """Minimise ``lambda_max(M0 + delta M1)`` over ``delta`` in ``bounds``.

    The objective is convex in ``delta``; the search runs on ``log10 delta``.
    Returns ``(delta_star, lambda_star, boundary_hit)``.
    """
    lo, hi = bounds
    d, val = golden_min_log10(lambda d: sym_eig_max(M0 + d * M1).max_eigenvalue, lo, hi, tol)
    span = np.log10(hi) - np.log10(lo)
    hit = min(np.log10(d) - np.log10(lo), np.log10(hi) - np.log10(d)) < 1e-3 * span
    return float(d), float(val), bool(hit)


def _certificate(kind, M0, M1, variant, zeta_dt=None) -> Certificate:
    d, val, hit = minimize_pencil(M0, M1)
    if hit:
        log.warning("%s certificate: delta search stopped at a bound (delta=%.3g)", kind, d)
    return Certificate(
        delta_star=d,
        lambda_max_star=val,
        feasible=bool(val < 0),
        kind=kind,
        matrices_hash=_digest(M0, M1),
        variant=variant,
        zeta_dt=zeta_dt,
        boundary_hit=hit,
        dimension=M0.shape[0],
        matrix=M0 + d * M1,
    )


def certify_ct(spec: OcpSpec, params: PdgParams, plant: ContinuousPlant,
               use_P_variant: bool = True, projection: ProjectionPair | None = None,
               lifted: bool = False) -> Certificate:
    """Continuous-time certificate; independent of ``zeta`` and ``dt``."""
    M0, M1 = ct_pencil(spec, params, plant, use_P_variant, projection, lifted)
    variant = {"curvature": "P" if use_P_variant else "sigma",
               "projected_W": projection is not None, "lifted": bool(lifted)}
    return _certificate("continuous", M0, M1, variant)


def certify_dt(spec: OcpSpec, params: PdgParams, plant_dt: DiscretePlant,
               use_P_variant: bool = True, projection: ProjectionPair | None = None,
               quadratic: bool = True) -> Certificate:
    """Sampled-data certificate. ``lambda_max_star`` is the LMI epsilon."""
    if abs(plant_dt.step - params.dt) > 1e-12 * max(1.0, params.dt):
        raise DomainError("plant discretisation step must equal the controller period dt")
    M0, M1 = dt_pencil(spec, params, plant_dt, use_P_variant, projection, quadratic)
    variant = {"curvature": "P" if use_P_variant else "sigma",
               "projected_W": projection is not None,
               "quadratic_pbar": bool(quadratic)}
    return _certificate("discrete", M0, M1, variant, zeta_dt=params.zeta_dt)
