"""Linear plants, zero-order-hold discretisation and steady-state targets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, InconsistentTargetError
from .numkit import as_matrix, expm

__all__ = [
    "ContinuousPlant",
    "DiscretePlant",
    "SteadyTarget",
    "discretize",
    "steady_input",
    "to_error_coordinates",
    "from_error_coordinates",
]


@dataclass(frozen=True)
class ContinuousPlant:
    """``xdot = A_c x + B_c u``."""

    A_c: np.ndarray
    B_c: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A_c, "A_c", square=True)
        B = as_matrix(self.B_c, "B_c")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B_c has {B.shape[0]} rows, A_c is {A.shape}")
        object.__setattr__(self, "A_c", A)
        object.__setattr__(self, "B_c", B)

    @property
    def n(self) -> int:
        return self.A_c.shape[0]

    @property
    def m(self) -> int:
        return self.B_c.shape[1]


@dataclass(frozen=True)
class DiscretePlant:
    """``x[k+1] = A_d x[k] + B_d u[k]`` with sampling period ``step`` seconds."""

    A_d: np.ndarray
    B_d: np.ndarray
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise DomainError(f"step must be positive, got {self.step}")
        A = as_matrix(self.A_d, "A_d", square=True)
        B = as_matrix(self.B_d, "B_d")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B_d has {B.shape[0]} rows, A_d is {A.shape}")
        object.__setattr__(self, "A_d", A)
        object.__setattr__(self, "B_d", B)
        object.__setattr__(self, "step", float(self.step))

    @property
    def n(self) -> int:
        return self.A_d.shape[0]

    @property
    def m(self) -> int:
        return self.B_d.shape[1]

    def advance(self, x, u) -> np.ndarray:
        return self.A_d @ np.asarray(x, dtype=float) + self.B_d @ np.atleast_1d(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class SteadyTarget:
    x_ref: np.ndarray
    u_ref: np.ndarray
    residual: float


def discretize(plant: ContinuousPlant, step: float) -> DiscretePlant:
    """Exact zero-order-hold discretisation.

    Both matrices come from one exponential of the augmented generator
    ``[[A_c, B_c], [0, 0]] * step``.
    """
    if not step > 0:
        raise DomainError(f"discretisation step must be positive, got {step}")
    n, m = plant.n, plant.m
    M = np.zeros((n + m, n + m))
    M[:n, :n] = plant.A_c
    M[:n, n:] = plant.B_c
    F = expm(M * step)
    return DiscretePlant(A_d=F[:n, :n], B_d=F[:n, n:], step=step)


def steady_input(plant: ContinuousPlant, x_ref, tol: float = 1e-6) -> SteadyTarget:
    """Least-squares input holding ``x_ref`` at rest.

    Raises
    ------
    InconsistentTargetError
        If the best input leaves ``||A_c x_ref + B_c u_ref||`` above ``tol``.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    x_ref = np.asarray(x_ref, dtype=float).ravel()
    if x_ref.size != plant.n:
        raise DimensionError(f"x_ref has {x_ref.size} entries, plant has n={plant.n}")
    B = plant.B_c
    rhs = -plant.A_c @ x_ref
    # normal equations; m is tiny for every plant handled here
    u_ref = np.linalg.solve(B.T @ B, B.T @ rhs)
    residual = float(np.linalg.norm(plant.A_c @ x_ref + B @ u_ref))
    if residual > tol:
        raise InconsistentTargetError(
            f"no constant input holds x_ref at rest (residual {residual:.3g} > {tol:.3g})"
        )
    return SteadyTarget(x_ref=x_ref, u_ref=u_ref, residual=residual)


def to_error_coordinates(x, u, target: SteadyTarget):
    """Shift a physical (x, u) pair so the target becomes the origin."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != target.x_ref.size or u.shape[-1] != target.u_ref.size:
        raise DimensionError("state/input sizes do not match the target")
    return x - target.x_ref, u - target.u_ref


def from_error_coordinates(x_err, u_err, target: SteadyTarget):
    x_err = np.asarray(x_err, dtype=float)
    u_err = np.asarray(u_err, dtype=float)
    if x_err.shape[-1] != target.x_ref.size or u_err.shape[-1] != target.u_ref.size:
        raise DimensionError("state/input sizes do not match the target")
    return x_err + target.x_ref, u_err + target.u_ref
