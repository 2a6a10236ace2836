"""Dense numerical kernels: symmetric eigenvalues, matrix exponential,
linear solves and scalar convex minimisation.

Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, NumericError, SingularMatrixError

__all__ = [
    "SymEigResult",
    "as_matrix",
    "sym",
    "sym_eig_max",
    "jacobi_eigvalsh",
    "expm",
    "solve_linear",
    "golden_min",
    "golden_min_log10",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# Higham (2005) degree-13 Pade numerator coefficients and scaling threshold.
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


@dataclass(frozen=True)
class SymEigResult:
    eigenvalues: np.ndarray
    max_eigenvalue: float


def as_matrix(M, name: str = "matrix", square: bool = False) -> np.ndarray:
    """Coerce to a finite 2-D float array, raising on bad shape or values."""
    A = np.asarray(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {A.shape}")
    if square and A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericError(f"{name} has non-finite entries")
    return A


def sym(M) -> np.ndarray:
    """Symmetric part (M + M^T) / 2."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def jacobi_eigvalsh(M, tol: float = 1e-14, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of the symmetric part of ``M`` by cyclic Jacobi rotations.

    Returns the eigenvalues in ascending order. Stops once the off-diagonal
    Frobenius mass drops below ``tol`` times the total Frobenius norm.
    """
    A = sym(as_matrix(M, "M", square=True)).copy()
    n = A.shape[0]
    if n == 1:
        return A.ravel().copy()
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(A, 1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    # rotation angle below resolution; avoids theta**2 overflow
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
    else:
        raise NumericError(f"Jacobi did not converge in {max_sweeps} sweeps")
    return np.sort(np.diag(A))


def sym_eig_max(M, method: str = "lapack") -> SymEigResult:
    """Eigenvalues (ascending) of the symmetric part of ``M``.

    ``method="lapack"`` calls the LAPACK symmetric driver and is the default
    for the large pencils evaluated during delta searches; ``"jacobi"`` runs
    :func:`jacobi_eigvalsh`.
    """
    A = as_matrix(M, "M", square=True)
    if method == "lapack":
        vals = np.linalg.eigvalsh(sym(A))
    elif method == "jacobi":
        vals = jacobi_eigvalsh(A)
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    return SymEigResult(eigenvalues=vals, max_eigenvalue=float(vals[-1]))


def expm(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a [13/13] Pade approximant."""
    A = as_matrix(M, "M", square=True)
    n = A.shape[0]
    ident = np.eye(n)
    norm1 = np.linalg.norm(A, 1)
    if norm1 == 0.0:
        return ident
    s = max(0, int(math.ceil(math.log2(norm1 / _THETA13))))
    A = A / (2.0**s)
    b = _PADE13
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (
        A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
        + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident
    )
    V = (
        A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
        + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    )
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def solve_linear(A, B) -> np.ndarray:
    """Solve ``A X = B`` by partially pivoted LU.

    Raises
    ------
    SingularMatrixError
        If a pivot of the LU factorisation is zero to machine precision.
    """
    A = as_matrix(A, "A", square=True)
    Bm = np.asarray(B, dtype=float)
    vector_rhs = Bm.ndim == 1
    Bm = as_matrix(Bm, "B")
    if Bm.shape[0] != A.shape[0]:
        raise DimensionError(f"A is {A.shape} but B has {Bm.shape[0]} rows")
    with warnings.catch_warnings():
        # exact zero pivots are reported below with their index
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu))
    thresh = np.finfo(float).eps * A.shape[0] * max(np.abs(A).max(), 1e-300)
    bad = np.flatnonzero(diag <= thresh)
    if bad.size:
        raise SingularMatrixError(
            f"matrix is singular to machine precision at pivot {int(bad[0])}",
            pivot=int(bad[0]),
        )
    X = scipy.linalg.lu_solve((lu, piv), Bm, check_finite=False)
    return X.ravel() if vector_rhs else X


def golden_min(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-8):
    """Golden-section search for the minimiser of a unimodal ``f`` on [lo, hi].

    Returns ``(argmin, f(argmin))``. The bracket endpoints are compared with
    the final interior point so a minimiser on the boundary is still found.
    """
    if not lo < hi:
        raise DomainError(f"golden_min needs lo < hi, got [{lo}, {hi}]")
    if tol <= 0:
        raise DomainError("tol must be positive")
    a, b = float(lo), float(hi)
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    best_x, best_f = (x1, f1) if f1 <= f2 else (x2, f2)
    for edge in (float(lo), float(hi)):
        if abs(best_x - edge) <= 2 * tol:
            fe = f(edge)
            if fe < best_f:
                best_x, best_f = edge, fe
    return best_x, best_f


def golden_min_log10(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-6):
    """Minimise ``f`` over a positive interval by golden search on log10 of the argument."""
    if lo <= 0 or hi <= 0:
        raise DomainError("log-scale search needs a positive interval")
    t, val = golden_min(lambda s: f(10.0**s), math.log10(lo), math.log10(hi), tol)
    return 10.0**t, val
