"""Preconditioned conjugate gradients for the SPD systems of the outer
iteration. Plain CG with an optional Jacobi (diagonal) preconditioner;
convergence is declared on the true residual ||A x - b|| <= rtol ||b||.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class LinearSolveError(RuntimeError):
    """CG hit its iteration cap; carries the report."""

    def __init__(self, report: "CgReport"):
        super().__init__(
            f"CG did not converge in {report.iterations} iterations "
            f"(relative residual {report.relative_residual:.3e})")
        self.report = report


@dataclass(frozen=True)
class CgConfig:
    rtol: float = 1e-10
    maxit: int | None = None  # default 10 * n
    preconditioner: str = "jacobi"  # "jacobi" | "none"

    def __post_init__(self):
        if not 0.0 < self.rtol < 1.0:
            raise ValueError("rtol must lie in (0, 1)")
        if self.maxit is not None and self.maxit < 1:
            raise ValueError("maxit must be >= 1")
        if self.preconditioner not in ("jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass(frozen=True)
class CgReport:
    iterations: int
    relative_residual: float
    converged: bool


def matvec(a: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product with a shape check."""
    x = np.asarray(x, dtype=float)
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"matrix is {a.shape}, vector has length {x.shape[0]}")
    return a @ x


def solve_cg(a: sp.spmatrix, rhs: np.ndarray,
             config: CgConfig = CgConfig(),
             x0: np.ndarray | None = None) -> tuple[np.ndarray, CgReport]:
    """Solve A x = rhs for SPD A. Returns (x, report); raises nothing on
    non-convergence (the report carries converged=False). An optional x0
    warm-starts the iteration (the convergence test stays relative to
    ||rhs||, so the accuracy contract is unchanged)."""
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"matrix is {a.shape}, rhs has length {n}")
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros(n), CgReport(0, 0.0, True)
    maxit = config.maxit if config.maxit is not None else 10 * n

    if config.preconditioner == "jacobi":
        diag = a.diagonal()
        if np.any(diag <= 0.0):
            raise ValueError("matrix diagonal must be positive for Jacobi")
        apply_m = lambda r: r / diag
    else:
        apply_m = lambda r: r

    if x0 is None:
        x = np.zeros(n)
        r = rhs.copy()
    else:
        x = np.asarray(x0, dtype=float).copy()
        r = rhs - a @ x
        if np.linalg.norm(r) <= config.rtol * bnorm:
            return x, CgReport(0, float(np.linalg.norm(r)) / bnorm, True)
    z = apply_m(r)
    p = z.copy()
    rz = float(r @ z)
    iterations = 0
    while iterations < maxit:
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            break  # not SPD (or exact breakdown): report non-convergence
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        iterations += 1
        if np.linalg.norm(r) <= config.rtol * bnorm:
            # verify against the true residual; restart if rounding drifted
            true_r = rhs - a @ x
            if np.linalg.norm(true_r) <= config.rtol * bnorm:
                break
            r = true_r
            z = apply_m(r)
            p = z.copy()
            rz = float(r @ z)
            continue
        z = apply_m(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new

    rel = float(np.linalg.norm(rhs - a @ x)) / bnorm
    return x, CgReport(iterations, rel, rel <= config.rtol)
