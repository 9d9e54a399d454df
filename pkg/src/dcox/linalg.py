"""Symmetric positive-definite solve and inverse for the Newton system."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotSymmetric, SingularHessian

_EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class NewtonStepResult:
    step: np.ndarray
    inverse: np.ndarray | None = None


def _check_symmetric(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotSymmetric("matrix has non-finite entries")
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    if np.max(np.abs(a - a.T)) > 1e-9 * scale:
        raise NotSymmetric("matrix is not symmetric to 1e-9 relative")


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L L^T = a.

    A pivot at or below ``p * eps * max(diag)`` is treated as singular; this
    catches constant or collinear covariates without any regularisation.
    """
    a = np.asarray(a, dtype=float)
    _check_symmetric(a)
    n = a.shape[0]
    a = (a + a.T) / 2.0
    tol = n * _EPS * max(float(np.max(np.diag(a))), 0.0)
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > tol:
            raise SingularHessian(
                f"information matrix is not positive definite (pivot {pivot:.3g} at column {j}); "
                "check for constant or collinear covariates"
            )
        L[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _forward(L, b):
    y = np.zeros_like(b)
    for i in range(len(b)):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    return y


def _backward(L, y):
    x = np.zeros_like(y)
    for i in range(len(y) - 1, -1, -1):
        x[i] = (y[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


def _cho_solve(L, b):
    return _backward(L, _forward(L, np.asarray(b, dtype=float)))


def _cho_inverse(L):
    n = L.shape[0]
    inv = np.column_stack([_cho_solve(L, e) for e in np.eye(n)])
    return (inv + inv.T) / 2.0


def solve_newton_step(info, grad, want_inverse: bool = False) -> NewtonStepResult:
    """Solve ``info @ step = grad`` where ``info`` is the observed information."""
    L = cholesky(info)
    step = _cho_solve(L, grad)
    return NewtonStepResult(step, _cho_inverse(L) if want_inverse else None)


def invert_spd(info) -> np.ndarray:
    return _cho_inverse(cholesky(info))
