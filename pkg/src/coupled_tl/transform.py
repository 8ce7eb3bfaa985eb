"""Single-domain analysis transform learning.

The model analyses a data matrix ``X`` (k x N, one sample per column) with a
square transform ``T`` so that ``T @ X ~= Z``.  The learning objective is::

    ||T X - Z||_F^2 + lam * (||T||_F^2 - log|det T|)

The log-determinant keeps ``T`` away from the trivial zero solution and the
Frobenius term keeps its scale bounded.  Both block updates are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionError, DataError, NumericalError, SingularTransformError

#: Relative singular-value floor below which a transform counts as singular.
SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class TlObjectiveValue:
    total: float
    fidelity: float
    regularizer: float


def check_transform(T: np.ndarray, name: str = "T") -> np.ndarray:
    """Validate a square, nonsingular transform and return it as a float array."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {T.shape}")
    if not np.all(np.isfinite(T)):
        raise DataError(f"{name} has non-finite entries")
    sv = linalg.svdvals(T)
    if sv[0] == 0.0 or sv[-1] < SINGULAR_RTOL * sv[0]:
        raise SingularTransformError(
            f"{name} is singular (sigma_min/sigma_max = "
            f"{0.0 if sv[0] == 0 else sv[-1] / sv[0]:.3g})"
        )
    return T


def log_abs_det(T: np.ndarray) -> float:
    """``log|det T|`` for a nonsingular square matrix."""
    T = check_transform(T)
    _, logdet = np.linalg.slogdet(T)
    return float(logdet)


def _check_pair(T, X, Z=None):
    if X.ndim != 2:
        raise DimensionError(f"data must be 2-D, got shape {X.shape}")
    if T.shape[1] != X.shape[0]:
        raise DimensionError(f"transform {T.shape} does not match data {X.shape}")
    if Z is not None and Z.shape != (T.shape[0], X.shape[1]):
        raise DimensionError(
            f"coefficients {Z.shape} should be {(T.shape[0], X.shape[1])}"
        )


def tl_objective(T, X, Z, lam: float) -> TlObjectiveValue:
    """Evaluate the transform-learning objective.

    Parameters
    ----------
    T : (k, k) array
        Analysis transform.  Must be nonsingular.
    X : (k, N) array
        Data, one sample per column.
    Z : (k, N) array
        Coefficients.
    lam : float
        Regularization weight, ``lam > 0``.

    Returns
    -------
    TlObjectiveValue
        ``total = fidelity + regularizer`` with
        ``fidelity = ||TX - Z||_F^2`` and
        ``regularizer = lam * (||T||_F^2 - log|det T|)``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    T = check_transform(T)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    _check_pair(T, X, Z)
    fidelity = float(np.sum((T @ X - Z) ** 2))
    regularizer = float(lam * (np.sum(T * T) - log_abs_det(T)))
    return TlObjectiveValue(fidelity + regularizer, fidelity, regularizer)


def tl_gradient(T, X, Z, lam: float) -> np.ndarray:
    """Gradient of :func:`tl_objective` with respect to ``T``.

    ``2 (TX - Z) X^T + 2 lam T - lam T^{-T}``
    """
    T = check_transform(T)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    _check_pair(T, X, Z)
    return 2.0 * (T @ X - Z) @ X.T + 2.0 * lam * T - lam * np.linalg.inv(T).T


def update_coefficients(T, X) -> np.ndarray:
    """Exact coefficient update ``Z = T X`` (unconstrained least squares)."""
    T = np.asarray(T, dtype=float)
    X = np.asarray(X, dtype=float)
    if T.ndim != 2:
        raise DimensionError(f"transform must be 2-D, got shape {T.shape}")
    _check_pair(T, X)
    return T @ X


def update_transform(X, Z, lam: float) -> np.ndarray:
    """Closed-form minimizer of ``||TX - Z||^2 + lam (||T||^2 - log|det T|)``.

    With ``X X^T + lam I = L L^T`` (Cholesky) and ``L^{-1} X Z^T = U S V^T``
    (full SVD), the global minimizer is::

        T = 0.5 * V (S + (S^2 + 2 lam I)^{1/2}) U^T L^{-1}

    ``L^{-1}`` is only ever applied through triangular solves.

    Parameters
    ----------
    X : (k, N) array
    Z : (k, N) array
    lam : float
        Must be positive; this is what makes ``X X^T + lam I`` positive definite.

    Returns
    -------
    (k, k) array
        Always nonsingular: every singular direction gets a strictly positive
        gain ``0.5 (s + sqrt(s^2 + 2 lam))``.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim != 2 or Z.ndim != 2 or X.shape[1] != Z.shape[1] or X.shape[1] < 1:
        raise DimensionError(f"incompatible data {X.shape} and coefficients {Z.shape}")
    if Z.shape[0] != X.shape[0]:
        raise DimensionError("only square transforms are supported")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
        raise DataError("non-finite input to transform update")

    k = X.shape[0]
    gram = X @ X.T + lam * np.eye(k)
    try:
        L = linalg.cholesky(gram, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky factorization failed: {exc}") from exc

    B = linalg.solve_triangular(L, X @ Z.T, lower=True)
    U, s, Vt = linalg.svd(B)
    gain = 0.5 * (s + np.sqrt(s * s + 2.0 * lam))
    M = (Vt.T * gain) @ U.T
    # M L^{-1} == (L^{-T} M^T)^T
    return linalg.solve_triangular(L, M.T, lower=True, trans="T").T
