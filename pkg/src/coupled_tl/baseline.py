"""l1/DCT compressed-sensing baseline.

Each measurement vector is inverted on its own by proximal gradient descent
(ISTA, optionally with FISTA momentum) on the Lagrangian problem::

    min_a  0.5 ||y - Phi S^T a||^2 + gamma ||a||_1

with ``S`` the orthonormal DCT-II analysis matrix, then ``x = S^T a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .errors import DataError, DimensionError

GAMMA_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


@dataclass(frozen=True)
class CsSolverConfig:
    gamma: float
    max_iters: int = 500
    rel_tol: float = 1e-8
    acceleration: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class LassoResult:
    coef: np.ndarray
    iterations: int
    objective: list[float] = field(default_factory=list)
    step: float = 0.0


def dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II analysis matrix (rows are atoms)."""
    if n < 1:
        raise ValueError("n must be positive")
    return fft.dct(np.eye(n), type=2, norm="ortho", axis=0)


def soft_threshold(v, tau: float):
    """Proximal map of ``tau * ||.||_1``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def power_iteration(A, n_iter: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of ``A^T A``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = A.T @ (A @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return float(v @ (A.T @ (A @ v)))


def lasso_objective(A, y, coef, gamma) -> float:
    r = y - A @ coef
    return 0.5 * float(r @ r) + gamma * float(np.sum(np.abs(coef)))


def ista(A, y, gamma, *, max_iters=500, rel_tol=1e-8, acceleration=False,
         step=None, x0=None) -> LassoResult:
    """Proximal gradient for ``0.5 ||y - A a||^2 + gamma ||a||_1``.

    ``step`` defaults to ``1 / L`` with ``L`` from 100 power-iteration steps.
    The iteration stops when the relative objective change drops below
    ``rel_tol`` (objective scale floored at 1).
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if step is None:
        L = power_iteration(A)
        step = 1.0 / L if L > 0 else 1.0
    coef = np.zeros(A.shape[1]) if x0 is None else np.array(x0, dtype=float)
    obj = [lasso_objective(A, y, coef, gamma)]
    momentum, t = coef, 1.0
    it = 0
    for it in range(1, max_iters + 1):
        point = momentum if acceleration else coef
        grad = A.T @ (A @ point - y)
        new = soft_threshold(point - step * grad, step * gamma)
        if acceleration:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            momentum = new + ((t - 1.0) / t_next) * (new - coef)
            t = t_next
        coef = new
        obj.append(lasso_objective(A, y, coef, gamma))
        if abs(obj[-2] - obj[-1]) / max(1.0, abs(obj[-2])) < rel_tol:
            break
    return LassoResult(coef, it, obj, step)


def _operator(Phi, S):
    Phi = np.asarray(Phi, dtype=float)
    S = np.asarray(S, dtype=float)
    if S.shape != (Phi.shape[1], Phi.shape[1]):
        raise DimensionError(f"basis {S.shape} does not match sensing matrix {Phi.shape}")
    return Phi @ S.T


def cs_reconstruct(Phi, S, y, config: CsSolverConfig, *, return_result=False):
    """Recover a signal from ``y = Phi x`` assuming sparsity in basis ``S``."""
    A = _operator(Phi, S)
    y = np.asarray(y, dtype=float)
    if y.shape != (A.shape[0],):
        raise DimensionError(f"expected a {A.shape[0]}-vector, got shape {y.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise DataError("non-finite input to cs_reconstruct")
    res = ista(A, y, config.gamma, max_iters=config.max_iters,
               rel_tol=config.rel_tol, acceleration=config.acceleration)
    x = np.asarray(S, dtype=float).T @ res.coef
    return (x, res) if return_result else x


class CsReconstructor:
    """Batch CS inversion with the operator and step size computed once.

    ``gamma_rel`` is relative: each column ``y`` is solved with
    ``gamma = gamma_rel * ||A^T y||_inf``.
    """

    def __init__(self, Phi, S, gamma_rel, max_iters=500, rel_tol=1e-8,
                 acceleration=False):
        self.A = _operator(Phi, S)
        self.S = np.asarray(S, dtype=float)
        self.gamma_rel = float(gamma_rel)
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.acceleration = acceleration
        self.step = 1.0 / power_iteration(self.A)
        self.iterations: list[int] = []

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return self._one(y)
        return np.column_stack([self._one(col) for col in y.T])

    def _one(self, y):
        scale = np.max(np.abs(self.A.T @ y))
        if scale == 0.0:
            self.iterations.append(0)
            return np.zeros(self.A.shape[1])
        res = ista(self.A, y, self.gamma_rel * scale, max_iters=self.max_iters,
                   rel_tol=self.rel_tol, acceleration=self.acceleration,
                   step=self.step)
        self.iterations.append(res.iterations)
        return self.S.T @ res.coef


def select_gamma(Phi, S, X_val, grid=GAMMA_GRID, **solver_kw) -> float:
    """Pick the relative ``gamma`` from ``grid`` with lowest mean NMSE on ``X_val``."""
    from .data import nmse

    X_val = np.asarray(X_val, dtype=float)
    Y_val = np.asarray(Phi, dtype=float) @ X_val
    scores = []
    for g in grid:
        rec = CsReconstructor(Phi, S, g, **solver_kw)(Y_val)
        scores.append(np.mean([nmse(rec[:, j], X_val[:, j]) for j in range(X_val.shape[1])]))
    return float(grid[int(np.argmin(scores))])
