"""Coupled analysis transform learning.

Two square transforms are learned jointly, ``T_M`` for the measurement domain
(``Y``, m x N) and ``T_S`` for the signal domain (``X``, n x N), together
with a linear coupling ``C`` (n x m) that maps measurement coefficients onto
signal coefficients::

    ||T_M Y - Z_M||^2 + ||T_S X - Z_S||^2
      + lam (||T_M||^2 + ||T_S||^2 - log|det T_M| - log|det T_S|)
      + mu ||Z_S - C Z_M||^2

Each variable block has an exact minimizer, so alternating over them never
increases the objective.  Once trained, inversion of a measurement ``y`` is
``x = T_S^{-1} C T_M y``, which is collapsed into one precomputed n x m
operator.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import DataError, DimensionError, NumericalError
from .transform import check_transform, log_abs_det, update_transform

logger = logging.getLogger(__name__)

MAGIC = b"CTL1"
_HEADER = struct.Struct("<4sIIdd")

#: Ridge added to ``Z_M Z_M^T`` when it is not positive definite.
COUPLING_RIDGE = 1e-10

STEP_NAMES = ("Z_M", "Z_S", "T_M", "T_S", "C")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    mu: float = 1.0
    max_iters: int = 200
    rel_tol: float = 1e-6
    seed: int = 0
    init_scheme: str = "identity"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.init_scheme not in ("identity", "seeded-random-orthogonal"):
            raise ValueError(f"unknown init_scheme {self.init_scheme!r}")


@dataclass(frozen=True)
class CoupledObjective:
    fidelity_m: float
    fidelity_s: float
    regularizer: float
    coupling: float

    @property
    def total(self) -> float:
        return self.fidelity_m + self.fidelity_s + self.regularizer + self.coupling


@dataclass
class TrainTrace:
    """Objective history of a training run.

    ``history[0]`` is the objective after initialization and ``history[k]``
    the objective at the end of iteration ``k``.  When training is run with
    ``track_steps=True``, ``steps[k - 1]`` holds the total after each of the
    five block updates of iteration ``k`` (in :data:`STEP_NAMES` order).
    """

    history: list[CoupledObjective] = field(default_factory=list)
    steps: list[tuple[float, ...]] = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False

    @property
    def totals(self) -> np.ndarray:
        return np.array([h.total for h in self.history])

    def as_rows(self):
        for k, h in enumerate(self.history):
            yield (k, h.total, h.fidelity_m, h.fidelity_s, h.regularizer, h.coupling)


class CoupledModel:
    """Trained coupled transforms plus the precomputed inversion operator.

    Instances are immutable; all arrays are read-only.
    """

    __slots__ = ("T_M", "T_S", "C", "lam", "mu", "recon_op")

    def __init__(self, T_M, T_S, C, lam: float, mu: float):
        T_M = check_transform(T_M, "T_M").copy()
        T_S = check_transform(T_S, "T_S").copy()
        C = np.array(C, dtype=float)
        if C.shape != (T_S.shape[0], T_M.shape[0]):
            raise DimensionError(
                f"coupling map {C.shape} should be {(T_S.shape[0], T_M.shape[0])}"
            )
        recon_op = linalg.solve(T_S, C @ T_M)
        for arr in (T_M, T_S, C, recon_op):
            arr.setflags(write=False)
        object.__setattr__(self, "T_M", T_M)
        object.__setattr__(self, "T_S", T_S)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "lam", float(lam))
        object.__setattr__(self, "mu", float(mu))
        object.__setattr__(self, "recon_op", recon_op)

    def __setattr__(self, name, value):
        raise AttributeError("CoupledModel is immutable")

    @property
    def n(self) -> int:
        return self.T_S.shape[0]

    @property
    def m(self) -> int:
        return self.T_M.shape[0]

    def __repr__(self):
        return f"CoupledModel(n={self.n}, m={self.m}, lam={self.lam}, mu={self.mu})"

    def reconstruct(self, y):
        return reconstruct(self, y)


def _as_data(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DataError(f"{name} contains non-finite values")
    return A


def coupled_objective(T_M, T_S, Z_M, Z_S, C, X, Y, lam, mu) -> CoupledObjective:
    """Evaluate the coupled objective term by term."""
    T_M = check_transform(T_M, "T_M")
    T_S = check_transform(T_S, "T_S")
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    Z_M, Z_S, C = np.asarray(Z_M, float), np.asarray(Z_S, float), np.asarray(C, float)
    n, N = X.shape
    m = Y.shape[0]
    expected = {
        "Y": (Y.shape, (m, N)),
        "T_M": (T_M.shape, (m, m)),
        "T_S": (T_S.shape, (n, n)),
        "Z_M": (Z_M.shape, (m, N)),
        "Z_S": (Z_S.shape, (n, N)),
        "C": (C.shape, (n, m)),
    }
    for name, (got, want) in expected.items():
        if got != want:
            raise DimensionError(f"{name} has shape {got}, expected {want}")

    reg = lam * (
        np.sum(T_M * T_M) + np.sum(T_S * T_S) - log_abs_det(T_M) - log_abs_det(T_S)
    )
    return CoupledObjective(
        fidelity_m=float(np.sum((T_M @ Y - Z_M) ** 2)),
        fidelity_s=float(np.sum((T_S @ X - Z_S) ** 2)),
        regularizer=float(reg),
        coupling=float(mu * np.sum((Z_S - C @ Z_M) ** 2)),
    )


def solve_zm(T_M, Y, Z_S, C, mu: float) -> np.ndarray:
    """Measurement-domain coefficients minimizing
    ``||T_M Y - Z_M||^2 + mu ||Z_S - C Z_M||^2``.

    Solves the normal equations ``(I + mu C^T C) Z_M = T_M Y + mu C^T Z_S``.
    """
    if mu < 0:
        raise ValueError("mu must be non-negative")
    T_M, Y, Z_S, C = (np.asarray(a, dtype=float) for a in (T_M, Y, Z_S, C))
    m = T_M.shape[0]
    if T_M.shape != (m, m) or Y.shape[0] != m or C.shape != (Z_S.shape[0], m):
        raise DimensionError("inconsistent shapes for Z_M update")
    if Z_S.shape[1] != Y.shape[1]:
        raise DimensionError("Z_S and Y must have the same number of columns")
    normal = np.eye(m) + mu * (C.T @ C)
    rhs = T_M @ Y + mu * (C.T @ Z_S)
    return linalg.cho_solve(linalg.cho_factor(normal), rhs)


def solve_zs(T_S, X, Z_M, C, mu: float) -> np.ndarray:
    """Signal-domain coefficients ``(T_S X + mu C Z_M) / (1 + mu)``."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    T_S, X, Z_M, C = (np.asarray(a, dtype=float) for a in (T_S, X, Z_M, C))
    n = T_S.shape[0]
    if T_S.shape != (n, n) or X.shape[0] != n or C.shape != (n, Z_M.shape[0]):
        raise DimensionError("inconsistent shapes for Z_S update")
    if Z_M.shape[1] != X.shape[1]:
        raise DimensionError("Z_M and X must have the same number of columns")
    return (T_S @ X + mu * (C @ Z_M)) / (1.0 + mu)


def solve_coupling(Z_S, Z_M) -> np.ndarray:
    """Least-squares coupling ``C = Z_S Z_M^T (Z_M Z_M^T)^{-1}``.

    Falls back to a tiny ridge on ``Z_M Z_M^T`` when ``Z_M`` is rank deficient.
    """
    Z_S = np.asarray(Z_S, dtype=float)
    Z_M = np.asarray(Z_M, dtype=float)
    if Z_S.ndim != 2 or Z_M.ndim != 2 or Z_S.shape[1] != Z_M.shape[1]:
        raise DimensionError(f"incompatible coefficient shapes {Z_S.shape}, {Z_M.shape}")
    gram = Z_M @ Z_M.T
    cross = Z_M @ Z_S.T
    try:
        factor = linalg.cho_factor(gram)
        if np.min(np.abs(np.diag(factor[0]))) ** 2 < 1e-14 * np.max(np.diag(gram)):
            raise linalg.LinAlgError("ill-conditioned")
    except linalg.LinAlgError:
        logger.debug("Z_M is rank deficient; using ridge %g", COUPLING_RIDGE)
        factor = linalg.cho_factor(gram + COUPLING_RIDGE * np.eye(gram.shape[0]))
    return linalg.cho_solve(factor, cross).T


def _random_orthogonal(k, rng):
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def train(X, Y, config: TrainConfig = TrainConfig(), *, track_steps: bool = False):
    """Learn a :class:`CoupledModel` from paired signals and measurements.

    Parameters
    ----------
    X : (n, N) array
        Ground-truth signal windows, one per column.
    Y : (m, N) array
        Matching measurements.
    config : TrainConfig
    track_steps : bool
        Record the objective after every block update (costs one extra
        objective evaluation per step).

    Returns
    -------
    model : CoupledModel
    trace : TrainTrace

    Notes
    -----
    Each iteration updates, in order, ``Z_M``, ``Z_S``, ``T_M``, ``T_S`` and
    ``C``.  Iteration stops once
    ``|f_k - f_{k-1}| / max(1, |f_{k-1}|) < rel_tol`` or after ``max_iters``.
    """
    X = _as_data(X, "X")
    Y = _as_data(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(
            f"X has {X.shape[1]} columns but Y has {Y.shape[1]}"
        )
    n, N = X.shape
    m = Y.shape[0]
    if N < max(n, m):
        warnings.warn(
            f"only {N} training columns for dimensions n={n}, m={m}",
            RuntimeWarning,
            stacklevel=2,
        )
    lam, mu = config.lam, config.mu

    if config.init_scheme == "identity":
        T_M, T_S = np.eye(m), np.eye(n)
    else:
        rng = np.random.default_rng(config.seed)
        T_M, T_S = _random_orthogonal(m, rng), _random_orthogonal(n, rng)
    Z_M = T_M @ Y
    Z_S = T_S @ X
    C = solve_coupling(Z_S, Z_M)

    def objective():
        return coupled_objective(T_M, T_S, Z_M, Z_S, C, X, Y, lam, mu)

    trace = TrainTrace()
    current = objective()
    trace.history.append(current)
    for it in range(1, config.max_iters + 1):
        steps = []
        Z_M = solve_zm(T_M, Y, Z_S, C, mu)
        if track_steps:
            steps.append(objective().total)
        Z_S = solve_zs(T_S, X, Z_M, C, mu)
        if track_steps:
            steps.append(objective().total)
        T_M = update_transform(Y, Z_M, lam)
        if track_steps:
            steps.append(objective().total)
        T_S = update_transform(X, Z_S, lam)
        if track_steps:
            steps.append(objective().total)
        C = solve_coupling(Z_S, Z_M)

        previous, current = current, objective()
        if track_steps:
            steps.append(current.total)
            trace.steps.append(tuple(steps))
        trace.history.append(current)
        trace.iterations_run = it
        if not np.isfinite(current.total):
            raise NumericalError(f"objective became non-finite at iteration {it}")
        change = abs(current.total - previous.total) / max(1.0, abs(previous.total))
        logger.debug("iter %d objective %.10g (rel change %.3g)", it, current.total, change)
        if change < config.rel_tol:
            trace.converged = True
            break

    return CoupledModel(T_M, T_S, C, lam, mu), trace


def reconstruct(model: CoupledModel, y):
    """Invert measurements with the precomputed operator.

    ``y`` may be a single m-vector or an (m, K) batch; the result has the
    matching shape with ``n`` rows.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim not in (1, 2) or y.shape[0] != model.m:
        raise DimensionError(f"expected {model.m} measurement rows, got shape {y.shape}")
    return model.recon_op @ y


def reconstruct_explicit(model: CoupledModel, y):
    """Two-stage inversion: ``z_M = T_M y``, ``z_S = C z_M``, solve ``T_S x = z_S``.

    Slower than :func:`reconstruct`; kept as an independent check of the
    precomputed operator.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim not in (1, 2) or y.shape[0] != model.m:
        raise DimensionError(f"expected {model.m} measurement rows, got shape {y.shape}")
    z_s = model.C @ (model.T_M @ y)
    return linalg.solve(model.T_S, z_s)


def save_model(model: CoupledModel, path) -> None:
    """Write ``model`` in the CTL1 binary format.

    Layout (little-endian): ``b"CTL1"``, u32 n, u32 m, f64 lam, f64 mu, then
    T_M (m*m), T_S (n*n) and C (n*m) as row-major f64.  The reconstruction
    operator is not stored.
    """
    header = _HEADER.pack(MAGIC, model.n, model.m, model.lam, model.mu)
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes(order="C")
        for a in (model.T_M, model.T_S, model.C)
    )
    Path(path).write_bytes(header + body)


def load_model(path) -> CoupledModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a CTL1 model file")
    _, n, m, lam, mu = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 8 * (m * m + n * n + n * m)
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    T_M = values[: m * m].reshape(m, m)
    T_S = values[m * m : m * m + n * n].reshape(n, n)
    C = values[m * m + n * n :].reshape(n, m)
    return CoupledModel(T_M, T_S, C, lam, mu)
