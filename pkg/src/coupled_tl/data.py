"""Windowing, CSV ingestion, synthetic signals and error metrics.

Signal matrices are n x N with one window per column.  On disk (CSV) the
layout is transposed: one window per row, no header.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError

#: Sampling rate assumed by the synthetic generators (Hz).
SYNTH_FS = 125.0
#: Heart-rate band of the synthetic fundamentals (Hz): 60-100 beats/min.
SYNTH_RATE_HZ = (1.0, 100.0 / 60.0)
SYNTH_KINDS = ("harmonic", "pulse-train")


@dataclass(frozen=True)
class SignalWindow:
    samples: np.ndarray
    source_id: str
    offset: int


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    std: float
    max: float
    min: float
    count: int


def window_stream(samples, n: int, stride: int | None = None, source_id: str = ""):
    """Cut a 1-D record into length-``n`` windows; a trailing partial chunk is dropped."""
    if n < 1:
        raise ValueError("window length must be positive")
    stride = n if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be positive")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < n:
        return []
    return [
        SignalWindow(x[i : i + n].copy(), source_id, i)
        for i in range(0, x.size - n + 1, stride)
    ]


def windows_to_matrix(windows) -> np.ndarray:
    if not windows:
        raise DataError("no windows")
    return np.column_stack([w.samples for w in windows])


def nmse(x_hat, x) -> float:
    """``||x_hat - x||^2 / ||x||^2``."""
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise DimensionError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    ref = float(np.sum(x * x))
    if ref == 0.0:
        raise DataError("nmse is undefined for a zero reference signal")
    return float(np.sum((x_hat - x) ** 2)) / ref


def rmse(x_hat, x) -> float:
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise DimensionError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    return float(np.sqrt(np.mean((x_hat - x) ** 2)))


def columnwise(metric, X_hat, X) -> np.ndarray:
    """Apply a per-window metric to every column pair."""
    X_hat = np.asarray(X_hat, dtype=float)
    X = np.asarray(X, dtype=float)
    if X_hat.shape != X.shape:
        raise DimensionError(f"shape mismatch {X_hat.shape} vs {X.shape}")
    return np.array([metric(X_hat[:, j], X[:, j]) for j in range(X.shape[1])])


def error_stats(errors) -> ErrorStats:
    """Mean, sample std (ddof=1, or 0 for a single value), max and min."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise DataError("error_stats needs at least one value")
    std = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    return ErrorStats(float(np.mean(e)), std, float(e.max()), float(e.min()), int(e.size))


def normalize_windows(X) -> np.ndarray:
    """Per-window zero mean and unit Euclidean norm (constant windows stay zero)."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(Xc, axis=0, keepdims=True)
    return np.divide(Xc, norms, out=np.zeros_like(Xc), where=norms > 0)


def split_train_test(X, n_train: int):
    """Contiguous prefix split: the first ``n_train`` columns train."""
    X = np.asarray(X)
    if not 0 < n_train < X.shape[1]:
        raise ValueError(f"n_train must lie in (0, {X.shape[1]})")
    return X[:, :n_train], X[:, n_train:]


def _draw_harmonic(rng, fs=SYNTH_FS, rate_hz=SYNTH_RATE_HZ):
    # Draw order is part of the generator's contract (tests replay it).
    k = int(rng.integers(3, 7))
    f0 = rng.uniform(*rate_hz) / fs
    phases = rng.uniform(0.0, 2.0 * np.pi, size=k)
    return f0, phases


def _harmonic_window(n, f0, phases):
    t = np.arange(n)
    orders = np.arange(1, len(phases) + 1)
    return np.sum(
        np.cos(2.0 * np.pi * f0 * orders[:, None] * t + phases[:, None]) / orders[:, None],
        axis=0,
    )


def _pulse_window(n, rng, fs=SYNTH_FS, rate_hz=SYNTH_RATE_HZ):
    period = fs / rng.uniform(*rate_hz)
    width = 0.02 * fs
    t = np.arange(n)
    x = np.zeros(n)
    centre = rng.uniform(0.0, period) - period
    while centre < n + 4 * width:
        x += np.exp(-0.5 * ((t - centre) / width) ** 2)
        centre += period * (1.0 + 0.05 * rng.standard_normal())
    return x


def synth_signals(kind: str, count: int, n: int, seed: int, noise_std: float = 0.0):
    """Deterministic quasi-periodic test signals, shape (n, count).

    ``harmonic``: 3-6 cosines at multiples of a fundamental in the 60-100 bpm
    band (sampled at 125 Hz), amplitude ``1/k`` for the k-th harmonic, random
    phases.  ``pulse-train``: Gaussian bumps (sigma 20 ms) repeating at a
    random rate with 5% beat-to-beat jitter, a crude QRS proxy.
    """
    if count < 1 or n < 1:
        raise ValueError("count and n must be positive")
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown signal kind {kind!r}; choose from {SYNTH_KINDS}")
    rng = np.random.default_rng(seed)
    X = np.empty((n, count))
    for j in range(count):
        if kind == "harmonic":
            X[:, j] = _harmonic_window(n, *_draw_harmonic(rng))
        else:
            X[:, j] = _pulse_window(n, rng)
    if noise_std > 0:
        X += noise_std * np.random.default_rng([seed, 1]).standard_normal(X.shape)
    return X


def load_windows_csv(path) -> np.ndarray:
    """Read one window per row into an (n, N) matrix.

    Raises :class:`DataError` on ragged rows, non-numeric cells or non-finite
    values; the message names the offending line.
    """
    path = Path(path)
    rows = []
    width = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            try:
                row = [float(c) for c in cells]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in row):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(
                    f"{path}:{lineno}: expected {width} values, found {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=float).T


def save_matrix_csv(path, M) -> None:
    """Write an (n, N) matrix as N rows of n values (full double precision)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    np.savetxt(path, M.T, delimiter=",", fmt="%.17g")


def write_manifest(path, entries: dict) -> None:
    lines = [f"{key} = {value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}: malformed manifest line {line!r}")
        out[key.strip()] = value.strip()
    return out
