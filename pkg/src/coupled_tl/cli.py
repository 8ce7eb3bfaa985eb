"""Command-line entry point: ``coupled-tl {synth,train,reconstruct,evaluate,benchmark}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
from scipy import linalg

from . import __version__
from .baseline import GAMMA_GRID, CsReconstructor, dct_basis, select_gamma
from .coupled import TrainConfig, load_model, reconstruct, save_model, train
from .data import (
    SYNTH_KINDS,
    columnwise,
    error_stats,
    load_windows_csv,
    nmse,
    normalize_windows,
    read_manifest,
    rmse,
    save_matrix_csv,
    synth_signals,
    write_manifest,
)
from .errors import DataError, NumericalError
from .sensing import bernoulli_matrix, compress

logger = logging.getLogger("coupled_tl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METHODS = ("coupled", "cs-baseline")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def manifest_path(model_path) -> Path:
    return Path(f"{model_path}.manifest")


def trace_path(model_path) -> Path:
    return Path(f"{model_path}.trace.csv")


def _atomic_write(path: Path, writer):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_table(path, header, rows):
    def writer(tmp):
        with open(tmp, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    _atomic_write(path, writer)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _load_data(args, role: str, default_seed: int) -> tuple[np.ndarray, dict]:
    """Signal matrix from ``--{role}-csv`` or from the synthetic generator."""
    csv = getattr(args, f"{role}_csv", None)
    if csv:
        try:
            X = load_windows_csv(csv)
        except OSError as exc:
            raise DataError(f"cannot read {csv}: {exc.strerror or exc}") from exc
        return X, {f"{role}_source": csv}
    if not args.synth:
        raise UsageError(f"need --{role}-csv or --synth KIND")
    seed = default_seed if args.data_seed is None else args.data_seed
    X = synth_signals(args.synth, args.count, args.n, seed, args.noise_std)
    return X, {
        f"{role}_source": f"synth:{args.synth}",
        f"{role}_data_seed": seed,
        "noise_std": args.noise_std,
    }


def _sensing_seed(args, manifest) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in manifest:
        return int(manifest["seed"])
    raise UsageError("no --seed given and no manifest beside the model")


def _model_manifest(model_path) -> dict:
    path = manifest_path(model_path)
    return read_manifest(path) if path.exists() else {}


def cmd_synth(args) -> int:
    X = synth_signals(args.kind, args.count, args.n, args.seed, args.noise_std)
    _atomic_write(Path(args.out), lambda tmp: save_matrix_csv(tmp, X))
    print(f"wrote {X.shape[1]} windows of length {X.shape[0]} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    seed = 0 if args.seed is None else args.seed
    X, source = _load_data(args, "train", seed)
    if args.normalize:
        X = normalize_windows(X)
    n, N = X.shape
    m = max(1, round(args.ratio * n))
    Phi = bernoulli_matrix(m, n, seed)
    Y = compress(Phi, X)
    config = TrainConfig(lam=args.lam, mu=args.mu, max_iters=args.max_iters,
                         rel_tol=args.tol, seed=seed)

    start = time.perf_counter()
    model, trace = train(X, Y, config)
    elapsed = time.perf_counter() - start

    val = X[:, -min(args.val_count, N):]
    if args.gamma is not None:
        gamma = args.gamma
    else:
        gamma = select_gamma(Phi, dct_basis(n), val)

    manifest = {
        "n": n, "m": m, "ratio": m / n, "seed": seed,
        "sensing": "bernoulli-splitmix64", "sensing_scale": repr(Phi.scale),
        "lambda": args.lam, "mu": args.mu, "max_iters": args.max_iters, "tol": args.tol,
        "gamma": gamma, "gamma_grid": " ".join(map(str, GAMMA_GRID)),
        "gamma_validation_windows": val.shape[1],
        "train_windows": N, **source,
        "normalize": int(args.normalize),
        "metric": "nmse",
        "solver_iterations": trace.iterations_run,
        "converged": int(trace.converged),
        "final_objective": repr(trace.history[-1].total),
        "training_seconds": f"{elapsed:.6f}",
    }
    model_path = Path(args.model)
    _atomic_write(model_path, lambda tmp: save_model(model, tmp))
    _atomic_write(manifest_path(model_path), lambda tmp: write_manifest(tmp, manifest))
    _write_table(
        trace_path(model_path),
        ["iteration", "total", "fidelity_m", "fidelity_s", "regularizer", "coupling"],
        list(trace.as_rows()),
    )
    status = "converged" if trace.converged else "stopped at max_iters"
    print(f"trained n={n} m={m} on {N} windows: {trace.iterations_run} iterations "
          f"({status}), objective {trace.history[-1].total:.6g}, {elapsed:.2f} s")
    print(f"model: {model_path}")
    return EXIT_OK


def _prepare_eval(args):
    model = load_model(args.model)
    manifest = _model_manifest(args.model)
    seed = _sensing_seed(args, manifest)
    X, source = _load_data(args, "test", seed + 1)
    if int(manifest.get("normalize", 0)):
        X = normalize_windows(X)
    if X.shape[0] != model.n:
        raise DataError(f"test windows have length {X.shape[0]}, model expects {model.n}")
    Phi = bernoulli_matrix(model.m, model.n, seed)
    return model, manifest, seed, X, Phi, source


def _gamma(args, manifest) -> float:
    if args.gamma is not None:
        return args.gamma
    if "gamma" in manifest:
        return float(manifest["gamma"])
    raise UsageError("no --gamma given and no gamma recorded in the model manifest")


def _reconstruct_all(method, model, Phi, Y, gamma, args):
    if method == "coupled":
        return reconstruct(model, Y), {}
    solver = CsReconstructor(Phi, dct_basis(model.n), gamma,
                             max_iters=args.cs_iters, rel_tol=args.cs_tol)
    X_hat = solver(Y)
    return X_hat, {"cs_mean_iterations": float(np.mean(solver.iterations))}


def cmd_evaluate(args) -> int:
    model, manifest, seed, X, Phi, source = _prepare_eval(args)
    Y = compress(Phi, X)
    methods = METHODS if args.method == "both" else (args.method,)
    ratio = model.m / model.n

    rows, per_window, extra = [], [], {}
    for method in methods:
        gamma = _gamma(args, manifest) if method == "cs-baseline" else None
        X_hat, info = _reconstruct_all(method, model, Phi, Y, gamma, args)
        extra.update(info)
        errs = columnwise(nmse, X_hat, X)
        rms = columnwise(rmse, X_hat, X)
        st = error_stats(errs)
        rows.append((method, ratio, st.mean, st.std, st.max, st.min, st.count,
                     float(np.mean(rms))))
        per_window.extend((method, j, errs[j], rms[j]) for j in range(len(errs)))

    print(f"undersampling ratio {ratio:.4g}  (n={model.n}, m={model.m}, "
          f"{X.shape[1]} test windows, metric NMSE)")
    print(f"{'method':<12} {'mean, +-std':>22} {'max':>10} {'min':>10} {'mean rmse':>10}")
    for method, _, mean, std, mx, mn, _, mr in rows:
        print(f"{method:<12} {mean:>10.4g}, +-{std:<9.3g} {mx:>10.4g} {mn:>10.4g} {mr:>10.4g}")

    out = Path(args.out)
    _write_table(out, ["method", "ratio", "mean", "std", "max", "min", "count", "mean_rmse"], rows)
    _write_table(Path(f"{out}.windows.csv"), ["method", "window", "nmse", "rmse"], per_window)
    record = {
        "model": args.model, "n": model.n, "m": model.m, "seed": seed,
        "lambda": model.lam, "mu": model.mu,
        "gamma": _gamma(args, manifest) if "cs-baseline" in methods else "",
        "methods": " ".join(methods), "test_windows": X.shape[1],
        "train_windows": manifest.get("train_windows", ""),
        "metric": "nmse", "solver_iterations": manifest.get("solver_iterations", ""),
        "cs_max_iters": args.cs_iters, **source, **extra,
    }
    _atomic_write(Path(f"{out}.manifest"), lambda tmp: write_manifest(tmp, record))
    return EXIT_OK


def _median_latency(fn, columns, samples, warmup=20):
    K = columns.shape[1]
    for j in range(min(warmup, samples)):
        fn(columns[:, j % K])
    times = np.empty(samples)
    for j in range(samples):
        y = columns[:, j % K]
        t0 = time.perf_counter()
        fn(y)
        times[j] = time.perf_counter() - t0
    return float(np.median(times))


def cmd_benchmark(args) -> int:
    model, manifest, seed, X, Phi, _ = _prepare_eval(args)
    Y = np.ascontiguousarray(compress(Phi, X))
    gamma = _gamma(args, manifest)
    solver = CsReconstructor(Phi, dct_basis(model.n), gamma,
                             max_iters=args.cs_iters, rel_tol=args.cs_tol)
    rows = []
    for method, fn in (("coupled", lambda y: reconstruct(model, y)), ("cs-baseline", solver)):
        per_sample = _median_latency(fn, Y, args.samples)
        X_hat = reconstruct(model, Y) if method == "coupled" else solver(Y)
        mean_err = float(np.mean(columnwise(nmse, X_hat, X)))
        train_s = manifest.get("training_seconds", "") if method == "coupled" else "-"
        rows.append((method, train_s, per_sample, mean_err))

    print(f"n={model.n} m={model.m}, median over {args.samples} samples")
    print(f"{'method':<12} {'train (s)':>12} {'test (s)/sample':>16} {'mean nmse':>12}")
    for method, train_s, per_sample, err in rows:
        print(f"{method:<12} {str(train_s):>12} {per_sample:>16.3e} {err:>12.4g}")
    _write_table(Path(args.out), ["method", "train_seconds", "seconds_per_sample", "mean_nmse"], rows)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    model = load_model(args.model)
    try:
        data = load_windows_csv(args.test_csv)
    except OSError as exc:
        raise DataError(f"cannot read {args.test_csv}: {exc.strerror or exc}") from exc
    truth = None
    if args.measurements:
        Y = data
        if Y.shape[0] != model.m:
            raise DataError(f"measurement rows have length {Y.shape[0]}, model expects {model.m}")
    else:
        if data.shape[0] != model.n:
            raise DataError(f"windows have length {data.shape[0]}, model expects {model.n}")
        seed = _sensing_seed(args, _model_manifest(args.model))
        truth = data
        Y = compress(bernoulli_matrix(model.m, model.n, seed), truth)
    X_hat = reconstruct(model, Y)

    out = Path(args.out)
    _atomic_write(out, lambda tmp: save_matrix_csv(tmp, X_hat))
    header = ["window", "index", "reconstruction"]
    rows = []
    for j in range(X_hat.shape[1]):
        for i in range(model.n):
            row = [j, i]
            if truth is not None:
                row.append(truth[i, j])
            row.append(X_hat[i, j])
            rows.append(row)
    if truth is not None:
        header.insert(2, "truth")
    _write_table(Path(f"{out}.traces.csv"), header, rows)
    print(f"reconstructed {X_hat.shape[1]} windows -> {out}")
    return EXIT_OK


def _add_data_flags(p, role):
    p.add_argument(f"--{role}-csv", help="windows, one per row")
    p.add_argument("--synth", choices=SYNTH_KINDS, help="generate synthetic windows instead")
    p.add_argument("--count", type=int, default=400, help="synthetic window count")
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--data-seed", type=int, help="seed for synthetic data")


def _add_cs_flags(p):
    p.add_argument("--gamma", type=float,
                   help="relative l1 weight (times ||A^T y||_inf); default from manifest")
    p.add_argument("--cs-iters", type=int, default=500)
    p.add_argument("--cs-tol", type=float, default=1e-8)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coupled-tl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic signal windows to CSV")
    p.add_argument("--kind", choices=SYNTH_KINDS, default="harmonic")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="learn a coupled model")
    _add_data_flags(p, "train")
    p.add_argument("--n", type=int, default=512, help="window length for --synth")
    p.add_argument("--ratio", type=float, default=0.25)
    p.add_argument("--seed", type=int, help="sensing-matrix seed (default 0)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--gamma", type=float, help="fix the baseline's relative gamma")
    p.add_argument("--val-count", type=int, default=50,
                   help="training windows used to tune the baseline's gamma")
    p.add_argument("--normalize", action="store_true",
                   help="per-window zero mean / unit norm")
    p.add_argument("--model", required=True, help="output model path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="error table for coupled and CS baseline")
    _add_data_flags(p, "test")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, help="sensing seed (default from manifest)")
    p.add_argument("--method", choices=(*METHODS, "both"), default="both")
    _add_cs_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="per-sample reconstruction timing")
    _add_data_flags(p, "test")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, default=1000)
    _add_cs_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("reconstruct", help="invert windows or measurements from CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--test-csv", "--in", dest="test_csv", required=True)
    p.add_argument("--measurements", action="store_true",
                   help="input rows are measurements rather than signal windows")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)
    return parser


def _check_ranges(args):
    ratio = getattr(args, "ratio", None)
    if ratio is not None and not 0 < ratio <= 1:
        raise UsageError("--ratio must lie in (0, 1]")
    for name in ("count", "n", "samples", "max_iters", "cs_iters", "val_count"):
        if getattr(args, name, 1) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _check_ranges(args)
        return args.func(args)
    except UsageError as exc:
        print(f"coupled-tl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, linalg.LinAlgError, FloatingPointError) as exc:
        print(f"coupled-tl: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"coupled-tl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"coupled-tl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
