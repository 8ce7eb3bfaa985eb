import numpy as np
import pytest

from coupled_tl.coupled import (
    CoupledModel,
    TrainConfig,
    coupled_objective,
    load_model,
    reconstruct,
    reconstruct_explicit,
    save_model,
    solve_coupling,
    solve_zm,
    solve_zs,
    train,
)
from coupled_tl.errors import DataError, DimensionError
from coupled_tl.sensing import bernoulli_matrix, compress
from coupled_tl.transform import tl_objective

# objective after 200 iterations on the seeded n=8, m=4, N=200 problem below
FROZEN_OBJECTIVE_200 = 2.48100189197458


def regression_problem():
    X = np.random.default_rng(2024).standard_normal((8, 200))
    Phi = bernoulli_matrix(4, 8, 11)
    return X, compress(Phi, X)


def random_state(r, n=4, m=3, N=12):
    return dict(
        T_M=r.standard_normal((m, m)) + 2 * np.eye(m),
        T_S=r.standard_normal((n, n)) + 2 * np.eye(n),
        Z_M=r.standard_normal((m, N)),
        Z_S=r.standard_normal((n, N)),
        C=r.standard_normal((n, m)),
        X=r.standard_normal((n, N)),
        Y=r.standard_normal((m, N)),
    )


@pytest.fixture(scope="module")
def trained():
    X, Y = regression_problem()
    return train(X, Y, TrainConfig(max_iters=50))


class TestObjective:
    def test_identity_blocks(self):
        I = np.eye(2)
        val = coupled_objective(I, I, I, I, I, I, I, 1.0, 1.0)
        assert val.total == pytest.approx(4.0)

    def test_decouples_at_zero_mu(self, rng):
        s = random_state(rng)
        total = coupled_objective(**s, lam=0.4, mu=0.0).total
        parts = (tl_objective(s["T_M"], s["Y"], s["Z_M"], 0.4).total
                 + tl_objective(s["T_S"], s["X"], s["Z_S"], 0.4).total)
        assert total == pytest.approx(parts, rel=1e-12)

    def test_term_by_term(self):
        r = np.random.default_rng(4)
        s = random_state(r, n=4, m=4, N=4)
        lam, mu = 0.3, 1.7
        fro2 = lambda A: np.linalg.norm(A, "fro") ** 2
        expected = (
            fro2(s["T_M"] @ s["Y"] - s["Z_M"])
            + fro2(s["T_S"] @ s["X"] - s["Z_S"])
            + lam * (fro2(s["T_M"]) + fro2(s["T_S"])
                     - np.log(abs(np.linalg.det(s["T_M"])))
                     - np.log(abs(np.linalg.det(s["T_S"]))))
            + mu * fro2(s["Z_S"] - s["C"] @ s["Z_M"])
        )
        assert coupled_objective(**s, lam=lam, mu=mu).total == pytest.approx(expected, rel=1e-12)

    def test_shape_check(self, rng):
        s = random_state(rng)
        s["C"] = s["C"].T
        with pytest.raises(DimensionError):
            coupled_objective(**s, lam=0.1, mu=1.0)


class TestBlockSolvers:
    def test_zm_without_coupling(self, rng):
        s = random_state(rng)
        np.testing.assert_allclose(solve_zm(s["T_M"], s["Y"], s["Z_S"], s["C"], 0.0),
                                   s["T_M"] @ s["Y"], atol=1e-12)

    def test_zm_averages_with_identity_coupling(self, rng):
        T_M, Y, Z_S = np.eye(3) + 0.1, rng.standard_normal((3, 6)), rng.standard_normal((3, 6))
        np.testing.assert_allclose(solve_zm(T_M, Y, Z_S, np.eye(3), 1.0),
                                   (T_M @ Y + Z_S) / 2, atol=1e-12)

    def test_zm_stacked_least_squares(self, rng):
        s = random_state(rng)
        mu = 0.8
        Z = solve_zm(s["T_M"], s["Y"], s["Z_S"], s["C"], mu)
        m = s["T_M"].shape[0]
        A = np.vstack([np.eye(m), np.sqrt(mu) * s["C"]])
        B = np.vstack([s["T_M"] @ s["Y"], np.sqrt(mu) * s["Z_S"]])
        np.testing.assert_allclose(Z, np.linalg.lstsq(A, B, rcond=None)[0], atol=1e-10)
        residual = (np.eye(m) + mu * s["C"].T @ s["C"]) @ Z - (s["T_M"] @ s["Y"] + mu * s["C"].T @ s["Z_S"])
        assert np.linalg.norm(residual) <= 1e-10

        def p3(Zm):
            return np.sum((s["T_M"] @ s["Y"] - Zm) ** 2) + mu * np.sum((s["Z_S"] - s["C"] @ Zm) ** 2)

        for _ in range(20):
            assert p3(Z) <= p3(Z + 1e-4 * rng.standard_normal(Z.shape))

    def test_zs(self, rng):
        s = random_state(rng)
        np.testing.assert_allclose(solve_zs(s["T_S"], s["X"], s["Z_M"], s["C"], 0.0),
                                   s["T_S"] @ s["X"], atol=1e-12)
        big = solve_zs(s["T_S"], s["X"], s["Z_M"], s["C"], 1e6)
        np.testing.assert_allclose(big, s["C"] @ s["Z_M"], atol=1e-5)

        mu = 2.5
        n = s["T_S"].shape[0]
        A = np.vstack([np.eye(n), np.sqrt(mu) * np.eye(n)])
        B = np.vstack([s["T_S"] @ s["X"], np.sqrt(mu) * s["C"] @ s["Z_M"]])
        np.testing.assert_allclose(solve_zs(s["T_S"], s["X"], s["Z_M"], s["C"], mu),
                                   np.linalg.lstsq(A, B, rcond=None)[0], atol=1e-10)

    def test_coupling(self, rng):
        Z_S = rng.standard_normal((4, 4))
        np.testing.assert_allclose(solve_coupling(Z_S, np.eye(4)), Z_S, atol=1e-12)

        M = rng.standard_normal((4, 3))
        Z_M = rng.standard_normal((3, 9))
        np.testing.assert_allclose(solve_coupling(M @ Z_M, Z_M), M, atol=1e-10)

        r = np.random.default_rng(5)
        Z_M, Z_S = r.standard_normal((3, 5)), r.standard_normal((4, 5))
        C = solve_coupling(Z_S, Z_M)
        assert np.linalg.norm((C @ Z_M - Z_S) @ Z_M.T) <= 1e-10

    def test_coupling_rank_deficient(self):
        Z_M = np.vstack([np.ones(6), np.ones(6)])
        C = solve_coupling(np.ones((2, 6)), Z_M)
        assert np.all(np.isfinite(C))
        np.testing.assert_allclose(C @ Z_M, np.ones((2, 6)), atol=1e-6)


class TestTrain:
    def test_identity_sensing_toy(self):
        X = np.random.default_rng(8).standard_normal((2, 40))
        model, _ = train(X, X.copy(), TrainConfig(lam=1e-6, mu=1.0))
        X_hat = reconstruct(model, X)
        assert np.sum((X_hat - X) ** 2) / np.sum(X**2) <= 1e-6

    def test_monotone_every_step(self):
        X, Y = regression_problem()
        _, trace = train(X, Y, TrainConfig(max_iters=40), track_steps=True)
        seq = np.concatenate([[trace.history[0].total], np.ravel(trace.steps)])
        assert np.all(np.diff(seq) <= 1e-9 * np.abs(seq[:-1]))
        assert len(trace.steps) == trace.iterations_run == 40

    def test_frozen_regression_value(self):
        X, Y = regression_problem()
        _, trace = train(X, Y, TrainConfig())
        assert trace.iterations_run == 200
        assert trace.history[-1].total == pytest.approx(FROZEN_OBJECTIVE_200, rel=1e-9)

    def test_converges_given_enough_iterations(self):
        X, Y = regression_problem()
        _, trace = train(X, Y, TrainConfig(max_iters=10000))
        assert trace.converged
        assert trace.iterations_run < 10000

    def test_random_orthogonal_init(self):
        X, Y = regression_problem()
        cfg = TrainConfig(max_iters=30, init_scheme="seeded-random-orthogonal", seed=3)
        _, t1 = train(X, Y, cfg)
        _, t2 = train(X, Y, cfg)
        np.testing.assert_array_equal(t1.totals, t2.totals)
        assert np.all(np.diff(t1.totals) <= 1e-9 * np.abs(t1.totals[:-1]))

    def test_rejects_bad_data(self):
        X = np.ones((4, 10))
        with pytest.raises(DimensionError):
            train(X, np.ones((2, 9)))
        X[0, 0] = np.inf
        with pytest.raises(DataError):
            train(X, np.ones((2, 10)))

    def test_warns_on_few_columns(self, rng):
        X = rng.standard_normal((6, 4))
        with pytest.warns(RuntimeWarning):
            train(X, X[:3], TrainConfig(max_iters=2))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lam=0)
        with pytest.raises(ValueError):
            TrainConfig(init_scheme="svd")
        assert (TrainConfig().lam, TrainConfig().mu) == (0.1, 1.0)


class TestInference:
    def test_identity_model(self, rng):
        model = CoupledModel(np.eye(3), np.eye(3), np.eye(3), 0.1, 1.0)
        y = rng.standard_normal(3)
        np.testing.assert_array_equal(reconstruct(model, y), y)

    def test_matches_explicit_path(self, trained, rng):
        model, _ = trained
        Y = rng.standard_normal((4, 50))
        fast, slow = reconstruct(model, Y), reconstruct_explicit(model, Y)
        assert np.linalg.norm(fast - slow) <= 1e-10 * np.linalg.norm(slow)

    def test_solves_signal_transform_system(self, trained, rng):
        model, _ = trained
        y = rng.standard_normal(4)
        z_s = model.C @ (model.T_M @ y)
        np.testing.assert_allclose(model.T_S @ reconstruct(model, y), z_s, atol=1e-10 * np.linalg.norm(z_s))

    def test_batch_equals_single(self, trained, rng):
        model, _ = trained
        Y = rng.standard_normal((4, 100))
        batch = reconstruct(model, Y)
        single = np.column_stack([reconstruct(model, Y[:, k]) for k in range(100)])
        np.testing.assert_allclose(batch, single, rtol=0, atol=1e-12)

    def test_linearity(self, trained, rng):
        model, _ = trained
        y1, y2 = rng.standard_normal(4), rng.standard_normal(4)
        lhs = reconstruct(model, 2.5 * y1 - 0.75 * y2)
        rhs = 2.5 * reconstruct(model, y1) - 0.75 * reconstruct(model, y2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_shape_mismatch(self, trained):
        with pytest.raises(DimensionError):
            reconstruct(trained[0], np.ones(5))

    def test_model_is_immutable(self, trained):
        model, _ = trained
        with pytest.raises(AttributeError):
            model.lam = 1.0
        with pytest.raises(ValueError):
            model.recon_op[0, 0] = 0.0

    def test_recon_op_consistent(self, trained):
        model, _ = trained
        direct = np.linalg.inv(model.T_S) @ model.C @ model.T_M
        assert np.linalg.norm(model.recon_op - direct) <= 1e-10 * np.linalg.norm(direct)


class TestSerialization:
    def test_round_trip(self, trained, tmp_path, rng):
        model, _ = trained
        path = tmp_path / "m.ctl"
        save_model(model, path)
        loaded = load_model(path)
        Y = rng.standard_normal((4, 30))
        assert np.array_equal(reconstruct(model, Y), reconstruct(loaded, Y))
        assert (loaded.lam, loaded.mu, loaded.n, loaded.m) == (model.lam, model.mu, 8, 4)

    def test_byte_layout(self, tmp_path):
        T_M = np.array([[1.0, 2.0], [3.0, 5.0]])
        T_S = np.diag([2.0, 3.0, 4.0])
        C = np.arange(6.0).reshape(3, 2)
        path = tmp_path / "m.ctl"
        save_model(CoupledModel(T_M, T_S, C, 0.1, 1.0), path)
        raw = path.read_bytes()
        assert raw[:4] == b"CTL1"
        assert int.from_bytes(raw[4:8], "little") == 3
        assert int.from_bytes(raw[8:12], "little") == 2
        vals = np.frombuffer(raw[12:], dtype="<f8")
        np.testing.assert_array_equal(vals[:2], [0.1, 1.0])
        np.testing.assert_array_equal(vals[2:6], [1, 2, 3, 5])
        np.testing.assert_array_equal(vals[6:15], T_S.ravel())
        np.testing.assert_array_equal(vals[15:], C.ravel())
        assert len(raw) == 12 + 8 * (2 + 4 + 9 + 6)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ctl"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(DataError):
            load_model(path)
        path.write_bytes(b"CTL1" + (2).to_bytes(4, "little") * 2 + bytes(16))
        with pytest.raises(DataError):
            load_model(path)
