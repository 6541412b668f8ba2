import numpy as np
import pytest

from chef.dataio import make_blobs_dataset, synth_probabilistic_labels
from chef.errors import ArgumentError
from chef.model import ModelParams, grad_sample
from chef.numerics import (
    HvpOperator,
    SolverConfig,
    cg_solve,
    classlog_hessian_operator,
    dense_objective_hessian,
    dense_sample_hessian,
    fd_hvp,
    hessian_norm_power,
    hvp,
    objective_hessian_operator,
    sample_hessian_operator,
)


def _random_setup(seed, C=3, d=4):
    rng = np.random.default_rng(seed)
    params = ModelParams(rng.normal(size=(C, d + 1)), 0.1)
    x = rng.normal(size=d + 1)
    return rng, params, x


def _matrix_operator(A, tag="dense-test"):
    A = np.asarray(A, dtype=float)
    return HvpOperator(A.shape[0], lambda v: A @ v, tag)


@pytest.fixture
def small_noisy():
    ds = make_blobs_dataset(40, 3, 3, seed=17)
    return synth_probabilistic_labels(ds, 0.5, seed=18)


class TestHvp:
    def test_zero_vector(self):
        _, params, x = _random_setup(0)
        op = sample_hessian_operator(params, x)
        np.testing.assert_array_equal(hvp(op, np.zeros(params.dim)), 0.0)

    def test_matches_dense_sample(self):
        for seed in range(20):
            rng, params, x = _random_setup(seed)
            op = sample_hessian_operator(params, x)
            H = dense_sample_hessian(params, x)
            v = rng.normal(size=params.dim)
            np.testing.assert_allclose(op(v), H @ v, rtol=1e-10, atol=1e-12)

    def test_matches_dense_objective(self, small_noisy):
        rng = np.random.default_rng(1)
        params = ModelParams(rng.normal(size=(3, 4)), 0.2)
        op = objective_hessian_operator(params, small_noisy, 0.8)
        H = dense_objective_hessian(params, small_noisy, 0.8)
        for _ in range(10):
            v = rng.normal(size=params.dim)
            np.testing.assert_allclose(op(v), H @ v, rtol=1e-10, atol=1e-12)

    def test_full_objective_lower_bound(self, small_noisy):
        rng = np.random.default_rng(2)
        lam = 0.3
        params = ModelParams(rng.normal(size=(3, 4)), lam)
        op = objective_hessian_operator(params, small_noisy, 0.8)
        for _ in range(10):
            v = rng.normal(size=params.dim)
            assert np.dot(v, op(v)) >= lam * np.dot(v, v) - 1e-9

    def test_symmetry(self):
        rng, params, x = _random_setup(5)
        op = sample_hessian_operator(params, x)
        for _ in range(10):
            u = rng.normal(size=params.dim)
            v = rng.normal(size=params.dim)
            lhs, rhs = np.dot(u, op(v)), np.dot(v, op(u))
            assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))

    def test_matches_finite_difference(self):
        rng, params, x = _random_setup(7, C=2, d=3)
        y = rng.dirichlet(np.ones(2))

        def grad_fn(w):
            return grad_sample(ModelParams(w.reshape(2, 4), params.lam), x, y)

        op = sample_hessian_operator(params, x)
        for _ in range(5):
            v = rng.normal(size=params.dim)
            np.testing.assert_allclose(
                op(v), fd_hvp(grad_fn, params.flat(), v), rtol=1e-5, atol=1e-6)

    def test_repeated_calls_bit_identical(self, small_noisy):
        rng = np.random.default_rng(3)
        params = ModelParams(rng.normal(size=(3, 4)), 0.1)
        op = objective_hessian_operator(params, small_noisy, 0.8)
        v = rng.normal(size=params.dim)
        assert np.array_equal(op(v), op(v))


class TestPowerMethod:
    def test_known_diagonal_spectrum(self):
        op = _matrix_operator(np.diag([3.0, 1.0, 1.0]))
        norm = hessian_norm_power(op, SolverConfig(power_seed=4))
        assert norm == pytest.approx(3.0, abs=1e-6)

    def test_matches_dense_eigensolver(self):
        for seed in range(20):
            _, params, x = _random_setup(seed, C=3, d=3)
            op = sample_hessian_operator(params, x)
            norm = hessian_norm_power(op, SolverConfig(power_seed=seed))
            dense = np.linalg.eigvalsh(dense_sample_hessian(params, x)).max()
            assert norm == pytest.approx(dense, rel=1e-4)

    def test_closed_form_rank_structure(self):
        # W = 0 gives p = (1/2, 1/2); norm = ||x||^2 * lambda_max(diag(p)-pp^T)
        params = ModelParams(np.zeros((2, 2)), 0.1)
        x = np.array([1.0, 1.0])  # ||x||^2 = 2
        op = classlog_hessian_operator(params, x, 0)
        norm = hessian_norm_power(op, SolverConfig(power_seed=0))
        assert norm == pytest.approx(1.0, abs=1e-4)

    def test_classlog_norms_equal_across_classes(self):
        # softmax-specific: -grad^2 log p^(j) is identical for every j
        _, params, x = _random_setup(11, C=4, d=3)
        cfg = SolverConfig(power_seed=2)
        norms = [hessian_norm_power(classlog_hessian_operator(params, x, j), cfg)
                 for j in range(4)]
        np.testing.assert_allclose(norms, norms[0], rtol=1e-6)
        sample_norm = hessian_norm_power(sample_hessian_operator(params, x), cfg)
        assert sample_norm == pytest.approx(norms[0], rel=1e-6)

    def test_zero_operator_returns_zero(self):
        op = _matrix_operator(np.zeros((5, 5)))
        assert hessian_norm_power(op, SolverConfig(power_seed=1)) == 0.0

    def test_rayleigh_monotone(self):
        rng = np.random.default_rng(9)
        M = rng.normal(size=(12, 12))
        A = M @ M.T
        history = []
        hessian_norm_power(_matrix_operator(A), SolverConfig(power_seed=3), history)
        diffs = np.diff(history)
        assert np.all(diffs >= -1e-12 * np.abs(history[:-1]))


class TestCg:
    def test_identity_operator(self):
        g = np.array([1.0, -2.0, 3.0])
        res = cg_solve(_matrix_operator(np.eye(3)), g, SolverConfig())
        np.testing.assert_allclose(res.x, g, atol=1e-12)
        assert res.converged

    def test_zero_rhs(self):
        res = cg_solve(_matrix_operator(np.eye(4)), np.zeros(4), SolverConfig())
        np.testing.assert_array_equal(res.x, 0.0)
        assert res.iterations == 0
        assert res.converged

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            n = rng.integers(5, 30)
            M = rng.normal(size=(n, n))
            A = M @ M.T + 0.5 * np.eye(n)
            g = rng.normal(size=n)
            res = cg_solve(_matrix_operator(A), g, SolverConfig(cg_tol=1e-10,
                                                                cg_max_iter=500))
            expected = np.linalg.solve(A, g)
            np.testing.assert_allclose(res.x, expected, rtol=1e-6, atol=1e-9)

    def test_converges_in_dim_iterations(self):
        n = 20
        rng = np.random.default_rng(8)
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        A = Q @ np.diag(np.arange(1.0, n + 1.0)) @ Q.T  # n distinct eigenvalues
        g = rng.normal(size=n)
        res = cg_solve(_matrix_operator(A), g, SolverConfig(cg_tol=1e-10, cg_max_iter=n))
        assert res.converged
        assert res.iterations <= n

    def test_damping(self):
        A = np.diag([2.0, 4.0])
        g = np.array([1.0, 1.0])
        res = cg_solve(_matrix_operator(A), g, SolverConfig(cg_damping=1.0))
        np.testing.assert_allclose(res.x, [1 / 3, 1 / 5], atol=1e-10)

    def test_objective_solve_matches_dense(self, small_noisy):
        rng = np.random.default_rng(10)
        params = ModelParams(rng.normal(size=(3, 4)), 0.15)
        op = objective_hessian_operator(params, small_noisy, 0.8)
        H = dense_objective_hessian(params, small_noisy, 0.8)
        g = rng.normal(size=params.dim)
        res = cg_solve(op, g, SolverConfig(cg_tol=1e-12, cg_max_iter=500))
        np.testing.assert_allclose(res.x, np.linalg.solve(H, g), rtol=1e-6)


class TestDenseOracles:
    def test_symmetric(self):
        for seed in range(5):
            _, params, x = _random_setup(seed)
            H = dense_sample_hessian(params, x)
            assert np.abs(H - H.T).max() <= 1e-12

    def test_fd_of_grad(self):
        rng, params, x = _random_setup(13, C=2, d=3)
        y = rng.dirichlet(np.ones(2))
        H = dense_sample_hessian(params, x)
        eps = 1e-6
        m = params.dim
        fd = np.zeros((m, m))
        for i in range(m):
            wp, wm = params.flat().copy(), params.flat().copy()
            wp[i] += eps
            wm[i] -= eps
            fd[i] = (grad_sample(ModelParams(wp.reshape(2, 4), 0.1), x, y)
                     - grad_sample(ModelParams(wm.reshape(2, 4), 0.1), x, y)) / (2 * eps)
        np.testing.assert_allclose(H, fd, atol=1e-5)

    def test_objective_minus_reg_psd(self, small_noisy):
        rng = np.random.default_rng(14)
        lam = 0.25
        params = ModelParams(rng.normal(size=(3, 4)), lam)
        H = dense_objective_hessian(params, small_noisy, 0.8)
        eigs = np.linalg.eigvalsh(H - lam * np.eye(params.dim))
        assert eigs.min() >= -1e-9

    def test_strong_convexity_witness(self, small_noisy):
        # objective Hessian minimum eigenvalue >= lambda
        rng = np.random.default_rng(15)
        lam = 0.07
        params = ModelParams(rng.normal(size=(3, 4)), lam)
        H = dense_objective_hessian(params, small_noisy, 0.8)
        assert np.linalg.eigvalsh(H).min() >= lam - 1e-9

    def test_guard(self):
        params = ModelParams(np.zeros((80, 80)), 0.1)
        with pytest.raises(ArgumentError):
            dense_sample_hessian(params, np.zeros(80))
