import numpy as np
import pytest

from proxvr.problems import (InstanceSpec, diagonal_lasso_3d,
                             generate_instance, least_squares_problem,
                             load_instance, logistic_problem, save_instance)


def central_diff_grad(f, x, h=1e-6):
    """Independent finite-difference oracle for gradients."""
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_diff_jac(gfun, x, h=1e-6):
    """Finite differences of a vector map, column by column."""
    n = x.size
    J = np.zeros((n, n))
    for j in range(n):
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (gfun(x + e) - gfun(x - e)) / (2 * h)
    return J


class TestGradComponent:
    def test_least_squares_at_origin(self):
        p = least_squares_problem(np.array([[1.0, 0.0, 0.0]]), np.array([2.0]))
        assert np.array_equal(p.grad_component(0, np.zeros(3)),
                              np.array([-2.0, 0.0, 0.0]))

    def test_logistic_at_origin(self):
        Z = np.array([[0.5, -1.0], [2.0, 0.3]])
        y = np.array([1.0, -1.0])
        p = logistic_problem(Z, y, intercept=False)
        for i in range(2):
            expected = -y[i] * Z[i] / 2.0
            assert np.allclose(p.grad_component(i, np.zeros(2)), expected,
                               rtol=0, atol=1e-15)

    def test_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        K = rng.standard_normal((3, 5))
        b = rng.standard_normal(3)
        p = least_squares_problem(K, b)
        x = rng.standard_normal(5)
        g = p.grad_component(1, x)
        fd = central_diff_grad(lambda z: p.value_component(1, z), x)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))

    def test_logistic_finite_difference(self):
        rng = np.random.default_rng(1)
        Z = rng.standard_normal((4, 6))
        y = np.where(rng.standard_normal(4) > 0, 1.0, -1.0)
        p = logistic_problem(Z, y, intercept=True)
        x = 0.3 * rng.standard_normal(7)
        for i in range(4):
            g = p.grad_component(i, x)
            fd = central_diff_grad(lambda z: p.value_component(i, z), x)
            assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))

    def test_index_and_dim_errors(self):
        p = least_squares_problem(np.eye(3), np.ones(3))
        with pytest.raises(IndexError):
            p.grad_component(3, np.zeros(3))
        with pytest.raises(ValueError):
            p.grad_component(0, np.zeros(4))


class TestGradFull:
    def test_single_atom_equals_component(self):
        rng = np.random.default_rng(2)
        K = rng.standard_normal((1, 4))
        p = least_squares_problem(K, rng.standard_normal(1))
        x = rng.standard_normal(4)
        assert np.allclose(p.grad_full(x), p.grad_component(0, x), rtol=1e-12)

    def test_unitary_gradient_identity(self):
        # for the sum-scaled unitary design, -grad F(x*) = K^T b - x*
        spec = InstanceSpec(kind="lasso-unitary", m=16, n=16, seed=3, mu=0.5,
                            sparsity=2, saturated=9)
        problem, reg, xsol = generate_instance(spec)
        c = problem.A.T @ problem.b
        assert np.allclose(-problem.grad_full(xsol), c - xsol, atol=1e-12)

    def test_mean_of_components(self):
        rng = np.random.default_rng(3)
        K = rng.standard_normal((3, 5))
        p = least_squares_problem(K, rng.standard_normal(3))
        x = rng.standard_normal(5)
        acc = sum(p.grad_component(i, x) for i in range(3)) / 3.0
        g = p.grad_full(x)
        assert np.linalg.norm(g - acc) <= 1e-12 * max(1.0, np.linalg.norm(g))


class TestLipschitz:
    def test_row_norm_squared(self):
        p = least_squares_problem(np.array([[3.0, 4.0]]), np.array([0.0]))
        Li, L, LF = p.lipschitz_constants()
        assert Li[0] == 25.0 and L == 25.0

    def test_ordering_bound(self):
        # L_F <= mean(L_i) <= L for any instance
        for kind, kw in (("lasso-gaussian", {}), ("sparse-logistic", {})):
            spec = InstanceSpec(kind=kind, m=20, n=12, seed=4, **kw)
            problem, _, _ = generate_instance(spec)
            Li, L, LF = problem.lipschitz_constants()
            assert LF <= Li.mean() + 1e-12
            assert Li.mean() <= L + 1e-12

    def test_logistic_quarter_norm(self):
        Z = np.array([[1.0, 2.0], [0.5, 0.5]])
        y = np.array([1.0, -1.0])
        p = logistic_problem(Z, y, intercept=False)
        Li, L, _ = p.lipschitz_constants()
        assert np.allclose(Li, [(1 + 4) / 4, 0.5 / 4])

    def test_sampled_gradient_lipschitz(self):
        # ||grad f_i(x) - grad f_i(y)|| <= L_i ||x - y|| over random pairs
        rng = np.random.default_rng(5)
        spec = InstanceSpec(kind="sparse-logistic", m=10, n=8, seed=6)
        problem, _, _ = generate_instance(spec)
        Li, _, _ = problem.lipschitz_constants()
        for _ in range(100):
            i = int(rng.integers(problem.m))
            x = rng.standard_normal(problem.n)
            y = rng.standard_normal(problem.n)
            lhs = np.linalg.norm(problem.grad_component(i, x)
                                 - problem.grad_component(i, y))
            assert lhs <= Li[i] * np.linalg.norm(x - y) * (1 + 1e-10)


class TestHessian:
    def test_unitary_identity(self):
        spec = InstanceSpec(kind="lasso-unitary", m=8, n=8, seed=7, mu=0.5,
                            sparsity=2, saturated=3)
        problem, _, _ = generate_instance(spec)
        H = problem.hessian_full(np.zeros(8))
        assert np.abs(H - np.eye(8)).max() < 1e-12

    def test_matches_finite_difference_of_grad(self):
        rng = np.random.default_rng(8)
        Z = rng.standard_normal((6, 4))
        y = np.where(rng.standard_normal(6) > 0, 1.0, -1.0)
        p = logistic_problem(Z, y, intercept=False)
        x = 0.2 * rng.standard_normal(4)
        H = p.hessian_full(x)
        J = central_diff_jac(lambda z: p.grad_full(z), x, h=1e-6)
        assert np.abs(H - J).max() <= 1e-5 * max(1.0, np.abs(H).max())

    def test_symmetric_psd(self):
        for kind in ("lasso-gaussian", "sparse-logistic"):
            spec = InstanceSpec(kind=kind, m=12, n=6, seed=9, sparsity=3)
            problem, _, _ = generate_instance(spec)
            x = np.random.default_rng(1).standard_normal(problem.n) * 0.3
            H = problem.hessian_full(x)
            assert np.abs(H - H.T).max() == 0.0
            assert np.linalg.eigvalsh(H)[0] >= -1e-12

    def test_hessian_apply_consistent(self):
        spec = InstanceSpec(kind="sparse-logistic", m=9, n=5, seed=10,
                            sparsity=2)
        problem, _, _ = generate_instance(spec)
        rng = np.random.default_rng(2)
        x = rng.standard_normal(problem.n) * 0.1
        d = rng.standard_normal(problem.n)
        assert np.allclose(problem.hessian_apply(x, d),
                           problem.hessian_full(x) @ d, rtol=1e-12)


class TestGeneration:
    def test_bit_reproducible(self):
        spec = InstanceSpec(kind="group-sparse", m=24, n=32, seed=11,
                            block_size=4, active_blocks=3)
        p1, r1, x1 = generate_instance(spec)
        p2, r2, x2 = generate_instance(spec)
        assert np.array_equal(p1.A, p2.A)
        assert np.array_equal(p1.b, p2.b)
        assert np.array_equal(x1, x2)

    def test_unitary_geometry(self):
        spec = InstanceSpec(kind="lasso-unitary", m=16, n=16, seed=12, mu=0.5,
                            sparsity=2, saturated=9)
        problem, reg, xsol = generate_instance(spec)
        assert np.abs(problem.A.T @ problem.A - np.eye(16)).max() < 1e-12
        assert np.count_nonzero(xsol) == 2
        c = problem.A.T @ problem.b
        near = np.abs(np.abs(c) - 0.5) < 1e-8
        assert near.sum() == 9

    def test_group_sparse_layout(self):
        spec = InstanceSpec(kind="group-sparse", m=256, n=512, seed=13,
                            block_size=4, active_blocks=8)
        problem, reg, x = generate_instance(spec)
        norms = np.linalg.norm(x.reshape(-1, 4), axis=1)
        assert np.count_nonzero(norms) == 8

    def test_low_rank_rank(self):
        spec = InstanceSpec(kind="low-rank", m=64, n=64, seed=14, rank=4,
                            shape=(8, 8))
        problem, reg, x = generate_instance(spec)
        s = np.linalg.svd(x.reshape(8, 8), compute_uv=False)
        assert np.count_nonzero(s > 1e-10) == 4

    def test_infeasible_spec(self):
        with pytest.raises(ValueError):
            InstanceSpec(kind="lasso-unitary", m=8, n=8, sparsity=6,
                         saturated=6).validate()
        with pytest.raises(ValueError):
            InstanceSpec(kind="low-rank", m=8, n=64, rank=10,
                         shape=(8, 8)).validate()


class TestSerialization:
    def test_round_trip(self, tmp_path):
        for kind in ("lasso-gaussian", "sparse-logistic", "group-sparse",
                     "low-rank"):
            spec = InstanceSpec(kind=kind, m=10, n=16, seed=15, block_size=4,
                                active_blocks=2, rank=2, shape=(4, 4))
            problem, reg, x = generate_instance(spec)
            path = tmp_path / f"{kind}.txt"
            save_instance(path, problem, reg, x)
            p2, r2, x2 = load_instance(path)
            assert np.array_equal(problem.A, p2.A)
            assert np.array_equal(problem.b, p2.b)
            assert np.array_equal(x, x2)
            assert r2.kind == reg.kind and r2.mu == reg.mu

    def test_weights_survive(self, tmp_path):
        spec = InstanceSpec(kind="lasso-unitary", m=8, n=8, seed=16, mu=0.5,
                            sparsity=2, saturated=2)
        problem, reg, x = generate_instance(spec)
        path = tmp_path / "u.txt"
        save_instance(path, problem, reg, x)
        p2, _, _ = load_instance(path)
        assert np.array_equal(problem.weights, p2.weights)


def test_diagonal_3d_instance():
    problem, reg, xsol = diagonal_lasso_3d()
    # the optimality certificate of the planted solution
    u = -problem.grad_full(xsol)
    assert np.allclose(u, [1 / 3, 2 / 9, 1 / 4], atol=1e-15)
    assert reg.mu == 1 / 3
    # every single-sample gradient is worse than the mean at the solution
    for i in range(3):
        gi = problem.grad_component(i, xsol)
        gF = problem.grad_full(xsol)
        assert np.linalg.norm(gi - gF) >= np.linalg.norm(gF) - 1e-12
