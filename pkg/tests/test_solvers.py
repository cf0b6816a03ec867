import numpy as np
import pytest

from proxvr.problems import (InstanceSpec, diagonal_lasso_3d,
                             generate_instance, least_squares_problem)
from proxvr.regularizers import L1
from proxvr.solvers import (GradientTable, SolverConfig, enumerate_estimates,
                            fb_step, run_fbs, run_prox_sgd, run_prox_svrg,
                            run_saga)


def desk_lasso(seed=0, m=12, n=8, sparsity=3, mu=0.4):
    spec = InstanceSpec(kind="lasso-gaussian", m=m, n=n, seed=seed,
                        sparsity=sparsity, mu=mu, noise=0.05)
    return generate_instance(spec)


class TestFbStep:
    def test_dead_zone_maps_to_zero(self):
        reg = L1(1.0, n=3)
        x = np.array([0.05, -0.08, 0.0])
        out = fb_step(x, 0.1, np.zeros(3), reg)
        assert np.array_equal(out, np.zeros(3))

    def test_fixed_point_of_closed_form(self):
        spec = InstanceSpec(kind="lasso-unitary", m=16, n=16, seed=1, mu=0.5,
                            sparsity=2, saturated=4)
        problem, reg, xsol = generate_instance(spec)
        for gamma in (0.05, 0.3, 0.9):
            out = fb_step(xsol, gamma, problem.grad_full(xsol), reg)
            assert np.linalg.norm(out - xsol) < 1e-12

    def test_unitary_iteration_converges_to_closed_form(self):
        spec = InstanceSpec(kind="lasso-unitary", m=16, n=16, seed=2, mu=0.5,
                            sparsity=3, saturated=0)
        problem, reg, xsol = generate_instance(spec)
        x = np.zeros(16)
        for _ in range(600):
            x = fb_step(x, 0.05, problem.grad_full(x), reg)
        assert np.linalg.norm(x - xsol) < 1e-12


class TestFBS:
    def test_monotone_objective(self):
        problem, reg, _ = desk_lasso()
        _, _, LF = problem.lipschitz_constants()
        cfg = SolverConfig(method="fbs", gamma=0.9 / LF, max_iters=200)
        trace = run_fbs(problem, reg, cfg, np.ones(problem.n))
        phis = np.array(trace.phis)
        assert np.all(np.diff(phis) <= 1e-12 * np.abs(phis[:-1]) + 1e-15)

    def test_linear_rate_unregularized_quadratic(self):
        # scalar oracle: x+ = (1 - gamma) x for the 1d quadratic (x-c)^2/2
        K = np.array([[1.0]])
        problem = least_squares_problem(K, np.array([3.0]))
        reg = L1(1e-12, n=1)  # negligible penalty, behaves like zero
        gamma = 0.4
        cfg = SolverConfig(method="fbs", gamma=gamma, max_iters=40)
        trace = run_fbs(problem, reg, cfg, np.array([10.0]),
                        x_ref=np.array([3.0]))
        d = trace.dist_array()
        ratios = d[1:20] / d[:19]
        assert np.all(ratios <= (1 - gamma) + 1e-9)

    def test_out_of_range_step_warns_not_raises(self):
        problem, reg, _ = desk_lasso()
        _, _, LF = problem.lipschitz_constants()
        cfg = SolverConfig(method="fbs", gamma=3.0 / LF, max_iters=3)
        with pytest.warns(UserWarning):
            run_fbs(problem, reg, cfg, np.zeros(problem.n))


class TestDebiasing:
    def test_saga_estimate_mean_is_full_gradient(self):
        problem, reg, _ = desk_lasso(seed=3)
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal(problem.n)
        table = GradientTable.init(problem, x0)
        for trial in range(10):
            x = rng.standard_normal(problem.n)
            # randomly age the table to a plausible mid-run state
            for _ in range(5):
                i = int(rng.integers(problem.m))
                table.update(i, problem.grad_component(i, rng.standard_normal(problem.n)))
            est = enumerate_estimates("saga", problem, x, table=table)
            gF = problem.grad_full(x)
            assert np.abs(est.mean(axis=0) - gF).max() < 1e-12

    def test_svrg_estimate_mean_is_full_gradient(self):
        problem, reg, _ = desk_lasso(seed=4)
        rng = np.random.default_rng(1)
        for trial in range(10):
            x = rng.standard_normal(problem.n)
            xt = rng.standard_normal(problem.n)
            gt = problem.grad_full(xt)
            est = enumerate_estimates("prox-svrg", problem, x, x_tilde=xt,
                                      g_tilde=gt)
            assert np.abs(est.mean(axis=0) - problem.grad_full(x)).max() < 1e-12

    def test_sgd_estimate_mean(self):
        problem, reg, _ = desk_lasso(seed=5)
        x = np.random.default_rng(2).standard_normal(problem.n)
        est = enumerate_estimates("prox-sgd", problem, x)
        assert np.abs(est.mean(axis=0) - problem.grad_full(x)).max() < 1e-12


class TestSAGA:
    def test_table_mean_invariant(self):
        problem, reg, _ = desk_lasso(seed=6)
        _, L, _ = problem.lipschitz_constants()
        cfg = SolverConfig(method="saga", gamma=1 / (3 * L), max_iters=500,
                           seed=7)
        trace = run_saga(problem, reg, cfg, np.zeros(problem.n))
        assert trace.gradient_table.mean_drift() < 1e-10

    def test_m_equals_one_matches_fbs(self):
        K = np.array([[1.0, -0.5, 2.0]])
        problem = least_squares_problem(K, np.array([1.5]))
        reg = L1(0.3, n=3)
        gamma = 0.2
        x0 = np.array([1.0, 1.0, -1.0])
        t_saga = run_saga(problem, reg,
                          SolverConfig(method="saga", gamma=gamma,
                                       max_iters=30, seed=0), x0)
        t_fbs = run_fbs(problem, reg,
                        SolverConfig(method="fbs", gamma=gamma, max_iters=30),
                        x0)
        assert np.array_equal(t_saga.x_final, t_fbs.x_final)

    def test_seeded_reproducibility(self):
        problem, reg, _ = desk_lasso(seed=8)
        _, L, _ = problem.lipschitz_constants()
        cfg = SolverConfig(method="saga", gamma=1 / (3 * L), max_iters=300,
                           seed=42)
        t1 = run_saga(problem, reg, cfg, np.zeros(problem.n))
        t2 = run_saga(problem, reg, cfg, np.zeros(problem.n))
        assert np.array_equal(t1.x_final, t2.x_final)
        assert t1.support_size == t2.support_size

    def test_error_norm_decays_to_zero(self):
        # run to convergence; the stored exact error norms must collapse
        problem, reg, _ = desk_lasso(seed=9, m=16, n=8, mu=0.6)
        _, L, _ = problem.lipschitz_constants()
        finals = []
        for sd in range(10):
            cfg = SolverConfig(method="saga", gamma=1 / (3 * L),
                               max_iters=6000, seed=sd, error_stride=16)
            trace = run_saga(problem, reg, cfg, np.zeros(problem.n))
            finals.append(trace.eps_norms[-1])
        assert np.median(finals) < 1e-6

    def test_grad_eval_counter(self):
        problem, reg, _ = desk_lasso(seed=10)
        m = problem.m
        cfg = SolverConfig(method="saga", gamma=0.01, max_iters=50, seed=0)
        trace = run_saga(problem, reg, cfg, np.zeros(problem.n))
        # m for the table init plus one per step
        assert trace.grad_evals[0] == m
        assert trace.grad_evals[-1] == m + 50


class TestProxSGD:
    def test_first_step_enumeration_two_thirds(self):
        problem, reg, xsol = diagonal_lasso_3d()
        c = 10.0
        x0 = np.array([c, 0.0, 0.0])
        gamma1 = 0.3
        off_axis = 0
        for i in range(3):
            x1 = fb_step(x0, gamma1, problem.grad_component(i, x0), reg)
            if np.count_nonzero(x1) == 2:
                off_axis += 1
        assert off_axis == 2

    def test_m1_identical_to_fbs(self):
        K = np.array([[2.0, 1.0]])
        problem = least_squares_problem(K, np.array([1.0]))
        reg = L1(0.2, n=2)
        x0 = np.array([0.7, -0.4])
        # constant schedule via decay on a single step comparison
        cfg = SolverConfig(method="prox-sgd", gamma=0.1, sgd_decay=0.6,
                           max_iters=1, seed=3)
        t1 = run_prox_sgd(problem, reg, cfg, x0)
        x_fbs = fb_step(x0, 0.1, problem.grad_full(x0), reg)
        assert np.array_equal(t1.x_final, x_fbs)

    def test_error_exceeds_mean_gradient_near_solution(self):
        problem, reg, xsol = diagonal_lasso_3d()
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = xsol + 1e-3 * rng.standard_normal(3)
            gF = problem.grad_full(x)
            for i in range(3):
                eps = problem.grad_component(i, x) - gF
                assert np.linalg.norm(eps) >= np.linalg.norm(gF) - 1e-9


class TestProxSVRG:
    def test_epoch_cost_three_times_saga(self):
        problem, reg, _ = desk_lasso(seed=11)
        m = problem.m
        cfg = SolverConfig(method="prox-svrg", gamma=0.01, svrg_inner=m,
                           max_iters=3 * m, seed=0)
        trace = run_prox_svrg(problem, reg, cfg, np.zeros(problem.n))
        # per epoch: m (anchor) + 2 per inner step = 3m; saga spends m
        assert trace.grad_evals[-1] == 3 * (m + 2 * m)

    def test_option_II_anchor_is_inner_average(self):
        problem, reg, _ = desk_lasso(seed=12)
        m = problem.m
        cfg = SolverConfig(method="prox-svrg", gamma=0.005, svrg_inner=4,
                           svrg_option="II", max_iters=8, seed=5,
                           snapshot_stride=1)
        trace = run_prox_svrg(problem, reg, cfg, np.zeros(problem.n))
        assert trace.n_iters == 8

    def test_reproducible(self):
        problem, reg, _ = desk_lasso(seed=13)
        cfg = SolverConfig(method="prox-svrg", gamma=0.01, svrg_inner=6,
                           max_iters=60, seed=9)
        t1 = run_prox_svrg(problem, reg, cfg, np.zeros(problem.n))
        t2 = run_prox_svrg(problem, reg, cfg, np.zeros(problem.n))
        assert np.array_equal(t1.x_final, t2.x_final)

    def test_p1_option1_expected_step_matches_fbs_direction(self):
        # with P=1 the anchor always sits at the current point, so the
        # estimate enumerated over samples averages to the full gradient
        problem, reg, _ = desk_lasso(seed=14)
        x = np.random.default_rng(4).standard_normal(problem.n)
        gt = problem.grad_full(x)
        est = enumerate_estimates("prox-svrg", problem, x, x_tilde=x,
                                  g_tilde=gt)
        assert np.abs(est - gt).max() < 1e-12


class TestTraceOutput:
    def test_csv_deterministic(self, tmp_path):
        problem, reg, xsol = desk_lasso(seed=15)
        _, L, _ = problem.lipschitz_constants()
        cfg = SolverConfig(method="saga", gamma=1 / (3 * L), max_iters=100,
                           seed=1, error_stride=10)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        run_saga(problem, reg, cfg, np.zeros(problem.n)).to_csv(p1, stride=5)
        run_saga(problem, reg, cfg, np.zeros(problem.n)).to_csv(p2, stride=5)
        assert p1.read_bytes() == p2.read_bytes()

    def test_csv_schema(self, tmp_path):
        problem, reg, _ = desk_lasso(seed=16)
        cfg = SolverConfig(method="fbs", gamma=0.01, max_iters=10)
        trace = run_fbs(problem, reg, cfg, np.zeros(problem.n))
        path = tmp_path / "t.csv"
        trace.to_csv(path, meta={"method": "fbs"})
        lines = path.read_text().splitlines()
        assert lines[0] == "# proxvr-trace v1"
        assert lines[1].startswith("# method=fbs")
        assert lines[2] == "k,phi,dist_to_ref,eps_norm,support_size,grad_evals,epoch,event"

    def test_stop_tol(self):
        problem, reg, _ = desk_lasso(seed=17)
        _, _, LF = problem.lipschitz_constants()
        cfg = SolverConfig(method="fbs", gamma=1 / LF, max_iters=100000,
                           stop_tol=1e-12)
        trace = run_fbs(problem, reg, cfg, np.zeros(problem.n))
        assert trace.stop_reason == "tol"
        assert trace.n_iters < 100000


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="momentum", gamma=0.1)
    with pytest.raises(ValueError):
        SolverConfig(method="saga", gamma=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(method="prox-sgd", gamma=0.1, sgd_decay=0.4)
    with pytest.raises(ValueError):
        SolverConfig(method="prox-svrg", gamma=0.1, svrg_inner=0)
