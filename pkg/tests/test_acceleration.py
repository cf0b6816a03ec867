import numpy as np
import pytest

from proxvr.acceleration import (CGState, HybridPolicy,
                                 IdentificationDetector, SignFlipError,
                                 detect, local_lipschitz, newton_on_manifold,
                                 riemannian_cg_step, riemannian_gradient,
                                 run_hybrid)
from proxvr.harness import reference_solution
from proxvr.problems import (InstanceSpec, generate_instance,
                             least_squares_problem)
from proxvr.regularizers import (L1, ManifoldDescriptor, Nuclear,
                                 descriptors_equal)
from proxvr.solvers import SolverConfig, run_fbs, run_saga


def l1_desc(support, signs):
    return ManifoldDescriptor(kind="l1", support=np.asarray(support),
                              signs=np.asarray(signs, dtype=np.int8))


class TestDetector:
    def test_fires_after_window(self):
        det = IdentificationDetector(window=3)
        stream = [l1_desc([0], [1]), l1_desc([0, 1], [1, 1]),
                  l1_desc([0, 1], [1, 1]), l1_desc([0, 1], [1, 1])]
        results = [detect(det, d, k) for k, d in enumerate(stream)]
        assert results[:3] == [None, None, None]
        assert results[3] is not None
        assert np.array_equal(results[3].support, [0, 1])
        assert det.fired[1] == 3

    def test_alternating_never_fires(self):
        det = IdentificationDetector(window=2)
        a, b = l1_desc([0], [1]), l1_desc([1], [1])
        for k in range(50):
            assert detect(det, a if k % 2 == 0 else b, k) is None

    def test_fbs_identifies_smallest_manifold(self):
        # deterministic run from the all-zero start lands on the 2-sparse
        # support and the detector reports it
        spec = InstanceSpec(kind="lasso-unitary", m=16, n=16, seed=7, mu=0.5,
                            sparsity=2, saturated=9)
        problem, reg, xsol = generate_instance(spec)
        det = IdentificationDetector(window=5)
        cfg = SolverConfig(method="fbs", gamma=0.05, max_iters=200)
        run_fbs(problem, reg, cfg, np.zeros(16),
                stop_when=lambda k, x, d: detect(det, d, k) is not None)
        assert det.fired is not None
        assert det.fired[0].support.size == 2

    def test_nuclear_equality_uses_angles(self):
        det = IdentificationDetector(window=2)
        rng = np.random.default_rng(0)
        U1, _ = np.linalg.qr(rng.standard_normal((5, 1)))
        V1, _ = np.linalg.qr(rng.standard_normal((4, 1)))
        U2, _ = np.linalg.qr(rng.standard_normal((5, 1)))
        d1 = ManifoldDescriptor(kind="nuclear", rank=1, U=U1, V=V1)
        d2 = ManifoldDescriptor(kind="nuclear", rank=1, U=U2, V=V1)
        assert detect(det, d1, 0) is None
        assert detect(det, d2, 1) is None   # same rank, different subspace
        assert detect(det, d2, 2) is not None


class TestLocalLipschitz:
    def test_restricted_row_norm(self):
        problem = least_squares_problem(np.array([[3.0, 4.0]]),
                                        np.array([0.0]))
        desc = l1_desc([0], [1])
        Li, L_M = local_lipschitz(problem, L1(1.0, n=2), desc)
        assert Li[0] == 9.0 and L_M == 9.0

    def test_full_support_recovers_global(self):
        spec = InstanceSpec(kind="lasso-gaussian", m=10, n=6, seed=1,
                            sparsity=3)
        problem, reg, _ = generate_instance(spec)
        desc = l1_desc(np.arange(6), np.ones(6))
        _, L_M = local_lipschitz(problem, reg, desc)
        _, L, _ = problem.lipschitz_constants()
        assert np.isclose(L_M, L)

    def test_empty_manifold(self):
        problem = least_squares_problem(np.eye(3), np.ones(3))
        desc = l1_desc([], [])
        Li, L_M = local_lipschitz(problem, L1(1.0, n=3), desc)
        assert L_M == 0.0

    def test_never_exceeds_global(self):
        rng = np.random.default_rng(2)
        spec = InstanceSpec(kind="sparse-logistic", m=12, n=10, seed=3,
                            sparsity=4)
        problem, reg, _ = generate_instance(spec)
        _, L, _ = problem.lipschitz_constants()
        for _ in range(20):
            size = int(rng.integers(1, 11))
            sup = np.sort(rng.choice(problem.n, size=size, replace=False))
            desc = l1_desc(sup, np.ones(size))
            _, L_M = local_lipschitz(problem, reg, desc)
            assert L_M <= L + 1e-12

    def test_nuclear_tangent_restriction(self):
        spec = InstanceSpec(kind="low-rank", m=20, n=16, seed=4, rank=1,
                            shape=(4, 4))
        problem, reg, x = generate_instance(spec)
        desc = reg.manifold_at(x)
        Li, L_M = local_lipschitz(problem, reg, desc)
        _, L, _ = problem.lipschitz_constants()
        assert 0 < L_M <= L + 1e-12
        # agreement with the explicit projection of one row
        pk = reg.tangent_project(desc, problem.A[3])
        assert np.isclose(Li[3], pk @ pk)


class TestNewton:
    def test_one_step_exact_on_quadratic(self):
        spec = InstanceSpec(kind="lasso-gaussian", m=20, n=10, seed=5,
                            sparsity=3, mu=0.5, noise=0.02)
        problem, reg, _ = generate_instance(spec)
        xref = reference_solution(problem, reg)
        desc = reg.manifold_at(xref)
        rng = np.random.default_rng(6)
        x = xref.copy()
        x[desc.support] += 1e-3 * rng.standard_normal(desc.support.size)
        x_new = newton_on_manifold(problem, reg, desc, x)
        g = problem.grad_full(x_new)
        s = np.zeros(problem.n)
        s[desc.support] = desc.signs
        resid = np.abs(g[desc.support] + reg.mu * s[desc.support]).max()
        assert resid < 1e-12

    def test_already_optimal_gives_zero_step(self):
        spec = InstanceSpec(kind="lasso-gaussian", m=20, n=10, seed=7,
                            sparsity=3, mu=0.5, noise=0.02)
        problem, reg, _ = generate_instance(spec)
        xref = reference_solution(problem, reg)
        desc = reg.manifold_at(xref)
        x_new = newton_on_manifold(problem, reg, desc, xref)
        assert np.linalg.norm(x_new - xref) < 1e-11

    def test_preserves_manifold_exactly(self):
        spec = InstanceSpec(kind="group-sparse", m=40, n=32, seed=8,
                            block_size=4, active_blocks=2, noise=0.02)
        problem, reg, _ = generate_instance(spec)
        xref = reference_solution(problem, reg)
        desc = reg.manifold_at(xref)
        rng = np.random.default_rng(9)
        x = xref.copy()
        x[desc.support] += 1e-2 * rng.standard_normal(desc.support.size)
        x_new = newton_on_manifold(problem, reg, desc, x)
        assert descriptors_equal(reg.manifold_at(x_new), desc)
        off = np.setdiff1d(np.arange(problem.n), desc.support)
        assert np.all(x_new[off] == 0.0)

    def test_group_newton_converges_quadratically(self):
        spec = InstanceSpec(kind="group-sparse", m=40, n=32, seed=10,
                            block_size=4, active_blocks=2, noise=0.02)
        problem, reg, _ = generate_instance(spec)
        xref = reference_solution(problem, reg)
        desc = reg.manifold_at(xref)
        x = xref.copy()
        rng = np.random.default_rng(11)
        x[desc.support] *= 1.0 + 0.05 * rng.standard_normal(desc.support.size)
        errs = []
        for _ in range(8):
            x = newton_on_manifold(problem, reg, desc, x)
            errs.append(np.linalg.norm(x - xref))
        assert errs[-1] < 1e-12

    def test_sign_flip_raises(self):
        problem = least_squares_problem(np.array([[1.0, 0.0], [0.0, 1.0]]),
                                        np.array([5.0, 0.0]))
        reg = L1(0.5, n=2)
        desc = l1_desc([0], [-1])  # wrong sign lock: Newton must cross zero
        with pytest.raises(SignFlipError):
            newton_on_manifold(problem, reg, desc, np.array([-0.3, 0.0]))


def rank1_toy():
    """2x2 quadratic over rank-1 matrices with a brute-force oracle."""
    rng = np.random.default_rng(12)
    K = rng.standard_normal((6, 4))
    x_true = np.outer([1.0, 0.4], [0.8, -0.6]).reshape(-1) * 2.0
    b = K @ x_true
    problem = least_squares_problem(K, b)
    reg = Nuclear(0.3, (2, 2))
    return problem, reg


def rank1_oracle(problem, reg, grid=720):
    """Direct minimisation over x = t * u(theta) v(phi)^T: for fixed angles
    the objective is quadratic in t plus mu |t|, solved in closed form."""
    best = (np.inf, None)
    H = problem.hessian_full(np.zeros(4))
    c = -problem.grad_full(np.zeros(4))  # H x - c is the gradient
    phi0 = problem.value_full(np.zeros(4))
    angles = np.linspace(0, np.pi, grid, endpoint=False)

    def eval_angles(th, ph):
        u = np.array([np.cos(th), np.sin(th)])
        v = np.array([np.cos(ph), np.sin(ph)])
        w = np.outer(u, v).reshape(-1)
        a = w @ H @ w
        s = w @ c
        t = np.sign(s) * max(0.0, abs(s) - reg.mu) / a
        val = phi0 + 0.5 * a * t * t - s * t + reg.mu * abs(t)
        return val, t * w

    for th in angles:
        for ph in angles:
            val, x = eval_angles(th, ph)
            if val < best[0]:
                best = (val, x, th, ph)
    # shrink a local grid around the running winner
    width = np.pi / grid
    for _ in range(8):
        _, _, th, ph = best
        for th2 in th + np.linspace(-width, width, 17):
            for ph2 in ph + np.linspace(-width, width, 17):
                val, x = eval_angles(th2, ph2)
                if val < best[0]:
                    best = (val, x, th2, ph2)
        width /= 6.0
    return best[1]


class TestRiemannianCG:
    def test_gradient_is_tangent(self):
        spec = InstanceSpec(kind="low-rank", m=30, n=16, seed=13, rank=2,
                            shape=(4, 4))
        problem, reg, x = generate_instance(spec)
        desc = reg.manifold_at(x)
        g = riemannian_gradient(problem, reg, desc, x)
        off = g - reg.tangent_project(desc, g)
        assert np.linalg.norm(off) < 1e-10

    def test_stationary_point_is_fixed(self):
        problem, reg = rank1_toy()
        # converge first, then one more step must not move
        x = reg.prox(0.5, np.zeros(4) + 0.1)
        desc = reg.manifold_at(problem.A.T @ problem.b)
        desc = ManifoldDescriptor(kind="nuclear", rank=1,
                                  U=desc.U[:, :1], V=desc.V[:, :1])
        state = CGState(desc=desc)
        x = (desc.U[:, :1] * 2.0) @ desc.V[:, :1].T
        x = x.reshape(-1)
        for _ in range(200):
            x, state = riemannian_cg_step(problem, reg, state.desc, x, state)
        g = riemannian_gradient(problem, reg, state.desc, x)
        assert np.linalg.norm(g) < 1e-10
        x2, _ = riemannian_cg_step(problem, reg, state.desc, x, state)
        assert np.array_equal(x2, x)

    def test_matches_bruteforce_parameterisation(self):
        problem, reg = rank1_toy()
        x_oracle = rank1_oracle(problem, reg)
        # run CG from a generic rank-1 start
        x = np.outer([1.0, 0.1], [1.0, 0.1]).reshape(-1)
        desc = reg.manifold_at(x)
        state = CGState(desc=desc)
        for _ in range(300):
            x, state = riemannian_cg_step(problem, reg, state.desc, x, state)
        assert np.linalg.norm(x - x_oracle) < 1e-5

    def test_retraction_rank_and_orthonormal(self):
        spec = InstanceSpec(kind="low-rank", m=40, n=16, seed=14, rank=2,
                            shape=(4, 4), noise=0.0)
        problem, reg, x = generate_instance(spec)
        desc = reg.manifold_at(x)
        state = CGState(desc=desc)
        x2, state2 = riemannian_cg_step(problem, reg, desc, x, state)
        d2 = state2.desc
        assert d2.rank == 2
        assert np.abs(d2.U.T @ d2.U - np.eye(2)).max() < 1e-10
        assert np.abs(d2.V.T @ d2.V - np.eye(2)).max() < 1e-10
        s = np.linalg.svd(x2.reshape(4, 4), compute_uv=False)
        assert s[1] > 1e-12 and (s.size < 3 or s[2] < 1e-12 * s[0])


class TestHybrid:
    def _group_setup(self, seed=15):
        spec = InstanceSpec(kind="group-sparse", m=48, n=32, seed=seed,
                            block_size=4, active_blocks=2, noise=0.02)
        problem, reg, _ = generate_instance(spec)
        xref = reference_solution(problem, reg)
        return problem, reg, xref

    def test_detector_never_fires_gives_plain_run(self):
        problem, reg, xref = self._group_setup()
        _, L, _ = problem.lipschitz_constants()
        cfg = SolverConfig(method="saga", gamma=1 / (3 * L), max_iters=50,
                           seed=1)
        policy = HybridPolicy(rule="newton", window=10 ** 9)
        t_hybrid = run_hybrid(problem, reg, cfg, policy, np.zeros(problem.n),
                              x_ref=xref)
        t_plain = run_saga(problem, reg, cfg, np.zeros(problem.n), x_ref=xref)
        assert np.array_equal(t_hybrid.x_final, t_plain.x_final)
        assert not any(lab.startswith("switch") for _, lab in t_hybrid.events)

    def test_newton_hybrid_reaches_machine_precision(self):
        problem, reg, xref = self._group_setup()
        m = problem.m
        _, L, _ = problem.lipschitz_constants()
        cfg = SolverConfig(method="saga", gamma=1 / (3 * L),
                           max_iters=120 * m, seed=2)
        policy = HybridPolicy(rule="newton", max_phase2_steps=12,
                              min_phase1_iters=60 * m)
        trace = run_hybrid(problem, reg, cfg, policy, np.zeros(problem.n),
                           x_ref=xref)
        assert any(lab == "switch-newton" for _, lab in trace.events)
        assert trace.dist_to_ref[-1] < 1e-12

    def test_adaptive_step_respects_cap(self):
        problem, reg, xref = self._group_setup(seed=16)
        _, L, _ = problem.lipschitz_constants()
        cfg = SolverConfig(method="saga", gamma=1 / (3 * L),
                           max_iters=40 * problem.m, seed=3)
        policy = HybridPolicy(rule="adaptive-step")
        trace = run_hybrid(problem, reg, cfg, policy, np.zeros(problem.n),
                           x_ref=xref)
        ev = [lab for _, lab in trace.events if lab.startswith("adaptive-gamma=")]
        if ev:  # fired: the new step must not exceed 1/(3 L_M)
            gamma2 = float(ev[0].split("=", 1)[1])
            desc = reg.manifold_at(xref)
            _, L_M = local_lipschitz(problem, reg, desc)
            assert L_M <= L + 1e-12
            assert gamma2 <= 1 / (3 * L_M) + 1e-15 or np.isclose(gamma2, cfg.gamma)

    def test_rule_validation(self):
        problem, reg, _ = self._group_setup()
        cfg = SolverConfig(method="saga", gamma=0.01, max_iters=10)
        with pytest.raises(ValueError):
            run_hybrid(problem, reg, cfg,
                       HybridPolicy(rule="riemannian-cg"), np.zeros(problem.n))
        with pytest.raises(ValueError):
            HybridPolicy(rule="bfgs")


def test_hybrid_with_svrg_phase1():
    spec = InstanceSpec(kind="group-sparse", m=48, n=32, seed=15,
                        block_size=4, active_blocks=2, noise=0.02)
    problem, reg, _ = generate_instance(spec)
    xref = reference_solution(problem, reg)
    m = problem.m
    _, L, _ = problem.lipschitz_constants()
    cfg = SolverConfig(method="prox-svrg", gamma=1 / (3 * L), svrg_inner=m,
                       max_iters=120 * m, seed=2)
    policy = HybridPolicy(rule="newton", max_phase2_steps=12,
                          min_phase1_iters=60 * m)
    trace = run_hybrid(problem, reg, cfg, policy, np.zeros(problem.n),
                       x_ref=xref)
    assert any(lab == "switch-newton" for _, lab in trace.events)
    assert trace.dist_to_ref[-1] < 1e-11


def test_switch_events_in_trace_csv(tmp_path):
    # the event column carries identification and switch markers
    spec = InstanceSpec(kind="group-sparse", m=48, n=32, seed=15,
                        block_size=4, active_blocks=2, noise=0.02)
    problem, reg, _ = generate_instance(spec)
    xref = reference_solution(problem, reg)
    m = problem.m
    _, L, _ = problem.lipschitz_constants()
    cfg = SolverConfig(method="saga", gamma=1 / (3 * L), max_iters=120 * m,
                       seed=2)
    policy = HybridPolicy(rule="newton", max_phase2_steps=12,
                          min_phase1_iters=60 * m)
    trace = run_hybrid(problem, reg, cfg, policy, np.zeros(problem.n),
                       x_ref=xref)
    path = tmp_path / "hybrid.csv"
    trace.to_csv(path, stride=m, meta={"method": "saga+newton"})
    text = path.read_text()
    header = text.splitlines()[2]
    assert header.split(",")[-1] == "event"
    assert "switch-newton" in text and "identified" in text

    from proxvr.plotting import read_trace_csv
    data = read_trace_csv(path)
    assert any("switch-newton" in ev for ev in data["event"])


def test_phi_safeguard_triggers_fallback():
    # a descriptor with the wrong sign pattern makes Newton raise and the
    # hybrid must fall back rather than crash
    problem = least_squares_problem(np.array([[1.0, 0.0], [0.0, 1.0]]),
                                    np.array([5.0, 0.0]))
    reg = L1(0.5, n=2)
    cfg = SolverConfig(method="fbs", gamma=0.5, max_iters=40)
    policy = HybridPolicy(rule="newton", window=3, max_phase2_steps=5)
    trace = run_hybrid(problem, reg, cfg, policy, np.array([1.0, 1.0]))
    assert trace.x_final is not None  # never fatal
