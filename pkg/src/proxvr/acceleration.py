"""Post-identification acceleration: adaptive steps, Newton, Riemannian CG.

Once a stochastic run has settled on a manifold (a stable support, block
set, or rank), the problem restricted to that manifold is smooth, and three
local strategies become available:

* adaptive-step: re-derive the step size from the Lipschitz constants of the
  component gradients restricted to the manifold, which can be far smaller
  than the global ones, and keep running the same method;
* newton: solve the reduced smooth problem on the active coordinates with
  Newton steps (exact in one step for quadratic losses on a fixed sign
  pattern);
* riemannian-cg: nonlinear conjugate gradient on the fixed-rank matrix
  manifold with re-projection transport and truncated-SVD retraction.

A detector watches the descriptor stream and fires after a configurable
number of consecutive identical descriptors.  Safeguards (manifold change,
sign flip, objective increase, rank drop) cause a logged fallback to the
phase-1 method, never a crash.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .problems import FiniteSumProblem
from .regularizers import (ManifoldDescriptor, Nuclear, Regularizer,
                           descriptors_equal)
from .solvers import (SolverConfig, SolverTrace, _phi, run_fbs, run_prox_sgd,
                      run_prox_svrg, run_saga)


class SingularReducedHessianError(np.linalg.LinAlgError):
    pass


class SignFlipError(RuntimeError):
    """A Newton step left the fixed sign/block pattern; the safeguard
    rejects the step."""


class RankDropError(RuntimeError):
    """Retraction hit a numerically rank-deficient point."""


@dataclass
class IdentificationDetector:
    """Fires once ``window`` consecutive descriptors are identical.

    There is no computable bound on the identification iteration, so the
    window is a plain robustness knob; one epoch of stability (2m) is the
    default used by the hybrid runner.
    """

    window: int
    angle_tol: float = 1e-8
    candidate: ManifoldDescriptor | None = None
    run_length: int = 0
    fired: tuple[ManifoldDescriptor, int] | None = None

    def detect(self, desc: ManifoldDescriptor, k: int | None = None):
        """Push a descriptor; return it once the window is filled."""
        if self.fired is not None:
            return self.fired[0]
        if self.candidate is not None and descriptors_equal(
                self.candidate, desc, self.angle_tol):
            self.run_length += 1
        else:
            self.candidate = desc
            self.run_length = 1
        if self.run_length >= self.window:
            self.fired = (desc, -1 if k is None else k)
            return desc
        return None

    def reset(self):
        self.candidate = None
        self.run_length = 0
        self.fired = None


def detect(detector: IdentificationDetector, desc: ManifoldDescriptor,
           k: int | None = None):
    return detector.detect(desc, k)


def local_lipschitz(problem: FiniteSumProblem, reg: Regularizer,
                    desc: ManifoldDescriptor):
    """Per-component gradient Lipschitz constants restricted to the manifold
    and their max L_M.  Coordinate manifolds restrict each data row to the
    support; the fixed-rank manifold uses the tangent projection of each
    matricised row.  L_M <= L always, and L_M = 0 on an empty manifold."""
    if desc.kind == "nuclear":
        Li = np.empty(problem.m)
        for i in range(problem.m):
            pk = reg.tangent_project(desc, problem.A[i])
            Li[i] = pk @ pk
        if problem.kind == "least-squares":
            Li *= problem.weights
        else:
            Li /= 4.0
    else:
        idx = desc.support
        if idx.size == 0:
            return np.zeros(problem.m), 0.0
        sub = problem.A[:, idx]
        Li = np.einsum("ij,ij->i", sub, sub)
        if problem.kind == "least-squares":
            Li = problem.weights * Li
        else:
            Li = Li / 4.0
    return Li, float(Li.max()) if Li.size else 0.0


# ---------------------------------------------------------------------------
# Newton on a coordinate manifold
# ---------------------------------------------------------------------------

def reduced_gradient(problem, reg, desc, x, g_full=None):
    """Gradient of the smooth reduced objective on the active coordinates."""
    g = problem.grad_full(x) if g_full is None else g_full
    idx = desc.support
    gr = g[idx].copy()
    if desc.kind == "l1":
        gr += reg.mu * desc.signs.astype(float)
    else:
        for bid in desc.active_blocks:
            blk = reg.blocks[bid]
            pos = np.searchsorted(idx, blk)
            nb = np.linalg.norm(x[blk])
            gr[pos] += reg.mu * x[blk] / nb
    return gr


def newton_on_manifold(problem: FiniteSumProblem, reg: Regularizer,
                       desc: ManifoldDescriptor, x: np.ndarray,
                       g_full: np.ndarray | None = None) -> np.ndarray:
    """One Newton step on the reduced problem; off-manifold coordinates are
    untouched and the sign/block pattern must survive the step.

    For l1 the reduced penalty is affine (fixed signs), so the reduced
    Hessian is that of F alone; for group-l12 each active block adds the
    curvature mu * (I - u u^T)/||x_B|| of the block norm.
    """
    if desc.kind == "nuclear":
        raise ValueError("newton_on_manifold handles coordinate manifolds only")
    idx = desc.support
    if idx.size == 0:
        return x.copy()
    gr = reduced_gradient(problem, reg, desc, x, g_full)
    H = problem.hessian_full(x)[np.ix_(idx, idx)]
    if desc.kind == "group-l12":
        for bid in desc.active_blocks:
            blk = reg.blocks[bid]
            pos = np.searchsorted(idx, blk)
            nb = np.linalg.norm(x[blk])
            u = x[blk] / nb
            H[np.ix_(pos, pos)] += reg.mu * (np.eye(blk.size) - np.outer(u, u)) / nb
    try:
        delta = np.linalg.solve(H, -gr)
    except np.linalg.LinAlgError as exc:
        raise SingularReducedHessianError(str(exc)) from exc
    x_new = x.copy()
    x_new[idx] += delta
    if desc.kind == "l1":
        pen = desc.signs != 0
        if np.any(np.sign(x_new[idx][pen]) != desc.signs[pen]):
            raise SignFlipError("Newton step crossed zero on the support")
    else:
        for bid in desc.active_blocks:
            if np.linalg.norm(x_new[reg.blocks[bid]]) == 0.0:
                raise SignFlipError("Newton step annihilated an active block")
    return x_new


# ---------------------------------------------------------------------------
# Riemannian nonlinear CG on the fixed-rank manifold
# ---------------------------------------------------------------------------

@dataclass
class CGState:
    desc: ManifoldDescriptor
    grad: np.ndarray | None = None       # previous Riemannian gradient (flat)
    direction: np.ndarray | None = None  # previous search direction (flat)
    phi: float | None = None             # objective at the current point
    passes: int = 0                      # full data passes spent this step


def riemannian_gradient(problem, reg: Nuclear, desc, x, g_full=None):
    """Tangent gradient of the smooth representative F + mu ||.||_* at a
    rank-r point: P_T(grad F) + mu U V^T."""
    g = problem.grad_full(x) if g_full is None else g_full
    uv = (desc.U @ desc.V.T).reshape(-1)
    return reg.tangent_project(desc, g + reg.mu * uv)


def _retract(reg: Nuclear, y_flat, r):
    Y = y_flat.reshape(reg.shape)
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    if s[r - 1] <= 1e-12:
        raise RankDropError(f"sigma_{r} = {s[r - 1]:.3e} at retraction")
    Ur, sr, Vr = U[:, :r], s[:r], Vt[:r].T
    desc = ManifoldDescriptor(kind="nuclear", rank=r, U=Ur, V=Vr)
    return ((Ur * sr) @ Vr.T).reshape(-1), desc


def riemannian_cg_step(problem: FiniteSumProblem, reg: Nuclear,
                       desc: ManifoldDescriptor, x: np.ndarray,
                       state: CGState | None = None):
    """One Polak-Ribiere CG step with re-projection transport and
    truncated-SVD retraction.

    The step length starts from the exact minimiser of the quadratic model
    of F along the direction and is halved until the full objective does not
    increase (the curvature of the nuclear norm along the manifold is not in
    the model).  Returns (x_next, state) with the updated descriptor inside
    the state.
    """
    if state is None:
        state = CGState(desc=desc)
    desc = state.desc
    g = riemannian_gradient(problem, reg, desc, x)
    gnorm = float(np.linalg.norm(g))
    if gnorm < 1e-14 * max(1.0, float(np.linalg.norm(x))):
        return x, replace(state, grad=g, direction=None, passes=1)

    if state.grad is not None and state.direction is not None:
        g_prev = reg.tangent_project(desc, state.grad)
        beta = float(g @ (g - g_prev)) / float(state.grad @ state.grad)
        d = -g + beta * reg.tangent_project(desc, state.direction)
        if d @ g >= 0:
            d = -g
    else:
        d = -g

    curv = float(d @ problem.hessian_apply(x, d))
    t = -(g @ d) / curv if curv > 0 else 1.0
    if state.phi is None:
        phi0 = _phi(problem, reg, x)
        passes = 3  # gradient, curvature, phi0
    else:
        phi0 = state.phi
        passes = 2  # gradient, curvature; phi0 carried over
    # the acceptance test tolerates value noise at the ulp scale, otherwise
    # the search stalls once the true decrease drops below float resolution
    slack = 32 * np.finfo(float).eps * (abs(phi0) + 1.0)
    x_new, new_desc = _retract(reg, x + t * d, desc.rank)
    phi_new = _phi(problem, reg, x_new)
    passes += 1
    shrink = 0
    while phi_new > phi0 + slack and shrink < 40:
        t *= 0.5
        x_new, new_desc = _retract(reg, x + t * d, desc.rank)
        phi_new = _phi(problem, reg, x_new)
        shrink += 1
        passes += 1
    if shrink >= 40:
        return x, replace(state, grad=g, direction=None, phi=phi0,
                          passes=passes)
    return x_new, CGState(desc=new_desc, grad=g, direction=d, phi=phi_new,
                          passes=passes)


# ---------------------------------------------------------------------------
# Hybrid runs
# ---------------------------------------------------------------------------

@dataclass
class HybridPolicy:
    """Switch rule and safeguards for a two-phase run.

    ``window`` defaults to one epoch of descriptor stability (2m).  After the
    detector fires the run either continues the phase-1 method with a step
    derived from the local Lipschitz constant (never larger than 1/(3 L_M)),
    or iterates the local method for up to ``max_phase2_steps``.  Safeguards
    fall back to phase 1 and are logged in the trace, never fatal.
    """

    rule: str  # 'adaptive-step' | 'newton' | 'riemannian-cg'
    window: int | None = None
    angle_tol: float = 1e-8
    min_phase1_iters: int = 0
    max_phase2_steps: int = 200
    phase2_tol: float = 1e-13
    phi_increase_rtol: float = 1e-12
    max_fallbacks: int = 3

    def __post_init__(self):
        if self.rule not in ("adaptive-step", "newton", "riemannian-cg"):
            raise ValueError(f"unknown hybrid rule {self.rule!r}")


_PHASE1_RUNNERS = {
    "fbs": run_fbs,
    "prox-sgd": run_prox_sgd,
    "saga": run_saga,
    "prox-svrg": run_prox_svrg,
}


def run_hybrid(problem: FiniteSumProblem, reg: Regularizer,
               phase1_config: SolverConfig, policy: HybridPolicy,
               x0: np.ndarray, x_ref: np.ndarray | None = None) -> SolverTrace:
    """Phase 1 until the detector fires, then the policy's local strategy.

    The returned trace continues the iteration count across the switch and
    marks events: ``identified``, ``switch-<rule>``, ``fallback``.  If the
    detector never fires the output is the plain phase-1 trace.  After a
    safeguard fallback the detector is re-armed and the run may switch
    again, up to ``max_fallbacks`` times.
    """
    if policy.rule == "riemannian-cg" and reg.kind != "nuclear":
        raise ValueError("riemannian-cg requires the nuclear penalty")
    if policy.rule == "newton" and reg.kind == "nuclear":
        raise ValueError("newton rule needs a coordinate manifold")
    m = problem.m
    window = policy.window if policy.window is not None else 2 * m
    cfg = phase1_config
    runner = _PHASE1_RUNNERS[cfg.method]

    def make_hook(detector, k_offset, armed_after):
        def hook(k, x, d):
            fired = detector.detect(d, k_offset + k) is not None
            if fired and k_offset + k < armed_after:
                # too early to switch: restart the stability count
                detector.reset()
                detector.detect(d, k_offset + k)
                return False
            return fired
        return hook

    detector = IdentificationDetector(window=window,
                                      angle_tol=policy.angle_tol)
    trace = runner(problem, reg, cfg, x0, x_ref,
                   stop_when=make_hook(detector, 0, policy.min_phase1_iters))
    fallbacks = 0
    while detector.fired is not None:
        desc, _ = detector.fired
        k_fired = trace.n_iters
        trace.add_event(k_fired, "identified")
        trace.add_event(k_fired, f"switch-{policy.rule}")
        if policy.rule == "adaptive-step":
            budget_left = cfg.max_iters - trace.n_iters
            _continue_adaptive(problem, reg, cfg, policy, trace, desc, x_ref,
                               budget_left)
            return trace
        ok = _run_local_phase(problem, reg, policy, trace, desc, x_ref)
        if ok:
            return trace
        # safeguard tripped or the budget ran out short of the tolerance:
        # resume phase 1 and re-arm the detector
        fallbacks += 1
        budget_left = cfg.max_iters - trace.n_iters
        if budget_left <= 0 or fallbacks > policy.max_fallbacks:
            return trace
        detector = IdentificationDetector(window=window,
                                          angle_tol=policy.angle_tol)
        cfg2 = replace(cfg, max_iters=budget_left, seed=cfg.seed + fallbacks)
        hook = make_hook(detector, trace.n_iters, 0)
        if cfg.method == "saga" and trace.gradient_table is not None:
            cont = run_saga(problem, reg, cfg2, trace.x_final, x_ref,
                            table=trace.gradient_table, stop_when=hook)
        else:
            cont = runner(problem, reg, cfg2, trace.x_final, x_ref,
                          stop_when=hook)
        _merge(trace, cont)
    return trace


def _continue_adaptive(problem, reg, cfg, policy, trace, desc, x_ref,
                       budget_left):
    _, L_M = local_lipschitz(problem, reg, desc)
    if L_M <= 0:
        trace.add_event(trace.n_iters, "fallback")
        return
    # increase the step to 1/(3 L_M) but never past that cap; if the local
    # constant offers no improvement, keep the phase-1 step
    proposed = 1.0 / (3.0 * L_M)
    gamma2 = proposed if proposed > cfg.gamma else cfg.gamma
    trace.add_event(trace.n_iters, f"adaptive-gamma={gamma2!r}")
    cfg2 = replace(cfg, gamma=gamma2, max_iters=budget_left,
                   seed=cfg.seed + 1)
    x = trace.x_final

    def guard(k, xk, dk):
        return not descriptors_equal(desc, dk, policy.angle_tol)

    if cfg.method == "saga":
        table = trace.gradient_table
        cont = run_saga(problem, reg, cfg2, x, x_ref, table=table,
                        stop_when=guard)
    else:
        cont = _PHASE1_RUNNERS[cfg.method](problem, reg, cfg2, x, x_ref,
                                           stop_when=guard)
    _merge(trace, cont)
    if cont.stop_reason == "callback":
        # manifold moved after the switch: revert to the phase-1 step
        trace.add_event(trace.n_iters, "fallback")
        left = budget_left - cont.n_iters
        if left > 0:
            cfg3 = replace(cfg, max_iters=left, seed=cfg.seed + 2)
            if cfg.method == "saga":
                tail = run_saga(problem, reg, cfg3, trace.x_final, x_ref,
                                table=trace.gradient_table)
            else:
                tail = _PHASE1_RUNNERS[cfg.method](problem, reg, cfg3,
                                                   trace.x_final, x_ref)
            _merge(trace, tail)


def _damped_newton(problem, reg, desc, x, g, phi_prev, slack):
    """Full Newton step if the objective accepts it, else halved steps; the
    descriptor must survive whichever step is taken.  Returns the new point,
    its objective value, and the number of objective passes spent."""
    x_full = newton_on_manifold(problem, reg, desc, x, g_full=g)
    delta = x_full - x
    t = 1.0
    for trial in range(1, 31):
        x_new = x + t * delta
        d_new = reg.manifold_at(x_new)
        phi_new = _phi(problem, reg, x_new)
        if descriptors_equal(d_new, desc) and phi_new <= phi_prev + slack:
            return x_new, phi_new, trial
        t *= 0.5
    raise SignFlipError("no acceptable damped Newton step")


def _run_local_phase(problem, reg, policy, trace, desc, x_ref):
    """Iterate the local method; returns False when a safeguard tripped."""
    m = problem.m
    x = trace.x_final
    k = trace.n_iters
    evals = trace.grad_evals[-1]
    phi_prev = _phi(problem, reg, x)
    state = CGState(desc=desc) if policy.rule == "riemannian-cg" else None
    converged = False
    for _ in range(policy.max_phase2_steps):
        slack = policy.phi_increase_rtol * abs(phi_prev) + 1e-15
        try:
            if policy.rule == "newton":
                g = problem.grad_full(x)
                x_new, phi_new, trials = _damped_newton(
                    problem, reg, desc, x, g, phi_prev, slack)
                # gradient pass, Hessian assembly, line-search values
                evals += (2 + trials) * m
                new_desc = desc
            else:
                x_new, state = riemannian_cg_step(problem, reg, state.desc,
                                                  x, state)
                evals += state.passes * m
                new_desc = state.desc
                phi_new = state.phi if state.phi is not None else \
                    _phi(problem, reg, x_new)
        except (SingularReducedHessianError, SignFlipError, RankDropError):
            trace.add_event(k, "fallback")
            trace.x_final = x
            return False
        if phi_new > phi_prev + slack:
            trace.add_event(k, "fallback")
            trace.x_final = x
            return False
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        phi_prev = phi_new
        k += 1
        trace._row(k, _desc_count(new_desc), _dist(x, x_ref), evals,
                   trace.epoch[-1])
        trace.stride_ks.append(k)
        trace.phis.append(phi_new)
        trace.eps_norms.append(0.0)
        if step <= policy.phase2_tol * max(1.0, float(np.linalg.norm(x))):
            converged = True
            break
    trace.x_final = x
    trace.final_descriptor = desc if policy.rule == "newton" else state.desc
    trace.stop_reason = "phase2"
    if not converged:
        trace.add_event(k, "phase2-incomplete")
    return converged


def _desc_count(desc):
    return desc.rank if desc.kind == "nuclear" else int(desc.support.size)


def _dist(x, x_ref):
    return float(np.linalg.norm(x - x_ref)) if x_ref is not None else 0.0


def _merge(trace: SolverTrace, cont: SolverTrace):
    """Append a continuation run, shifting iteration and counter offsets."""
    k0 = trace.n_iters
    e0 = trace.grad_evals[-1]
    ep0 = trace.epoch[-1]
    trace.support_size.extend(cont.support_size[1:])
    if trace.dist_to_ref is not None and cont.dist_to_ref is not None:
        trace.dist_to_ref.extend(cont.dist_to_ref[1:])
    trace.grad_evals.extend(e0 + np.asarray(cont.grad_evals[1:], dtype=int))
    trace.epoch.extend(ep0 + np.asarray(cont.epoch[1:], dtype=int))
    trace.stride_ks.extend(k0 + np.asarray(cont.stride_ks, dtype=int))
    trace.phis.extend(cont.phis)
    trace.eps_norms.extend(cont.eps_norms)
    trace.eps_proxy.extend(cont.eps_proxy)
    trace.snapshot_ks.extend(k0 + np.asarray(cont.snapshot_ks, dtype=int))
    trace.snapshots.extend(cont.snapshots)
    trace.events.extend((k0 + k, label) for k, label in cont.events)
    trace.descriptor_changes.extend(k0 + np.asarray(cont.descriptor_changes,
                                                    dtype=int))
    trace.n_iters = k0 + cont.n_iters
    trace.x_final = cont.x_final
    trace.final_descriptor = cont.final_descriptor
    trace.stop_reason = cont.stop_reason
    if getattr(cont, "gradient_table", None) is not None:
        trace.gradient_table = cont.gradient_table
