"""Forward-Backward solvers: deterministic, plain stochastic, SAGA, Prox-SVRG.

Every method is the same perturbed Forward-Backward step

    x_{k+1} = prox_{gamma R}(x_k - gamma * (grad F(x_k) + e_k))

and differs only in its gradient estimate (equivalently, in the stochastic
error e_k):

    fbs       e_k = 0
    prox-sgd  e_k = grad f_i(x_k) - grad F(x_k)
    saga      e_k = grad f_i(x_k) - g_i + mean_j g_j - grad F(x_k)
    prox-svrg e_k = grad f_i(x_k) - grad f_i(xt) + grad F(xt) - grad F(x_k)

Traces record the support/rank of every iterate, the distance to a reference
point when one is supplied, and (on a configurable stride, since an exact
error norm needs one extra full data pass) the objective and ||e_k||.
Gradient-evaluation counters reflect only what the method itself computes:
one per sampled component, m per full gradient; diagnostics are free.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .problems import FiniteSumProblem
from .regularizers import ManifoldDescriptor, Regularizer

METHODS = ("fbs", "prox-sgd", "saga", "prox-svrg")

TRACE_SCHEMA = "proxvr-trace v1"
TRACE_COLUMNS = ("k", "phi", "dist_to_ref", "eps_norm", "support_size",
                 "grad_evals", "epoch", "event")


@dataclass
class SolverConfig:
    """Parameters shared by all runners.

    ``gamma`` is the fixed step for fbs/saga/prox-svrg and the base value of
    the decaying schedule gamma_k = gamma / (1+k)^sgd_decay for prox-sgd,
    with the decay exponent restricted to (1/2, 1].  ``stop_tol`` bounds the
    fixed-point residual ||x_{k+1} - x_k|| / gamma, checked on stride
    boundaries; the iteration cap always applies.
    """

    method: str
    gamma: float
    max_iters: int = 1000
    seed: int = 0
    sgd_decay: float = 0.6
    svrg_option: str = "I"
    svrg_inner: int | None = None
    stop_tol: float | None = None
    error_stride: int | None = None
    snapshot_stride: int | None = None
    record_conditional_mean: bool = False
    track_ergodic: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.method == "prox-sgd" and not 0.5 < self.sgd_decay <= 1.0:
            raise ValueError("sgd_decay must lie in (1/2, 1]")
        if self.method == "prox-svrg":
            if self.svrg_option not in ("I", "II"):
                raise ValueError("svrg_option must be 'I' or 'II'")
            if self.svrg_inner is not None and self.svrg_inner < 1:
                raise ValueError("svrg_inner must be >= 1")


@dataclass
class GradientTable:
    """Stored component gradients plus their incrementally maintained mean.

    The mean is re-synced from the table every m updates so accumulated
    drift stays below 1e-10 relative.
    """

    grads: np.ndarray          # (m, n)
    mean: np.ndarray           # (n,)
    updates: int = 0

    @classmethod
    def init(cls, problem: FiniteSumProblem, x0: np.ndarray) -> "GradientTable":
        g = np.empty((problem.m, problem.n))
        for i in range(problem.m):
            g[i] = problem.grad_component(i, x0)
        return cls(grads=g, mean=g.mean(axis=0))

    def update(self, i: int, gi: np.ndarray):
        m = self.grads.shape[0]
        self.mean = self.mean + (gi - self.grads[i]) / m
        self.grads[i] = gi
        self.updates += 1
        if self.updates % m == 0:
            self.mean = self.grads.mean(axis=0)

    def mean_drift(self) -> float:
        exact = self.grads.mean(axis=0)
        denom = max(1.0, float(np.linalg.norm(exact)))
        return float(np.linalg.norm(self.mean - exact)) / denom


def fb_step(x: np.ndarray, gamma: float, g: np.ndarray,
            reg: Regularizer) -> np.ndarray:
    """One Forward-Backward step prox_{gamma R}(x - gamma g); the shared
    kernel for every method."""
    x_new, _ = _fb_step_desc(x, gamma, g, reg)
    return x_new


def _fb_step_desc(x, gamma, g, reg):
    if g.shape != x.shape:
        raise ValueError("gradient estimate dimension mismatch")
    return reg.prox_with_manifold(gamma, x - gamma * g)


class SolverTrace:
    """Per-iteration record of one run.

    Arrays are indexed by the iterate counter k = 0..n_iters, row k
    describing x_k.  Strided diagnostics live in parallel lists keyed by
    ``stride_ks``.
    """

    def __init__(self, method: str, config: SolverConfig, m: int,
                 has_ref: bool):
        self.method = method
        self.config = config
        self.m = m
        self.support_size: list[int] = []
        self.dist_to_ref: list[float] | None = [] if has_ref else None
        self.grad_evals: list[int] = []
        self.epoch: list[int] = []
        self.stride_ks: list[int] = []
        self.phis: list[float] = []
        self.eps_norms: list[float] = []
        self.eps_proxy: list[float] = []
        self.snapshot_ks: list[int] = []
        self.snapshots: list[np.ndarray] = []
        self.cond_ks: list[int] = []
        self.cond_x: list[np.ndarray] = []
        self.cond_mean: list[np.ndarray] = []
        self.ergodic_ks: list[int] = []
        self.ergodic_phi_bar: list[float] = []
        self.events: list[tuple[int, str]] = []
        self.descriptor_changes: list[int] = []
        self.final_descriptor: ManifoldDescriptor | None = None
        self.gradient_table = None
        self.x_final: np.ndarray | None = None
        self.n_iters = 0
        self.stop_reason = "max_iters"

    # recording helpers -------------------------------------------------

    def _row(self, k, desc_size, dist, evals, epoch):
        self.support_size.append(desc_size)
        if self.dist_to_ref is not None:
            self.dist_to_ref.append(dist)
        self.grad_evals.append(evals)
        self.epoch.append(epoch)
        self.n_iters = k

    def add_event(self, k: int, label: str):
        self.events.append((k, label))

    # views --------------------------------------------------------------

    @property
    def identified_at(self) -> int:
        """Last iterate index at which the manifold descriptor changed
        (0 when it never changed after the start)."""
        return self.descriptor_changes[-1] if self.descriptor_changes else 0

    def support_array(self) -> np.ndarray:
        return np.asarray(self.support_size, dtype=np.int64)

    def dist_array(self) -> np.ndarray:
        if self.dist_to_ref is None:
            raise ValueError("run had no reference point")
        return np.asarray(self.dist_to_ref)

    def grad_evals_array(self) -> np.ndarray:
        return np.asarray(self.grad_evals, dtype=np.int64)

    def final_grad_evals(self) -> int:
        return self.grad_evals[-1]

    def to_csv(self, path, stride: int = 1, meta: dict | None = None):
        """Write the trace with the versioned column schema.

        Rows are emitted every ``stride`` iterations plus at event
        iterations; floats use shortest round-trip decimals so repeated runs
        are byte-identical.  ``meta`` key/value pairs land in a comment line
        so file-based tooling can recover method, step, and seed.
        """
        stride_map = {k: i for i, k in enumerate(self.stride_ks)}
        ev = {}
        for k, label in self.events:
            ev.setdefault(k, []).append(label)
        with open(path, "w", newline="") as f:
            f.write(f"# {TRACE_SCHEMA}\n")
            if meta:
                f.write("# " + " ".join(f"{k}={v}" for k, v in meta.items())
                        + "\n")
            f.write(",".join(TRACE_COLUMNS) + "\n")
            for k in range(len(self.support_size)):
                if k % stride and k not in ev and k != self.n_iters:
                    continue
                si = stride_map.get(k)
                phi = repr(self.phis[si]) if si is not None else ""
                eps = repr(self.eps_norms[si]) if si is not None else ""
                dist = (repr(self.dist_to_ref[k])
                        if self.dist_to_ref is not None else "")
                f.write(",".join([
                    str(k), phi, dist, eps, str(self.support_size[k]),
                    str(self.grad_evals[k]), str(self.epoch[k]),
                    ";".join(ev.get(k, [])),
                ]) + "\n")


def _support_count(desc: ManifoldDescriptor) -> int:
    if desc.kind == "nuclear":
        return desc.rank
    return int(desc.support.size)


def _desc_changed(prev: ManifoldDescriptor, cur: ManifoldDescriptor) -> bool:
    # Trace-level change tracking: exact support/sign sets for coordinate
    # manifolds, rank for the fixed-rank manifold (the manifold is the set
    # of matrices of that rank, so membership is rank membership).
    if prev is None:
        return True
    if cur.kind == "nuclear":
        return cur.rank != prev.rank
    if cur.kind == "l1":
        return not (np.array_equal(cur.support, prev.support)
                    and np.array_equal(cur.signs, prev.signs))
    return cur.active_blocks != prev.active_blocks


class _Recorder:
    """Shared bookkeeping for all runners."""

    def __init__(self, problem, reg, config, x0, x_ref, stride):
        self.problem = problem
        self.reg = reg
        self.config = config
        self.x_ref = x_ref
        self.stride = stride
        self.trace = SolverTrace(config.method, config, problem.m,
                                 x_ref is not None)
        self.prev_desc: ManifoldDescriptor | None = None
        self.evals = 0

    def dist(self, x):
        return float(np.linalg.norm(x - self.x_ref)) if self.x_ref is not None else 0.0

    def record_iterate(self, k, x, desc, epoch):
        t = self.trace
        if _desc_changed(self.prev_desc, desc):
            if self.prev_desc is not None:
                t.descriptor_changes.append(k)
            self.prev_desc = desc
        t._row(k, _support_count(desc), self.dist(x), self.evals, epoch)
        t.final_descriptor = desc
        cfg = self.config
        if cfg.snapshot_stride and k % cfg.snapshot_stride == 0:
            t.snapshot_ks.append(k)
            t.snapshots.append(x.copy())

    def record_stride_diag(self, k, x_pre, est, phi_x):
        """Exact error diagnostics at a stride boundary; the full gradient
        used here is off the books (it is not part of the method)."""
        t = self.trace
        gF = self.problem.grad_full(x_pre)
        eps = 0.0 if est is None else float(np.linalg.norm(est - gF))
        t.stride_ks.append(k)
        t.eps_norms.append(eps)
        t.phis.append(phi_x)
        return gF

    def is_stride(self, k):
        return k % self.stride == 0


def _phi(problem, reg, x):
    return problem.value_full(x) + reg.value(x)


def run_fbs(problem: FiniteSumProblem, reg: Regularizer, config: SolverConfig,
            x0: np.ndarray, x_ref: np.ndarray | None = None,
            stop_when=None) -> SolverTrace:
    """Deterministic Forward-Backward; the error term is identically zero.

    The step is expected in (0, 2/L_F); values outside only raise a warning
    because the local-rate experiments legitimately push to 1/(2L) and
    beyond.  ``stop_when(k, x_k, descriptor)`` may end the run early.
    """
    _, _, LF = problem.lipschitz_constants()
    if not 0 < config.gamma < 2.0 / LF:
        warnings.warn(f"fbs step {config.gamma} outside (0, {2.0 / LF:.3g})",
                      stacklevel=2)
    gamma = config.gamma
    m = problem.m
    stride = config.error_stride or 1
    rec = _Recorder(problem, reg, config, x0, x_ref, stride)
    x = x0.copy()
    rec.record_iterate(0, x, reg.manifold_at(x), 0)
    rec.trace.stride_ks.append(0)
    rec.trace.phis.append(_phi(problem, reg, x))
    rec.trace.eps_norms.append(0.0)
    for k in range(1, config.max_iters + 1):
        g = problem.grad_full(x)
        rec.evals += m
        x_new, desc = _fb_step_desc(x, gamma, g, reg)
        rec.record_iterate(k, x_new, desc, k)
        if rec.is_stride(k):
            rec.trace.stride_ks.append(k)
            rec.trace.phis.append(_phi(problem, reg, x_new))
            rec.trace.eps_norms.append(0.0)
            if config.record_conditional_mean:
                rec.trace.cond_ks.append(k - 1)
                rec.trace.cond_x.append(x.copy())
                rec.trace.cond_mean.append(x_new.copy())
            if config.stop_tol is not None:
                if np.linalg.norm(x_new - x) / gamma < config.stop_tol:
                    x = x_new
                    rec.trace.stop_reason = "tol"
                    break
        x = x_new
        if stop_when is not None and stop_when(k, x, desc):
            rec.trace.stop_reason = "callback"
            break
    rec.trace.x_final = x
    return rec.trace


def run_prox_sgd(problem, reg, config, x0, x_ref=None,
                 stop_when=None) -> SolverTrace:
    """Plain proximal stochastic gradient with the decaying schedule
    gamma_k = gamma / (1 + k)^s.  Uniform sampling uses PCG64 through
    numpy's Generator.integers, which is free of modulo bias."""
    m = problem.m
    rng = np.random.default_rng(config.seed)
    stride = config.error_stride or m
    rec = _Recorder(problem, reg, config, x0, x_ref, stride)
    x = x0.copy()
    rec.record_iterate(0, x, reg.manifold_at(x), 0)
    for k in range(1, config.max_iters + 1):
        gamma_k = config.gamma / (1.0 + (k - 1)) ** config.sgd_decay
        i = int(rng.integers(m))
        gi = problem.grad_component(i, x)
        rec.evals += 1
        if rec.is_stride(k) and config.record_conditional_mean:
            _record_cond_mean_sgd(rec, k - 1, x, gamma_k)
        x_new, desc = _fb_step_desc(x, gamma_k, gi, reg)
        rec.record_iterate(k, x_new, desc, k // m)
        if rec.is_stride(k):
            rec.record_stride_diag(k, x, gi, _phi(problem, reg, x_new))
            if config.stop_tol is not None and \
                    np.linalg.norm(x_new - x) / gamma_k < config.stop_tol:
                x = x_new
                rec.trace.stop_reason = "tol"
                break
        x = x_new
        if stop_when is not None and stop_when(k, x, desc):
            rec.trace.stop_reason = "callback"
            break
    rec.trace.x_final = x
    return rec.trace


def run_saga(problem, reg, config, x0, x_ref=None,
             table: GradientTable | None = None,
             stop_when=None) -> SolverTrace:
    """SAGA: variance reduction through a table of stored component
    gradients.

    The table is initialised with grad f_i(x0) for every i (m evaluations,
    charged to the counter).  Each step samples i uniformly, forms
    grad f_i(x) - g_i + mean(g), applies the Forward-Backward kernel, then
    overwrites entry i.  Passing ``table`` resumes from existing state.
    """
    m = problem.m
    gamma = config.gamma
    rng = np.random.default_rng(config.seed)
    stride = config.error_stride or m
    rec = _Recorder(problem, reg, config, x0, x_ref, stride)
    x = x0.copy()
    if table is None:
        table = GradientTable.init(problem, x0)
        rec.evals += m
    rec.record_iterate(0, x, reg.manifold_at(x), 0)
    trace = rec.trace
    trace.gradient_table = table
    for k in range(1, config.max_iters + 1):
        i = int(rng.integers(m))
        gi = problem.grad_component(i, x)
        rec.evals += 1
        est = gi - table.grads[i] + table.mean
        proxy = float(np.linalg.norm(gi - table.grads[i]))
        if rec.is_stride(k) and config.record_conditional_mean:
            _record_cond_mean_saga(rec, k - 1, x, gamma, table)
        x_new, desc = _fb_step_desc(x, gamma, est, reg)
        table.update(i, gi)
        rec.record_iterate(k, x_new, desc, k // m)
        trace.eps_proxy.append(proxy)
        if rec.is_stride(k):
            rec.record_stride_diag(k, x, est, _phi(problem, reg, x_new))
            if config.stop_tol is not None and \
                    np.linalg.norm(x_new - x) / gamma < config.stop_tol:
                x = x_new
                trace.stop_reason = "tol"
                break
        x = x_new
        if stop_when is not None and stop_when(k, x, desc):
            trace.stop_reason = "callback"
            break
    trace.x_final = x
    return trace


def run_prox_svrg(problem, reg, config, x0, x_ref=None,
                  stop_when=None) -> SolverTrace:
    """Prox-SVRG with inner length P: the outer loop computes a full
    gradient anchor, each of the P inner steps adds two component gradient
    evaluations, so one epoch costs m + 2P evaluations.

    Option I restarts the anchor at the last inner iterate, Option II at the
    inner average.  Iterations are counted globally, k = ell * P + p.
    """
    m = problem.m
    P = config.svrg_inner or m
    gamma = config.gamma
    rng = np.random.default_rng(config.seed)
    stride = config.error_stride or m
    rec = _Recorder(problem, reg, config, x0, x_ref, stride)
    x_tilde = x0.copy()
    x = x0.copy()
    rec.record_iterate(0, x, reg.manifold_at(x), 0)
    trace = rec.trace
    running_sum = np.zeros_like(x0)
    k = 0
    ell = 0
    done = False
    while not done and k < config.max_iters:
        g_tilde = problem.grad_full(x_tilde)
        rec.evals += m
        trace.add_event(k, "full-gradient")
        inner_sum = np.zeros_like(x)
        for _ in range(P):
            if k >= config.max_iters:
                break
            i = int(rng.integers(m))
            est = (problem.grad_component(i, x)
                   - problem.grad_component(i, x_tilde) + g_tilde)
            rec.evals += 2
            k += 1
            if rec.is_stride(k) and config.record_conditional_mean:
                _record_cond_mean_svrg(rec, k - 1, x, gamma, x_tilde, g_tilde)
            x_new, desc = _fb_step_desc(x, gamma, est, reg)
            rec.record_iterate(k, x_new, desc, ell)
            inner_sum += x_new
            running_sum += x_new
            if rec.is_stride(k):
                rec.record_stride_diag(k, x, est, _phi(problem, reg, x_new))
                if config.stop_tol is not None and \
                        np.linalg.norm(x_new - x) / gamma < config.stop_tol:
                    trace.stop_reason = "tol"
                    done = True
            x = x_new
            if done:
                break
            if stop_when is not None and stop_when(k, x, desc):
                trace.stop_reason = "callback"
                done = True
                break
        if k % P == 0 and k > 0:
            x_tilde = x.copy() if config.svrg_option == "I" else inner_sum / P
            ell += 1
            if config.track_ergodic:
                trace.ergodic_ks.append(k)
                trace.ergodic_phi_bar.append(
                    _phi(problem, reg, running_sum / k))
    trace.x_final = x
    return trace


RUNNERS = {
    "fbs": run_fbs,
    "prox-sgd": run_prox_sgd,
    "saga": run_saga,
    "prox-svrg": run_prox_svrg,
}


def run(problem, reg, config: SolverConfig, x0, x_ref=None) -> SolverTrace:
    return RUNNERS[config.method](problem, reg, config, x0, x_ref)


# conditional means over the m sampling outcomes (diagnostics for the
# linearised-iteration analysis; never charged to the counter) -------------

def _record_cond_mean_sgd(rec, k_pre, x, gamma_k):
    p = rec.problem
    acc = np.zeros_like(x)
    for j in range(p.m):
        acc += fb_step(x, gamma_k, p.grad_component(j, x), rec.reg)
    _push_cond(rec.trace, k_pre, x, acc / p.m)


def _record_cond_mean_saga(rec, k_pre, x, gamma, table):
    p = rec.problem
    acc = np.zeros_like(x)
    for j in range(p.m):
        est = p.grad_component(j, x) - table.grads[j] + table.mean
        acc += fb_step(x, gamma, est, rec.reg)
    _push_cond(rec.trace, k_pre, x, acc / p.m)


def _record_cond_mean_svrg(rec, k_pre, x, gamma, x_tilde, g_tilde):
    p = rec.problem
    acc = np.zeros_like(x)
    for j in range(p.m):
        est = p.grad_component(j, x) - p.grad_component(j, x_tilde) + g_tilde
        acc += fb_step(x, gamma, est, rec.reg)
    _push_cond(rec.trace, k_pre, x, acc / p.m)


def _push_cond(trace, k_pre, x, mean_next):
    trace.cond_ks.append(k_pre)
    trace.cond_x.append(x.copy())
    trace.cond_mean.append(mean_next)


def enumerate_estimates(method: str, problem, x, *, table=None, x_tilde=None,
                        g_tilde=None) -> np.ndarray:
    """All m gradient estimates a method could draw at state x; their mean
    must equal grad F(x) exactly (the debiasing identity)."""
    m = problem.m
    out = np.empty((m, problem.n))
    for i in range(m):
        if method == "prox-sgd":
            out[i] = problem.grad_component(i, x)
        elif method == "saga":
            out[i] = problem.grad_component(i, x) - table.grads[i] + table.mean
        elif method == "prox-svrg":
            out[i] = (problem.grad_component(i, x)
                      - problem.grad_component(i, x_tilde) + g_tilde)
        else:
            raise ValueError(f"no sampling in method {method!r}")
    return out
