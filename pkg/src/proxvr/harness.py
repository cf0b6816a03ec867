"""Reference solutions, empirical rate summaries, and run configuration.

The harness owns everything the experiments share: producing a trusted
reference point x* (closed form when the design is unitary, a deterministic
high-accuracy solve otherwise, always gated by a fixed-point residual
check), fitting empirical contraction factors to post-identification trace
windows, and pairing them with the certified theoretical factors.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass

import numpy as np

from .local_analysis import LocalCertificate, certify, rate_formulas
from .problems import FiniteSumProblem, InstanceSpec, generate_instance, load_instance
from .regularizers import Regularizer
from .solvers import SolverConfig, SolverTrace, fb_step, run_fbs

REFERENCE_RESIDUAL_GATE = 1e-10


class NotUnitaryError(ValueError):
    pass


class ReferenceQualityError(RuntimeError):
    pass


def closed_form_unitary_lasso(K: np.ndarray, b: np.ndarray,
                              mu: float) -> np.ndarray:
    """Exact minimiser of mu ||x||_1 + (1/2)||Kx - b||^2 for unitary K:
    soft-threshold K^T b at level mu."""
    n = K.shape[1]
    if K.shape[0] != n or np.abs(K.T @ K - np.eye(n)).max() > 1e-10:
        raise NotUnitaryError("K^T K differs from the identity beyond 1e-10")
    c = K.T @ b
    return np.sign(c) * np.maximum(np.abs(c) - mu, 0.0)


def fixed_point_residual(problem, reg, xref, gamma=None) -> float:
    """||fb_step(x*, gamma, grad F(x*)) - x*||; a true minimiser is a fixed
    point for every step size."""
    if gamma is None:
        _, _, LF = problem.lipschitz_constants()
        gamma = 1.0 / LF
    return float(np.linalg.norm(
        fb_step(xref, gamma, problem.grad_full(xref), reg) - xref))


def reference_solution(problem: FiniteSumProblem, reg: Regularizer,
                       policy: str = "high-accuracy-fbs",
                       tol: float = 1e-13, path: str | None = None,
                       polish: bool = True,
                       max_iters: int = 2_000_000) -> np.ndarray:
    """Produce x* by the configured policy and gate it on the fixed-point
    residual before anything downstream may use it.

    high-accuracy-fbs runs the deterministic solver with step 1/L_F until
    the fixed-point residual drops below ``tol``; on coordinate manifolds a
    couple of reduced Newton corrections then squeeze out the last digits.
    """
    if policy == "closed-form":
        xref = closed_form_unitary_lasso(problem.A, problem.b, reg.mu)
    elif policy == "external-file":
        xref = np.loadtxt(path)
    elif policy == "high-accuracy-fbs":
        _, _, LF = problem.lipschitz_constants()
        gamma = 1.0 / LF
        x = np.zeros(problem.n)
        chunk = 2_000
        total = 0
        prev_res = math.inf
        while total < max_iters:
            cfg = SolverConfig(method="fbs", gamma=gamma,
                               max_iters=min(chunk, max_iters - total),
                               stop_tol=tol, error_stride=200)
            trace = run_fbs(problem, reg, cfg, x)
            x = trace.x_final
            total += trace.n_iters
            res = fixed_point_residual(problem, reg, x, gamma)
            # done at tolerance, or stalled at the float floor for the
            # problem's scale (the residual gate below still decides)
            if res < tol or res > 0.5 * prev_res:
                break
            prev_res = res
        xref = x
        if polish and reg.kind in ("l1", "group-l12"):
            from .acceleration import newton_on_manifold
            desc = reg.manifold_at(xref)
            if desc.support.size:
                try:
                    for _ in range(2):
                        xref = newton_on_manifold(problem, reg, desc, xref)
                except Exception:
                    pass  # keep the plain solve; the gate below decides
    else:
        raise ValueError(f"unknown reference policy {policy!r}")
    res = fixed_point_residual(problem, reg, xref)
    if res >= REFERENCE_RESIDUAL_GATE:
        raise ReferenceQualityError(
            f"reference fixed-point residual {res:.3e} exceeds "
            f"{REFERENCE_RESIDUAL_GATE:.0e}")
    return xref


# ---------------------------------------------------------------------------
# empirical contraction factors
# ---------------------------------------------------------------------------

def empirical_contraction_factor(trace: SolverTrace, k_start: int | None = None,
                                 fit_fraction: float = 0.5,
                                 floor: float | None = None) -> float:
    """exp(slope) of the least-squares fit of ln ||x_k - x*|| against k over
    the last ``fit_fraction`` of the post-identification window.

    A converged tail (the distance stalling at the float/reference floor)
    would flatten the fit, so the window ends where the distance first
    drops within a factor 3 of its minimum; ``floor`` overrides that
    adaptive cut with an absolute level.
    """
    dist = trace.dist_array()
    if k_start is None:
        k_start = trace.identified_at
    T = len(dist) - 1
    seg = dist[k_start:T + 1]
    if floor is None:
        pos = seg[seg > 0]
        if pos.size == 0:
            raise ValueError("distance identically zero after k_start")
        floor = 3.0 * float(pos.min())
    below = np.flatnonzero(seg <= floor)
    if below.size:
        T = k_start + int(below[0]) - 1
    if T <= k_start + 2:
        raise ValueError("insufficient post-identification window for a fit")
    lo = k_start + int((1.0 - fit_fraction) * (T - k_start))
    ks = np.arange(lo, T + 1)
    y = dist[lo:T + 1]
    keep = y > 0
    ks, y = ks[keep], y[keep]
    if ks.size < 3:
        raise ValueError("insufficient post-identification window for a fit")
    slope = np.polyfit(ks, np.log(y), 1)[0]
    return float(np.exp(slope))


@dataclass
class RateComparison:
    name: str
    method: str
    seed: int
    gamma: float
    identified_at: int
    empirical_factor: float
    rho_mfb: float
    rho_method: float          # per-iteration equivalent of the method bound
    matches_mfb: bool
    slower_than_mfb: bool


def summarize_rates(problem: FiniteSumProblem, cert: LocalCertificate,
                    traces: list[tuple[str, SolverTrace]],
                    fit_fraction: float = 0.5,
                    log_tol: float = 0.10) -> list[RateComparison]:
    """Pair each trace's empirical per-iteration factor with the certified
    spectral radius and the method's theoretical bound.

    ``matches_mfb`` holds when the factor agrees with rho(M_FB) within
    ``log_tol`` relative tolerance in log scale; ``slower_than_mfb`` when it
    decays less than that allowance permits.
    """
    _, L, _ = problem.lipschitz_constants()
    rows = []
    for name, trace in traces:
        cfg = trace.config
        factor = empirical_contraction_factor(trace, fit_fraction=fit_fraction)
        rho_mfb = cert.rho_mfb_at(cfg.gamma)
        P = cfg.svrg_inner or problem.m
        bundle = rate_formulas(cert.alpha, L, problem.m, cfg.gamma, P=P,
                               alpha_F=cert.alpha, alpha_R=0.0)
        try:
            rho_method = bundle.per_iteration(cfg.method)
        except ValueError:
            rho_method = math.nan
        lf, lr = math.log(factor), math.log(rho_mfb)
        matches = abs(lf - lr) <= log_tol * abs(lr)
        slower = lf > lr + log_tol * abs(lr)
        rows.append(RateComparison(
            name=name, method=cfg.method, seed=cfg.seed, gamma=cfg.gamma,
            identified_at=trace.identified_at, empirical_factor=factor,
            rho_mfb=rho_mfb, rho_method=rho_method, matches_mfb=matches,
            slower_than_mfb=slower))
    return rows


def write_summary_csv(path, rows: list[RateComparison]):
    cols = ("name", "method", "seed", "gamma", "identified_at",
            "empirical_factor", "rho_mfb", "rho_method", "matches_mfb",
            "slower_than_mfb")
    with open(path, "w", newline="") as f:
        f.write("# proxvr-summary v1\n")
        f.write(",".join(cols) + "\n")
        for r in rows:
            f.write(",".join([
                r.name, r.method, str(r.seed), repr(r.gamma),
                str(r.identified_at), repr(r.empirical_factor),
                repr(r.rho_mfb), repr(r.rho_method),
                str(r.matches_mfb).lower(), str(r.slower_than_mfb).lower(),
            ]) + "\n")


# ---------------------------------------------------------------------------
# configuration files (ini sections, plain key = value)
# ---------------------------------------------------------------------------

_GAMMA_PATTERNS = (
    # 1/(cL), e.g. 1/(3L) or 1/(2.5L)
    (re.compile(r"^1/\((\d+(?:\.\d+)?)L\)$"), lambda m, L, P: 1.0 / (float(m.group(1)) * L)),
    # 1/(cL(P+d))
    (re.compile(r"^1/\((\d+(?:\.\d+)?)L\(P\+(\d+)\)\)$"),
     lambda m, L, P: 1.0 / (float(m.group(1)) * L * (P + int(m.group(2))))),
)


def resolve_gamma(expr: str, L: float, P: int | None = None) -> float:
    """Turn a step-size expression ('1/(3L)', '1/(4L(P+2))', or a float
    literal) into a number using the instance's Lipschitz constant."""
    expr = expr.replace(" ", "")
    for pat, fn in _GAMMA_PATTERNS:
        m = pat.match(expr)
        if m:
            if "P" in pat.pattern and P is None:
                raise ValueError(f"{expr!r} needs P")
            return fn(m, L, P)
    return float(expr)


@dataclass
class SolverSection:
    name: str
    method: str
    gamma_expr: str
    max_iters: int
    seeds: tuple[int, ...]
    svrg_option: str = "I"
    svrg_inner: int | None = None
    sgd_decay: float = 0.6
    stop_tol: float | None = None


@dataclass
class ExperimentConfig:
    instance: InstanceSpec | None
    instance_path: str | None
    reference_policy: str
    reference_tol: float
    solvers: list[SolverSection]
    analysis_gamma: str
    svrg_P: int | None
    local_regime: bool
    out_dir: str
    stride: int
    plots: bool
    x0_scale: float = 0.0

    def load(self):
        if self.instance_path:
            return load_instance(self.instance_path)
        return generate_instance(self.instance)


def parse_experiment_config(path) -> ExperimentConfig:
    """Read the sectioned key = value format; see README for the schema."""
    cp = configparser.ConfigParser()
    with open(path) as f:
        cp.read_file(f)
    spec = None
    instance_path = None
    if cp.has_section("instance"):
        sec = cp["instance"]
        if "path" in sec:
            instance_path = sec["path"]
        else:
            spec = InstanceSpec(
                kind=sec["kind"], m=sec.getint("m"), n=sec.getint("n"),
                seed=sec.getint("seed", 0),
                mu=sec.getfloat("mu") if "mu" in sec else None,
                sparsity=sec.getint("sparsity", 8),
                saturated=sec.getint("saturated", 0),
                block_size=sec.getint("block_size", 4),
                active_blocks=sec.getint("active_blocks", 8),
                rank=sec.getint("rank", 4),
                noise=sec.getfloat("noise", 0.01),
                scale=sec.get("scale", "mean"),
            )
    ref = cp["reference"] if cp.has_section("reference") else {}
    solvers = []
    for name in cp.sections():
        if not name.startswith("solver"):
            continue
        sec = cp[name]
        seeds = tuple(int(s) for s in sec.get("seeds", "0").split())
        solvers.append(SolverSection(
            name=name.split(None, 1)[1] if " " in name else name,
            method=sec["method"], gamma_expr=sec.get("gamma", "1/(3L)"),
            max_iters=sec.getint("max_iters", 10000), seeds=seeds,
            svrg_option=sec.get("svrg_option", "I"),
            svrg_inner=sec.getint("svrg_inner") if "svrg_inner" in sec else None,
            sgd_decay=sec.getfloat("sgd_decay", 0.6),
            stop_tol=sec.getfloat("stop_tol") if "stop_tol" in sec else None,
        ))
    ana = cp["analysis"] if cp.has_section("analysis") else {}
    out = cp["output"] if cp.has_section("output") else {}
    return ExperimentConfig(
        instance=spec, instance_path=instance_path,
        reference_policy=(ref.get("policy", "high-accuracy-fbs")
                          if hasattr(ref, "get") else "high-accuracy-fbs"),
        reference_tol=float(ref.get("tol", "1e-13")) if hasattr(ref, "get") else 1e-13,
        solvers=solvers,
        analysis_gamma=ana.get("gamma", "1/(3L)") if hasattr(ana, "get") else "1/(3L)",
        svrg_P=int(ana["svrg_p"]) if (hasattr(ana, "get") and ana.get("svrg_p")) else None,
        local_regime=(ana.get("local_regime", "true").lower() == "true"
                      if hasattr(ana, "get") else True),
        out_dir=out.get("dir", "out") if hasattr(out, "get") else "out",
        stride=int(out.get("stride", "1")) if hasattr(out, "get") else 1,
        plots=(out.get("plots", "false").lower() == "true"
               if hasattr(out, "get") else False),
        x0_scale=float(ana.get("x0_scale", "0")) if hasattr(ana, "get") else 0.0,
    )


def certify_instance(problem, reg, xref, gamma_expr="1/(3L)", P=None,
                     local_regime=True) -> LocalCertificate:
    _, L, _ = problem.lipschitz_constants()
    gamma = resolve_gamma(gamma_expr, L, P)
    return certify(problem, reg, xref, gamma, P=P, local_regime=local_regime)
