"""Local structure at a reference solution: injectivity, linearised rates.

Given a reference point x* (closed form or a high-accuracy solve), this
module certifies

* non-degeneracy: -grad F(x*) sits strictly inside the relative interior of
  the subdifferential of R (measured by the regularizer);
* restricted injectivity: the Hessian of F restricted to the tangent space
  T of the active manifold is positive definite, with modulus alpha;

and builds the matrix driving the linearised Forward-Backward iteration on
T.  For the coordinate (polyhedral-manifold) penalties the curvature of R
along its own manifold is dropped, so the matrix reduces to

    M_FB = I - gamma * H_F|_T,      H_F = P_T grad^2 F(x*) P_T,

whose spectral radius 1 - gamma * alpha is the ideal local per-iteration
contraction factor.  The fixed-rank manifold is curved; no M_FB is built for
it and the certificate reports the 1 - gamma * alpha bound instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problems import FiniteSumProblem
from .regularizers import ManifoldDescriptor, NDReport, Regularizer
from .solvers import SolverTrace

RI_TOL = 1e-10


@dataclass
class RateBundle:
    """Theoretical per-regime contraction factors.

    ``rho_fb`` and ``rho_mfb``-style factors act per iteration on the
    distance; ``rho_saga`` acts per iteration on the squared distance;
    ``rho_svrg`` acts per outer loop on the squared distance.  Factors >= 1
    are returned as-is with their name listed in ``non_contractive``.
    """

    gamma: float
    P: int | None
    rho_fb: float
    rho_saga: float
    rho_svrg: float
    rho_svrg_largeP: float
    alpha_mode: str
    non_contractive: tuple[str, ...] = ()

    def per_iteration(self, method: str) -> float:
        """Convert a method's bound to a per-iteration factor on the plain
        (not squared) distance, the scale traces are measured on."""
        if method == "saga":
            return math.sqrt(self.rho_saga)
        if method == "prox-svrg":
            if not self.P:
                raise ValueError("need P for a per-iteration SVRG factor")
            return self.rho_svrg ** (1.0 / (2.0 * self.P))
        if method == "fbs":
            return self.rho_fb
        raise ValueError(f"no theoretical factor for method {method!r}")


def rate_formulas(alpha: float, L: float, m: int, gamma: float,
                  P: int | None = None, alpha_F: float = 0.0,
                  alpha_R: float = 0.0) -> RateBundle:
    """Pure scalar rate arithmetic.

    rho_fb          = 1 - gamma * alpha
    rho_saga        = 1 - min(1/(4m), alpha/(3L))
    rho_svrg        = max((1 - gamma*alpha_F)/(1 + gamma*alpha_R),
                          4 L gamma (P+1))
    rho_svrg_largeP = 1/(alpha*gamma*(1-4Lgamma)*P) + 4Lgamma/(1-4Lgamma)
    """
    rho_fb = 1.0 - gamma * alpha if np.isfinite(alpha) else 0.0
    rho_saga = 1.0 - min(1.0 / (4.0 * m), alpha / (3.0 * L))
    rho_svrg = math.nan
    rho_largep = math.nan
    if P is not None and P >= 1:
        rho_svrg = max((1.0 - gamma * alpha_F) / (1.0 + gamma * alpha_R),
                       4.0 * L * gamma * (P + 1))
        denom = 1.0 - 4.0 * L * gamma
        if denom > 0 and alpha > 0 and np.isfinite(alpha):
            rho_largep = (1.0 / (alpha * gamma * denom * P)
                          + 4.0 * L * gamma / denom)
        else:
            rho_largep = math.inf
    flags = tuple(name for name, r in
                  (("rho_fb", rho_fb), ("rho_saga", rho_saga),
                   ("rho_svrg", rho_svrg), ("rho_svrg_largeP", rho_largep))
                  if np.isfinite(r) and r >= 1.0)
    mode = "local" if alpha_F or alpha_R else "global-zero"
    return RateBundle(gamma=gamma, P=P, rho_fb=rho_fb, rho_saga=rho_saga,
                      rho_svrg=rho_svrg, rho_svrg_largeP=rho_largep,
                      alpha_mode=mode, non_contractive=flags)


@dataclass
class LocalCertificate:
    """Everything the rate experiments need about the reference solution."""

    nd: NDReport
    ri_holds: bool
    alpha: float
    alpha_F: float
    alpha_R: float
    descriptor: ManifoldDescriptor = field(repr=False)
    mfb: np.ndarray | None = field(default=None, repr=False)
    rho_mfb: float = math.nan
    mfb_is_bound: bool = False
    gamma: float = math.nan
    rates: RateBundle | None = None

    def rho_mfb_at(self, gamma: float) -> float:
        """Ideal factor 1 - gamma*alpha for a step other than the certified
        one (exact for the coordinate penalties, an upper bound on the
        curved manifold)."""
        if not np.isfinite(self.alpha):
            return 0.0
        return 1.0 - gamma * self.alpha

    def report_lines(self) -> list[str]:
        lines = [
            f"nd_gap {self.nd.gap!r}",
            f"nd_holds {str(self.nd.holds).lower()}",
            f"nd_saturated {self.nd.saturated_count}",
            f"nd_support_residual {self.nd.support_residual!r}",
            f"ri_holds {str(self.ri_holds).lower()}",
            f"alpha {self.alpha!r}",
            f"alpha_F {self.alpha_F!r}",
            f"alpha_R {self.alpha_R!r}",
            f"manifold_dim {self.descriptor.dim()}",
            f"gamma {self.gamma!r}",
            f"rho_mfb {self.rho_mfb!r}",
            f"rho_mfb_is_bound {str(self.mfb_is_bound).lower()}",
        ]
        if self.rates is not None:
            r = self.rates
            lines += [
                f"rho_fb {r.rho_fb!r}",
                f"rho_saga {r.rho_saga!r}",
                f"rho_svrg {r.rho_svrg!r}",
                f"rho_svrg_largeP {r.rho_svrg_largeP!r}",
                f"svrg_P {r.P}",
                f"alpha_mode {r.alpha_mode}",
                f"non_contractive {','.join(r.non_contractive) or '-'}",
            ]
        return lines

    def write_report(self, path):
        with open(path, "w") as f:
            f.write("# proxvr-certificate v1\n")
            for line in self.report_lines():
                f.write(line + "\n")


class NonLinearManifoldError(ValueError):
    """The linearised iteration matrix is only built on linear manifolds."""


def restricted_alpha(problem: FiniteSumProblem, reg: Regularizer,
                     xref: np.ndarray, tol: float = RI_TOL):
    """Smallest eigenvalue of the Hessian of F restricted to the tangent
    space at xref, and whether restricted injectivity holds.

    An empty tangent space (xref = 0 with everything penalised) makes the
    kernel intersection trivially {0}; alpha is reported as +inf.
    """
    desc = reg.manifold_at(xref)
    H = problem.hessian_full(xref)
    if desc.kind in ("l1", "group-l12"):
        idx = desc.support
        if idx.size == 0:
            return math.inf, True, desc
        Ht = H[np.ix_(idx, idx)]
    else:
        B = reg.tangent_basis(desc)
        if B.shape[1] == 0:
            return math.inf, True, desc
        Ht = B.T @ H @ B
    alpha = float(np.linalg.eigvalsh(Ht)[0])
    return alpha, alpha > tol, desc


def build_mfb(problem: FiniteSumProblem, reg: Regularizer, xref: np.ndarray,
              gamma: float) -> np.ndarray:
    """Linearised-iteration matrix restricted to the tangent coordinates.

    Only defined on the linear manifolds of the coordinate penalties, where
    the manifold Hessian of R vanishes and M_FB = I - gamma * H_F|_T.
    """
    desc = reg.manifold_at(xref)
    if desc.kind == "nuclear":
        raise NonLinearManifoldError(
            "M_FB is only assembled for coordinate-manifold penalties")
    idx = desc.support
    H = problem.hessian_full(xref)
    Ht = H[np.ix_(idx, idx)]
    return np.eye(idx.size) - gamma * Ht


def spectral_radius(M: np.ndarray) -> float:
    """Largest eigenvalue modulus; symmetric inputs use the symmetric
    eigensolver."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("spectral_radius needs a square matrix")
    if M.size == 0:
        return 0.0
    scale = np.abs(M).max() or 1.0
    if np.abs(M - M.T).max() <= 1e-12 * scale:
        w = np.linalg.eigvalsh(M)
        return float(max(abs(w[0]), abs(w[-1])))
    return float(np.abs(np.linalg.eigvals(M)).max())


def theoretical_rates(problem: FiniteSumProblem, cert: LocalCertificate,
                      gamma: float, P: int | None = None,
                      local_regime: bool = False) -> RateBundle:
    """Rate bundle for a run with step gamma and inner length P.

    With ``local_regime`` the restricted alpha is substituted for the
    strong-convexity modulus of F in the SVRG formula (the certificate
    labels which reading was used); otherwise the global moduli are taken,
    which for merely convex problems are zero.
    """
    _, L, _ = problem.lipschitz_constants()
    alpha_F = cert.alpha if local_regime else cert.alpha_F
    alpha_R = cert.alpha_R
    alpha = cert.alpha
    return rate_formulas(alpha=alpha, L=L, m=problem.m, gamma=gamma, P=P,
                         alpha_F=alpha_F, alpha_R=alpha_R)


def certify(problem: FiniteSumProblem, reg: Regularizer, xref: np.ndarray,
            gamma: float, P: int | None = None,
            local_regime: bool = True) -> LocalCertificate:
    """Assemble the full local certificate at a reference solution."""
    alpha, ri, desc = restricted_alpha(problem, reg, xref)
    u = -problem.grad_full(xref)
    nd = reg.nondegeneracy(desc, u)
    if problem.kind == "least-squares":
        alpha_F = max(0.0, float(np.linalg.eigvalsh(problem.hessian_full(xref))[0]))
    else:
        alpha_F = 0.0
    cert = LocalCertificate(nd=nd, ri_holds=ri, alpha=alpha, alpha_F=alpha_F,
                            alpha_R=0.0, descriptor=desc, gamma=gamma)
    try:
        cert.mfb = build_mfb(problem, reg, xref, gamma)
        cert.rho_mfb = spectral_radius(cert.mfb)
    except NonLinearManifoldError:
        cert.mfb = None
        cert.rho_mfb = cert.rho_mfb_at(gamma)
        cert.mfb_is_bound = True
    cert.rates = theoretical_rates(problem, cert, gamma, P,
                                   local_regime=local_regime)
    return cert


def linearization_residual(trace: SolverTrace, cert: LocalCertificate,
                           xref: np.ndarray, gamma: float,
                           k_start: int = 0):
    """Per-step residual of the linearised iteration along a trace.

    For a deterministic trace with unit snapshot stride the residual is

        r_k = ||(x_{k+1} - x*) - M_FB (x_k - x*)|| / ||x_k - x*||

    evaluated on the support coordinates of the certificate.  Stochastic
    traces must have been run with conditional-mean recording, in which case
    x_{k+1} is replaced by the mean of the m possible next iterates (the
    error term averages out).  Returns (iterations, residuals); steps with
    x_k = x* report residual 0.
    """
    if cert.mfb is None:
        raise NonLinearManifoldError("no linearised matrix on this manifold")
    idx = cert.descriptor.support
    M = cert.mfb

    if trace.method == "fbs":
        if len(trace.snapshots) < 2 or trace.config.snapshot_stride != 1:
            raise ValueError("need unit-stride iterate snapshots")
        pairs = [(trace.snapshot_ks[j], trace.snapshots[j], trace.snapshots[j + 1])
                 for j in range(len(trace.snapshots) - 1)]
    else:
        if not trace.cond_ks:
            raise ValueError("stochastic trace lacks conditional-mean snapshots")
        pairs = list(zip(trace.cond_ks, trace.cond_x, trace.cond_mean))

    ks, res = [], []
    for k, x_k, x_next in pairs:
        if k < k_start:
            continue
        d = x_k - xref
        nd = float(np.linalg.norm(d))
        if nd == 0.0:
            ks.append(k)
            res.append(0.0)
            continue
        pred = np.zeros_like(d)
        pred[idx] = M @ d[idx]
        r = float(np.linalg.norm((x_next - xref) - pred)) / nd
        ks.append(k)
        res.append(r)
    return np.asarray(ks), np.asarray(res)
