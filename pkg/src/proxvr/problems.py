"""Finite-sum smooth terms F(x) = (1/m) sum_i f_i(x) and benchmark instances.

Two atom families are supported:

* least-squares rows, f_i(x) = (w_i/2) (K_i x - b_i)^2 with a per-row weight
  w_i (w_i = m turns the mean into the plain sum (1/2)||Kx - b||^2);
* logistic samples, f_i(x) = log(1 + exp(-y_i z_i^T x)) with y_i in {-1,+1};
  an optional intercept is stored as an appended all-ones feature column, so
  every solver still iterates on a single flat vector.

All randomness flows through ``numpy.random.default_rng`` (the PCG64 bit
generator), so instances are bit-reproducible given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .regularizers import GroupL12, L1, Nuclear, Regularizer

LEAST_SQUARES = "least-squares"
LOGISTIC = "logistic"

INSTANCE_KINDS = (
    "lasso-gaussian",
    "lasso-unitary",
    "lasso-overdetermined",
    "sparse-logistic",
    "group-sparse",
    "low-rank",
)


class DimensionMismatchError(ValueError):
    pass


class FiniteSumProblem:
    """Immutable finite-sum smooth objective with per-component access.

    Parameters are validated once; instances are safe to share across
    concurrent solver runs.
    """

    def __init__(self, kind: str, A: np.ndarray, b: np.ndarray,
                 weights: np.ndarray | None = None):
        if kind not in (LEAST_SQUARES, LOGISTIC):
            raise ValueError(f"unknown atom kind {kind!r}")
        A = np.ascontiguousarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.size:
            raise DimensionMismatchError("A must be (m, n) with b of length m")
        if A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError("need m >= 1 and n >= 1")
        self.kind = kind
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        if kind == LOGISTIC:
            if not np.all(np.abs(b) == 1.0):
                raise ValueError("logistic labels must be +-1")
            if weights is not None:
                raise ValueError("logistic atoms are unweighted")
            self.weights = None
        else:
            self.weights = (np.ones(self.m) if weights is None
                            else np.asarray(weights, dtype=float))
            if self.weights.shape != (self.m,) or np.any(self.weights <= 0):
                raise ValueError("weights must be m positive scalars")
        self._row_sq = np.einsum("ij,ij->i", A, A)
        self.A.setflags(write=False)
        self.b.setflags(write=False)

    def _check_x(self, x):
        if x.shape != (self.n,):
            raise DimensionMismatchError(
                f"x has shape {x.shape}, expected ({self.n},)")

    def _check_i(self, i):
        if not 0 <= i < self.m:
            raise IndexError(f"component index {i} out of range [0, {self.m})")

    # gradients ----------------------------------------------------------

    def grad_component(self, i: int, x: np.ndarray) -> np.ndarray:
        """Gradient of the i-th atom f_i at x (0-based index)."""
        self._check_i(i)
        self._check_x(x)
        row = self.A[i]
        if self.kind == LEAST_SQUARES:
            return self.weights[i] * (row @ x - self.b[i]) * row
        # logistic: -y z sigma(-y z.x)
        t = self.b[i] * (row @ x)
        return (-self.b[i] * _sigmoid(-t)) * row

    def grad_full(self, x: np.ndarray) -> np.ndarray:
        """(1/m) sum_i grad f_i(x), evaluated with one pass over the data."""
        self._check_x(x)
        if self.kind == LEAST_SQUARES:
            r = self.weights * (self.A @ x - self.b)
        else:
            t = self.b * (self.A @ x)
            r = -self.b * _sigmoid(-t)
        return (self.A.T @ r) / self.m

    def value_component(self, i: int, x: np.ndarray) -> float:
        self._check_i(i)
        self._check_x(x)
        row = self.A[i]
        if self.kind == LEAST_SQUARES:
            return 0.5 * self.weights[i] * float(row @ x - self.b[i]) ** 2
        t = -self.b[i] * (row @ x)
        return float(np.logaddexp(0.0, t))

    def value_full(self, x: np.ndarray) -> float:
        """F(x) = (1/m) sum_i f_i(x)."""
        self._check_x(x)
        if self.kind == LEAST_SQUARES:
            r = self.A @ x - self.b
            return 0.5 * float(self.weights @ (r * r)) / self.m
        t = -self.b * (self.A @ x)
        return float(np.logaddexp(0.0, t).sum()) / self.m

    def hessian_full(self, x: np.ndarray) -> np.ndarray:
        """Hessian of F at x; constant A^T diag(w/m) A for least squares.

        The matrix product is symmetrised (additions commute, so the result
        is exactly symmetric) to strip accumulation-order noise.
        """
        self._check_x(x)
        if self.kind == LEAST_SQUARES:
            H = (self.A.T * (self.weights / self.m)) @ self.A
        else:
            t = self.b * (self.A @ x)
            c = _sigmoid(t) * _sigmoid(-t)
            H = (self.A.T * (c / self.m)) @ self.A
        return (H + H.T) / 2.0

    def hessian_apply(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Hessian-vector product without forming the matrix."""
        self._check_x(x)
        if self.kind == LEAST_SQUARES:
            return self.A.T @ ((self.weights / self.m) * (self.A @ d))
        t = self.b * (self.A @ x)
        c = _sigmoid(t) * _sigmoid(-t)
        return self.A.T @ ((c / self.m) * (self.A @ d))

    # constants -----------------------------------------------------------

    def lipschitz_constants(self) -> tuple[np.ndarray, float, float]:
        """Per-component constants L_i, their max L, and L_F for grad F.

        Least-squares atoms give L_i = w_i ||K_i||^2 and an exact
        L_F = lambda_max(A^T diag(w/m) A); logistic atoms give
        L_i = ||z_i||^2 / 4 and the bound L_F = mean(L_i).
        """
        if self.kind == LEAST_SQUARES:
            Li = self.weights * self._row_sq
            H = (self.A.T * (self.weights / self.m)) @ self.A
            LF = float(np.linalg.eigvalsh(H)[-1])
        else:
            Li = self._row_sq / 4.0
            LF = float(Li.mean())
        return Li, float(Li.max()), LF


def _sigmoid(t):
    out = np.empty_like(t, dtype=float) if isinstance(t, np.ndarray) else None
    if out is None:
        return 1.0 / (1.0 + np.exp(-t)) if t >= 0 else np.exp(t) / (1.0 + np.exp(t))
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def least_squares_problem(K: np.ndarray, b: np.ndarray,
                          scale: str = "mean") -> FiniteSumProblem:
    """Build F from rows of K.

    scale='mean' gives F = (1/m) sum (1/2)(K_i x - b_i)^2; scale='sum' gives
    F = (1/2)||Kx - b||^2 by weighting every row with m.
    """
    m = K.shape[0]
    if scale == "mean":
        w = None
    elif scale == "sum":
        w = np.full(m, float(m))
    else:
        raise ValueError("scale must be 'mean' or 'sum'")
    return FiniteSumProblem(LEAST_SQUARES, K, b, weights=w)


def logistic_problem(Z: np.ndarray, y: np.ndarray,
                     intercept: bool = True) -> FiniteSumProblem:
    """Logistic finite sum; with intercept=True a ones column is appended and
    the problem dimension becomes d+1 (pair with an L1 whose last coordinate
    is free)."""
    Z = np.asarray(Z, dtype=float)
    if intercept:
        Z = np.hstack([Z, np.ones((Z.shape[0], 1))])
    return FiniteSumProblem(LOGISTIC, Z, y)


def diagonal_lasso_3d() -> tuple[FiniteSumProblem, L1, np.ndarray]:
    """Three-sample diagonal least squares whose l1-regularised minimiser is
    (1, 0, 0): a minimal testbed where plain stochastic proximal steps leave
    the solution axis with probability 2/3."""
    K = np.diag([1.0, np.sqrt(2.0), np.sqrt(3.0)])
    b = np.array([2.0, np.sqrt(2.0) / 3.0, np.sqrt(3.0) / 4.0])
    problem = least_squares_problem(K, b, scale="mean")
    reg = L1(mu=1.0 / 3.0, n=3)
    xsol = np.array([1.0, 0.0, 0.0])
    return problem, reg, xsol


# ---------------------------------------------------------------------------
# instance generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceSpec:
    """Recipe for a reproducible benchmark instance.

    Structure fields are interpreted per kind: ``sparsity`` for the lasso and
    logistic kinds, ``active_blocks``/``block_size`` for group-sparse,
    ``rank``/``shape`` for low-rank.  ``saturated`` only applies to
    lasso-unitary and asks for that many inactive coordinates of K^T b to sit
    on the threshold (offset inward by ``saturation_offset`` so that float
    gradient noise cannot push them outside).
    """

    kind: str
    m: int
    n: int
    seed: int = 0
    mu: float | None = None
    sparsity: int = 8
    saturated: int = 0
    saturation_offset: float = 1e-13
    block_size: int = 4
    active_blocks: int = 8
    rank: int = 4
    shape: tuple[int, int] | None = None
    noise: float = 0.01
    scale: str = "mean"

    def validate(self):
        if self.kind not in INSTANCE_KINDS:
            raise ValueError(f"unknown instance kind {self.kind!r}")
        if self.m < 1 or self.n < 1:
            raise ValueError("dims must be positive")
        if self.kind in ("lasso-gaussian", "lasso-overdetermined", "sparse-logistic"):
            if not 1 <= self.sparsity <= self.n:
                raise ValueError("sparsity must lie in [1, n]")
        if self.kind == "lasso-unitary":
            if self.m != self.n:
                raise ValueError("lasso-unitary needs m == n")
            if self.sparsity + self.saturated > self.n:
                raise ValueError("sparsity + saturated must not exceed n")
        if self.kind == "group-sparse":
            if self.n % self.block_size != 0:
                raise ValueError("block_size must divide n")
            if self.active_blocks > self.n // self.block_size:
                raise ValueError("more active blocks than blocks")
        if self.kind == "low-rank":
            n1, n2 = self._shape()
            if n1 * n2 != self.n:
                raise ValueError("shape must multiply to n")
            if self.rank > min(n1, n2):
                raise ValueError("rank exceeds matrix dims")

    def _shape(self):
        if self.shape is not None:
            return self.shape
        side = int(round(np.sqrt(self.n)))
        return (side, side)


def generate_instance(spec: InstanceSpec):
    """Build (problem, regularizer, ground-truth vector) from a spec.

    Deterministic given the seed; the draw order is fixed (design matrix,
    then ground truth, then noise).  Returns the noiseless planted vector as
    ground truth, which for lasso-unitary is the exact minimiser.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    build = _GENERATORS[spec.kind]
    return build(spec, rng)


def _gen_lasso_gaussian(spec, rng):
    K = rng.standard_normal((spec.m, spec.n))
    x_true = _planted_sparse(rng, spec.n, spec.sparsity)
    noise = spec.noise * rng.standard_normal(spec.m)
    b = K @ x_true + noise
    mu = spec.mu if spec.mu is not None else 0.1 * float(np.abs(K.T @ b).max()) / spec.m
    problem = least_squares_problem(K, b, scale=spec.scale)
    return problem, L1(mu, n=spec.n), x_true


def _gen_lasso_overdetermined(spec, rng):
    # rows scaled by 1/sqrt(m): keeps the uniform Lipschitz constant O(n/m)
    K = rng.standard_normal((spec.m, spec.n)) / np.sqrt(spec.m)
    x_true = _planted_sparse(rng, spec.n, spec.sparsity)
    b = K @ x_true + spec.noise * rng.standard_normal(spec.m)
    mu = spec.mu if spec.mu is not None else 0.1 * float(np.abs(K.T @ b).max()) / spec.m
    problem = least_squares_problem(K, b, scale=spec.scale)
    return problem, L1(mu, n=spec.n), x_true


def _gen_lasso_unitary(spec, rng):
    mu = spec.mu if spec.mu is not None else 0.5
    K, _ = np.linalg.qr(rng.standard_normal((spec.n, spec.n)))
    # craft c = K^T b coordinate-wise, then set b = K c
    c = np.zeros(spec.n)
    pos = rng.permutation(spec.n)
    act = pos[:spec.sparsity]
    sat = pos[spec.sparsity:spec.sparsity + spec.saturated]
    rest = pos[spec.sparsity + spec.saturated:]
    sgn = lambda k: rng.choice([-1.0, 1.0], size=k)
    c[act] = sgn(act.size) * mu * (2.0 + rng.uniform(0.0, 1.0, act.size))
    c[sat] = sgn(sat.size) * mu * (1.0 - spec.saturation_offset)
    c[rest] = sgn(rest.size) * mu * rng.uniform(0.2, 0.8, rest.size)
    b = K @ c
    problem = least_squares_problem(K, b, scale="sum")
    # the exact minimiser of the problem as stored: soft-threshold of the
    # recomputed K^T b (float dust from the matrix products included)
    c_stored = K.T @ b
    xsol = np.sign(c_stored) * np.maximum(np.abs(c_stored) - mu, 0.0)
    return problem, L1(mu, n=spec.n), xsol


def _gen_sparse_logistic(spec, rng):
    Z = rng.standard_normal((spec.m, spec.n))
    x_true = _planted_sparse(rng, spec.n, spec.sparsity)
    b0 = rng.standard_normal() * 0.5
    margin = Z @ x_true + b0 + spec.noise * rng.standard_normal(spec.m)
    y = np.where(margin >= 0, 1.0, -1.0)
    problem = logistic_problem(Z, y, intercept=True)
    mu = spec.mu if spec.mu is not None else 1.0 / np.sqrt(spec.m)
    reg = L1(mu, n=spec.n + 1, free=(spec.n,))
    return problem, reg, np.append(x_true, b0)


def _gen_group_sparse(spec, rng):
    K = rng.standard_normal((spec.m, spec.n))
    n_blocks = spec.n // spec.block_size
    x_true = np.zeros(spec.n)
    chosen = rng.choice(n_blocks, size=spec.active_blocks, replace=False)
    for blk in chosen:
        lo = blk * spec.block_size
        x_true[lo:lo + spec.block_size] = rng.standard_normal(spec.block_size) + \
            np.sign(rng.standard_normal()) * 1.0
    b = K @ x_true + spec.noise * rng.standard_normal(spec.m)
    mu = spec.mu if spec.mu is not None else 0.1 * float(np.abs(K.T @ b).max()) / spec.m
    problem = least_squares_problem(K, b, scale=spec.scale)
    return problem, GroupL12.uniform(spec.n, spec.block_size, mu), x_true


def _gen_low_rank(spec, rng):
    n1, n2 = spec._shape()
    K = rng.standard_normal((spec.m, spec.n))
    Lf = rng.standard_normal((n1, spec.rank))
    Rf = rng.standard_normal((n2, spec.rank))
    X = Lf @ Rf.T
    x_true = X.reshape(-1)
    b = K @ x_true + spec.noise * rng.standard_normal(spec.m)
    mu = spec.mu if spec.mu is not None else 0.1 * float(np.abs(K.T @ b).max()) / spec.m
    problem = least_squares_problem(K, b, scale=spec.scale)
    return problem, Nuclear(mu, (n1, n2)), x_true


def _planted_sparse(rng, n, k):
    x = np.zeros(n)
    idx = rng.choice(n, size=k, replace=False)
    x[idx] = rng.choice([-1.0, 1.0], size=k) * (1.0 + rng.uniform(0.0, 1.0, k))
    return x


_GENERATORS = {
    "lasso-gaussian": _gen_lasso_gaussian,
    "lasso-unitary": _gen_lasso_unitary,
    "lasso-overdetermined": _gen_lasso_overdetermined,
    "sparse-logistic": _gen_sparse_logistic,
    "group-sparse": _gen_group_sparse,
    "low-rank": _gen_low_rank,
}


# ---------------------------------------------------------------------------
# plain-text serialisation (replayable instances)
# ---------------------------------------------------------------------------

_FMT_VERSION = "proxvr-instance v1"


def _write_array(f, name, arr):
    arr = np.asarray(arr)
    f.write(f"{name} {' '.join(str(d) for d in arr.shape)}\n")
    flat = arr.reshape(-1)
    for i in range(0, flat.size, 8):
        f.write(" ".join(repr(float(v)) for v in flat[i:i + 8]) + "\n")


def save_instance(path, problem: FiniteSumProblem, reg: Regularizer,
                  x_true: np.ndarray | None = None):
    """Write a problem + regularizer (+ ground truth) to a text file.

    Floats are written with shortest round-trip decimals, so load followed by
    save is byte-stable and solves replay exactly.
    """
    with open(path, "w") as f:
        f.write(f"# {_FMT_VERSION}\n")
        f.write(f"atom {problem.kind}\n")
        f.write(f"m {problem.m}\n")
        f.write(f"n {problem.n}\n")
        f.write(f"reg {reg.kind}\n")
        f.write(f"mu {reg.mu!r}\n")
        if isinstance(reg, L1) and reg.free:
            f.write(f"free {' '.join(str(i) for i in reg.free)}\n")
        if isinstance(reg, GroupL12):
            sizes = " ".join(str(b.size) for b in reg.blocks)
            f.write(f"blocks {sizes}\n")
        if isinstance(reg, Nuclear):
            f.write(f"shape {reg.shape[0]} {reg.shape[1]}\n")
        _write_array(f, "A", problem.A)
        _write_array(f, "b", problem.b)
        if problem.weights is not None:
            _write_array(f, "weights", problem.weights)
        if x_true is not None:
            _write_array(f, "xtrue", x_true)


def load_instance(path):
    """Inverse of save_instance; returns (problem, reg, x_true or None)."""
    head: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    with open(path) as f:
        first = f.readline().strip()
        if first != f"# {_FMT_VERSION}":
            raise ValueError(f"unrecognised instance header: {first!r}")
        line = f.readline()
        while line:
            parts = line.split()
            key = parts[0]
            if key in ("A", "b", "weights", "xtrue"):
                shape = tuple(int(p) for p in parts[1:])
                count = int(np.prod(shape))
                vals: list[float] = []
                while len(vals) < count:
                    vals.extend(float(v) for v in f.readline().split())
                arrays[key] = np.array(vals).reshape(shape)
            else:
                head[key] = " ".join(parts[1:])
            line = f.readline()
    problem = FiniteSumProblem(head["atom"], arrays["A"], arrays["b"],
                               weights=arrays.get("weights"))
    mu = float(head["mu"])
    kind = head["reg"]
    if kind == "l1":
        free = tuple(int(i) for i in head.get("free", "").split())
        reg: Regularizer = L1(mu, n=problem.n, free=free)
    elif kind == "group-l12":
        sizes = [int(s) for s in head["blocks"].split()]
        blocks, lo = [], 0
        for s in sizes:
            blocks.append(np.arange(lo, lo + s))
            lo += s
        reg = GroupL12(mu, blocks)
    elif kind == "nuclear":
        n1, n2 = (int(v) for v in head["shape"].split())
        reg = Nuclear(mu, (n1, n2))
    else:
        raise ValueError(f"unknown regularizer kind {kind!r}")
    return problem, reg, arrays.get("xtrue")
