"""Partly smooth penalties: value, prox, active manifold, tangent geometry.

Three penalty families are provided, all scaled by a positive weight ``mu``:

* ``L1``        -- sparsity,   R(x) = mu * sum_i |x_i|
* ``GroupL12``  -- group sparsity, R(x) = mu * sum_B ||x_B||_2 over a block
  partition of the coordinates
* ``Nuclear``   -- low rank, R(x) = mu * sum_i sigma_i(X) for X the matricised
  vector

Each penalty knows the smooth manifold its prox output lives on (a coordinate
subspace for L1/GroupL12, the fixed-rank matrix manifold for Nuclear) and can
project onto the tangent space, build an orthonormal tangent basis, and
measure non-degeneracy of a candidate negative gradient at a solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ManifoldDescriptor:
    """Active manifold at a point.

    Payload depends on ``kind``:
      l1        -- ``support`` (sorted coordinate indices, free coordinates
                   always included) and ``signs`` (sign pattern on the
                   support, 0 for unpenalised coordinates);
      group-l12 -- ``active_blocks`` (sorted block ids) and ``support``
                   (their coordinates);
      nuclear   -- ``rank`` plus orthonormal factors ``U`` (n1 x r) and
                   ``V`` (n2 x r).
    """

    kind: str
    support: np.ndarray | None = None
    signs: np.ndarray | None = None
    active_blocks: tuple[int, ...] | None = None
    rank: int | None = None
    U: np.ndarray | None = field(default=None, repr=False)
    V: np.ndarray | None = field(default=None, repr=False)

    def dim(self) -> int:
        """Dimension of the tangent space."""
        if self.kind == "nuclear":
            n1 = self.U.shape[0]
            n2 = self.V.shape[0]
            return self.rank * (n1 + n2 - self.rank)
        return len(self.support)


def principal_angle_gap(U1: np.ndarray, U2: np.ndarray) -> float:
    """Sine of the largest principal angle between the column spans of two
    orthonormal matrices of equal rank, computed from the projection
    residual so that tiny angles do not drown in roundoff."""
    R = U2 - U1 @ (U1.T @ U2)
    if R.size == 0:
        return 0.0
    return float(np.linalg.svd(R, compute_uv=False)[0])


def descriptors_equal(a: ManifoldDescriptor, b: ManifoldDescriptor,
                      angle_tol: float = 1e-8) -> bool:
    """Exact set equality for coordinate manifolds; rank plus principal
    angles below ``angle_tol`` for fixed-rank descriptors."""
    if a.kind != b.kind:
        return False
    if a.kind == "l1":
        return (a.support.size == b.support.size
                and np.array_equal(a.support, b.support)
                and np.array_equal(a.signs, b.signs))
    if a.kind == "group-l12":
        return a.active_blocks == b.active_blocks
    if a.rank != b.rank:
        return False
    if a.rank == 0:
        return True
    return (principal_angle_gap(a.U, b.U) < angle_tol
            and principal_angle_gap(a.V, b.V) < angle_tol)


@dataclass(frozen=True)
class NDReport:
    """Non-degeneracy measurement at a reference point.

    ``gap`` is the margin by which the candidate ``u = -grad F(x*)`` sits
    inside the relative interior of the subdifferential of R at ``x*``
    (distance to the relative boundary along the inactive directions, with
    any optimality residual on the active part subtracted).  Negative values
    mean ``u`` is not a subgradient at all.  ``saturated_count`` is the
    number of inactive coordinates/blocks/directions whose individual margin
    is within ``tol`` of zero.
    """

    gap: float
    holds: bool
    saturated_count: int
    tol: float
    support_residual: float


def _orth_complement(U: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of span(U)."""
    n, r = U.shape
    if r == 0:
        return np.eye(n)
    full, _, _ = np.linalg.svd(U, full_matrices=True)
    return full[:, r:]


class Regularizer:
    """Common interface; concrete penalties implement the hooks below."""

    kind: str
    mu: float

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def prox(self, gamma: float, v: np.ndarray) -> np.ndarray:
        if gamma <= 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        return self._prox(gamma, v)

    def prox_with_manifold(self, gamma, v):
        """Prox plus the descriptor determined exactly by the shrink rule."""
        if gamma <= 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        return self._prox_desc(gamma, v)

    def manifold_at(self, x: np.ndarray, tol: float = 0.0) -> ManifoldDescriptor:
        raise NotImplementedError

    def tangent_project(self, desc: ManifoldDescriptor, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tangent_basis(self, desc: ManifoldDescriptor) -> np.ndarray:
        """Orthonormal basis (columns) of the tangent space at ``desc``."""
        raise NotImplementedError

    def nondegeneracy(self, desc: ManifoldDescriptor, u: np.ndarray,
                      tol: float | None = None) -> NDReport:
        raise NotImplementedError

    def subgradient_residual(self, x: np.ndarray, g: np.ndarray) -> float:
        """How far g is from the subdifferential of R at x (0 if a member).

        Used as an independent optimality oracle for the prox:
        p = prox(gamma, v) must satisfy (v - p)/gamma in dR(p).
        """
        raise NotImplementedError

    def _prox(self, gamma, v):
        raise NotImplementedError

    def _prox_desc(self, gamma, v):
        p = self._prox(gamma, v)
        return p, self.manifold_at(p)

    def _default_tol(self) -> float:
        return 1e-9 * self.mu


class L1(Regularizer):
    """Weighted l1 norm, optionally with unpenalised (free) coordinates.

    Free coordinates model appended intercept-style variables: the prox is
    the identity on them and they always belong to the active manifold.
    """

    kind = "l1"

    def __init__(self, mu: float, n: int | None = None, free: tuple[int, ...] = ()):
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.mu = float(mu)
        self.n = n
        self.free = tuple(int(i) for i in free)
        self._free_mask = None
        if n is not None:
            m = np.zeros(n, dtype=bool)
            m[list(self.free)] = True
            self._free_mask = m

    def _freemask(self, n: int) -> np.ndarray:
        if self._free_mask is not None:
            return self._free_mask
        m = np.zeros(n, dtype=bool)
        if self.free:
            m[list(self.free)] = True
        return m

    def value(self, x):
        if self.free:
            fm = self._freemask(x.size)
            return self.mu * float(np.abs(x[~fm]).sum())
        return self.mu * float(np.abs(x).sum())

    def _prox(self, gamma, v):
        p = np.sign(v) * np.maximum(np.abs(v) - gamma * self.mu, 0.0)
        if self.free:
            fm = self._freemask(v.size)
            p[fm] = v[fm]
        return p

    def manifold_at(self, x, tol=0.0):
        nz = np.abs(x) > tol
        if self.free:
            nz |= self._freemask(x.size)
        support = np.flatnonzero(nz)
        signs = np.sign(x[support]).astype(np.int8)
        if self.free:
            fm = self._freemask(x.size)
            signs[fm[support]] = 0
        return ManifoldDescriptor(kind="l1", support=support, signs=signs)

    def tangent_project(self, desc, v):
        out = np.zeros_like(v)
        out[desc.support] = v[desc.support]
        return out

    def tangent_basis(self, desc):
        n = self.n if self.n is not None else (int(desc.support.max()) + 1 if desc.support.size else 0)
        B = np.zeros((n, desc.support.size))
        B[desc.support, np.arange(desc.support.size)] = 1.0
        return B

    def nondegeneracy(self, desc, u, tol=None):
        tol = self._default_tol() if tol is None else tol
        n = u.size
        fm = self._freemask(n)
        active = np.zeros(n, dtype=bool)
        active[desc.support] = True
        inactive = ~active & ~fm

        gaps = self.mu - np.abs(u[inactive])
        gap_inactive = float(gaps.min()) if gaps.size else self.mu
        saturated = int(np.count_nonzero(gaps <= tol))

        res = 0.0
        pen_active = active & ~fm
        if np.any(pen_active):
            s = np.zeros(n)
            s[desc.support] = desc.signs
            res = float(np.abs(u[pen_active] - self.mu * s[pen_active]).max())
        if np.any(fm):
            res = max(res, float(np.abs(u[fm]).max()))

        gap = gap_inactive - res
        return NDReport(gap=gap, holds=gap > tol, saturated_count=saturated,
                        tol=tol, support_residual=res)

    def subgradient_residual(self, x, g):
        fm = self._freemask(x.size)
        on = (x != 0) & ~fm
        off = (x == 0) & ~fm
        r = 0.0
        if np.any(on):
            r = float(np.abs(g[on] - self.mu * np.sign(x[on])).max())
        if np.any(off):
            r = max(r, float(np.maximum(np.abs(g[off]) - self.mu, 0.0).max()))
        if np.any(fm):
            r = max(r, float(np.abs(g[fm]).max()))
        return r


class GroupL12(Regularizer):
    """Group l1,2 norm over a disjoint block partition of {0..n-1}."""

    kind = "group-l12"

    def __init__(self, mu: float, blocks: list[np.ndarray]):
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.mu = float(mu)
        self.blocks = [np.asarray(b, dtype=np.intp) for b in blocks]
        idx = np.concatenate(self.blocks) if self.blocks else np.array([], dtype=np.intp)
        n = idx.size
        if n == 0 or np.unique(idx).size != n or idx.min() != 0 or idx.max() != n - 1:
            raise ValueError("blocks must partition {0..n-1} disjointly")
        self.n = n
        # uniform contiguous partitions get a reshape-based fast path
        sizes = {b.size for b in self.blocks}
        self._uniform = (len(sizes) == 1
                         and all(np.array_equal(b, np.arange(b[0], b[0] + b.size))
                                 for b in self.blocks)
                         and np.array_equal(idx, np.arange(n)))
        self._bs = self.blocks[0].size if self._uniform else None

    @classmethod
    def uniform(cls, n: int, block_size: int, mu: float) -> "GroupL12":
        if n % block_size != 0:
            raise ValueError("block_size must divide n")
        blocks = [np.arange(i, i + block_size) for i in range(0, n, block_size)]
        return cls(mu, blocks)

    def _block_norms(self, x):
        if self._uniform:
            return np.linalg.norm(x.reshape(-1, self._bs), axis=1)
        return np.array([np.linalg.norm(x[b]) for b in self.blocks])

    def value(self, x):
        return self.mu * float(self._block_norms(x).sum())

    def _prox(self, gamma, v):
        t = gamma * self.mu
        if self._uniform:
            V = v.reshape(-1, self._bs)
            norms = np.linalg.norm(V, axis=1)
            scale = np.zeros_like(norms)
            big = norms > t
            scale[big] = 1.0 - t / norms[big]
            return (V * scale[:, None]).reshape(-1).copy()
        p = np.zeros_like(v)
        for b in self.blocks:
            nb = np.linalg.norm(v[b])
            if nb > t:
                p[b] = (1.0 - t / nb) * v[b]
        return p

    def manifold_at(self, x, tol=0.0):
        norms = self._block_norms(x)
        act = tuple(int(i) for i in np.flatnonzero(norms > tol))
        support = (np.concatenate([self.blocks[i] for i in act])
                   if act else np.array([], dtype=np.intp))
        return ManifoldDescriptor(kind="group-l12", active_blocks=act,
                                  support=np.sort(support))

    def tangent_project(self, desc, v):
        out = np.zeros_like(v)
        out[desc.support] = v[desc.support]
        return out

    def tangent_basis(self, desc):
        B = np.zeros((self.n, desc.support.size))
        B[desc.support, np.arange(desc.support.size)] = 1.0
        return B

    def nondegeneracy(self, desc, u, tol=None):
        tol = self._default_tol() if tol is None else tol
        norms = self._block_norms(u)
        act = set(desc.active_blocks)
        inact = [i for i in range(len(self.blocks)) if i not in act]
        gaps = self.mu - norms[inact]
        gap_inactive = float(gaps.min()) if len(inact) else self.mu
        saturated = int(np.count_nonzero(gaps <= tol))
        # on active blocks the subgradient is the unit direction times mu,
        # so the candidate must have block norm mu there
        res = float(np.abs(norms[list(act)] - self.mu).max()) if act else 0.0
        gap = gap_inactive - res
        return NDReport(gap=gap, holds=gap > tol, saturated_count=saturated,
                        tol=tol, support_residual=res)

    def subgradient_residual(self, x, g):
        r = 0.0
        for b in self.blocks:
            nx = np.linalg.norm(x[b])
            if nx > 0:
                r = max(r, float(np.linalg.norm(g[b] - self.mu * x[b] / nx)))
            else:
                r = max(r, max(0.0, float(np.linalg.norm(g[b])) - self.mu))
        return r


class Nuclear(Regularizer):
    """Nuclear norm of the matricised vector (shape n1 x n2, row-major)."""

    kind = "nuclear"

    def __init__(self, mu: float, shape: tuple[int, int]):
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.mu = float(mu)
        self.shape = (int(shape[0]), int(shape[1]))
        self.n = self.shape[0] * self.shape[1]

    def _mat(self, v):
        if v.size != self.n:
            raise ShapeMismatchError(
                f"expected vector of size {self.n} for shape {self.shape}, got {v.size}")
        return v.reshape(self.shape)

    def value(self, x):
        s = np.linalg.svd(self._mat(x), compute_uv=False)
        return self.mu * float(s.sum())

    def _prox(self, gamma, v):
        p, _ = self._prox_desc(gamma, v)
        return p

    def _prox_desc(self, gamma, v):
        U, s, Vt = np.linalg.svd(self._mat(v), full_matrices=False)
        keep = s > gamma * self.mu
        r = int(np.count_nonzero(keep))
        Ur, sr, Vr = U[:, :r], s[:r] - gamma * self.mu, Vt[:r].T
        p = (Ur * sr) @ Vr.T
        desc = ManifoldDescriptor(kind="nuclear", rank=r, U=Ur, V=Vr)
        return p.reshape(-1), desc

    def manifold_at(self, x, tol=0.0):
        U, s, Vt = np.linalg.svd(self._mat(x), full_matrices=False)
        # numerical floor: a reconstructed low-rank matrix carries trailing
        # singular values of size eps * sigma_1 that are not real rank
        floor = (s[0] if s.size else 0.0) * max(self.shape) * np.finfo(float).eps
        r = int(np.count_nonzero(s > max(tol, floor)))
        return ManifoldDescriptor(kind="nuclear", rank=r, U=U[:, :r], V=Vt[:r].T)

    def tangent_project(self, desc, v):
        Z = self._mat(v)
        U, V = desc.U, desc.V
        UUZ = U @ (U.T @ Z)
        ZVV = (Z @ V) @ V.T
        out = UUZ + ZVV - U @ ((U.T @ Z) @ V) @ V.T
        return out.reshape(-1)

    def tangent_basis(self, desc):
        n1, n2 = self.shape
        r = desc.rank
        U, V = desc.U, desc.V
        Up = _orth_complement(U)
        Vp = _orth_complement(V)
        cols = []
        for i in range(r):
            for j in range(r):
                cols.append(np.outer(U[:, i], V[:, j]).reshape(-1))
        for a in range(n1 - r):
            for j in range(r):
                cols.append(np.outer(Up[:, a], V[:, j]).reshape(-1))
        for i in range(r):
            for b in range(n2 - r):
                cols.append(np.outer(U[:, i], Vp[:, b]).reshape(-1))
        return np.column_stack(cols) if cols else np.zeros((self.n, 0))

    def nondegeneracy(self, desc, u, tol=None):
        tol = self._default_tol() if tol is None else tol
        Z = self._mat(u)
        U, V = desc.U, desc.V
        PUp = np.eye(self.shape[0]) - U @ U.T
        PVp = np.eye(self.shape[1]) - V @ V.T
        W = PUp @ Z @ PVp
        s = np.linalg.svd(W, compute_uv=False)
        top = float(s[0]) if s.size else 0.0
        gaps = self.mu - s
        saturated = int(np.count_nonzero(gaps <= tol))
        # the tangent part of the candidate must match mu * U V^T
        res = float(np.linalg.norm(self.tangent_project(desc, u)
                                   - self.mu * (U @ V.T).reshape(-1)))
        gap = (self.mu - top) - res
        return NDReport(gap=gap, holds=gap > tol, saturated_count=saturated,
                        tol=tol, support_residual=res)

    def subgradient_residual(self, x, g):
        desc = self.manifold_at(x)
        G = self._mat(g)
        U, V = desc.U, desc.V
        res_t = np.linalg.norm(self.tangent_project(desc, g)
                               - self.mu * (U @ V.T).reshape(-1))
        PUp = np.eye(self.shape[0]) - U @ U.T
        PVp = np.eye(self.shape[1]) - V @ V.T
        s = np.linalg.svd(PUp @ G @ PVp, compute_uv=False)
        over = max(0.0, (float(s[0]) if s.size else 0.0) - self.mu)
        return max(float(res_t), over)


def make_regularizer(kind: str, mu: float, *, n: int | None = None,
                     free: tuple[int, ...] = (), block_size: int | None = None,
                     blocks: list | None = None,
                     shape: tuple[int, int] | None = None) -> Regularizer:
    if kind == "l1":
        return L1(mu, n=n, free=free)
    if kind == "group-l12":
        if blocks is not None:
            return GroupL12(mu, blocks)
        return GroupL12.uniform(n, block_size, mu)
    if kind == "nuclear":
        return Nuclear(mu, shape)
    raise ValueError(f"unknown regularizer kind: {kind}")
