"""Mapping LargeSteps-space offsets back to Euclidean space.

Solves (I + lam * L) x = u per coordinate axis, L the uniform graph
Laplacian of the whole clothed mesh. The matrix never changes, so it is
built once per asset and the solver warm-starts from the previous frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class SolverError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"CG did not converge in {iterations} iterations (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


def uniform_laplacian(triangles: np.ndarray, vertex_count: int) -> sp.csr_matrix:
    """L = D - A over the unique undirected edges of the triangle list."""
    tri = np.asarray(triangles, dtype=np.int64)
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0)
    e = e[e[:, 0] != e[:, 1]]
    n = vertex_count
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


@dataclass
class LaplacianSystem:
    laplacian: sp.csr_matrix
    lam: float
    tolerance: float = 1e-6
    max_iterations: int = 500
    direct: bool = False
    matrix: sp.csr_matrix = field(init=False, repr=False)
    _inv_diag: np.ndarray = field(init=False, repr=False)
    _lu: Optional[object] = field(default=None, init=False, repr=False)
    _last: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    last_iterations: int = field(default=0, init=False)

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        n = self.laplacian.shape[0]
        self.matrix = (sp.identity(n, format="csr") + self.lam * self.laplacian).tocsr()
        self._inv_diag = 1.0 / self.matrix.diagonal()
        if self.direct:
            self._lu = splu(self.matrix.tocsc())

    @classmethod
    def for_mesh(cls, triangles, vertex_count, lam, **kw) -> "LaplacianSystem":
        return cls(uniform_laplacian(triangles, vertex_count), float(lam), **kw)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def reset(self) -> None:
        self._last = None

    def residual(self, x, u) -> np.ndarray:
        """Per-column inf-norm of (I + lam L) x - u."""
        return np.abs(self.matrix @ x - u).max(axis=0)

    def threshold(self, u) -> np.ndarray:
        return self.tolerance * np.maximum(1.0, np.abs(u).max(axis=0))


def largesteps_map(system: LaplacianSystem, u: np.ndarray, warm_start: bool = True) -> np.ndarray:
    """Euclidean offsets x with (I + lam L) x = u, per column."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != system.size:
        raise ValueError(f"offsets shape {u.shape} does not match system size {system.size}")
    if system.lam == 0:
        system.last_iterations = 0
        return u.copy()
    if system._lu is not None:
        x = system._lu.solve(u)
        system.last_iterations = 0
    else:
        x0 = system._last if (warm_start and system._last is not None and system._last.shape == u.shape) else None
        x = _pcg(system, u, x0)
    system._last = x
    return x


def _pcg(system: LaplacianSystem, b, x0):
    """Jacobi-preconditioned CG on all columns at once; converged columns are frozen."""
    a = system.matrix
    minv = system._inv_diag[:, None]
    tol = system.threshold(b)
    # cold start from b itself: L annihilates constants, and x is a smoothed b
    x = b.copy() if x0 is None else x0.copy()
    r = b - a @ x
    active = np.abs(r).max(axis=0) > tol
    z = minv * r
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    it = 0
    while active.any():
        if it >= system.max_iterations:
            raise SolverError(float((np.abs(r).max(axis=0) / np.maximum(1.0, np.abs(b).max(axis=0))).max()), it)
        cols = np.flatnonzero(active)
        ap = a @ p[:, cols]
        pap = np.einsum("ij,ij->j", p[:, cols], ap)
        alpha = rz[cols] / pap
        x[:, cols] += alpha * p[:, cols]
        r[:, cols] -= alpha * ap
        it += 1
        done = np.abs(r[:, cols]).max(axis=0) <= tol[cols]
        if done.any():
            # confirm against the true residual before freezing a column
            dc = cols[done]
            true_r = b[:, dc] - a @ x[:, dc]
            r[:, dc] = true_r
            ok = np.abs(true_r).max(axis=0) <= tol[dc]
            active[dc[ok]] = False
        cols = np.flatnonzero(active)
        if not len(cols):
            break
        z_c = minv * r[:, cols]
        rz_new = np.einsum("ij,ij->j", r[:, cols], z_c)
        beta = rz_new / rz[cols]
        p[:, cols] = z_c + beta * p[:, cols]
        rz[cols] = rz_new
    system.last_iterations = it
    return x


def dirichlet_energy(laplacian, x) -> float:
    return float(np.einsum("ij,ij->", x, laplacian @ x))
