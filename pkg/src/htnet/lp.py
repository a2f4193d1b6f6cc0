"""Small dense linear programs: two-phase primal simplex (Bland's rule) and optimal-face enumeration.

Problems are stated in equality form ``min c.x  s.t.  A x = b, x >= 0``.
Sizes here are tiny (tens of variables), so a plain tableau is enough.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

EPS = 1e-10


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    basis: list
    infeasibility: float = 0.0


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * T[row]


def _run(T: np.ndarray, basis: list, allowed: int, eps: float, max_iter: int) -> None:
    """Iterate simplex on tableau ``T`` (objective row last) with Bland's rule."""
    m = T.shape[0] - 1
    for _ in range(max_iter):
        cost = T[-1, :allowed]
        enter = next((j for j in range(allowed) if cost[j] < -eps), None)
        if enter is None:
            return
        col = T[:m, enter]
        best, leave = math.inf, None
        for i in range(m):
            if col[i] > eps:
                ratio = T[i, -1] / col[i]
                if ratio < best - eps or (abs(ratio - best) <= eps and leave is not None and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave is None:
            raise Unbounded("objective unbounded below")
        _pivot(T, leave, enter)
        basis[leave] = enter
    raise LPError("simplex iteration cap reached")


def simplex(c, A_eq, b_eq, eps: float = EPS, max_iter: int = 10_000) -> LPResult:
    """Solve ``min c.x, A_eq x = b_eq, x >= 0``; raises Infeasible / Unbounded."""
    c = np.asarray(c, dtype=float)
    A = np.array(A_eq, dtype=float, ndmin=2)
    b = np.array(b_eq, dtype=float).ravel()
    m, n = A.shape
    if m == 0:
        if (c < -eps).any():
            raise Unbounded("objective unbounded below")
        return LPResult(np.zeros(n), 0.0, [])
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1: artificial variables n..n+m-1
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    _run(T, basis, n + m, eps, max_iter)
    infeas = -T[-1, -1]
    if infeas > max(eps, eps * (1 + np.abs(b).sum())) * 10:
        raise Infeasible(f"phase-1 residual {infeas:.3g}")

    # drive artificials out; drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= n:
            col = next((j for j in range(n) if abs(T[i, j]) > 1e3 * eps), None)
            if col is None:
                continue
            _pivot(T, i, col)
            basis[i] = col
        keep.append(i)
    T = np.vstack([T[keep][:, list(range(n)) + [n + m]], np.zeros((1, n + 1))])
    basis = [basis[i] for i in keep]

    # phase 2
    T[-1, :n] = c
    T[-1, -1] = 0.0
    for i, bj in enumerate(basis):
        if T[-1, bj] != 0.0:
            T[-1] -= T[-1, bj] * T[i]
    _run(T, basis, n, eps, max_iter)
    x = np.zeros(n)
    for i, bj in enumerate(basis):
        x[bj] = T[i, -1]
    x[np.abs(x) < eps] = 0.0
    return LPResult(x, float(c @ x), basis, infeas)


def optimal_face_vertices(c, A_eq, b_eq, opt: float, tol: float = 1e-9, max_bases: int = 200_000):
    """Enumerate the distinct vertices of ``{x >= 0 : A x = b, c.x = opt}``.

    Returns ``None`` when the number of candidate bases exceeds ``max_bases``.
    """
    A = np.array(A_eq, dtype=float, ndmin=2)
    b = np.array(b_eq, dtype=float).ravel()
    c = np.asarray(c, dtype=float)
    # remove redundant rows
    rank = np.linalg.matrix_rank(A)
    if rank < A.shape[0]:
        rows = []
        for i in range(A.shape[0]):
            if np.linalg.matrix_rank(A[rows + [i]]) > len(rows):
                rows.append(i)
        A, b = A[rows], b[rows]
    m, n = A.shape
    if math.comb(n, m) > max_bases:
        return None
    found = []
    scale = max(1.0, abs(opt))
    for cols in itertools.combinations(range(n), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        if (xb < -tol).any():
            continue
        x = np.zeros(n)
        x[list(cols)] = xb
        if c @ x > opt + tol * scale:
            continue
        x[np.abs(x) < tol] = 0.0
        if not any(np.allclose(x, v, atol=1e-8) for v in found):
            found.append(x)
    return found


def face_is_singleton(c, A_eq, b_eq, opt: float, tol: float = 1e-8) -> bool:
    """Uniqueness of the optimum via per-coordinate min/max over the optimal face."""
    A = np.array(A_eq, dtype=float, ndmin=2)
    c = np.asarray(c, dtype=float)
    A_face = np.vstack([A, c])
    b_face = np.append(np.asarray(b_eq, dtype=float).ravel(), opt)
    n = A.shape[1]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        lo = simplex(e, A_face, b_face).objective
        hi = -simplex(-e, A_face, b_face).objective
        if hi - lo > tol:
            return False
    return True
