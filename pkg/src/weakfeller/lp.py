"""Dense two-phase simplex for the small linear programs used by the metrics.

Problems are given in the familiar ``linprog`` shape::

    minimize    c @ x
    subject to  A_ub @ x <= b_ub
                A_eq @ x == b_eq
                x >= 0            (except where ``free`` is set)

Only small dense problems are expected (a few hundred columns, well under a
hundred rows in the metric code), so a full tableau is kept in memory.
Pivoting uses Dantzig's rule and falls back to Bland's rule after a run of
degenerate pivots, which rules out cycling. The tableau is rebuilt from the
original columns and the current basis every ``REFRESH`` pivots, and again
before any unboundedness verdict, so rounding error cannot pile up over long
pivot sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LpError",
    "InfeasibleError",
    "UnboundedError",
    "LpSolution",
    "lp_solve",
]

PIVOT_TOL = 1e-11
COST_TOL = 1e-12
FEAS_TOL = 1e-9
DEGENERATE_STREAK = 50
REFRESH = 50


class LpError(ArithmeticError):
    """Base class for solver failures."""


class InfeasibleError(LpError):
    """The constraint set is empty."""


class UnboundedError(LpError):
    """The objective is unbounded over the feasible set."""


@dataclass(frozen=True)
class LpSolution:
    value: float
    x: np.ndarray
    iterations: int


def _as_rows(A, b, n):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape[1] != n or A.shape[0] != b.shape[0]:
        raise ValueError(f"constraint shape {A.shape} does not match {n} variables / {b.shape[0]} bounds")
    return A, b


def _pivot(T, basis, r, q):
    T[r] /= T[r, q]
    col = T[:, q].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])
    basis[r] = q


def _refresh(T, basis, T0, cost):
    """Recompute ``T`` as ``B^-1 [A | b]`` with fresh reduced costs; False if the basis looks singular."""
    m = T.shape[0] - 1
    try:
        body = np.linalg.solve(T0[:, basis], T0)
    except np.linalg.LinAlgError:
        return False
    if not np.all(np.isfinite(body)):
        return False
    T[:m] = body
    T[:m, basis] = np.eye(m)
    T[-1] = cost - cost[basis] @ T[:m]
    T[-1, basis] = 0.0
    return True


def _run(T, basis, ncols, max_iter, T0, cost):
    """Optimize the tableau whose last row holds reduced costs (minimization).

    ``T0`` is the constraint block ``[A | b]`` the tableau was built from and
    ``cost`` the objective over its columns (0 on the right-hand side).
    """
    m = T.shape[0] - 1
    it = 0
    streak = 0
    fresh = True
    while True:
        if it >= max_iter:
            raise LpError(f"simplex did not converge in {max_iter} iterations")
        if it and it % REFRESH == 0 and not fresh:
            fresh = _refresh(T, basis, T0, cost)
        reduced = T[-1, :ncols]
        if streak < DEGENERATE_STREAK:
            q = int(np.argmin(reduced))
            if reduced[q] >= -COST_TOL:
                return it
        else:
            cand = np.flatnonzero(reduced < -COST_TOL)
            if cand.size == 0:
                return it
            q = int(cand[0])
        col = T[:m, q]
        pos = col > PIVOT_TOL
        if not pos.any():
            if not fresh and _refresh(T, basis, T0, cost):
                fresh = True
                continue
            raise UnboundedError("objective is unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-14 * max(1.0, abs(best)))
        if streak >= DEGENERATE_STREAK:
            r = int(ties[np.argmin(basis[ties])])
        else:
            r = int(ties[np.argmax(col[ties])])
        streak = streak + 1 if best <= 1e-14 else 0
        _pivot(T, basis, r, q)
        fresh = False
        it += 1


def lp_solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, *, free=None,
             maximize=False, max_iter=50_000) -> LpSolution:
    """Solve a small dense LP exactly (up to floating point) with the simplex method.

    ``free`` marks variables without the nonnegativity bound, either as a
    boolean mask or as a list of indices. With ``maximize=True`` the objective is maximized and
    the returned value is the maximum.

    Raises :class:`InfeasibleError` or :class:`UnboundedError` accordingly.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n = c.shape[0]
    A_ub, b_ub = _as_rows(A_ub, b_ub, n)
    A_eq, b_eq = _as_rows(A_eq, b_eq, n)
    mask = np.zeros(n, dtype=bool)
    if free is not None:
        f = np.asarray(free)
        if f.dtype == bool:
            if f.shape != (n,):
                raise ValueError(f"free mask has shape {f.shape}, expected {(n,)}")
            mask = f.copy()
        else:
            mask[f.astype(int)] = True
    free = mask
    sign = -1.0 if maximize else 1.0

    # split free variables: x = x_pos - x_neg
    free_idx = np.flatnonzero(free)
    n_split = n + free_idx.size
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    A = np.zeros((m, n_split + m_ub))
    A[:m_ub, :n] = A_ub
    A[m_ub:, :n] = A_eq
    A[:m_ub, n:n_split] = -A_ub[:, free_idx]
    A[m_ub:, n:n_split] = -A_eq[:, free_idx]
    A[np.arange(m_ub), n_split + np.arange(m_ub)] = 1.0
    b = np.concatenate([b_ub, b_eq])
    cost = np.zeros(n_split + m_ub)
    cost[:n] = sign * c
    cost[n:n_split] = -sign * c[free_idx]

    neg = b < 0
    A[neg] *= -1.0
    b = np.where(neg, -b, b)

    ncols = A.shape[1]
    # rows whose slack already forms a unit column start in the basis
    basis = np.full(m, -1, dtype=int)
    for i in range(m_ub):
        if not neg[i]:
            basis[i] = n_split + i
    need_art = np.flatnonzero(basis < 0)
    n_art = need_art.size

    T = np.zeros((m + 1, ncols + n_art + 1))
    T[:m, :ncols] = A
    T[:m, -1] = b
    T[need_art, ncols + np.arange(n_art)] = 1.0
    basis[need_art] = ncols + np.arange(n_art)

    T0 = T[:m].copy()
    iterations = 0
    if n_art:
        # phase 1: minimize the sum of artificials
        art_cost = np.zeros(T.shape[1])
        art_cost[ncols:ncols + n_art] = 1.0
        T[-1, :] = art_cost
        T[-1] -= T[need_art].sum(axis=0)
        iterations += _run(T, basis, ncols + n_art, max_iter, T0, art_cost)
        if -T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
            raise InfeasibleError("constraints are infeasible")
        # drive zero-level artificials out of the basis
        keep = np.ones(m + 1, dtype=bool)
        for r in range(m):
            if basis[r] >= ncols:
                row = T[r, :ncols]
                q = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if q.size:
                    _pivot(T, basis, r, int(q[np.argmax(np.abs(row[q]))]))
                else:
                    keep[r] = False  # redundant equality
        T = np.delete(T, np.s_[ncols:ncols + n_art], axis=1)[keep]
        T0 = np.delete(T0, np.s_[ncols:ncols + n_art], axis=1)[keep[:-1]]
        basis = basis[keep[:-1]]

    # phase 2
    T[-1, :] = 0.0
    T[-1, :ncols] = cost
    T[-1, -1] = 0.0
    for r, j in enumerate(basis):
        if cost[j] != 0.0:
            T[-1] -= cost[j] * T[r]
    iterations += _run(T, basis, ncols, max_iter, T0, np.append(cost, 0.0))

    z = np.zeros(ncols)
    z[basis] = T[:-1, -1]
    x = z[:n].copy()
    x[free_idx] -= z[n:n_split]
    value = float(c @ x)
    return LpSolution(value=value, x=x, iterations=iterations)
