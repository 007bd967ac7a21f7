"""Finite-model approximation of the belief MDP.

Beliefs are snapped to the uniform simplex lattice ``{k / N : k in N^n,
sum k = N}``. Every ``(grid belief, action)`` pair gets a row of the filter
kernel with each posterior moved to its nearest lattice point, which gives
a finite MDP that discounted value iteration can solve. Comparing values at
a probe belief over increasing ``N`` is an empirical convergence table, not
a proof of consistency.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np
from scipy import sparse

from .audit import CapabilityError
from .models import PomdpModel

__all__ = [
    "BeliefGrid",
    "QuantizedMdp",
    "ValueResult",
    "RefinementRow",
    "quantize",
    "value_iteration",
    "refinement_study",
    "GRID_CAP",
]

GRID_CAP = 50_000
TIE_DECIMALS = 11


def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``, in lexicographic order."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    blocks = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


class BeliefGrid:
    """The lattice ``k / N`` on the simplex over ``n`` states.

    Grid points are stored in lexicographic order of ``k``. :meth:`nearest`
    returns the lattice point closest in total variation; among equally
    close points the lowest index wins.
    """

    def __init__(self, n_states: int, resolution: int, cap: int = GRID_CAP):
        if resolution < 1:
            raise ValueError("resolution must be at least 1")
        if n_states < 1:
            raise ValueError("need at least one state")
        size = comb(resolution + n_states - 1, n_states - 1)
        if size > cap:
            raise CapabilityError(
                f"lattice with resolution {resolution} on {n_states} states has {size} points "
                f"(cap {cap})")
        self.n_states = n_states
        self.resolution = resolution
        self.counts = _compositions(resolution, n_states)
        self.counts.setflags(write=False)
        self.points = self.counts / resolution
        self.points.setflags(write=False)
        self._index = {tuple(k): i for i, k in enumerate(self.counts.tolist())}

    def __len__(self):
        return self.counts.shape[0]

    @property
    def mesh(self) -> float:
        """Largest total-variation distance from any belief to its nearest grid point."""
        n, N = self.n_states, self.resolution
        a = n // 2
        return 2.0 * a * (n - a) / (n * N)

    def index_of(self, counts) -> int:
        return self._index[tuple(int(c) for c in counts)]

    def nearest_counts(self, beliefs) -> np.ndarray:
        """Lattice counts nearest to each row of ``beliefs``.

        Floor ``N z`` and hand the missing units to the largest remainders.
        Any other choice costs strictly more in L1, so the only freedom is
        among equal remainders; those go to later coordinates, which gives
        the lexicographically (hence index-) smallest point.
        """
        Z = np.atleast_2d(np.asarray(beliefs, dtype=float))
        N = self.resolution
        s = Z * N
        f = np.floor(s)
        r = np.round(s - f, TIE_DECIMALS)
        missing = np.rint(N - f.sum(axis=1)).astype(np.int64)
        n = Z.shape[1]
        later = np.broadcast_to(-np.arange(n), r.shape)
        order = np.lexsort((later, -r), axis=1)  # larger remainder, then later coordinate
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(n)[None, :].repeat(Z.shape[0], 0), axis=1)
        k = f.astype(np.int64) + (rank < missing[:, None])
        return k

    def nearest(self, beliefs) -> np.ndarray:
        """Grid indices of the nearest lattice points."""
        k = self.nearest_counts(beliefs)
        return np.array([self._index[t] for t in map(tuple, k.tolist())], dtype=np.int64)

    def vertex(self, x: int) -> int:
        k = np.zeros(self.n_states, dtype=np.int64)
        k[x] = self.resolution
        return self.index_of(k)


@dataclass(frozen=True)
class QuantizedMdp:
    grid: BeliefGrid
    transitions: tuple  # one sparse (G, G) row-stochastic matrix per action
    cost: np.ndarray  # (G, n_actions)
    beta: float

    @property
    def n_actions(self) -> int:
        return len(self.transitions)

    def row_sums(self) -> np.ndarray:
        return np.stack([np.asarray(P.sum(axis=1)).ravel() for P in self.transitions], axis=1)


def quantize(model: PomdpModel, resolution: int, beta: float = 0.9, cap: int = GRID_CAP) -> QuantizedMdp:
    if not 0.0 < beta < 1.0:
        raise ValueError("discount must lie in (0, 1)")
    grid = BeliefGrid(model.n_states, resolution, cap)
    Z = grid.points
    G, ny = len(grid), model.n_observations
    rows = np.repeat(np.arange(G), ny)
    mats = []
    for u in range(model.n_actions):
        R = (Z @ model.transition[u])[:, :, None] * model.channel[u][None, :, :]
        p = R.sum(axis=1)  # (G, ny)
        ok = p > 0
        post = np.where(ok[:, None, :], R / np.where(ok, p, 1.0)[:, None, :], 0.0)
        post = post.transpose(0, 2, 1).reshape(G * ny, -1)
        w = (p / p.sum(axis=1, keepdims=True)).ravel()
        keep = ok.ravel()
        cols = np.zeros(G * ny, dtype=np.int64)
        cols[keep] = grid.nearest(post[keep])
        P = sparse.csr_matrix((w[keep], (rows[keep], cols[keep])), shape=(G, G))
        P.sum_duplicates()
        mats.append(P)
    cost = Z @ model.cost
    return QuantizedMdp(grid=grid, transitions=tuple(mats), cost=cost, beta=float(beta))


@dataclass(frozen=True)
class ValueResult:
    values: np.ndarray
    policy: np.ndarray
    residuals: np.ndarray
    iterations: int


def _q_values(mdp: QuantizedMdp, V: np.ndarray) -> np.ndarray:
    return mdp.cost + mdp.beta * np.column_stack([P @ V for P in mdp.transitions])


def value_iteration(mdp: QuantizedMdp, tolerance: float = 1e-8, max_iter: int = 100_000,
                    initial=None) -> ValueResult:
    """Discounted value iteration from ``V = 0``.

    Stops once the sup-norm change is below ``tolerance (1 - beta) / (2 beta)``,
    which puts the returned values within ``tolerance / 2`` of the fixed
    point. The greedy policy picks the lowest action index among minimizers.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    beta = mdp.beta
    stop = tolerance * (1.0 - beta) / (2.0 * beta)
    V = np.zeros(len(mdp.grid)) if initial is None else np.asarray(initial, dtype=float).copy()
    residuals = []
    for _ in range(max_iter):
        V_next = _q_values(mdp, V).min(axis=1)
        res = float(np.max(np.abs(V_next - V))) if V.size else 0.0
        residuals.append(res)
        V = V_next
        if res < stop:
            break
    else:
        raise ArithmeticError(f"value iteration did not reach {stop:.3e} in {max_iter} sweeps")
    policy = np.argmin(_q_values(mdp, V), axis=1)
    return ValueResult(values=V, policy=policy, residuals=np.array(residuals), iterations=len(residuals))


@dataclass(frozen=True)
class RefinementRow:
    resolution: int
    grid_size: int
    probe_value: float
    difference: float | None  # change from the previous resolution
    iterations: int


def refinement_study(model: PomdpModel, resolutions: Sequence[int], beta: float = 0.9,
                     tolerance: float = 1e-8, probe=None, cap: int = GRID_CAP) -> list:
    """Value at ``probe`` (snapped to each lattice) over increasing resolutions.

    ``probe`` defaults to the model prior. The last row is the finest-grid
    reference against which the earlier rows can be compared.
    """
    res = [int(r) for r in resolutions]
    if any(b <= a for a, b in zip(res, res[1:])):
        raise ValueError("resolutions must be strictly increasing")
    z = model.prior.weights if probe is None else np.asarray(probe, dtype=float)
    rows = []
    prev = None
    for N in res:
        mdp = quantize(model, N, beta, cap)
        out = value_iteration(mdp, tolerance)
        v = float(out.values[mdp.grid.nearest(z)[0]])
        rows.append(RefinementRow(N, len(mdp.grid), v, None if prev is None else abs(v - prev), out.iterations))
        prev = v
    return rows
