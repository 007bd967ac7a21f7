"""Finite-support probability measures and the metrics used throughout.

Three distances are provided on a common :class:`MetricSpace`:

* :func:`tv_distance`, with the factor-2 convention ``sum |mu_i - nu_i|``,
  so two distinct point masses sit at distance 2;
* :func:`bl_distance`, the bounded-Lipschitz metric, solved exactly as a
  linear program by :mod:`weakfeller.lp`;
* :func:`rho_distance`, the weighted series ``sum_m 2**-(m+1) |<f_m, mu - nu>|``
  over a finite :class:`TestFamily`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lp import lp_solve

__all__ = [
    "StructuralError",
    "MetricSpace",
    "FiniteMeasure",
    "TestFamily",
    "tv_distance",
    "bl_distance",
    "bl_distance_weights",
    "bl_primal_lp",
    "rho_distance",
    "default_test_family",
    "lipschitz_edges",
]

SUM_TOL = 1e-12
NEG_TOL = 1e-14


class StructuralError(ValueError):
    """Inputs live on different spaces or have incompatible shapes."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class MetricSpace:
    """A finite, ordered point set with a symmetric distance matrix.

    ``check=False`` skips the O(n^3) triangle-inequality check; the builders
    below use it for matrices that are metrics by construction.
    """

    __slots__ = ("points", "dist", "_edges")

    def __init__(self, points: Sequence, dist, *, check: bool = True):
        self.points = tuple(points)
        self.dist = _frozen(dist)
        self._edges = None
        n = len(self.points)
        if self.dist.shape != (n, n):
            raise StructuralError(f"distance matrix shape {self.dist.shape} does not match {n} points")
        if check:
            d = self.dist
            if not np.all(np.isfinite(d)) or (d < 0).any():
                raise ValueError("distances must be finite and nonnegative")
            if np.any(np.diag(d) != 0.0):
                raise ValueError("distance of a point to itself must be 0")
            if not np.array_equal(d, d.T):
                raise ValueError("distance matrix must be symmetric")
            if n and (d[:, None, :] > d[:, :, None] + d[None, :, :] + 1e-12 * (1.0 + d.max())).any():
                raise ValueError("distance matrix violates the triangle inequality")

    @classmethod
    def line(cls, values: Sequence[float]) -> "MetricSpace":
        """Points on the real line with the absolute-difference metric."""
        v = np.asarray(values, dtype=float)
        return cls([float(x) for x in v], np.abs(v[:, None] - v[None, :]), check=False)

    @classmethod
    def discrete(cls, n: int, scale: float = 1.0) -> "MetricSpace":
        d = scale * (1.0 - np.eye(n))
        return cls(list(range(n)), d, check=False)

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, MetricSpace):
            return NotImplemented
        return self.points == other.points and np.array_equal(self.dist, other.dist)

    def __hash__(self):
        return hash((self.points, self.dist.tobytes()))

    def __repr__(self):
        return f"MetricSpace(n={len(self)})"

    def index(self, point) -> int:
        return self.points.index(point)

    def lipschitz_edges(self) -> np.ndarray:
        """Ordered pairs whose Lipschitz constraint is not implied by others."""
        if self._edges is None:
            self._edges = lipschitz_edges(self.dist)
        return self._edges


def lipschitz_edges(dist) -> np.ndarray:
    """Return the (i, k) pairs, i != k, not split by any intermediate point.

    If ``d[i, j] + d[j, k] <= d[i, k]`` for some third point ``j``, the
    constraint ``|f_i - f_k| <= L d[i, k]`` follows from the two shorter ones,
    so it can be dropped from the bounded-Lipschitz program without changing
    its value. On a line grid only neighbours survive.
    """
    d = np.asarray(dist, dtype=float)
    n = d.shape[0]
    keep = ~np.eye(n, dtype=bool)
    for j in range(n):
        via = d[:, j][:, None] + d[j, :][None, :] <= d
        # zero-length hops would let two pairs imply each other
        via &= (d[:, j] > 0)[:, None] & (d[j, :] > 0)[None, :]
        via[j, :] = False
        via[:, j] = False
        keep &= ~via
    i, k = np.nonzero(keep)
    return np.stack([i, k], axis=1)


class FiniteMeasure:
    """A probability vector over the points of a :class:`MetricSpace`.

    Weights below ``-1e-14`` are rejected, tiny negatives are clamped to 0,
    and the vector is renormalized after the sum is checked to be within
    ``1e-12`` of one. Use :meth:`from_masses` for unnormalized input.
    """

    __slots__ = ("space", "weights")

    def __init__(self, space: MetricSpace, weights):
        w = np.array(weights, dtype=float).reshape(-1)
        if w.shape[0] != len(space):
            raise StructuralError(f"{w.shape[0]} weights for a space of {len(space)} points")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if (w < -NEG_TOL).any():
            raise ValueError(f"negative weight {w.min():.3e}")
        w = np.maximum(w, 0.0)
        s = w.sum()
        if abs(s - 1.0) > SUM_TOL:
            raise ValueError(f"weights sum to {s!r}, not 1")
        self.space = space
        # already normalized up to rounding: keep the bits, so reloading is exact
        if abs(s - 1.0) > w.size * np.finfo(float).eps:
            w = w / s
        self.weights = _frozen(w)

    @classmethod
    def from_masses(cls, space: MetricSpace, masses) -> "FiniteMeasure":
        m = np.maximum(np.asarray(masses, dtype=float), 0.0)
        s = m.sum()
        if not s > 0:
            raise ValueError("masses have no positive total")
        return cls(space, m / s)

    @classmethod
    def dirac(cls, space: MetricSpace, index: int) -> "FiniteMeasure":
        w = np.zeros(len(space))
        w[index] = 1.0
        return cls(space, w)

    @classmethod
    def uniform(cls, space: MetricSpace) -> "FiniteMeasure":
        return cls(space, np.full(len(space), 1.0 / len(space)))

    def __len__(self):
        return len(self.space)

    def __eq__(self, other):
        if not isinstance(other, FiniteMeasure):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    def __repr__(self):
        return f"FiniteMeasure({np.array2string(self.weights, precision=4)})"

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def expect(self, f) -> float:
        return float(np.dot(self.weights, np.asarray(f, dtype=float)))

    def mix(self, other: "FiniteMeasure", lam: float) -> "FiniteMeasure":
        """``(1 - lam) * self + lam * other``."""
        _same_space(self, other)
        return FiniteMeasure(self.space, (1.0 - lam) * self.weights + lam * other.weights)


def _same_space(mu, nu):
    if mu.space is not nu.space and mu.space != nu.space:
        raise StructuralError("measures live on different spaces")


def tv_distance(mu: FiniteMeasure, nu: FiniteMeasure) -> float:
    _same_space(mu, nu)
    return float(np.abs(mu.weights - nu.weights).sum())


def bl_distance_weights(w, dist, edges=None) -> float:
    """Bounded-Lipschitz norm of a zero-mass signed vector ``w``.

    Solved through the LP dual of::

        max  sum_i f_i w_i
        s.t. |f_i| <= t1,  f_i - f_k <= t2 d[i, k],  t1 + t2 <= 1,  t >= 0

    which reads: minimize ``s`` over ``a, b >= 0`` and edge flows ``p >= 0``
    with ``a - b + div(p) = w``, ``sum(a + b) <= s`` and ``d . p <= s``.
    The dual has one row per point instead of one per pair, which keeps the
    tableau small.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if n == 0 or not np.any(w):
        return 0.0
    d = np.asarray(dist, dtype=float)
    if edges is None:
        edges = lipschitz_edges(d)
    ne = len(edges)
    nv = 2 * n + ne + 1
    A_eq = np.zeros((n, nv))
    A_eq[np.arange(n), np.arange(n)] = 1.0
    A_eq[np.arange(n), n + np.arange(n)] = -1.0
    if ne:
        cols = 2 * n + np.arange(ne)
        A_eq[edges[:, 0], cols] += 1.0
        A_eq[edges[:, 1], cols] -= 1.0
    A_ub = np.zeros((2, nv))
    A_ub[0, :2 * n] = 1.0
    A_ub[0, -1] = -1.0
    if ne:
        A_ub[1, 2 * n:2 * n + ne] = d[edges[:, 0], edges[:, 1]]
    A_ub[1, -1] = -1.0
    c = np.zeros(nv)
    c[-1] = 1.0
    sol = lp_solve(c, A_ub, np.zeros(2), A_eq, w)
    return max(0.0, sol.value)


def bl_distance(mu: FiniteMeasure, nu: FiniteMeasure) -> float:
    """Bounded-Lipschitz distance, exact up to the simplex tolerances."""
    _same_space(mu, nu)
    w = mu.weights - nu.weights
    if not np.any(w):
        return 0.0
    return bl_distance_weights(w, mu.space.dist, mu.space.lipschitz_edges())


def bl_primal_lp(mu: FiniteMeasure, nu: FiniteMeasure):
    """The bounded-Lipschitz program in its primal form.

    Variables are ``(f_1..f_n, t1, t2)``. Returns the ``lp_solve`` argument
    tuple ``(c, A_ub, b_ub)`` for a maximization with ``f`` free. Every pair
    of points gets its own Lipschitz row; this is the reference formulation
    that :func:`bl_distance` must agree with.
    """
    _same_space(mu, nu)
    n = len(mu)
    d = mu.space.dist
    rows = []
    for i in range(n):
        r = np.zeros(n + 2); r[i] = 1.0; r[n] = -1.0; rows.append(r)
        r = np.zeros(n + 2); r[i] = -1.0; r[n] = -1.0; rows.append(r)
    for i in range(n):
        for k in range(n):
            if i != k:
                r = np.zeros(n + 2); r[i] = 1.0; r[k] = -1.0; r[n + 1] = -d[i, k]; rows.append(r)
    r = np.zeros(n + 2); r[n] = 1.0; r[n + 1] = 1.0; rows.append(r)
    A_ub = np.array(rows)
    b_ub = np.zeros(len(rows))
    b_ub[-1] = 1.0
    c = np.concatenate([mu.weights - nu.weights, [0.0, 0.0]])
    free = np.zeros(n + 2, dtype=bool)
    free[:n] = True
    return c, A_ub, b_ub, free


@dataclass(frozen=True)
class TestFamily:
    """A finite family of test functions ``f_m`` with ``|f_m| <= 1``.

    ``functions`` is an ``(M, n)`` array, one row per function, evaluated at
    the points of the space. Row ``m`` (0-based) carries weight
    ``2 ** -(m + 2)``, i.e. ``2 ** -(m+1)`` for the 1-based index.
    """

    __test__ = False  # not a pytest class

    functions: np.ndarray

    def __post_init__(self):
        f = _frozen(np.atleast_2d(self.functions))
        if f.shape[0] == 0:
            raise ValueError("test family is empty")
        if np.abs(f).max() > 1.0 + 1e-12:
            raise ValueError("test functions must satisfy |f| <= 1")
        object.__setattr__(self, "functions", f)

    @property
    def weights(self) -> np.ndarray:
        return 2.0 ** -(np.arange(self.functions.shape[0]) + 2.0)

    @property
    def dim(self) -> int:
        return self.functions.shape[1]

    @property
    def unit_first(self) -> bool:
        """True when the first member is the constant function 1."""
        return bool(np.all(self.functions[0] == 1.0))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.functions.tobytes()).hexdigest()[:16]

    def __len__(self):
        return self.functions.shape[0]


def rho_distance(mu: FiniteMeasure, nu: FiniteMeasure, fam: TestFamily) -> float:
    _same_space(mu, nu)
    if fam.dim != len(mu):
        raise StructuralError(f"test functions have {fam.dim} entries, space has {len(mu)} points")
    return float(fam.weights @ np.abs(fam.functions @ (mu.weights - nu.weights)))


def default_test_family(space: MetricSpace, size: int = 32) -> TestFamily:
    """The constant 1 followed by hat functions centred at grid points.

    Each hat is ``max(0, 1 - d(x, c) / r)``. When ``size >= len(space)`` the
    centres are the first ``n - 1`` points and ``r`` is each centre's
    nearest-neighbour distance, so the hats are point indicators and,
    together with the constant, separate all measures on the space. For
    smaller ``size`` the centres are spread evenly by index and the radius is
    twice the covering radius; the family then no longer separates every
    pair of measures.
    """
    if size < 1:
        raise ValueError("test family size must be at least 1")
    n = len(space)
    d = space.dist
    rows = [np.ones(n)]
    if size >= n:
        centres = list(range(n - 1))
        for c in centres:
            others = np.delete(d[c], c)
            r = others.min() if others.size else 1.0
            rows.append(np.clip(1.0 - d[c] / r, 0.0, 1.0))
    elif size > 1:
        centres = sorted(set(np.linspace(0, n - 1, size - 1).round().astype(int).tolist()))
        cover = d[:, centres].min(axis=1).max()
        r = 2.0 * cover if cover > 0 else 1.0
        for c in centres:
            rows.append(np.clip(1.0 - d[c] / r, 0.0, 1.0))
    return TestFamily(np.array(rows))
