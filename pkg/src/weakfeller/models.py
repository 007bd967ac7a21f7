"""Partially observed models on finite grids.

A :class:`PomdpModel` holds the state, action and observation spaces, the
transition kernel ``T(x'|x,u)``, the observation channel ``Q(y|x,u)``, the
prior on the initial state and a nonnegative stage cost. Kernels are stored
as dense arrays indexed ``[u, x, .]``.

Continuous additive-noise systems ``x' = h(x,u) + w`` and ``y = g(x,u) + v``
are brought onto grids by integrating the noise law over the cells around
each grid point (:func:`build_additive_model`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .measures import FiniteMeasure, MetricSpace, bl_distance_weights

__all__ = [
    "ConfigurationError",
    "PomdpModel",
    "NoiseDensity",
    "ModulusRow",
    "ModulusReport",
    "build_additive_model",
    "build_counterexample_model",
    "check_tv_channel",
    "check_tv_kernel",
    "kernel_moduli",
]

log = logging.getLogger(__name__)

ROW_TOL = 1e-12
ESCAPE_TOL = 1e-6


class ConfigurationError(ValueError):
    """A model or noise description cannot be realized on the given grids."""


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_rows(name, K):
    if (K < -1e-14).any():
        raise ValueError(f"{name} has negative entries")
    bad = np.abs(K.sum(axis=-1) - 1.0) > ROW_TOL
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{name} row {idx} does not sum to 1")


@dataclass(frozen=True, eq=False)
class PomdpModel:
    states: MetricSpace
    actions: MetricSpace
    observations: MetricSpace
    transition: np.ndarray  # [u, x, x']
    channel: np.ndarray  # [u, x, y]
    prior: FiniteMeasure
    cost: np.ndarray  # [x, u]
    initial_channel: np.ndarray | None = None  # [x, y]
    name: str = "model"
    description: str = ""

    def __post_init__(self):
        nx, nu, ny = len(self.states), len(self.actions), len(self.observations)
        T = _readonly(self.transition)
        Q = _readonly(self.channel)
        c = _readonly(self.cost)
        if T.shape != (nu, nx, nx):
            raise ValueError(f"transition has shape {T.shape}, expected {(nu, nx, nx)}")
        if Q.shape != (nu, nx, ny):
            raise ValueError(f"channel has shape {Q.shape}, expected {(nu, nx, ny)}")
        if c.shape != (nx, nu):
            raise ValueError(f"cost has shape {c.shape}, expected {(nx, nu)}")
        if (c < 0).any() or not np.all(np.isfinite(c)):
            raise ValueError("stage cost must be finite and nonnegative")
        _check_rows("transition", T)
        _check_rows("channel", Q)
        if self.prior.space != self.states:
            raise ValueError("prior must live on the state space")
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "channel", Q)
        object.__setattr__(self, "cost", c)
        if self.initial_channel is not None:
            Q0 = _readonly(self.initial_channel)
            if Q0.shape != (nx, ny):
                raise ValueError(f"initial channel has shape {Q0.shape}, expected {(nx, ny)}")
            _check_rows("initial channel", Q0)
            object.__setattr__(self, "initial_channel", Q0)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    def transition_measure(self, x: int, u: int) -> FiniteMeasure:
        return FiniteMeasure(self.states, self.transition[u, x])

    def channel_measure(self, x: int, u: int) -> FiniteMeasure:
        return FiniteMeasure(self.observations, self.channel[u, x])

    def initial_channel_matrix(self, action: int = 0) -> np.ndarray:
        """``Q0(y|x)``; falls back to the channel at ``action``."""
        if self.initial_channel is not None:
            return self.initial_channel
        return self.channel[action]

    def belief(self, weights) -> FiniteMeasure:
        return FiniteMeasure(self.states, weights)

    def is_control_free_channel(self) -> bool:
        return bool(all(np.array_equal(self.channel[0], self.channel[u])
                        for u in range(1, self.n_actions)))

    def same_kernels(self, other: "PomdpModel") -> bool:
        return (self.states == other.states and self.actions == other.actions
                and self.observations == other.observations
                and np.array_equal(self.transition, other.transition)
                and np.array_equal(self.channel, other.channel)
                and self.prior == other.prior
                and np.array_equal(self.cost, other.cost))


def _gauss_cdf(t, scale):
    return ndtr(t / scale)


def _uniform_cdf(t, half_width):
    return np.clip((t + half_width) / (2.0 * half_width), 0.0, 1.0)


def _triangular_cdf(t, half_width):
    a = half_width
    s = np.clip(t, -a, a)
    return np.where(s <= 0, (s + a) ** 2 / (2 * a * a), 1.0 - (a - s) ** 2 / (2 * a * a))


@dataclass(frozen=True)
class NoiseDensity:
    """A one-dimensional noise law centred at ``loc``.

    ``kind`` is one of ``gaussian`` (``scale`` = standard deviation),
    ``uniform`` and ``triangular`` (``scale`` = half width of the support),
    or ``point`` (a point mass; ``scale`` is ignored).
    """

    kind: str
    scale: float = 1.0
    loc: float = 0.0

    KINDS = ("gaussian", "uniform", "triangular", "point")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigurationError(f"unknown noise kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind != "point" and not self.scale > 0:
            raise ConfigurationError(f"{self.kind} noise needs a positive scale")

    @property
    def continuous(self) -> bool:
        return self.kind != "point"

    def cdf(self, t):
        t = np.asarray(t, dtype=float) - self.loc
        if self.kind == "gaussian":
            return _gauss_cdf(t, self.scale)
        if self.kind == "uniform":
            return _uniform_cdf(t, self.scale)
        if self.kind == "triangular":
            return _triangular_cdf(t, self.scale)
        return (t >= 0).astype(float)

    def _cells(self, center: float, grid) -> tuple:
        g = np.asarray(grid, dtype=float)
        n = g.size
        if n == 0:
            raise ConfigurationError("grid is empty")
        if n > 1 and np.any(np.diff(g) <= 0):
            raise ConfigurationError("grid must be strictly increasing")
        if n == 1:
            return np.ones(1), 0.0
        mids = 0.5 * (g[1:] + g[:-1])
        lo = g[0] - 0.5 * (g[1] - g[0])
        hi = g[-1] + 0.5 * (g[-1] - g[-2])
        if self.kind == "point":
            c = center + self.loc
            m = np.zeros(n)
            m[int(np.argmin(np.abs(g - c)))] = 1.0
            return m, (1.0 if (c < lo or c > hi) else 0.0)
        edges = np.concatenate([[lo], mids, [hi]])
        F = self.cdf(edges - center)
        m = np.diff(F)
        below, above = F[0], 1.0 - F[-1]
        m[0] += below
        m[-1] += above
        m = np.maximum(m, 0.0)
        return m / m.sum(), float(below + above)

    def cell_masses(self, center: float, grid, boundary: str = "clamp") -> np.ndarray:
        """Law of ``center + noise`` integrated over the cells of ``grid``.

        Cells are delimited by midpoints between consecutive grid points; the
        outer cells are half cells of the neighbouring spacing. Mass falling
        beyond them is added to the end cells (``boundary="clamp"``, with a
        warning above 1e-6) or rejected (``boundary="strict"``).
        """
        m, escaped = self._cells(center, grid)
        _escape_check([(escaped, center)], self.kind, boundary)
        return m


def _escape_check(escapes, kind, boundary):
    bad = [(e, c) for e, c in escapes if e > ESCAPE_TOL]
    if not bad:
        return
    worst, where = max(bad)
    msg = (f"{kind} noise mass escapes the grid for {len(bad)} centre(s), "
           f"up to {worst:.3e} around {where:g}")
    if boundary == "strict":
        raise ConfigurationError(msg)
    log.warning("%s; clamped to the end cells", msg)


def build_additive_model(
    dynamics_map: Callable[[float, float], float],
    dyn_noise: NoiseDensity,
    obs_map: Callable[[float, float], float],
    obs_noise: NoiseDensity,
    state_grid: Sequence[float],
    obs_grid: Sequence[float],
    action_grid: Sequence[float] = (0.0,),
    *,
    prior=None,
    cost=None,
    boundary: str = "clamp",
    name: str = "additive",
    description: str = "",
) -> PomdpModel:
    """Discretize ``x' = h(x,u) + w``, ``y = g(x,u) + v`` onto grids.

    ``prior`` may be a weight vector (default uniform); ``cost`` may be an
    ``(n_states, n_actions)`` array or a callable ``c(x, u)`` (default 0).
    """
    xs = np.asarray(state_grid, dtype=float)
    ys = np.asarray(obs_grid, dtype=float)
    us = np.asarray(action_grid, dtype=float)
    if xs.size == 0 or ys.size == 0 or us.size == 0:
        raise ConfigurationError("grids must be nonempty")
    if boundary not in ("clamp", "strict"):
        raise ConfigurationError(f"unknown boundary rule {boundary!r}")
    T = np.empty((us.size, xs.size, xs.size))
    Q = np.empty((us.size, xs.size, ys.size))
    t_esc, q_esc = [], []
    for a, u in enumerate(us):
        for i, x in enumerate(xs):
            c = float(dynamics_map(x, u))
            T[a, i], e = dyn_noise._cells(c, xs)
            t_esc.append((e, c))
            c = float(obs_map(x, u))
            Q[a, i], e = obs_noise._cells(c, ys)
            q_esc.append((e, c))
    _escape_check(t_esc, f"{name}: dynamics {dyn_noise.kind}", boundary)
    _escape_check(q_esc, f"{name}: observation {obs_noise.kind}", boundary)
    X = MetricSpace.line(xs)
    if prior is None:
        p = FiniteMeasure.uniform(X)
    else:
        p = FiniteMeasure.from_masses(X, prior)
    if cost is None:
        c = np.zeros((xs.size, us.size))
    elif callable(cost):
        c = np.array([[cost(x, u) for u in us] for x in xs], dtype=float)
    else:
        c = np.asarray(cost, dtype=float)
    return PomdpModel(
        states=X,
        actions=MetricSpace.line(us),
        observations=MetricSpace.line(ys),
        transition=T,
        channel=Q,
        prior=p,
        cost=c,
        name=name,
        description=description,
    )


COUNTEREXAMPLE_ACTIONS = (0.0,) + tuple(2.0 ** -k for k in range(6))


def build_counterexample_model() -> PomdpModel:
    """Two states, two observations, a channel that jumps at action 0.

    At ``u = 0`` the channel is pure noise (uniform over both observations);
    at every ``u > 0`` it reveals the state exactly, so along ``u_n = 2**-n``
    the channel rows stay at total variation 1 from the limit. The transition
    ``(1 - e(u)) * identity + e(u) * uniform`` with ``e(u) = 0.1 + 0.05 u`` is
    continuous in total variation. This is a representative discontinuous
    channel, not a copy of any published instance.
    """
    us = np.array(COUNTEREXAMPLE_ACTIONS)
    X = MetricSpace.line([0.0, 1.0])
    T = np.empty((us.size, 2, 2))
    Q = np.empty((us.size, 2, 2))
    for a, u in enumerate(us):
        e = 0.1 + 0.05 * u
        T[a] = (1.0 - e) * np.eye(2) + e * 0.5
        Q[a] = np.full((2, 2), 0.5) if u == 0.0 else np.eye(2)
    cost = np.array([[0.0] * us.size, [1.0] * us.size])
    return PomdpModel(
        states=X,
        actions=MetricSpace.line(us),
        observations=MetricSpace.line([0.0, 1.0]),
        transition=T,
        channel=Q,
        prior=FiniteMeasure(X, [0.9, 0.1]),
        cost=cost,
        name="counterexample",
        description=("channel uninformative at u=0 and noiseless for every u>0: "
                     "discontinuous in total variation along u_n=2^-n -> 0; "
                     "transition continuous in total variation"),
    )


@dataclass(frozen=True)
class ModulusRow:
    delta: float
    channel_tv: float
    transition_tv: float
    transition_bl: float | None


@dataclass(frozen=True)
class ModulusReport:
    rows: tuple
    control_free: bool
    pairs_examined: tuple = field(default=())

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)


def kernel_moduli(model: PomdpModel, scales: Sequence[float], *, with_bl: bool = True) -> ModulusReport:
    """Sample-based continuity moduli of the kernels over grid pairs.

    For each scale ``delta`` every pair of grid inputs ``(x, u), (x', u')``
    with ``max(d(x, x'), d(u, u')) <= delta`` is examined, and the largest
    total variation between channel rows, between transition rows, and
    (optionally) the largest bounded-Lipschitz distance between transition
    rows are reported. The grid is finite, so these are exact maxima over
    the grid, not suprema over a continuum.
    """
    scales = [float(s) for s in scales]
    dX, dU = model.states.dist, model.actions.dist
    nx, nu = model.n_states, model.n_actions
    # flatten inputs as (u, x)
    D = np.maximum(np.kron(dU, np.ones((nx, nx))), np.kron(np.ones((nu, nu)), dX))
    Tf = model.transition.reshape(nu * nx, nx)
    Qf = model.channel.reshape(nu * nx, -1)
    q_tv = np.abs(Qf[:, None, :] - Qf[None, :, :]).sum(-1)
    t_tv = np.abs(Tf[:, None, :] - Tf[None, :, :]).sum(-1)
    t_bl = None
    if with_bl:
        t_bl = np.zeros_like(t_tv)
        reach = max(scales) if scales else 0.0
        edges = model.states.lipschitz_edges()
        for i, j in zip(*np.nonzero(np.triu(D <= reach, 1))):
            if t_tv[i, j] > 0:
                t_bl[i, j] = t_bl[j, i] = bl_distance_weights(Tf[i] - Tf[j], dX, edges)
    rows = []
    counts = []
    for s in scales:
        mask = D <= s
        counts.append(int(mask.sum()))
        rows.append(ModulusRow(
            delta=s,
            channel_tv=float(q_tv[mask].max()),
            transition_tv=float(t_tv[mask].max()),
            transition_bl=None if t_bl is None else float(t_bl[mask].max()),
        ))
    return ModulusReport(rows=tuple(rows), control_free=model.is_control_free_channel(),
                         pairs_examined=tuple(counts))


def check_tv_channel(model: PomdpModel, perturbation_scales: Sequence[float]) -> ModulusReport:
    """Moduli for a weakly continuous transition and a TV-continuous channel.

    The channel modulus is in total variation, the transition modulus in the
    bounded-Lipschitz metric.
    """
    return kernel_moduli(model, perturbation_scales, with_bl=True)


def check_tv_kernel(model: PomdpModel, perturbation_scales: Sequence[float]) -> ModulusReport:
    """Moduli for a TV-continuous transition; also flags a control-free channel."""
    return kernel_moduli(model, perturbation_scales, with_bl=False)
