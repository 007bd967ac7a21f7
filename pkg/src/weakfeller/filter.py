"""Exact non-linear filter on finite models.

For a belief ``z`` and action ``u`` the predicted state law is
``Tz(x1) = sum_x0 T(x1|x0,u) z(x0)``; the joint law of the next state and
observation is ``R(x1, y) = Q(y|x1,u) Tz(x1)``. Its ``y``-marginal is the
observation predictor and its conditional given ``y`` is the Bayes update.
The filter kernel pushes the predictor forward through the update map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measures import FiniteMeasure
from .models import PomdpModel

__all__ = [
    "NullObservationError",
    "FilterKernelValue",
    "predicted_state",
    "predict_observation",
    "joint_kernel",
    "bayes_update",
    "posteriors",
    "filter_kernel",
    "lifted_cost",
    "filter_trajectory",
    "initial_belief",
    "MERGE_TOL",
]

MERGE_TOL = 1e-12


class NullObservationError(ValueError):
    """The observation has zero predictive probability; no posterior exists."""

    def __init__(self, y, step=None):
        self.y = y
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"observation {y} has zero predictive probability{where}")


def _check(model: PomdpModel, z: FiniteMeasure, u: int):
    if z.space is not model.states and z.space != model.states:
        raise ValueError("belief does not live on the model's state space")
    if not 0 <= u < model.n_actions:
        raise IndexError(f"action index {u} out of range")


def predicted_state(model: PomdpModel, z: FiniteMeasure, u: int) -> np.ndarray:
    """``sum_x0 T(.|x0,u) z(x0)`` as a plain vector."""
    _check(model, z, u)
    return z.weights @ model.transition[u]


def _joint(model, z, u):
    return model.channel[u] * predicted_state(model, z, u)[:, None]


def joint_kernel(model: PomdpModel, z: FiniteMeasure, u: int) -> np.ndarray:
    """Joint law ``R(x1, y)`` of next state and observation, shape ``(nX, nY)``."""
    return _joint(model, z, u)


def predict_observation(model: PomdpModel, z: FiniteMeasure, u: int) -> FiniteMeasure:
    p = _joint(model, z, u).sum(axis=0)
    return FiniteMeasure.from_masses(model.observations, p)


def _posterior(R, p, y):
    col = R[:, y]
    return col / col.sum()


def bayes_update(model: PomdpModel, z: FiniteMeasure, u: int, y: int) -> FiniteMeasure:
    R = _joint(model, z, u)
    if not 0 <= y < model.n_observations:
        raise IndexError(f"observation index {y} out of range")
    if not R[:, y].sum() > 0:
        raise NullObservationError(y)
    return FiniteMeasure.from_masses(model.states, R[:, y])


def posteriors(model: PomdpModel, z: FiniteMeasure, u: int):
    """Predictor and all posteriors at once.

    Returns ``(p, post)`` where ``p`` is the predictive vector over
    observations and ``post[y]`` is the posterior for every ``y`` with
    ``p[y] > 0`` (rows for null observations are NaN).
    """
    R = _joint(model, z, u)
    p = R.sum(axis=0)
    post = np.full((model.n_observations, model.n_states), np.nan)
    ok = p > 0
    post[ok] = (R[:, ok] / p[ok]).T
    return p / p.sum(), post


@dataclass(frozen=True)
class FilterKernelValue:
    """A finitely supported law over beliefs: ``eta(. | z, u)``."""

    beliefs: np.ndarray  # (k, nX), one belief per row
    weights: np.ndarray  # (k,)
    observations: tuple  # observation indices mapped to each support belief

    def __len__(self):
        return self.weights.shape[0]

    def support(self, model: PomdpModel) -> list:
        return [FiniteMeasure(model.states, b) for b in self.beliefs]


def merge_beliefs(beliefs: np.ndarray, weights: np.ndarray, tol: float = MERGE_TOL):
    """Merge rows equal within ``tol`` in sup-norm; keeps first-seen order.

    Returns ``(beliefs, weights, groups)`` with ``groups[k]`` listing the
    input rows merged into output row ``k``.
    """
    reps: list[int] = []
    groups: list[list[int]] = []
    for i, b in enumerate(beliefs):
        for k, r in enumerate(reps):
            if np.max(np.abs(beliefs[r] - b)) <= tol:
                groups[k].append(i)
                break
        else:
            reps.append(i)
            groups.append([i])
    B = beliefs[reps] if reps else beliefs[:0]
    W = np.array([weights[g].sum() for g in groups])
    return B, W, groups


def filter_kernel(model: PomdpModel, z: FiniteMeasure, u: int) -> FilterKernelValue:
    p, post = posteriors(model, z, u)
    ys = np.flatnonzero(p > 0)
    B, W, groups = merge_beliefs(post[ys], p[ys])
    obs = tuple(tuple(int(ys[i]) for i in g) for g in groups)
    B.setflags(write=False)
    W = W / W.sum()
    W.setflags(write=False)
    return FilterKernelValue(beliefs=B, weights=W, observations=obs)


def lifted_cost(model: PomdpModel, z: FiniteMeasure, u: int) -> float:
    _check(model, z, u)
    return float(z.weights @ model.cost[:, u])


def filter_trajectory(model: PomdpModel, z0: FiniteMeasure, actions: Sequence[int],
                      observations: Sequence[int]) -> list:
    if len(actions) != len(observations):
        raise ValueError("actions and observations must have the same length")
    out = [z0]
    z = z0
    for t, (u, y) in enumerate(zip(actions, observations)):
        try:
            z = bayes_update(model, z, u, y)
        except NullObservationError as exc:
            raise NullObservationError(y, step=t) from exc
        out.append(z)
    return out


def initial_belief(model: PomdpModel, y0: int) -> FiniteMeasure:
    """Condition the prior on a first observation through ``Q0``."""
    Q0 = model.initial_channel_matrix()
    m = model.prior.weights * Q0[:, y0]
    if not m.sum() > 0:
        raise NullObservationError(y0, step=0)
    return FiniteMeasure.from_masses(model.states, m)
