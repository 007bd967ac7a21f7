"""Built-in models and their preset audit scenarios."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .audit import Scenario, make_scenario
from .measures import FiniteMeasure, MetricSpace, default_test_family
from .models import (NoiseDensity, PomdpModel, _escape_check, build_additive_model,
                     build_counterexample_model)

__all__ = ["ZooEntry", "ZOO", "names", "get_model", "preset_scenario", "shift_right", "describe"]

GRID41 = np.linspace(-5.0, 5.0, 41)
MESH41 = 0.25
DYADIC_ACTIONS = (0.0,) + tuple(MESH41 * 2.0 ** -k for k in range(6))
SCALES41 = tuple(MESH41 * 2.0 ** -k for k in range(6))
HMM2_SCALES = tuple(2.0 ** -k for k in range(8))
HMM2_ACTIONS = (0.0,) + HMM2_SCALES[::-1]


def _gauss_weights(grid, sd, mean=0.0):
    w = np.exp(-0.5 * ((np.asarray(grid) - mean) / sd) ** 2)
    return w / w.sum()


def shift_right(weights) -> np.ndarray:
    """Move every grid point's mass one point to the right (last point keeps its own)."""
    w = np.asarray(weights, dtype=float)
    out = np.zeros_like(w)
    out[1:] = w[:-1]
    out[-1] += w[-1]
    return out


def _hmm2_transition(u):
    p = 0.9 - 0.2 * u
    return np.array([[p, 1 - p], [1 - p, p]])


def _hmm2(channel_fn, obs_points, name, description) -> PomdpModel:
    X = MetricSpace.line([0.0, 1.0])
    us = np.array(HMM2_ACTIONS)
    T = np.stack([_hmm2_transition(u) for u in us])
    Q = np.stack([channel_fn(u) for u in us])
    cost = np.array([[(x - u) ** 2 for u in us] for x in (0.0, 1.0)])
    return PomdpModel(
        states=X,
        actions=MetricSpace.line(us),
        observations=MetricSpace.line(obs_points),
        transition=T,
        channel=Q,
        prior=FiniteMeasure(X, [0.5, 0.5]),
        cost=cost,
        name=name,
        description=description,
    )


HMM2_OBS = np.linspace(-1.5, 3.0, 8)


def hmm2_gaussian() -> PomdpModel:
    noise = NoiseDensity("gaussian", 0.6)
    cells = {(x, u): noise._cells(x + 0.5 * u, HMM2_OBS) for u in HMM2_ACTIONS for x in (0.0, 1.0)}
    _escape_check([(e, x + 0.5 * u) for (x, u), (_, e) in cells.items()],
                  "hmm2-gaussian: observation gaussian", "clamp")

    def channel(u):
        return np.stack([cells[x, u][0] for x in (0.0, 1.0)])

    return _hmm2(channel, HMM2_OBS, "hmm2-gaussian",
                 "2-state chain; y = x + u/2 + N(0, 0.6^2) cell-integrated on 8 points; "
                 "stay probability 0.9 - 0.2u; cost (x - u)^2")


def hmm2_noiseless() -> PomdpModel:
    return _hmm2(lambda u: np.eye(2), [0.0, 1.0], "hmm2-noiseless",
                 "2-state chain observed perfectly; stay probability 0.9 - 0.2u; cost (x - u)^2")


def hmm2_uninformative() -> PomdpModel:
    return _hmm2(lambda u: np.full((2, 3), 1.0 / 3.0), [0.0, 1.0, 2.0], "hmm2-uninformative",
                 "2-state chain with an observation independent of the state (uniform on 3 symbols)")


def additive_obs_gaussian() -> PomdpModel:
    return build_additive_model(
        lambda x, u: 0.8 * x + u, NoiseDensity("gaussian", 0.5),
        lambda x, u: x + 0.5 * u, NoiseDensity("gaussian", 1.0),
        GRID41, GRID41, DYADIC_ACTIONS,
        prior=_gauss_weights(GRID41, 1.5),
        cost=lambda x, u: (x - u) ** 2,
        name="additive-obs-gaussian",
        description=("additive observation noise: x' = 0.8x + u + N(0, 0.5^2), "
                     "y = x + u/2 + N(0, 1); 41-point state and observation grids on [-5, 5]; "
                     "channel continuous in total variation, transition weakly continuous"),
    )


def additive_dyn_gaussian() -> PomdpModel:
    return build_additive_model(
        lambda x, u: 0.8 * x + u, NoiseDensity("gaussian", 0.7),
        lambda x, u: x, NoiseDensity("point"),
        GRID41, [-4.0, -2.0, 0.0, 2.0, 4.0], DYADIC_ACTIONS,
        prior=_gauss_weights(GRID41, 1.5),
        cost=lambda x, u: (x - u) ** 2,
        name="additive-dyn-gaussian",
        description=("additive dynamics noise: x' = 0.8x + u + N(0, 0.7^2) on a 41-point grid; "
                     "control-free noiseless quantizer channel y = nearest of {-4,-2,0,2,4} to x; "
                     "transition continuous in total variation, channel unrestricted"),
    )


REFINED_GRID = np.array(sorted({0.0, 2.0, 3.0, -2.0, -3.0}
                               | {s * 2.0 ** -k for k in range(7) for s in (1.0, -1.0)}))


def refined_obs_gaussian() -> PomdpModel:
    return build_additive_model(
        lambda x, u: 0.8 * x, NoiseDensity("gaussian", 0.5),
        lambda x, u: x, NoiseDensity("gaussian", 1.0),
        REFINED_GRID, GRID41, (0.0,),
        prior=_gauss_weights(REFINED_GRID, 1.0),
        name="refined-obs-gaussian",
        description=("Gaussian channel y = x + N(0, 1) on 41 observation points, with a state grid "
                     "refined dyadically toward 0 (points +-2^-k, k=0..6) so x_k -> 0 inside the grid"),
    )


@dataclass(frozen=True)
class ZooEntry:
    build: Callable[[], PomdpModel]
    control: str
    summary: str


ZOO = {
    "hmm2-gaussian": ZooEntry(hmm2_gaussian, "positive", "2-state chain, Gaussian channel on 8 symbols"),
    "hmm2-noiseless": ZooEntry(hmm2_noiseless, "positive", "2-state chain, perfect observations"),
    "hmm2-uninformative": ZooEntry(hmm2_uninformative, "positive", "2-state chain, uninformative channel"),
    "additive-obs-gaussian": ZooEntry(additive_obs_gaussian, "positive",
                                      "additive Gaussian observation noise, 41-point grids"),
    "additive-dyn-gaussian": ZooEntry(additive_dyn_gaussian, "positive",
                                      "additive Gaussian dynamics noise, control-free quantizer channel"),
    "refined-obs-gaussian": ZooEntry(refined_obs_gaussian, "none",
                                     "Gaussian channel on a dyadically refined state grid"),
    "counterexample": ZooEntry(build_counterexample_model, "negative",
                               "channel discontinuous in the action (negative control)"),
}

_CACHE: dict = {}


def names() -> list:
    return list(ZOO)


def get_model(name: str) -> PomdpModel:
    if name not in ZOO:
        raise KeyError(f"unknown built-in model {name!r}; try one of {', '.join(ZOO)}")
    if name not in _CACHE:
        _CACHE[name] = ZOO[name].build()
    return _CACHE[name]


def _action_index(model, value):
    return model.actions.points.index(float(value))


def preset_scenario(name: str, model: PomdpModel | None = None, *, metric: str = "bl",
                    family_size: int | None = None, control: str | None = None) -> Scenario:
    """The default approaching sequence for a built-in model.

    Grid models move the belief toward its one-cell right shift and the
    action toward 0 along the dyadic action grid; 2-state models move the
    belief toward ``(0.3, 0.7)``; the counterexample keeps the belief fixed
    and sends ``u_n = 2**-n -> 0``.
    """
    model = get_model(name) if model is None else model
    ctl = control or ZOO.get(name, ZooEntry(None, "none", "")).control
    fam = None
    if metric == "rho" or family_size:
        fam = default_test_family(model.states, family_size or max(32, model.n_states))
    if name == "counterexample":
        scales = tuple(2.0 ** -k for k in range(6))
        z = model.belief([0.9, 0.1])
        us = [_action_index(model, s) for s in scales]
        return make_scenario(model, z, _action_index(model, 0.0), scales, actions=us,
                             metric=metric, family=fam, name=name, control=ctl)
    if model.n_states == 2:
        scales = HMM2_SCALES
        z = model.belief([0.7, 0.3])
        us = [_action_index(model, s) for s in scales]
        return make_scenario(model, z, 0, scales, direction=[0.3, 0.7], actions=us,
                             metric=metric, family=fam, name=name, control=ctl)
    if name == "refined-obs-gaussian":
        pts = np.array(model.states.points)
        scales = tuple(2.0 ** -k for k in range(7))
        z = model.prior
        direction = np.zeros(model.n_states)
        direction[int(np.argmin(np.abs(pts - 1.0)))] = 1.0
        return make_scenario(model, z, 0, scales, direction=direction,
                             metric=metric, family=fam, name=name, control=ctl)
    scales = SCALES41
    z = model.prior
    us = [_action_index(model, s) for s in scales]
    return make_scenario(model, z, _action_index(model, 0.0), scales,
                         direction=shift_right(z.weights), actions=us,
                         metric=metric, family=fam, name=name, control=ctl)


def describe(name: str, max_states: int = 8) -> str:
    model = get_model(name)
    lines = [f"{name}: {model.description}",
             f"  states={model.n_states} actions={model.n_actions} observations={model.n_observations}",
             f"  control-free channel: {model.is_control_free_channel()}",
             f"  preset control kind: {ZOO[name].control}"]
    if model.n_states <= max_states:
        with np.printoptions(precision=4, suppress=True):
            for a, u in enumerate(model.actions.points):
                lines.append(f"  u={u:g}")
                lines.append("    T (rows x, sum to 1):")
                lines += ["      " + str(r) for r in model.transition[a]]
                lines.append("    Q (rows x, sum to 1):")
                lines += ["      " + str(r) for r in model.channel[a]]
    return "\n".join(lines)
