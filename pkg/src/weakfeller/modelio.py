"""Reading and writing model files.

A model file is YAML with ``schema: weakfeller/model-v1`` at the top and
one of two kinds:

``kind: additive``
    grids plus ``dynamics`` and ``observation`` sections, each holding a
    ``map`` (``linear``: ``a x + b u``; ``affine``: ``a x + b u + c``;
    ``tabulated``: a ``[state][action]`` table of values) and a ``noise``
    (``kind`` gaussian/uniform/triangular/point, ``scale``, ``loc``).
``kind: tabulated``
    explicit ``transition[u][x][x']`` and ``channel[u][x][y]`` tables.

Both kinds take ``prior`` (weights, or a noise description evaluated on
the state grid), ``cost`` (a ``[state][action]`` table, or ``{form:
quadratic, a, b, c}`` meaning ``(a x + b u + c)^2``) and an optional
``initial_channel`` table. Spaces are lists of numbers on the real line,
or ``{points: [...], dist: [[...]]}`` for an explicit metric.

:func:`save_model` always writes the tabulated kind. Floats are written
with ``repr`` precision, so load, save and load again gives identical
arrays.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .measures import FiniteMeasure, MetricSpace
from .models import ConfigurationError, NoiseDensity, PomdpModel, build_additive_model

__all__ = ["MODEL_SCHEMA", "load_model", "save_model", "model_from_dict", "model_to_dict"]

MODEL_SCHEMA = "weakfeller/model-v1"


def _need(d, key, where):
    if key not in d:
        raise ConfigurationError(f"{where}: missing field '{key}'")
    return d[key]


def _space(entry, where) -> MetricSpace:
    if isinstance(entry, dict):
        pts = [float(p) for p in _need(entry, "points", where)]
        if "dist" in entry:
            return MetricSpace(pts, np.array(entry["dist"], dtype=float))
        return MetricSpace.line(pts)
    if not isinstance(entry, list) or not entry:
        raise ConfigurationError(f"{where}: expected a nonempty list of numbers")
    return MetricSpace.line([float(p) for p in entry])


def _space_out(space: MetricSpace):
    pts = [float(p) for p in space.points]
    line = MetricSpace.line(pts)
    if np.array_equal(line.dist, space.dist):
        return pts
    return {"points": pts, "dist": space.dist.tolist()}


def _map(entry, xs, us, where):
    form = _need(entry, "form", where)
    if form in ("linear", "affine"):
        a = float(entry.get("a", 0.0))
        b = float(entry.get("b", 0.0))
        c = float(entry.get("c", 0.0)) if form == "affine" else 0.0
        if form == "linear" and "c" in entry:
            raise ConfigurationError(f"{where}: a linear map has no constant 'c'; use form: affine")
        return lambda x, u: a * x + b * u + c
    if form == "tabulated":
        tab = np.array(_need(entry, "values", where), dtype=float)
        if tab.shape != (len(xs), len(us)):
            raise ConfigurationError(f"{where}: values table has shape {tab.shape}, "
                                     f"expected {(len(xs), len(us))}")
        ix = {float(x): i for i, x in enumerate(xs)}
        iu = {float(u): j for j, u in enumerate(us)}
        return lambda x, u: tab[ix[float(x)], iu[float(u)]]
    raise ConfigurationError(f"{where}: unknown map form {form!r} (linear, affine, tabulated)")


def _noise(entry, where) -> NoiseDensity:
    kind = _need(entry, "kind", where)
    return NoiseDensity(kind, float(entry.get("scale", 1.0)), float(entry.get("loc", 0.0)))


def _prior(entry, X: MetricSpace, where):
    if entry is None:
        return None
    if isinstance(entry, dict):
        noise = _noise(entry, where)
        pts = [float(p) for p in X.points]
        return noise._cells(0.0, pts)[0]
    return np.array(entry, dtype=float)


def _cost(entry, xs, us, where):
    if entry is None:
        return None
    if isinstance(entry, dict):
        if entry.get("form") != "quadratic":
            raise ConfigurationError(f"{where}: cost form must be 'quadratic' or a table")
        a, b, c = (float(entry.get(k, 0.0)) for k in ("a", "b", "c"))
        return np.array([[(a * x + b * u + c) ** 2 for u in us] for x in xs])
    return np.array(entry, dtype=float)


def model_from_dict(d: dict, source: str = "<model>") -> PomdpModel:
    """Build a model from a parsed model file; every failure is a :class:`ConfigurationError`."""
    try:
        return _model_from_dict(d, source)
    except ConfigurationError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc


def _model_from_dict(d, source):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{source}: a model file must be a mapping")
    schema = d.get("schema")
    if schema != MODEL_SCHEMA:
        raise ConfigurationError(f"{source}: schema must be {MODEL_SCHEMA!r}, got {schema!r}")
    kind = d.get("kind", "tabulated")
    name = str(d.get("name", Path(source).stem))
    description = str(d.get("description", ""))
    X = _space(_need(d, "states", source), f"{source}: states")
    U = _space(_need(d, "actions", source), f"{source}: actions")
    Y = _space(_need(d, "observations", source), f"{source}: observations")
    xs = [float(p) for p in X.points]
    us = [float(p) for p in U.points]
    prior = _prior(d.get("prior"), X, f"{source}: prior")
    cost = _cost(d.get("cost"), xs, us, f"{source}: cost")
    Q0 = d.get("initial_channel")
    if kind == "additive":
        dyn = _need(d, "dynamics", source)
        obs = _need(d, "observation", source)
        m = build_additive_model(
            _map(_need(dyn, "map", f"{source}: dynamics"), xs, us, f"{source}: dynamics.map"),
            _noise(_need(dyn, "noise", f"{source}: dynamics"), f"{source}: dynamics.noise"),
            _map(_need(obs, "map", f"{source}: observation"), xs, us, f"{source}: observation.map"),
            _noise(_need(obs, "noise", f"{source}: observation"), f"{source}: observation.noise"),
            xs, [float(p) for p in Y.points], us,
            prior=prior, cost=cost, boundary=d.get("boundary", "clamp"),
            name=name, description=description,
        )
        # the builder puts line metrics on every space; keep any explicit ones
        return PomdpModel(X, U, Y, m.transition, m.channel, FiniteMeasure(X, m.prior.weights),
                          m.cost, None if Q0 is None else np.array(Q0, dtype=float), name, description)
    if kind != "tabulated":
        raise ConfigurationError(f"{source}: unknown model kind {kind!r} (additive, tabulated)")
    return PomdpModel(
        states=X, actions=U, observations=Y,
        transition=np.array(_need(d, "transition", source), dtype=float),
        channel=np.array(_need(d, "channel", source), dtype=float),
        prior=FiniteMeasure.uniform(X) if prior is None else FiniteMeasure(X, prior),
        cost=np.zeros((len(X), len(U))) if cost is None else cost,
        initial_channel=None if Q0 is None else np.array(Q0, dtype=float),
        name=name, description=description,
    )


def model_to_dict(model: PomdpModel) -> dict:
    d = {
        "schema": MODEL_SCHEMA,
        "kind": "tabulated",
        "name": model.name,
        "description": model.description,
        "states": _space_out(model.states),
        "actions": _space_out(model.actions),
        "observations": _space_out(model.observations),
        "prior": model.prior.weights.tolist(),
        "cost": model.cost.tolist(),
        "transition": model.transition.tolist(),
        "channel": model.channel.tolist(),
    }
    if model.initial_channel is not None:
        d["initial_channel"] = model.initial_channel.tolist()
    return d


def load_model(path) -> PomdpModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    with open(path) as fh:
        try:
            d = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    return model_from_dict(d, str(path))


def save_model(model: PomdpModel, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(model_to_dict(model), fh, sort_keys=False, default_flow_style=None, width=100)
