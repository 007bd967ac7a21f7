"""Run configuration files.

A run file is YAML beginning with ``schema: weakfeller/run-v1``::

    schema: weakfeller/run-v1
    out: results
    seed: 0
    jobs: 1
    thresholds: {eta: 0.05, tv: 0.02}
    scenarios:
      - name: hmm2
        model: hmm2-gaussian        # built-in name, or a path to a model file
        control: positive           # positive, negative or none
        metric: bl                  # bl or rho
        audits: [eta, pred_tv, posterior, decomposition, condition_m]
        # optional: base, direction, scales, actions, family_size, beliefmdp

Errors carry the file, line and column of the offending field.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .audit import AUDITS, Thresholds

__all__ = ["RUN_SCHEMA", "ConfigError", "ScenarioConfig", "RunConfig", "load_run_config", "parse_run_config",
           "apply_overrides", "ENV_PREFIX"]

RUN_SCHEMA = "weakfeller/run-v1"
ENV_PREFIX = "WEAKFELLER_"
MODEL_SUFFIXES = (".yaml", ".yml")

TOP_KEYS = {"schema", "out", "seed", "jobs", "thresholds", "scenarios"}
SCENARIO_KEYS = {"name", "model", "control", "metric", "audits", "base", "direction", "scales", "actions",
                 "family_size", "beliefmdp"}
BELIEFMDP_KEYS = {"resolutions", "beta", "tolerance", "probe"}
THRESHOLD_KEYS = {f for f in Thresholds.__dataclass_fields__}


class ConfigError(ValueError):
    def __init__(self, message, source="<config>", mark=None, path=()):
        self.path = tuple(path)
        where = source
        if mark is not None:
            where += f":{mark.line + 1}:{mark.column + 1}"
        fld = ".".join(str(p) for p in self.path)
        super().__init__(f"{where}: {fld + ': ' if fld else ''}{message}")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model: str
    model_path: Path | None = None
    control: str = "none"
    metric: str = "bl"
    audits: tuple = AUDITS
    base_belief: object = None  # list of weights, "prior" or "random"
    base_action: float | None = None
    direction: object = None  # list of weights or "random"
    scales: tuple | None = None
    actions: tuple | None = None
    family_size: int | None = None
    beliefmdp: dict | None = None

    @property
    def preset(self) -> bool:
        return self.scales is None


@dataclass(frozen=True)
class RunConfig:
    source: str
    out: Path
    seed: int = 0
    jobs: int | None = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    scenarios: tuple = ()


class _Marks:
    """Source positions of every node in the parsed YAML, keyed by field path."""

    def __init__(self, root):
        self.marks = {}
        self.key_marks = {}
        self._walk(root, ())

    def _walk(self, node, path):
        self.marks[path] = node.start_mark
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self.key_marks[path + (k.value,)] = k.start_mark
                self._walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def get(self, path, key=False):
        path = tuple(path)
        if key and path in self.key_marks:
            return self.key_marks[path]
        while path not in self.marks and path:
            path = path[:-1]
        return self.marks.get(path)


class _Ctx:
    def __init__(self, source, marks):
        self.source = source
        self.marks = marks

    def error(self, message, path, key=False):
        return ConfigError(message, self.source, self.marks.get(path, key), path)

    def number(self, value, path, *, positive=False, integer=False, lo=None, hi=None):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"expected a number, got {value!r}", path)
        if integer and not float(value).is_integer():
            raise self.error(f"expected an integer, got {value!r}", path)
        if positive and not value > 0:
            raise self.error(f"must be positive, got {value!r}", path)
        if lo is not None and value < lo:
            raise self.error(f"must be at least {lo}, got {value!r}", path)
        if hi is not None and value > hi:
            raise self.error(f"must be at most {hi}, got {value!r}", path)
        return int(value) if integer else float(value)

    def numbers(self, value, path, **kw):
        if not isinstance(value, list) or not value:
            raise self.error("expected a nonempty list of numbers", path)
        return tuple(self.number(v, path + (i,), **kw) for i, v in enumerate(value))

    def keys(self, d, allowed, path):
        if not isinstance(d, dict):
            raise self.error("expected a mapping", path)
        for k in d:
            if k not in allowed:
                raise self.error(f"unknown field; expected one of {', '.join(sorted(allowed))}", path + (k,),
                                 key=True)


def _weights_or_word(ctx, value, path, words):
    if isinstance(value, str):
        if value not in words:
            raise ctx.error(f"expected a weight list or one of {words}, got {value!r}", path)
        return value
    return ctx.numbers(value, path, lo=0.0)


def _scenario(ctx, d, i, base_dir):
    path = ("scenarios", i)
    ctx.keys(d, SCENARIO_KEYS, path)
    if "model" not in d:
        raise ctx.error("missing field 'model'", path)
    model = d["model"]
    if not isinstance(model, str) or not model:
        raise ctx.error("expected a built-in model name or a model file path", path + ("model",))
    model_path = None
    if model.endswith(MODEL_SUFFIXES) or "/" in model:
        model_path = Path(model) if Path(model).is_absolute() else base_dir / model
        if not model_path.exists():
            raise ctx.error(f"model file not found: {model_path}", path + ("model",))
    else:
        from .zoo import ZOO
        if model not in ZOO:
            raise ctx.error(f"unknown built-in model {model!r}; try one of {', '.join(ZOO)}", path + ("model",))
    name = d.get("name", model_path.stem if model_path else model)
    if not isinstance(name, str) or not name or any(c in name for c in "/\\ "):
        raise ctx.error("name must be a nonempty string without spaces or slashes", path + ("name",))
    control = d.get("control", "none")
    if control not in ("positive", "negative", "none"):
        raise ctx.error(f"control must be positive, negative or none, got {control!r}", path + ("control",))
    metric = d.get("metric", "bl")
    if metric not in ("bl", "rho"):
        raise ctx.error(f"metric must be bl or rho, got {metric!r}", path + ("metric",))
    audits = d.get("audits", list(AUDITS))
    if not isinstance(audits, list):
        raise ctx.error("expected a list of audit names", path + ("audits",))
    for j, a in enumerate(audits):
        if a not in AUDITS:
            raise ctx.error(f"unknown audit {a!r}; expected one of {', '.join(AUDITS)}", path + ("audits", j))
    kw = {}
    base = d.get("base")
    if base is not None:
        ctx.keys(base, {"belief", "action"}, path + ("base",))
        if "belief" in base:
            kw["base_belief"] = _weights_or_word(ctx, base["belief"], path + ("base", "belief"),
                                                 ("prior", "random"))
        if "action" in base:
            kw["base_action"] = ctx.number(base["action"], path + ("base", "action"))
    if "direction" in d:
        kw["direction"] = _weights_or_word(ctx, d["direction"], path + ("direction",), ("random",))
    if "scales" in d:
        scales = ctx.numbers(d["scales"], path + ("scales",), positive=True)
        if any(b >= a for a, b in zip(scales, scales[1:])):
            raise ctx.error("scales must be strictly decreasing", path + ("scales",))
        kw["scales"] = scales
    if "actions" in d:
        kw["actions"] = ctx.numbers(d["actions"], path + ("actions",))
        if "scales" not in kw:
            raise ctx.error("actions need explicit scales", path + ("actions",))
        if len(kw["actions"]) != len(kw["scales"]):
            raise ctx.error("actions and scales differ in length", path + ("actions",))
    elif ("base" in d or "direction" in d) and "scales" not in kw:
        raise ctx.error("a custom base point or direction needs explicit scales", path)
    if model_path is not None and "scales" not in kw:
        raise ctx.error("scenarios on model files need explicit scales", path)
    if "family_size" in d:
        kw["family_size"] = ctx.number(d["family_size"], path + ("family_size",), integer=True, lo=1)
    if "beliefmdp" in d:
        b = d["beliefmdp"]
        bp = path + ("beliefmdp",)
        ctx.keys(b, BELIEFMDP_KEYS, bp)
        if "resolutions" not in b:
            raise ctx.error("missing field 'resolutions'", bp)
        res = ctx.numbers(b["resolutions"], bp + ("resolutions",), integer=True, lo=1)
        if any(y <= x for x, y in zip(res, res[1:])):
            raise ctx.error("resolutions must be strictly increasing", bp + ("resolutions",))
        kw["beliefmdp"] = {
            "resolutions": res,
            "beta": ctx.number(b.get("beta", 0.9), bp + ("beta",), positive=True, hi=1 - 1e-12),
            "tolerance": ctx.number(b.get("tolerance", 1e-8), bp + ("tolerance",), positive=True),
            "probe": None if b.get("probe") is None else ctx.numbers(b["probe"], bp + ("probe",), lo=0.0),
        }
    return ScenarioConfig(name=name, model=model, model_path=model_path, control=control, metric=metric,
                          audits=tuple(audits), **kw)


def parse_run_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    base_dir = Path(base_dir) if base_dir is not None else Path(".")
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML ({getattr(exc, 'problem', exc)})", source, mark) from exc
    ctx = _Ctx(source, _Marks(root) if root is not None else _Marks(yaml.MappingNode("", [])))
    if not isinstance(data, dict):
        raise ConfigError("a run file must be a mapping", source)
    if data.get("schema") != RUN_SCHEMA:
        raise ctx.error(f"schema must be {RUN_SCHEMA!r}, got {data.get('schema')!r}", ("schema",))
    ctx.keys(data, TOP_KEYS, ())
    out = data.get("out", "results")
    if not isinstance(out, str):
        raise ctx.error("expected a directory path", ("out",))
    seed = ctx.number(data.get("seed", 0), ("seed",), integer=True, lo=0, hi=2 ** 64 - 1)
    jobs = data.get("jobs")
    if jobs is not None:
        jobs = ctx.number(jobs, ("jobs",), integer=True, lo=1)
    th = data.get("thresholds", {}) or {}
    ctx.keys(th, THRESHOLD_KEYS, ("thresholds",))
    thresholds = Thresholds(**{k: ctx.number(v, ("thresholds", k), lo=0.0) for k, v in th.items()})
    scen = data.get("scenarios", []) or []
    if not isinstance(scen, list):
        raise ctx.error("expected a list of scenarios", ("scenarios",))
    scenarios = tuple(_scenario(ctx, s, i, base_dir) for i, s in enumerate(scen))
    seen = set()
    for i, s in enumerate(scenarios):
        if s.name in seen:
            raise ctx.error(f"duplicate scenario name {s.name!r}", ("scenarios", i, "name"))
        seen.add(s.name)
    out_path = Path(out) if Path(out).is_absolute() else base_dir / out
    return RunConfig(source=source, out=out_path, seed=seed, jobs=jobs, thresholds=thresholds,
                     scenarios=scenarios)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", str(path))
    return parse_run_config(path.read_text(), str(path), path.parent)


def apply_overrides(cfg: RunConfig, *, out=None, seed=None, jobs=None, threshold_eta=None,
                    threshold_tv=None, environ=None) -> RunConfig:
    """Command-line values win over ``WEAKFELLER_*`` environment variables, which win over the file."""
    env = os.environ if environ is None else environ

    def pick(flag, var, conv):
        if flag is not None:
            return flag
        raw = env.get(ENV_PREFIX + var)
        if raw is None or raw == "":
            return None
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value {raw!r} for {ENV_PREFIX + var}", "environment") from exc

    out = pick(out, "OUT", str)
    seed = pick(seed, "SEED", int)
    jobs = pick(jobs, "JOBS", int)
    t_eta = pick(threshold_eta, "THRESHOLD_ETA", float)
    t_tv = pick(threshold_tv, "THRESHOLD_TV", float)
    th = cfg.thresholds
    if t_eta is not None:
        th = replace(th, eta=t_eta)
    if t_tv is not None:
        th = replace(th, tv=t_tv)
    if seed is not None and not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer", "arguments")
    if jobs is not None and jobs < 1:
        raise ConfigError("jobs must be at least 1", "arguments")
    return replace(cfg, out=Path(out) if out is not None else cfg.out,
                   seed=cfg.seed if seed is None else seed,
                   jobs=cfg.jobs if jobs is None else jobs, thresholds=th)
