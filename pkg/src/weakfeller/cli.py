"""Command-line experiment runner.

    weakfeller run <config> [--out DIR] [--seed N] [--jobs N] [--threshold-eta X] [--threshold-tv X]
    weakfeller validate <config>
    weakfeller zoo list
    weakfeller zoo describe <name>

``run`` exits 0 exactly when every positive control converges and every
negative control stays above its floors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import zoo
from .audit import ENUMERATION_LIMIT, CapabilityError, InvariantViolation, make_scenario, run_audits
from .beliefmdp import refinement_study
from .config import ConfigError, RunConfig, ScenarioConfig, apply_overrides, load_run_config
from .measures import default_test_family
from .models import ConfigurationError
from .modelio import load_model
from .report import audit_csv, modulus_svg, values_csv

__all__ = ["main", "run_config", "build_scenario", "ScenarioError"]

log = logging.getLogger("weakfeller")

EXIT_OK, EXIT_VERDICT, EXIT_ERROR = 0, 1, 2


class ScenarioError(RuntimeError):
    def __init__(self, name, exc):
        self.name = name
        super().__init__(f"scenario {name!r}: {type(exc).__name__}: {exc}")


def _model_for(sc: ScenarioConfig):
    if sc.model_path is not None:
        return load_model(sc.model_path)
    return zoo.get_model(sc.model)


def _action_index(model, value, what):
    pts = np.asarray(model.actions.points, dtype=float)
    hit = np.flatnonzero(pts == float(value))
    if hit.size == 0:
        raise ConfigurationError(f"{what} {value!r} is not on the action grid {pts.tolist()}")
    return int(hit[0])


def _weights(model, entry, rng, what):
    if entry is None or (isinstance(entry, str) and entry == "prior"):
        return model.prior.weights
    if isinstance(entry, str) and entry == "random":
        return rng.dirichlet(np.ones(model.n_states))
    w = np.asarray(entry, dtype=float)
    if w.size != model.n_states:
        raise ConfigurationError(f"{what} has {w.size} weights for {model.n_states} states")
    return w


def build_scenario(sc: ScenarioConfig, seed: int, index: int, model=None):
    """Realize a configured scenario. Random beliefs draw from a generator seeded by ``(seed, index)``."""
    model = _model_for(sc) if model is None else model
    if sc.preset:
        if sc.model_path is not None:
            raise ConfigurationError("scenarios on model files need explicit scales")
        return zoo.preset_scenario(sc.model, model, metric=sc.metric, family_size=sc.family_size,
                                   control=sc.control)
    rng = np.random.default_rng([seed, index])
    z = model.belief(_weights(model, sc.base_belief, rng, "base belief"))
    u = 0 if sc.base_action is None else _action_index(model, sc.base_action, "base action")
    direction = None
    if sc.direction is not None:
        direction = _weights(model, sc.direction, rng, "direction")
    actions = None
    if sc.actions is not None:
        actions = [_action_index(model, a, "sequence action") for a in sc.actions]
    fam = None
    if sc.metric == "rho" or sc.family_size:
        fam = default_test_family(model.states, sc.family_size or 32)
    return make_scenario(model, z, u, sc.scales, direction=direction, actions=actions, metric=sc.metric,
                         family=fam, name=sc.name, control=sc.control)


def _evaluate(args):
    """Worker: run one scenario and return its serialized artifacts."""
    sc, seed, index, thresholds = args
    try:
        model = _model_for(sc)
        scenario = build_scenario(sc, seed, index, model)
        fam = scenario.family
        if fam is None and sc.family_size:
            fam = default_test_family(model.states, sc.family_size)
        rep = run_audits(scenario, sc.audits, thresholds, family=fam)
        rows = list(rep.rows())
        values = None
        if sc.beliefmdp is not None:
            b = sc.beliefmdp
            table = refinement_study(model, b["resolutions"], b["beta"], b["tolerance"], b["probe"])
            values = values_csv(asdict(r) for r in table)
        lines = {"eta_bl": thresholds.eta, "pred_tv": thresholds.tv}
        if sc.control == "negative":
            lines = {"eta_bl floor": thresholds.eta_floor, "pred_tv floor": thresholds.tv_floor}
        svg = modulus_svg(f"{sc.name} ({sc.control} control, {rep.metric})", rows,
                          {k: v for k, v in lines.items() if v > 0})
        return {"name": sc.name, "control": sc.control, "verdict": rep.verdict, "checks": rep.checks,
                "audit": audit_csv(rows), "values": values, "svg": svg, "error": None}
    except (CapabilityError, InvariantViolation, ConfigurationError, ValueError, ArithmeticError,
            FileNotFoundError) as exc:
        return {"name": sc.name, "error": str(ScenarioError(sc.name, exc))}


def run_config(cfg: RunConfig, out=None, err=None) -> int:
    """Run every scenario and write artifacts; returns the exit status."""
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    if not cfg.scenarios:
        print("no scenarios; nothing to do", file=out)
        return EXIT_OK
    jobs = cfg.jobs or os.cpu_count() or 1
    jobs = max(1, min(jobs, len(cfg.scenarios)))
    tasks = [(sc, cfg.seed, i, cfg.thresholds) for i, sc in enumerate(cfg.scenarios)]
    if jobs == 1:
        results = [_evaluate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate, tasks))
    # single writer, in configuration order
    cfg.out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for r in results:
        if r["error"]:
            print(f"error: {r['error']}", file=err)
            status = EXIT_ERROR
            continue
        (cfg.out / f"audit_{r['name']}.csv").write_text(r["audit"])
        (cfg.out / f"plot_{r['name']}.svg").write_text(r["svg"])
        if r["values"] is not None:
            (cfg.out / f"values_{r['name']}.csv").write_text(r["values"])
        checks = ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in r["checks"].items())
        word = "PASS" if r["verdict"] else "FAIL"
        print(f"{word} {r['name']} [{r['control']}] {checks}", file=out)
        if not r["verdict"] and status == EXIT_OK:
            status = EXIT_VERDICT
    print(f"artifacts in {cfg.out}", file=out)
    return status


def validate_config(cfg: RunConfig, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    status = EXIT_OK
    for sc in cfg.scenarios:
        try:
            model = _model_for(sc)
        except (ConfigurationError, FileNotFoundError, ValueError) as exc:
            print(f"error: scenario {sc.name!r}: {exc}", file=err)
            status = EXIT_ERROR
            continue
        seq = "preset sequence" if sc.preset else f"{len(sc.scales)} scales"
        print(f"  {sc.name}: model={sc.model} control={sc.control} metric={sc.metric} {seq}; "
              f"audits: {', '.join(sc.audits)}"
              + ("; beliefmdp refinement" if sc.beliefmdp else ""), file=out)
        if "condition_m" in sc.audits and model.n_observations > ENUMERATION_LIMIT:
            print(f"  warning: {sc.name}: {model.n_observations} observations exceed the subset "
                  f"enumeration limit {ENUMERATION_LIMIT}; condition_m uses the exact "
                  f"positive/negative-part supremum instead of enumerating events", file=out)
    if status == EXIT_OK:
        print(f"OK {cfg.source}: {len(cfg.scenarios)} scenario(s)", file=out)
    return status


def _parser():
    p = argparse.ArgumentParser(prog="weakfeller",
                                description="Filter-kernel continuity audits on finite partially observed models.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the scenarios of a config file")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--seed", type=int, help="unsigned 64-bit seed for random base points")
    r.add_argument("--jobs", type=int, help="worker processes (default: available CPUs)")
    r.add_argument("--threshold-eta", type=float, help="eta distance threshold for positive controls")
    r.add_argument("--threshold-tv", type=float, help="predictor TV threshold for positive controls")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    z = sub.add_parser("zoo", help="built-in models")
    zs = z.add_subparsers(dest="zoo_command", required=True)
    zs.add_parser("list", help="list built-in models")
    d = zs.add_parser("describe", help="describe one built-in model")
    d.add_argument("name")
    p.add_argument("-v", "--verbose", action="store_true", help="show model construction warnings")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "zoo":
            if args.zoo_command == "list":
                for name in zoo.names():
                    e = zoo.ZOO[name]
                    print(f"{name:24s} {e.control:9s} {e.summary}")
                return EXIT_OK
            if args.name not in zoo.ZOO:
                print(f"error: unknown built-in model {args.name!r}; try one of {', '.join(zoo.names())}",
                      file=sys.stderr)
                return EXIT_ERROR
            print(zoo.describe(args.name))
            return EXIT_OK
        cfg = load_run_config(args.config)
        if args.command == "validate":
            return validate_config(cfg)
        cfg = apply_overrides(cfg, out=args.out, seed=args.seed, jobs=args.jobs,
                              threshold_eta=args.threshold_eta, threshold_tv=args.threshold_tv)
        return run_config(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
