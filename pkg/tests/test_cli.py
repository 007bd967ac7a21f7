import csv
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from weakfeller.cli import main
from weakfeller.config import ConfigError, apply_overrides, parse_run_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """\
schema: weakfeller/run-v1
out: out
seed: 3
scenarios:
  - name: hmm2
    model: hmm2-gaussian
    control: positive
    beliefmdp: {resolutions: [2, 4, 8]}
  - name: ce
    model: counterexample
    control: negative
  - name: wander
    model: hmm2-gaussian
    base: {belief: random, action: 0.0}
    direction: random
    scales: [0.5, 0.25, 0.125, 0.0625]
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert main(["run", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "PASS hmm2 [positive]" in out and "PASS ce [negative]" in out
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["audit_ce.csv", "audit_hmm2.csv", "audit_wander.csv", "plot_ce.svg", "plot_hmm2.svg",
                     "plot_wander.svg", "values_hmm2.csv"]
    rows = list(csv.DictReader(open(tmp_path / "out" / "audit_hmm2.csv")))
    assert len(rows) == 8
    assert float(rows[-1]["eta_bl"]) < 0.05
    ce = list(csv.DictReader(open(tmp_path / "out" / "audit_ce.csv")))
    assert min(float(r["eta_bl"]) for r in ce) >= 0.1
    assert len(list(csv.DictReader(open(tmp_path / "out" / "audit_wander.csv")))) == 4
    values = list(csv.DictReader(open(tmp_path / "out" / "values_hmm2.csv")))
    assert [v["resolution"] for v in values] == ["2", "4", "8"]
    assert (tmp_path / "out" / "plot_hmm2.svg").read_text().startswith("<svg")


def test_runs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["run", str(cfg), "--out", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert main(["run", str(cfg), "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_seed_changes_random_scenarios(tmp_path):
    cfg = write(tmp_path, SMALL)
    main(["run", str(cfg), "--out", str(tmp_path / "a")])
    main(["run", str(cfg), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "audit_wander.csv").read_bytes() != (tmp_path / "b" / "audit_wander.csv").read_bytes()
    assert (tmp_path / "a" / "audit_hmm2.csv").read_bytes() == (tmp_path / "b" / "audit_hmm2.csv").read_bytes()


def test_failed_verdict_exits_one(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert main(["run", str(cfg), "--threshold-eta", "1e-6"]) == 1
    assert "FAIL hmm2" in capsys.readouterr().out


def test_empty_scenarios(tmp_path):
    cfg = write(tmp_path, "schema: weakfeller/run-v1\nout: nothing\nscenarios: []\n")
    assert main(["run", str(cfg)]) == 0
    assert not (tmp_path / "nothing").exists()


def test_validate(tmp_path, capsys):
    assert main(["validate", str(write(tmp_path, SMALL))]) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].startswith("OK ")
    assert "hmm2: model=hmm2-gaussian" in out


def test_validate_warns_on_many_observations(tmp_path, capsys):
    states = list(range(3))
    obs = list(range(20))
    model = tmp_path / "wide.yaml"
    model.write_text(f"""schema: weakfeller/model-v1
kind: additive
states: {states}
actions: [0.0]
observations: {obs}
dynamics: {{map: {{form: linear, a: 1.0}}, noise: {{kind: point}}}}
observation: {{map: {{form: affine, a: 1.0, c: 8.0}}, noise: {{kind: gaussian, scale: 2.0}}}}
""")
    cfg = write(tmp_path, """schema: weakfeller/run-v1
scenarios:
  - name: wide
    model: wide.yaml
    scales: [1.0, 0.5]
""")
    assert main(["validate", str(cfg)]) == 0
    assert "20 observations exceed the subset enumeration limit 16" in capsys.readouterr().out


def test_missing_model_file_is_named(tmp_path, capsys):
    cfg = write(tmp_path, "schema: weakfeller/run-v1\nscenarios:\n  - name: a\n    model: gone.yaml\n"
                          "    scales: [1.0]\n")
    assert main(["validate", str(cfg)]) != 0
    assert "gone.yaml" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "none.yaml")]) == 2
    assert "none.yaml" in capsys.readouterr().err


@pytest.mark.parametrize("text, where", [
    ("schema: weakfeller/run-v1\nseed: -1\n", ":2:7: seed"),
    ("schema: weakfeller/run-v1\nbogus: 1\n", ":2:1: bogus"),
    ("schema: weakfeller/run-v1\nscenarios:\n  - name: a\n    model: nothing-like-it\n", ":4:12: scenarios.0.model"),
    ("schema: weakfeller/run-v1\nscenarios:\n  - name: a\n    model: hmm2-gaussian\n    scales: [1.0]\n"
     "    actions: [1.0, 0.5]\n", ":6:"),
    ("schema: weakfeller/run-v1\nthresholds: {eta: -1}\n", ":2:19: thresholds.eta"),
    ("schema: weakfeller/run-v1\nscenarios:\n  - name: a\n    model: hmm2-gaussian\n  - name: a\n"
     "    model: counterexample\n", "duplicate"),
    ("schema: weakfeller/run-v1\nscenarios: [\n", "not valid YAML"),
    ("schema: other\n", "schema"),
])
def test_config_errors_point_at_the_field(text, where):
    with pytest.raises(ConfigError) as info:
        parse_run_config(text, "run.yaml")
    assert where in str(info.value)


def test_override_precedence():
    cfg = parse_run_config("schema: weakfeller/run-v1\nseed: 1\njobs: 3\nthresholds: {eta: 0.04}\n")
    assert apply_overrides(cfg, environ={}).seed == 1
    env = {"WEAKFELLER_SEED": "5", "WEAKFELLER_THRESHOLD_ETA": "0.2", "WEAKFELLER_OUT": "/tmp/x"}
    c = apply_overrides(cfg, environ=env)
    assert (c.seed, c.thresholds.eta, str(c.out), c.jobs) == (5, 0.2, "/tmp/x", 3)
    c = apply_overrides(cfg, seed=9, threshold_eta=0.01, environ=env)
    assert (c.seed, c.thresholds.eta) == (9, 0.01)
    with pytest.raises(ConfigError, match="WEAKFELLER_JOBS"):
        apply_overrides(cfg, environ={"WEAKFELLER_JOBS": "many"})
    with pytest.raises(ConfigError):
        apply_overrides(cfg, seed=2 ** 64, environ={})


def test_zoo_commands(capsys):
    assert main(["zoo", "list"]) == 0
    listing = capsys.readouterr().out
    assert len(listing.strip().splitlines()) >= 4 and "counterexample" in listing
    assert main(["zoo", "describe", "counterexample"]) == 0
    assert "discontinuous" in capsys.readouterr().out
    assert main(["zoo", "describe", "no-such-model"]) == 2
    assert "no-such-model" in capsys.readouterr().err


def test_shipped_configs_validate(tmp_path, capsys):
    for p in sorted(CONFIGS.glob("*.yaml")):
        assert main(["validate", str(p)]) == 0, p


def test_shipped_custom_config_runs(tmp_path):
    shutil.copytree(CONFIGS, tmp_path / "configs")
    assert main(["run", str(tmp_path / "configs" / "custom.yaml"), "--out", str(tmp_path / "o")]) == 0


def test_console_script_entry_point(tmp_path):
    cfg = write(tmp_path, "schema: weakfeller/run-v1\nscenarios: []\n")
    r = subprocess.run([sys.executable, "-m", "weakfeller.cli", "validate", str(cfg)], capture_output=True, text=True)
    assert r.returncode == 0 and "OK" in r.stdout
