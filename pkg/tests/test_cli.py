import csv
import dataclasses
import json

import pytest
import yaml

from rwdre import cli
from rwdre.cli import (CSV_COLUMNS, REGISTRY, ExperimentConfig, apply_overrides, list_experiments,
                       main, run_experiment, split_overrides)
from rwdre.errors import InvariantViolation, ParameterError
from rwdre.models import MODELS, BlindModel, make_model

REQUIRED = ("speed", "bracket", "trapped_census", "threatened_census", "mixing_profile",
            "counterexample_fluct", "counterexample_touch")


def test_make_model():
    assert make_model("blind") == BlindModel()
    assert make_model({"name": "spinflip", "nu": 2.0}).params == {"nu": 2.0, "rho": 0.5}
    m = make_model("east")
    assert make_model(m) is m
    assert set(MODELS) == {"blind", "spinflip", "contact", "east", "renewal", "counterexample"}
    with pytest.raises(ParameterError):
        make_model("ising")
    with pytest.raises(ParameterError):
        make_model("spinflip", beta=1)
    with pytest.raises(ParameterError):
        make_model("spinflip", rho=1.0)
    with pytest.raises(ParameterError):
        make_model("east", clock_coupling="both")


def test_model_simulate_is_seeded():
    m = make_model("spinflip")
    e1, _ = m.simulate((-5, 5), 10.0, 3)
    e2, _ = m.simulate((-5, 5), 10.0, 3)
    assert all(e1.site_events(x)[0] == e2.site_events(x)[0] for x in range(-5, 6))
    assert all((e1.site_events(x)[1] == e2.site_events(x)[1]).all() for x in range(-5, 6))


def test_registry_listing():
    names = [e["name"] for e in list_experiments()]
    assert names == sorted(names)
    assert set(REQUIRED) <= set(names)
    assert all(e["reproduces"] for e in list_experiments())


def test_config_roundtrip_and_hash():
    cfg = REGISTRY["bracket"].default_config(seed=4, out="x")
    again = ExperimentConfig.loads(cfg.dumps())
    assert again == cfg
    assert again.param_hash == cfg.param_hash
    assert len(cfg.param_hash) == 16
    other = apply_overrides(cfg, [("seed", "9"), ("out", "y")])
    assert other.param_hash == cfg.param_hash
    assert apply_overrides(cfg, [("theta", "0.1")]).param_hash != cfg.param_hash


def test_config_rejects_bad_input():
    for text in ("[1, 2]", "experiment: speed\nfoo: 1", "model: {}", "experiment: speed\nseed: -1",
                 "experiment: speed\nreplicas: many", "a: [", "experiment: speed\nparams: 3"):
        with pytest.raises(ParameterError):
            ExperimentConfig.loads(text)


def test_overrides():
    cfg = REGISTRY["speed"].default_config()
    cfg = apply_overrides(cfg, [("T", "1e3"), ("model.value", "1"), ("rule.preset", "right"),
                                ("replicas", "7")])
    assert cfg.params["T"] == 1000.0
    assert cfg.model == {"name": "blind", "value": 1}
    assert cfg.rule == {"preset": "right"}
    assert cfg.replicas == 7
    rest, pairs = split_overrides(["-q", "run", "--experiment", "speed", "--T", "5",
                                   "--seed", "2"])
    assert rest == ["-q", "run", "--experiment", "speed", "--seed", "2"]
    assert pairs == [("T", "5")]


def test_blind_zero_speed_row(tmp_path):
    cfg = REGISTRY["speed"].default_config(out=str(tmp_path))
    cfg = apply_overrides(cfg, [("replicas", "50"), ("T", "20")])
    (row,) = run_experiment(cfg)
    assert row["estimate"] == 0.0 and row["half_width"] == 0.0
    assert list(row) == list(CSV_COLUMNS)
    (entry,) = [json.loads(s) for s in (tmp_path / "manifest.jsonl").read_text().splitlines()]
    assert entry["param_hash"] == cfg.param_hash and entry["rows"] == 1


def test_rows_reproducible(tmp_path):
    cfg = apply_overrides(REGISTRY["speed"].default_config(out=str(tmp_path)),
                          [("replicas", "40"), ("T", "30"), ("rule.preset", "blind")])
    run_experiment(cfg)
    run_experiment(cfg)
    with open(tmp_path / "speed.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    for r in rows:
        del r["wall_ms"]
    assert rows[0] == rows[1]
    assert rows[0]["estimate"] != "0.0"


def test_main_commands(tmp_path, capsys):
    assert main(["list", "--json"]) == 0
    listing = json.loads(capsys.readouterr().out)
    assert [e["name"] for e in listing] == sorted(REGISTRY)
    assert main(["config", "speed"]) == 0
    text = capsys.readouterr().out
    assert yaml.safe_load(text)["experiment"] == "speed"
    path = tmp_path / "speed.yaml"
    path.write_text(text)
    out = tmp_path / "res"
    code = main(["-q", "run", str(path), "--replicas", "20", "--out", str(out), "--T", "10"])
    assert code == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0] == ",".join(CSV_COLUMNS)
    assert (out / "speed.csv").exists()
    assert main(["-q", "run", "--experiment", "ladder", "--dry-run", "--out", str(out)]) == 0


@pytest.mark.parametrize("argv", [["run", "--experiment", "nope"], ["config", "nope"],
                                  ["run", "--experiment", "speed", "--bogus", "1"],
                                  ["run", "/no/such/file.yaml"], ["list", "--x", "1"],
                                  ["run", "--experiment", "speed", "--rule.preset", "nope"]])
def test_exit_config_error(argv, tmp_path):
    assert main(["-q"] + argv + ["--out", str(tmp_path)] if argv[0] == "run" else ["-q"] + argv) \
        == 2


def test_exit_statistics(tmp_path):
    argv = ["-q", "run", "--experiment", "mixing_profile", "--replicas", "1",
            "--out", str(tmp_path)]
    assert main(argv) == 3


def test_exit_invariant(tmp_path, monkeypatch):
    def broken(*a):
        raise InvariantViolation("walkers crossed")

    monkeypatch.setitem(REGISTRY, "ladder", dataclasses.replace(REGISTRY["ladder"], run=broken))
    assert main(["-q", "run", "--experiment", "ladder", "--out", str(tmp_path)]) == 4
