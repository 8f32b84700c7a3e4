"""Experiment runner.

A run is described by an :class:`ExperimentConfig` (YAML on disk) naming a
registered experiment, a model, a walker rule, experiment parameters, a
replica count and a master seed. Results are appended to
``<out>/<experiment>.csv`` and every run adds one line to
``<out>/manifest.jsonl``.

Exit codes: 0 ok, 2 configuration error, 3 statistical-validity error,
4 invariant violation.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import yaml

from . import __version__
from .errors import (InvariantViolation, ParameterError, StatisticalValidityError,
                     TruncationError)

log = logging.getLogger("rwdre")

CSV_COLUMNS = ("experiment", "model", "param_hash", "key1", "key2", "estimate", "half_width",
               "replicas", "discards", "seed", "wall_ms")
MANIFEST = "manifest.jsonl"
EXIT_OK, EXIT_CONFIG, EXIT_STATISTICS, EXIT_INVARIANT = 0, 2, 3, 4
CONFIG_KEYS = ("experiment", "model", "rule", "params", "replicas", "seed", "out")


def _plain(v):
    """Nested tuples and numpy scalars as plain lists and numbers."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def canonical_json(obj):
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)


@dataclass
class ExperimentConfig:
    experiment: str
    model: dict = field(default_factory=dict)
    rule: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    replicas: int = 100
    seed: int = 0
    out: str = "results"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ParameterError("config must be a mapping")
        unknown = set(d) - set(CONFIG_KEYS)
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in d:
            raise ParameterError("config needs an 'experiment' key")
        for k in ("model", "rule", "params"):
            if d.get(k) is not None and not isinstance(d[k], dict):
                raise ParameterError(f"'{k}' must be a mapping")
        try:
            replicas = int(d.get("replicas", 100))
            seed = int(d.get("seed", 0))
        except (TypeError, ValueError):
            raise ParameterError("replicas and seed must be integers") from None
        if replicas < 1 or seed < 0:
            raise ParameterError("need replicas >= 1 and seed >= 0")
        return cls(str(d["experiment"]), _plain(d.get("model") or {}),
                   _plain(d.get("rule") or {}), _plain(d.get("params") or {}), replicas, seed,
                   str(d.get("out", "results")))

    def to_dict(self):
        return {"experiment": self.experiment, "model": copy.deepcopy(self.model),
                "rule": copy.deepcopy(self.rule), "params": copy.deepcopy(self.params),
                "replicas": self.replicas, "seed": self.seed, "out": self.out}

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    @classmethod
    def loads(cls, text):
        try:
            return cls.from_dict(yaml.safe_load(text))
        except yaml.YAMLError as e:
            raise ParameterError(f"invalid YAML: {e}") from None

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())

    @property
    def param_hash(self):
        """First 16 hex digits of the SHA-256 of the canonical JSON of
        everything but the seed and the output directory."""
        d = self.to_dict()
        del d["seed"], d["out"]
        return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:16]


# results rows: (key1, key2, estimate, half_width, replicas, discards)


def _est_row(k1, k2, est):
    return (k1, k2, est.point, est.half_width, est.replicas, est.discards)


def _as_floats(v, name):
    try:
        return [float(x) for x in (v if isinstance(v, (list, tuple)) else [v])]
    except (TypeError, ValueError):
        raise ParameterError(f"'{name}' must be a number or a list of numbers") from None


def _grid(spec, name):
    """A list of numbers, or ``{lo, hi, n}`` for an evenly spaced grid."""
    if isinstance(spec, dict):
        try:
            lo, hi, n = float(spec["lo"]), float(spec["hi"]), int(spec["n"])
        except (KeyError, TypeError, ValueError):
            raise ParameterError(f"'{name}' needs numeric lo, hi and n") from None
        return [float(x) for x in np.round(np.linspace(lo, hi, n), 12)]
    return _as_floats(spec, name)


def _run_speed(cfg, model, rule, p, workers):
    from .renormalization import estimate_speed

    est = estimate_speed(model, rule, float(p["T"]), cfg.replicas, cfg.seed, p["level"], workers)
    return [_est_row(float(p["T"]), "mean_speed", est)]


def _run_bracket(cfg, model, rule, p, workers):
    from .renormalization import bracket_speeds

    b = bracket_speeds(model, rule, _as_floats(p["H_grid"], "H_grid"),
                       _grid(p["v_grid"], "v_grid"), float(p["theta"]), cfg.replicas, cfg.seed, workers, p["level"])
    rows = []
    nan = float("nan")
    for i, H in enumerate(b.H):
        d = b.discards[i]
        for key, v in (("v_plus", b.v_plus[i]), ("v_minus", b.v_minus[i])):
            rows.append((H, key, nan if v is None else v, b.step, cfg.replicas, d))
        rows.append((H, "width", b.width(i), 2 * b.step, cfg.replicas, d))
    return rows


def _run_trapped(cfg, model, rule, p, workers):
    from .renormalization import trapped_probability

    est = trapped_probability(model, rule, float(p["H"]), float(p["delta"]), float(p["v_minus"]),
                              cfg.replicas, cfg.seed, p["level"], workers)
    return [_est_row(float(p["H"]), f"delta={p['delta']}", est)]


def _run_threatened(cfg, model, rule, p, workers):
    from .renormalization import threatened_probability

    est = threatened_probability(model, rule, float(p["H"]), float(p["delta"]),
                                 float(p["v_minus"]), float(p["v_plus"]), int(p["r"]),
                                 cfg.replicas, cfg.seed, p["level"], workers)
    return [_est_row(float(p["H"]), f"r={int(p['r'])}", est)]


def _run_mixing(cfg, model, rule, p, workers):
    from .mixing import PairTemplate, covariance_decay_profile

    tmpl = p["template"]
    if not isinstance(tmpl, dict):
        raise ParameterError("'template' must be a mapping")
    try:
        template = PairTemplate(**tmpl)
    except TypeError as e:
        raise ParameterError(f"bad template: {e}") from None
    fit = covariance_decay_profile(model, template, _as_floats(p["r_list"], "r_list"),
                                   cfg.replicas, cfg.seed, p["level"], p["fit_model"],
                                   int(p["pad"]), workers)
    rows = [_est_row(r, "covariance", e) for r, e in zip(fit.r.tolist(), fit.estimates_ci)]
    rows.append(("fit", fit.model or fit.outcome, fit.alpha_hat, float("nan"), cfg.replicas, 0))
    return rows


def _run_fluct(cfg, model, rule, p, workers):
    from .counterexample import fluctuation_experiment

    force = model.params["force"]
    out = fluctuation_experiment(model.params["L0"], [int(s) for s in p["scales"]], cfg.replicas,
                                 cfg.seed, model.params["k_max"], force, bool(p["baseline"]),
                                 p["level"], workers)
    rows = []
    for r in out:
        rows.append(_est_row(r["L"], f"{r['walker']}:right", r["p_right"]))
        rows.append(_est_row(r["L"], f"{r['walker']}:left", r["p_left"]))
    return rows


def _run_touch(cfg, model, rule, p, workers):
    from .counterexample import soup_covariance_check

    fit, out = soup_covariance_check(model.params["L0"], _as_floats(p["r_list"], "r_list"),
                                     float(p["a"]), cfg.replicas, cfg.seed,
                                     model.params["k_max"], p["level"], workers=workers)
    rows = []
    for r in out:
        rows.append(_est_row(r["r"], "touch", r["estimate"]))
        rows.append((r["r"], "union_bound", r["bound"], 0.0, cfg.replicas, 0))
    rows.append(("fit", fit.model or fit.outcome, fit.alpha_hat, float("nan"), cfg.replicas, 0))
    return rows


def _run_concentration(cfg, model, rule, p, workers):
    from .renormalization import concentration_diagnostic

    v_hat = None if p["v_hat"] is None else float(p["v_hat"])
    tab = concentration_diagnostic(model, rule, _as_floats(p["t_grid"], "t_grid"),
                                   float(p["eps"]), cfg.replicas, cfg.seed, v_hat, p["level"],
                                   workers)
    return [_est_row(t, f"eps={tab.eps}", e) for t, e in tab.rows]


def _east_runner(kind):
    def run(cfg, model, rule, p, workers):
        from .environments.east import east_speed

        est = east_speed(kind, model.params["rho"], float(p["T"]), cfg.replicas, cfg.seed,
                         p["level"], workers)
        return [_est_row(float(p["T"]), f"{kind}_speed", est)]
    return run


def _run_envelope(cfg, model, rule, p, workers):
    from .walker import envelope_tail

    return [_est_row(T, f"reach>={p['factor']}T",
                     envelope_tail(T, cfg.replicas, cfg.seed, float(p["factor"]), p["level"],
                                   workers))
            for T in _as_floats(p["T_grid"], "T_grid")]


def _run_ladder(cfg, model, rule, p, workers):
    from .renormalization import build_ladder

    lad = build_ladder(p["variant"], int(float(p["L0"])), int(p["k_max"]))
    lad.check()
    rows = []
    for k, (L, ell) in enumerate(lad.entries):
        rows.append((k, "L", int(L), 0.0, 1, 0))
        rows.append((k, "l", int(ell), 0.0, 1, 0))
    return rows


@dataclass(frozen=True)
class Experiment:
    name: str
    reproduces: str
    run: Callable
    params: dict
    model: dict
    rule: Optional[dict] = None
    replicas: int = 100

    def default_config(self, seed=0, out="results"):
        return ExperimentConfig(self.name, dict(self.model),
                                {} if self.rule is None else dict(self.rule),
                                copy.deepcopy(self.params), self.replicas, seed, out)

    def listing(self):
        return {"name": self.name, "reproduces": self.reproduces,
                "model": self.model, "rule": self.rule, "params": self.params,
                "replicas": self.replicas}


_FAIR = {"preset": "blind"}
_REGISTRY = [
    Experiment("speed", "law of large numbers: mean displacement per unit time",
               _run_speed, {"T": 100.0, "level": 0.95}, {"name": "blind"}, {"preset": "zero"}),
    Experiment("bracket", "speed bracket from the deviation probabilities p_H and p~_H "
               "on a speed grid", _run_bracket,
               {"H_grid": [100, 400], "v_grid": {"lo": -1.0, "hi": 1.0, "n": 21},
                "theta": 0.05, "level": 0.95}, {"name": "blind"}, _FAIR, 1000),
    Experiment("trapped_census", "frequency of trapped space-time points", _run_trapped,
               {"H": 100.0, "delta": 0.1, "v_minus": -0.3, "level": 0.95},
               {"name": "spinflip"}, {"preset": "occupation_bias"}),
    Experiment("threatened_census", "frequency of threatened space-time points",
               _run_threatened,
               {"H": 100.0, "delta": 0.1, "v_minus": -0.3, "v_plus": 0.3, "r": 2,
                "level": 0.95}, {"name": "spinflip"}, {"preset": "occupation_bias"}),
    Experiment("mixing_profile", "time decay of environment covariances between boxes",
               _run_mixing,
               {"template": {"kind": "point"}, "r_list": [0.5, 1.0, 2.0, 4.0],
                "fit_model": "auto", "pad": 0, "level": 0.95},
               {"name": "spinflip"}, None, 100000),
    Experiment("counterexample_fluct", "non-concentration of the drift walker on the "
               "rectangle soup, with a spin-flip contrast", _run_fluct,
               {"scales": [0, 1], "baseline": True, "level": 0.95},
               {"name": "counterexample"}, None, 500),
    Experiment("counterexample_touch", "decoupling of the rectangle soup: probability that "
               "one rectangle touches two boxes, against the union bound", _run_touch,
               {"r_list": [100, 1000, 10000], "a": 0.5, "level": 0.95},
               {"name": "counterexample"}, None, 10000),
    Experiment("concentration", "decay in t of the deviation probability of X_t / t",
               _run_concentration, {"t_grid": [10, 100, 1000], "eps": 0.2, "v_hat": 1.0,
                                    "level": 0.95},
               {"name": "blind"}, {"preset": "right"}, 10000),
    Experiment("east_zero", "positive speed of the distinguished zero in the East model",
               _east_runner("zero"), {"T": 5000.0, "level": 0.99}, {"name": "east"}, None, 200),
    Experiment("east_front", "negative speed of the East model front",
               _east_runner("front"), {"T": 5000.0, "level": 0.99}, {"name": "east"}, None, 200),
    Experiment("envelope", "light-cone bound on allowed paths", _run_envelope,
               {"T_grid": [5, 10, 20], "factor": 2.0, "level": 0.95}, {"name": "blind"}, None,
               10000),
    Experiment("ladder", "scale ladder recursion and its sandwich bounds", _run_ladder,
               {"variant": "counterexample", "L0": 100000, "k_max": 2}, {"name": "blind"}, None,
               1),
]
REGISTRY = {e.name: e for e in sorted(_REGISTRY, key=lambda e: e.name)}


def list_experiments():
    """Registry entries sorted by name."""
    return [REGISTRY[k].listing() for k in sorted(REGISTRY)]


def _make_rule(spec):
    from .walker import JumpRule

    spec = dict(spec)
    if "preset" in spec:
        name = spec.pop("preset")
        try:
            return JumpRule.preset(name, **spec)
        except TypeError as e:
            raise ParameterError(f"bad rule parameters: {e}") from None
    if "table" in spec:
        try:
            return JumpRule(int(spec.get("ell", 0)), spec["table"], int(spec.get("alphabet", 2)),
                            name=str(spec.get("name", "table")))
        except (TypeError, ValueError) as e:
            raise ParameterError(f"bad rule table: {e}") from None
    raise ParameterError("rule needs 'preset' or 'table'")


def resolve(cfg: ExperimentConfig):
    """``(experiment, model, rule, params)`` with defaults filled in."""
    from .models import make_model

    if cfg.experiment not in REGISTRY:
        raise ParameterError(f"unknown experiment {cfg.experiment!r}; known: {sorted(REGISTRY)}")
    exp = REGISTRY[cfg.experiment]
    unknown = set(cfg.params) - set(exp.params)
    if unknown:
        raise ParameterError(f"unknown parameters for {exp.name}: {sorted(unknown)}")
    params = {**copy.deepcopy(exp.params), **cfg.params}
    mspec = cfg.model or exp.model
    if "name" not in mspec:
        mspec = {**exp.model, **mspec}
    model = make_model(mspec)
    rspec = cfg.rule or exp.rule
    rule = None if rspec is None else _make_rule(rspec)
    if exp.rule is not None and rule is None:
        raise ParameterError(f"{exp.name} needs a walker rule")
    return exp, model, rule, params


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_rows(path, rows):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])


def run_experiment(cfg: ExperimentConfig, workers=None, write=True):
    """Run one configured experiment; returns the result rows as dicts
    keyed by :data:`CSV_COLUMNS`. With ``write`` they are appended to the
    experiment's CSV and the run is recorded in the manifest."""
    exp, model, rule, params = resolve(cfg)
    h = cfg.param_hash
    log.info("%s: %d replicas, seed %d, hash %s", exp.name, cfg.replicas, cfg.seed, h)
    t0 = time.perf_counter()
    raw = exp.run(cfg, model, rule, params, workers)
    wall = int(round(1000 * (time.perf_counter() - t0)))
    log.info("%s: %d rows in %d ms", exp.name, len(raw), wall)
    rows = [dict(zip(CSV_COLUMNS, (exp.name, model.name, h, k1, k2, float(est), float(hw),
                                   int(n), int(d), cfg.seed, wall)))
            for k1, k2, est, hw, n, d in raw]
    if write:
        os.makedirs(cfg.out, exist_ok=True)
        append_rows(os.path.join(cfg.out, f"{exp.name}.csv"), rows)
        entry = {"experiment": exp.name, "param_hash": h, "seed": cfg.seed,
                 "replicas": cfg.replicas, "rows": len(rows), "wall_ms": wall,
                 "version": __version__, "config": cfg.to_dict(),
                 "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
        with open(os.path.join(cfg.out, MANIFEST), "a") as fh:
            fh.write(canonical_json(entry) + "\n")
    return rows


def _set_path(d, path, value):
    keys = path.split(".")
    for k in keys[:-1]:
        nxt = d.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ParameterError(f"cannot set {path}: {k} is not a mapping")
        d = nxt
    d[keys[-1]] = value


def _parse_value(text):
    try:
        v = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    if isinstance(v, str):
        # YAML 1.1 reads 1e5 as a string
        try:
            return float(v)
        except ValueError:
            return v
    return v


def apply_overrides(cfg: ExperimentConfig, pairs):
    """``[(key, text)]`` overrides. Dotted keys address nested entries;
    a bare key that is not a top-level field goes into ``params``."""
    d = cfg.to_dict()
    for key, text in pairs:
        value = _parse_value(text)
        if "." not in key and key not in CONFIG_KEYS:
            key = f"params.{key}"
        _set_path(d, key, value)
    return ExperimentConfig.from_dict(d)


_RUN_FLAGS = {"--experiment": True, "--seed": True, "--replicas": True, "--out": True,
              "--workers": True, "--dry-run": False, "-q": False, "--quiet": False,
              "-h": False, "--help": False}


def split_overrides(argv):
    """Separate ``--key value`` config overrides from the runner's own
    flags; returns ``(argv_rest, [(key, text)])``. Only tokens after the
    ``run`` subcommand are considered."""
    if "run" not in argv:
        return list(argv), []
    start = argv.index("run") + 1
    rest, pairs = list(argv[:start]), []
    i = start
    while i < len(argv):
        tok = argv[i]
        name = tok.split("=", 1)[0]
        if not tok.startswith("--") or name in _RUN_FLAGS or len(tok) == 2:
            rest.append(tok)
            takes = _RUN_FLAGS.get(name, False) and "=" not in tok
            if takes and i + 1 < len(argv):
                rest.append(argv[i + 1])
                i += 1
            i += 1
            continue
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        elif i + 1 < len(argv):
            val = argv[i + 1]
            i += 2
        else:
            raise ParameterError(f"{tok} needs a value")
        pairs.append((key.replace("-", "_"), val))
    return rest, pairs


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    ap = argparse.ArgumentParser(prog="rwdre", parents=[common],
                                 description="Random walks in dynamical random environments: "
                                 "experiment runner.")
    sub = ap.add_subparsers(dest="command", required=True)
    ls = sub.add_parser("list", parents=[common], help="registered experiments")
    ls.add_argument("--json", action="store_true", help="machine-readable listing")
    cf = sub.add_parser("config", parents=[common], help="print the default config of an experiment")
    cf.add_argument("experiment")
    run = sub.add_parser("run", parents=[common], help="run an experiment",
                         epilog="Any config key can be overridden with --key value; dotted "
                                "keys reach nested entries (--model.rho 0.3).")
    run.add_argument("config", nargs="?", help="YAML config file")
    run.add_argument("--experiment", help="experiment name (defaults to its registry config)")
    run.add_argument("--seed", type=int)
    run.add_argument("--replicas", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int, help="worker processes (default: RWDRE_WORKERS "
                     "or available CPUs)")
    run.add_argument("--dry-run", action="store_true", help="print the resolved config only")
    return ap


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        rest, pairs = split_overrides(argv)
        try:
            args = _parser().parse_args(rest)
        except SystemExit as e:
            # argparse exits 2 on usage errors and 0 on --help
            return EXIT_OK if not e.code else EXIT_CONFIG
        log.setLevel(logging.WARNING if args.quiet else logging.INFO)
        if args.command == "list":
            entries = list_experiments()
            if args.json:
                print(json.dumps(entries, indent=2, sort_keys=True))
            else:
                for e in entries:
                    print(f"{e['name']:22s} {e['reproduces']}")
            return EXIT_OK
        if args.command == "config":
            if args.experiment not in REGISTRY:
                raise ParameterError(f"unknown experiment {args.experiment!r}")
            print(REGISTRY[args.experiment].default_config().dumps(), end="")
            return EXIT_OK
        if args.config:
            cfg = ExperimentConfig.load(args.config)
            if args.experiment and args.experiment != cfg.experiment:
                cfg = apply_overrides(cfg, [("experiment", args.experiment)])
        elif args.experiment:
            if args.experiment not in REGISTRY:
                raise ParameterError(f"unknown experiment {args.experiment!r}")
            cfg = REGISTRY[args.experiment].default_config()
        else:
            raise ParameterError("give a config file or --experiment")
        for key in ("seed", "replicas", "out"):
            if getattr(args, key) is not None:
                pairs.append((key, str(getattr(args, key))))
        cfg = apply_overrides(cfg, pairs)
        if args.dry_run:
            resolve(cfg)
            print(cfg.dumps(), end="")
            return EXIT_OK
        rows = run_experiment(cfg, args.workers)
        w = csv.writer(sys.stdout)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return EXIT_OK
    except (ParameterError, OSError) as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (StatisticalValidityError, TruncationError) as e:
        log.error("statistical validity: %s", e)
        return EXIT_STATISTICS
    except InvariantViolation as e:
        log.error("invariant violation: %s", e)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
