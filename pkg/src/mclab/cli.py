"""Command-line front end.

    mclab verify [--seed S] [--threads T] [--out DIR]
    mclab simulate --config model.json
    mclab tokens --config model.json
    mclab oracle --config model.json
    mclab experiment NAME [--out DIR]

A config is a JSON document (a path or an inline ``{...}`` string)::

    {"space": {"type": "interval"},
     "phi": {"type": "inverse_power", "alpha": 1},
     "measure": {"type": "discrete", "locations": [0, 1], "masses": [0.3, 0.7]},
     "f": {"type": "piecewise_linear", "knots": [[0, 0], [1, 1]]},
     "t": 1.0, "N": 64, "seed": 0, "replicates": 10000, "sigma": 4}
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import coalescent, experiments, oracle, tokens
from .model import (
    Constant,
    CoordinateProjection,
    DiscreteMeasure,
    Euclidean,
    FiniteSpace,
    Interval,
    InversePower,
    MeasureError,
    ModelError,
    PiecewiseLinear,
    Tabulated,
    UniformBox,
)
from .rng import SEED_ENV, child_rng, default_seed
from .stats import TestConfig
from .suite import SuiteConfig, run_suite, summary_json

COMMANDS = ("verify", "simulate", "tokens", "oracle", "experiment")
U64 = 2**64


class ParseError(ValueError):
    def __init__(self, msg: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {msg}")
        self.line = line
        self.column = column


class ConfigError(ValueError):
    def __init__(self, fieldname: str, msg: str):
        super().__init__(f"{fieldname}: {msg}")
        self.field = fieldname


@dataclass
class RunConfig:
    command: str = "verify"
    experiment: str | None = None
    space: object = None
    phi: object = None
    measure: object = None
    f: object = None
    t: float = 1.0
    N: int = 64
    seed: int = 0
    replicates: int = 10_000
    sigma: float = 4.0
    threads: int = 1
    out: str = "."
    raw: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# config parsing


def _load(source: str) -> dict:
    text = source if source.lstrip().startswith("{") else open(source).read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    return doc


def _get(node: dict, name: str, where: str):
    if name not in node:
        raise ConfigError(f"{where}.{name}", "missing")
    return node[name]


def build_space(node: dict):
    kind = _get(node, "type", "space")
    if kind == "interval":
        return Interval()
    if kind == "euclidean":
        return Euclidean(int(node.get("dim", 1)))
    if kind == "finite":
        return FiniteSpace(np.asarray(_get(node, "distances", "space"), dtype=float))
    raise ConfigError("space.type", f"unknown space {kind!r}")


def build_phi(node: dict):
    kind = _get(node, "type", "phi")
    if kind == "inverse_power":
        return InversePower(float(node.get("alpha", 1.0)))
    if kind == "constant":
        return Constant(float(node.get("level", 1.0)))
    if kind == "tabulated":
        return Tabulated(tuple(_get(node, "xs", "phi")), tuple(_get(node, "ys", "phi")))
    raise ConfigError("phi.type", f"unknown rate function {kind!r}")


def _point(space, p):
    if isinstance(space, Euclidean):
        return tuple(float(v) for v in np.atleast_1d(p))
    if isinstance(space, FiniteSpace):
        return int(p)
    return float(p)


def build_measure(node: dict, space):
    kind = _get(node, "type", "measure")
    if kind == "discrete":
        locs = [_point(space, p) for p in _get(node, "locations", "measure")]
        masses = [float(m) for m in _get(node, "masses", "measure")]
        return DiscreteMeasure(space, locs, masses)
    if kind == "uniform_box":
        return UniformBox(tuple(_get(node, "lo", "measure")), tuple(_get(node, "hi", "measure")))
    raise ConfigError("measure.type", f"unknown measure {kind!r}")


def build_f(node: dict):
    kind = _get(node, "type", "f")
    if kind == "projection":
        return CoordinateProjection(int(node.get("axis", 0)))
    if kind == "piecewise_linear":
        return PiecewiseLinear(tuple(tuple(k) for k in _get(node, "knots", "f")), int(node.get("axis", 0)))
    raise ConfigError("f.type", f"unknown test function {kind!r}")


def parse_config(source: str | None = None, command: str = "verify", experiment: str | None = None) -> RunConfig:
    """Validated :class:`RunConfig` from a JSON path or inline JSON text."""
    doc = _load(source) if source else {}
    cfg = RunConfig(command=command, experiment=doc.get("experiment", experiment), raw=doc)
    if cfg.command not in COMMANDS:
        raise ConfigError("command", f"unknown command {cfg.command!r}")
    if cfg.command == "experiment" and cfg.experiment not in experiments.EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {cfg.experiment!r}; known: {sorted(experiments.EXPERIMENTS)}")
    for name, cast in (("t", float), ("N", int), ("seed", int), ("replicates", int), ("sigma", float), ("threads", int)):
        if name in doc:
            try:
                setattr(cfg, name, cast(doc[name]))
            except (TypeError, ValueError):
                raise ConfigError(name, f"expected {cast.__name__}, got {doc[name]!r}") from None
    if not 0 <= cfg.seed < U64:
        raise ConfigError("seed", "must be an unsigned 64-bit value")
    if cfg.replicates < 100:
        raise ConfigError("replicates", "at least 100 replicates are required")
    if not (cfg.sigma > 0 and math.isfinite(cfg.sigma)):
        raise ConfigError("sigma", "must be positive")
    if cfg.t < 0:
        raise ConfigError("t", "must be nonnegative")
    if cfg.N < 1:
        raise ConfigError("N", "must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads", "must be positive")
    for name, build in (("space", build_space), ("phi", build_phi), ("f", build_f)):
        if name in doc:
            try:
                setattr(cfg, name, build(doc[name]))
            except ModelError as exc:
                raise ConfigError(name, str(exc)) from None
    if "measure" in doc:
        if cfg.space is None:
            raise ConfigError("space", "a measure needs a space")
        try:
            cfg.measure = build_measure(doc["measure"], cfg.space)
        except MeasureError as exc:
            raise ConfigError("measure", f"measure invariant violated: {exc}") from None
        except ModelError as exc:
            raise ConfigError("measure", str(exc)) from None
    return cfg


def _require(cfg: RunConfig, *names):
    for n in names:
        if getattr(cfg, n) is None:
            raise ConfigError(n, f"required by the {cfg.command} command")


# ---------------------------------------------------------------------------
# commands


def run_verify(cfg: RunConfig, explicit_replicates: bool = False) -> int:
    sc = SuiteConfig(seed=cfg.seed, sigma=cfg.sigma, threads=cfg.threads, replicates=cfg.replicates if explicit_replicates else None)
    results = run_suite(sc, log=print)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "summary.json")
    with open(path, "w") as fh:
        fh.write(summary_json(results, sc))
    ok = all(r.passed for r in results)
    print(f"{'all criteria pass' if ok else 'some criteria fail'}; summary in {path}")
    return 0 if ok else 1


def run_simulate(cfg: RunConfig) -> int:
    _require(cfg, "space", "phi", "measure")
    if not isinstance(cfg.measure, DiscreteMeasure):
        raise ConfigError("measure", "simulate needs a discrete measure")
    traj, final = coalescent.run(cfg.measure, cfg.phi, cfg.space, cfg.t, child_rng(cfg.seed, "simulate"))
    os.makedirs(cfg.out, exist_ok=True)
    traj.to_csv(os.path.join(cfg.out, "trajectory.csv"))
    print(f"{len(traj)} merges by t={cfg.t:g}; {len(final.measure)} atoms left")
    return 0


def run_tokens(cfg: RunConfig) -> int:
    _require(cfg, "space", "phi", "measure")
    system = tokens.TokenSystem.init(cfg.measure, cfg.N, cfg.space, cfg.phi, child_rng(cfg.seed, "tokens"))
    state = tokens.evolve(system, cfg.t)
    os.makedirs(cfg.out, exist_ok=True)
    tokens.export_partition(system, state, os.path.join(cfg.out, "partition.csv"))
    print(f"{cfg.N} tokens, {len(state.blocks)} blocks at t={cfg.t:g}")
    return 0


def run_oracle(cfg: RunConfig) -> int:
    _require(cfg, "space", "phi", "measure")
    if not isinstance(cfg.measure, DiscreteMeasure):
        raise ConfigError("measure", "the oracle needs a discrete measure")
    try:
        o = oracle.oracle_for(cfg.measure, cfg.space, cfg.phi)
    except oracle.CapacityError as exc:
        raise ConfigError("measure", str(exc)) from None
    os.makedirs(cfg.out, exist_ok=True)
    oracle.export_transient(o, cfg.t, os.path.join(cfg.out, "transient.csv"))
    print(f"{len(o.states)} states at t={cfg.t:g}")
    return 0


def run_experiment(cfg: RunConfig) -> int:
    tc = TestConfig(replicates=cfg.replicates, base_seed=cfg.seed, sigma=cfg.sigma, threads=cfg.threads)
    if cfg.experiment == "bounded_phi_counterexample" and cfg.phi is not None:
        res = experiments.bounded_phi_counterexample(
            cfg.phi, cfg.raw.get("x_n", [0.5, 0.125, 2.0**-5, 2.0**-7, 2.0**-9]), cfg.t, tc
        )
    else:
        res = experiments.run_named(cfg.experiment, tc)
    csv_path, meta_path = res.write(cfg.out, cfg.seed)
    print(f"{res.name}: {'pass' if res.passed else 'fail'} {res.verdicts}; wrote {csv_path} and {meta_path}")
    return 0 if res.passed else 1


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mclab", description="Metric coalescent simulation and verification.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("name", nargs="?", help="experiment name")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--out", default=".")
    p.add_argument("--sigma", type=float)
    p.add_argument("--threads", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "experiment" and not args.name:
        print("error: experiment needs a name", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(args.config, args.command, args.name)
        if args.seed is None and "seed" not in cfg.raw:
            try:
                cfg.seed = default_seed()
            except ValueError:
                raise ConfigError(SEED_ENV, "must be an integer") from None
        for name in ("seed", "replicates", "sigma", "threads"):
            v = getattr(args, name)
            if v is not None:
                setattr(cfg, name, v)
        if not 0 <= cfg.seed < U64:
            raise ConfigError("seed", "must be an unsigned 64-bit value")
        if cfg.replicates < 100:
            raise ConfigError("replicates", "at least 100 replicates are required")
        cfg.out = args.out
        if cfg.command == "verify":
            return run_verify(cfg, explicit_replicates=args.replicates is not None or "replicates" in cfg.raw)
        return {"simulate": run_simulate, "tokens": run_tokens, "oracle": run_oracle, "experiment": run_experiment}[cfg.command](cfg)
    except (ParseError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
