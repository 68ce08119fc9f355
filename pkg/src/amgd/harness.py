"""Experiment orchestration and the ``amgd`` command line.

Subcommands::

    amgd run CONFIG              # any experiment described by a JSON config
    amgd rates --regime R ...    # convergence-rate study for one step-size regime
    amgd rl-td --size N ...      # TD(0) / TD(0)-Acc on GridWorld
    amgd rl-pg --method M ...    # REINFORCE / REINFORCE-Acc on GridWorld

Flags override config fields. Results go to ``--out`` as CSV. Independent
(seed, horizon) cells run in ``AMGD_WORKERS`` processes.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .markov import random_chain
from .oracles import (
    FeasibleSet,
    exact_gradient,
    f_star,
    load_problem,
    make_least_squares,
    make_robust_nonconvex,
    random_least_squares_data,
)
from .optim import (
    AMGD_CONVEX,
    AMGD_NONCONVEX,
    CONVEX_THM2,
    NONCONVEX_THM1,
    STRONGLY_CONVEX_THM3,
    build_schedule,
    run,
    select_output,
)
from .report import ExperimentReport, aggregate, emit_report, write_trace_csv
from .rl import GridWorld, run_pg, run_td

WORKERS_ENV = "AMGD_WORKERS"
KINDS = ("rates", "rl-td", "rl-pg")

DEFAULT_PROBLEMS = {
    STRONGLY_CONVEX_THM3: {"family": "least_squares", "n_states": 20, "dim": 5, "seed": 0,
                           "rank": None, "radius_factor": 2.0, "noise": 1.0},
    CONVEX_THM2: {"family": "least_squares", "n_states": 20, "dim": 5, "seed": 0,
                  "rank": 3, "radius_factor": 0.5, "noise": 1.0},
    NONCONVEX_THM1: {"family": "robust_nonconvex", "n_states": 20, "dim": 5, "seed": 0,
                     "scale": 1.0, "noise": 1.0},
}

DEFAULTS = {
    "rates": {"regime": STRONGLY_CONVEX_THM3, "horizons": [100000], "window": None, "n_points": 80,
              "gamma_end": "lower", "problem": None},
    "rl-td": {"size": 10, "episodes": 300, "method": "td0_acc", "lr": 0.001, "mu": 1.0, "delta": 0.1,
              "measure_every": 10, "n_test": 10, "discount": 0.9, "per_step": False},
    "rl-pg": {"size": 4, "method": "reinforce_acc", "iterations": 30, "batch": 10, "lr": 0.05,
              "eval_episodes": 50, "baseline": "mean_return", "discount": 0.99},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    seeds: list
    out: Optional[str] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        merged = copy.deepcopy(DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ConfigError(f"unknown {self.kind} fields: {sorted(unknown)}")
        merged.update(self.params)
        self.params = merged
        for key in ("horizons",):
            if key in merged and (not merged[key] or any(int(h) <= 0 for h in merged[key])):
                raise ConfigError("horizons must be positive")
        for key in ("episodes", "iterations", "batch", "size"):
            if key in merged and int(merged[key]) < (2 if key == "size" else 1 if key == "batch" else 0):
                raise ConfigError(f"{key} out of range: {merged[key]}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        try:
            kind = d.pop("kind")
        except KeyError:
            raise ConfigError("config needs a 'kind' field") from None
        seeds = d.pop("seeds", list(range(10)))
        out = d.pop("out", None)
        return cls(kind, seeds, out, d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seeds": self.seeds, **self.params}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def load_config(path) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(_read_json(path))
    prob = cfg.params.get("problem")
    if isinstance(prob, dict) and "file" in prob and not Path(prob["file"]).is_absolute():
        prob["file"] = str(Path(path).parent / prob["file"])
    return cfg


# -- problems ----------------------------------------------------------------------------------


def build_problem(problem: Optional[dict], regime: str):
    """``(objective, chain, feasible)`` from a file reference or the built-in generator."""
    problem = dict(DEFAULT_PROBLEMS[regime], **(problem or {}))
    if "file" in problem:
        return load_problem(problem["file"])
    rng = np.random.default_rng(problem["seed"])
    chain = random_chain(problem["n_states"], rng)
    A, b = random_least_squares_data(problem["n_states"], problem["dim"], rng, rank=problem.get("rank"),
                                     noise=problem.get("noise", 1.0))
    if problem["family"] == "robust_nonconvex":
        return make_robust_nonconvex(chain, A, b, problem.get("scale", 1.0)), chain, FeasibleSet.all_space()
    w = np.sqrt(chain.pi)[:, None]
    x_ls = np.linalg.lstsq(A * w, b * w[:, 0], rcond=None)[0]
    radius = problem.get("radius") or problem["radius_factor"] * float(np.linalg.norm(x_ls))
    feasible = FeasibleSet.ball(np.zeros(problem["dim"]), radius)
    return make_least_squares(chain, A, b, feasible), chain, feasible


def record_grid(K: int, n_points: int) -> np.ndarray:
    return np.unique(np.round(np.geomspace(1, K, n_points)).astype(np.int64))


# -- cells (top-level so they pickle) ---------------------------------------------------------


def _convex_cell(args):
    params, seed = args
    obj, chain, feasible = build_problem(params["problem"], params["regime"])
    fs = params["_f_star"]
    K = max(params["horizons"])
    sched = build_schedule(params["regime"], obj.L, obj.mu, K)
    tr = run(AMGD_CONVEX, obj, chain, K, seed=seed, schedule=sched, feasible=feasible, f_star=fs,
             record_at=record_grid(K, params["n_points"]))
    return tr


def _nonconvex_cell(args):
    params, seed, K = args
    obj, chain, _ = build_problem(params["problem"], params["regime"])
    sched = build_schedule(NONCONVEX_THM1, obj.L, K=K, gamma_end=params["gamma_end"])
    tr = run(AMGD_NONCONVEX, obj, chain, K, seed=seed, schedule=sched, diagnostics=False)
    R, y = select_output(tr, obj.L, np.random.default_rng([seed, K, 1]))
    g = exact_gradient(obj, chain, y)
    return float(g @ g)


def _td_cell(args):
    p, seed = args
    env = GridWorld(p["size"], discount=p["discount"])
    return run_td(env, p["method"], p["episodes"], seed, p["measure_every"], lr=p["lr"], mu=p["mu"],
                  delta=p["delta"], n_test=p["n_test"], per_step=p["per_step"])


def _pg_cell(args):
    p, seed = args
    env = GridWorld(p["size"], discount=p["discount"])
    return run_pg(env, p["method"], p["iterations"], p["batch"], seed, p["eval_episodes"], lr=p["lr"],
                  baseline=p["baseline"])


def n_workers(n_cells: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, min(n_cells, os.cpu_count() or 1))


def _map(fn, cells):
    workers = n_workers(len(cells))
    if workers == 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


# -- studies -----------------------------------------------------------------------------------


def run_rate_study(config: ExperimentConfig) -> ExperimentReport:
    """Metric-vs-k (convex regimes) or metric-vs-K (nonconvex) curves and a fitted slope."""
    p = copy.deepcopy(config.params)
    regime = p["regime"]
    if regime not in DEFAULT_PROBLEMS:
        raise ConfigError(f"unknown regime {regime!r}")
    meta = {"config_sha256": config.digest(), "version": __version__, "regime": regime}
    if regime == NONCONVEX_THM1:
        Ks = sorted(int(K) for K in p["horizons"])
        cells = [(p, s, K) for s in config.seeds for K in Ks]
        vals = _map(_nonconvex_cell, cells)
        per_seed = {s: vals[i * len(Ks):(i + 1) * len(Ks)] for i, s in enumerate(config.seeds)}
        report = aggregate(Ks, per_seed, "grad_norm_sq_at_output", index_name="K", metadata=meta)
        window = tuple(p["window"]) if p["window"] else (Ks[0], Ks[-1])
    else:
        obj, chain, feasible = build_problem(p["problem"], regime)
        p["_f_star"] = f_star(obj, chain, feasible)[0]
        traces = _map(_convex_cell, [(p, s) for s in config.seeds])
        ks = np.asarray(traces[0].metric_ks)
        report = aggregate(ks, {s: tr.metric_values for s, tr in zip(config.seeds, traces)},
                           "suboptimality", metadata=meta)
        report.traces = traces
        window = tuple(p["window"]) if p["window"] else None
    report.fit(window)
    return report


def run_rl_study(config: ExperimentConfig) -> ExperimentReport:
    p = config.params
    meta = {"config_sha256": config.digest(), "version": __version__, "method": p["method"]}
    if config.kind == "rl-td":
        results = _map(_td_cell, [(p, s) for s in config.seeds])
        return aggregate(results[0][0], {s: r[1] for s, r in zip(config.seeds, results)}, "neu",
                         index_name="episode_index", mean_name="mean_metric", metadata=meta)
    results = _map(_pg_cell, [(p, s) for s in config.seeds])
    return aggregate(results[0][0], {s: r[1] for s, r in zip(config.seeds, results)}, "average_return",
                     index_name="iteration", mean_name="mean_metric", metadata=meta)


def execute(config: ExperimentConfig, out_dir=None) -> ExperimentReport:
    report = run_rate_study(config) if config.kind == "rates" else run_rl_study(config)
    out_dir = out_dir or config.out
    if out_dir is not None:
        emit_report(report, out_dir)
        traces = getattr(report, "traces", None)
        if traces:
            write_trace_csv(traces, Path(out_dir) / "traces.csv")
    return report


# -- CLI ---------------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        self.exit(2)


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="amgd", description="Accelerated Markov gradient descent experiments")
    ap.add_argument("--version", action="version", version=f"amgd {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--out", help="output directory for CSV files")

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    common(r)

    r = sub.add_parser("rates", help="convergence-rate study")
    r.add_argument("--config")
    r.add_argument("--regime", choices=list(DEFAULT_PROBLEMS))
    r.add_argument("--horizons", type=int, nargs="+")
    r.add_argument("--window", type=float, nargs=2)
    r.add_argument("--n-points", type=int, dest="n_points")
    r.add_argument("--gamma-end", choices=["lower", "upper"], dest="gamma_end")
    common(r)

    r = sub.add_parser("rl-td", help="TD(0) / TD(0)-Acc policy evaluation on GridWorld")
    r.add_argument("--config")
    r.add_argument("--size", type=int)
    r.add_argument("--episodes", type=int)
    r.add_argument("--method", choices=["td0", "td0_acc"])
    r.add_argument("--lr", type=float)
    r.add_argument("--mu", type=float)
    r.add_argument("--delta", type=float)
    r.add_argument("--per-step", action="store_true", default=None, dest="per_step")
    common(r)

    r = sub.add_parser("rl-pg", help="REINFORCE / REINFORCE-Acc on GridWorld")
    r.add_argument("--config")
    r.add_argument("--size", type=int)
    r.add_argument("--method", choices=["reinforce", "reinforce_acc"])
    r.add_argument("--iterations", type=int)
    r.add_argument("--batch", type=int)
    r.add_argument("--lr", type=float)
    common(r)
    return ap


def _config_from_args(args) -> ExperimentConfig:
    path = getattr(args, "config", None)
    if args.command == "run":
        base = _read_json(path)
        base_dir = Path(path).parent
    else:
        base = _read_json(path) if path else {"kind": args.command}
        base_dir = Path(path).parent if path else Path.cwd()
        if base.get("kind", args.command) != args.command:
            raise ConfigError(f"config kind {base.get('kind')!r} does not match subcommand {args.command!r}")
        base["kind"] = args.command
    skip = {"command", "config"}
    for key, val in vars(args).items():
        if key not in skip and val is not None:
            base[key] = list(val) if isinstance(val, (list, tuple)) else val
    prob = base.get("problem")
    if isinstance(prob, dict) and "file" in prob and not Path(prob["file"]).is_absolute():
        prob["file"] = str(base_dir / prob["file"])
    return ExperimentConfig.from_dict(base)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        report = execute(config)
    except Exception as err:  # noqa: BLE001 - reported as a machine-readable line
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 1
    summary = {"kind": config.kind, "seeds": config.seeds, "final_mean": float(report.mean[-1])}
    if report.slope is not None:
        summary["slope"] = report.slope.slope
    if config.out:
        summary["out"] = str(config.out)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
