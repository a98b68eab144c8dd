"""Command line entry point.

    dpbm run <config.json>      run an experiment and write its artifacts
    dpbm verify <suite>         run a seeded property suite
    dpbm info <trace.bin>       describe a saved trace

Output directories in configs are resolved against ``$DPBM_OUTPUT_ROOT``
(default: the current directory).
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import bundle
from .algorithms import AlgoConfig
from .async_sim import (read_trace, run_simulation, run_threaded, save_trace, schedule_partial,
                        schedule_total, synchronous_schedule)
from .graph import build_topology, load_edgelist, metropolis_weights, validate_averaging
from .metrics import (consensus_error, penalized_optimum, reference_optimum, trace_rows, write_metrics_csv,
                      write_summary)
from .problem import (ProblemSpec, Regularizer, load_dataset, logistic_problem,
                      normalize_features, one_vs_rest, partition_dataset, random_quadratic_problem,
                      subsample, synthetic_classification)
from .verify import SUITES, run_suite

SCHEMA_VERSION = "dpbm.experiment/1"
OUTPUT_ENV = "DPBM_OUTPUT_ROOT"

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int0 = {"type": "integer", "minimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_frac = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema", "problem", "graph", "algorithm"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "problem": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["logistic", "quadratic"]},
                "dataset": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "path": {"type": "string"},
                        "format": {"enum": ["libsvm", "csv"]},
                        "positive_label": _num,
                        "max_samples": _int1,
                        "normalize": {"type": "boolean"},
                        "synthetic": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {"samples": _int1, "dim": _int1, "noise": {"type": "number", "minimum": 0,
                                                                                    "maximum": 1},
                                           "binary_frac": {"type": "number", "minimum": 0, "maximum": 1}},
                        },
                    },
                },
                "dim": _int1,
                "rows": _int1,
                "lam1": {"type": "number", "minimum": 0},
                "box": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "theta": {"type": "number", "minimum": 0},
                "floor": {"type": ["number", "null"]},
            },
        },
        "graph": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["ring", "path", "star", "complete", "random_connected", "edgelist"]},
                "n": _int1,
                "p": {"type": "number", "minimum": 0, "maximum": 1},
                "path": {"type": "string"},
            },
        },
        "algorithm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["dpbm", "prox_dgd"]},
                "policy": {"enum": list(bundle.POLICIES)},
                "M": _int1,
                "alpha": _pos,
                "step": {
                    "type": "object",
                    "required": ["rule"],
                    "additionalProperties": False,
                    "properties": {
                        "rule": {"enum": ["fixed", "backtracking", "constant"]},
                        "eta": _frac,
                        "c": _frac,
                        "gamma_init": _pos,
                        "gamma": _pos,
                    },
                },
                "batch_size": _int0,
                "iterations": _int1,
                "sub_tol": _pos,
            },
        },
        "asynchrony": {
            "type": "object",
            "required": ["mode"],
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["sync", "partial", "total", "threaded"]},
                "B": _int0,
                "D": _int0,
                "wall_budget": _pos,
            },
        },
        "seed": _int0,
        "stride": _int1,
        "reference": {"type": "boolean"},
        "output": {"type": "object", "additionalProperties": False, "properties": {"dir": {"type": "string"}}},
    },
}

DEFAULTS = {
    "problem": {"lam1": 0.0, "theta": 0.0, "floor": None},
    "graph": {"n": 10, "p": 0.3},
    "algorithm": {"method": "dpbm", "policy": "polyak_cutting_plane", "M": 10, "alpha": 20.0,
                  "step": {"rule": "fixed", "eta": 0.9}, "batch_size": 0, "iterations": 150},
    "asynchrony": {"mode": "sync"},
    "seed": 0,
    "stride": 1,
    "reference": True,
    "output": {"dir": "dpbm_run"},
}


class ConfigError(ValueError):
    """Configuration problems; ``errors`` lists ``(field, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.errors))


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict) -> dict:
    """Validate ``raw`` and fill in defaults. Raises :class:`ConfigError` listing every bad field."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errs:
        raise ConfigError(("/".join(str(p) for p in e.absolute_path) or "<root>", e.message) for e in errs)
    cfg = _merge(DEFAULTS, raw)
    problems = []
    prob, alg, asy = cfg["problem"], cfg["algorithm"], cfg["asynchrony"]
    if prob["kind"] == "logistic" and "dataset" not in prob:
        problems.append(("problem/dataset", "logistic problems need a dataset"))
    if prob["kind"] == "quadratic" and "dim" not in prob:
        problems.append(("problem/dim", "quadratic problems need dim"))
    if "dataset" in prob:
        ds = prob["dataset"]
        if ("path" in ds) == ("synthetic" in ds):
            problems.append(("problem/dataset", "give exactly one of path or synthetic"))
    if cfg["graph"]["kind"] == "edgelist" and "path" not in cfg["graph"]:
        problems.append(("graph/path", "edgelist graphs need a path"))
    step = alg["step"]
    if step["rule"] == "constant" and "gamma" not in step:
        problems.append(("algorithm/step/gamma", "constant step needs gamma"))
    if asy["mode"] == "partial":
        for key in ("B", "D"):
            if key not in asy:
                problems.append((f"asynchrony/{key}", "partial asynchrony needs B and D"))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError([("<file>", f"config file {path} not found")]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([("<file>", f"invalid JSON: {exc}")]) from None
    return resolve_config(raw)


def _regularizer(p: dict) -> Regularizer:
    if p.get("box") is not None:
        lo, hi = p["box"]
        return Regularizer.box(lo, hi)
    return Regularizer.l1(p["lam1"]) if p["lam1"] > 0 else Regularizer.zero()


def build_problem(cfg: dict, n: int) -> ProblemSpec:
    p = cfg["problem"]
    seed = cfg["seed"]
    reg = _regularizer(p)
    if p["kind"] == "quadratic":
        prob = random_quadratic_problem(n, p["dim"], seed, theta=p["theta"], reg=reg, rows=p.get("rows"))
    else:
        ds = p["dataset"]
        if "synthetic" in ds:
            s = ds["synthetic"]
            data = synthetic_classification(s.get("samples", 10000), s.get("dim", 54), seed,
                                            noise=s.get("noise", 0.1), binary_frac=s.get("binary_frac", 0.0))
        else:
            path = Path(ds["path"])
            if not path.exists():
                raise ConfigError([("problem/dataset/path", f"dataset {path} not found")])
            label_map = one_vs_rest(ds["positive_label"]) if "positive_label" in ds else None
            data = load_dataset(path, format=ds.get("format"), label_map=label_map)
        data = subsample(data, ds.get("max_samples", 10000), seed)
        if ds.get("normalize", True):
            data = normalize_features(data)
        shards = partition_dataset(data, n, seed)
        prob = logistic_problem(shards, lam1=p["lam1"], theta=p["theta"])
        if isinstance(reg, Regularizer) and reg.kind == "box":
            prob = ProblemSpec(prob.losses, reg)
    if p["floor"] is not None:
        prob = ProblemSpec(prob.losses, prob.reg, [float(p["floor"])] * prob.n)
    return prob


def build_graph(cfg: dict):
    g = cfg["graph"]
    if g["kind"] == "edgelist":
        return load_edgelist(g["path"])
    return build_topology(g["kind"], g["n"], g.get("p", 0.3), cfg["seed"])


def algo_config(cfg: dict) -> AlgoConfig:
    a = cfg["algorithm"]
    s = a["step"]
    kw = dict(alpha=a["alpha"], method=a["method"], policy=a["policy"], M=a["M"], step=s["rule"],
              batch_size=a["batch_size"], iterations=a["iterations"])
    for key in ("eta", "c", "gamma_init", "gamma"):
        if key in s:
            kw[key] = s[key]
    if "sub_tol" in a:
        kw["sub_tol"] = a["sub_tol"]
    return AlgoConfig(**kw)


def output_dir(cfg: dict) -> Path:
    root = Path(os.environ.get(OUTPUT_ENV, "."))
    return root / cfg["output"]["dir"]


def execute(cfg: dict) -> dict:
    """Run a resolved config; returns the summary dictionary."""
    graph = build_graph(cfg)
    W = metropolis_weights(graph)
    validate_averaging(W, graph)
    prob = build_problem(cfg, graph.n)
    ac = algo_config(cfg)
    asy = cfg["asynchrony"]
    seed = cfg["seed"]
    t0 = time.perf_counter()
    if asy["mode"] == "threaded":
        trace = run_threaded(prob, graph, W, ac, wall_budget=asy.get("wall_budget", 5.0), seed=seed)
    else:
        K = ac.iterations
        if asy["mode"] == "partial":
            sched = schedule_partial(graph, K, asy["B"], asy["D"], seed=seed)
        elif asy["mode"] == "total":
            sched = schedule_total(graph, K, seed=seed)
        else:
            sched = synchronous_schedule(graph, K)
        trace = run_simulation(prob, graph, W, ac, schedule=sched, seed=seed, stride=cfg["stride"])
    elapsed = time.perf_counter() - t0

    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"iterations": int(trace.ticks[-1]), "snapshots": int(len(trace.ticks)),
               "n": prob.n, "d": prob.d, "seconds": elapsed, "max_delay": int(trace.max_delay),
               "final_consensus_error": consensus_error(trace.final)}
    f_star = x_pen = None
    if cfg["reference"]:
        ref = reference_optimum(prob)
        f_star = ref.value
        summary.update({"f_star": ref.value, "reference_residual": ref.residual,
                        "reference_iterations": ref.iterations,
                        "final_train_error": prob.global_objective(trace.final.mean(axis=0)) - ref.value})
        if ac.method == "dpbm":
            try:
                pen = penalized_optimum(prob, W, ac.alpha, tol=1e-10)
            except RuntimeError as exc:
                summary["penalized_optimum"] = f"not certified: {exc}"
            else:
                x_pen = pen.x
                summary.update({"penalized_residual": pen.residual,
                                "final_dist_to_penalized_opt": float(np.max(np.abs(trace.final - pen.x)))})
    write_metrics_csv(out / "metrics.csv", trace_rows(trace, prob, f_star, x_pen))
    write_summary(out / "summary.json", summary)
    with open(out / "config.resolved.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
    save_trace(trace, out / "trace.bin")
    summary["output"] = str(out)
    return summary


def describe_trace(path) -> dict:
    tr = read_trace(path)
    S, n, d = tr.X.shape
    return {"snapshots": S, "nodes": n, "dim": d, "first_tick": int(tr.ticks[0]), "last_tick": int(tr.ticks[-1]),
            "updates": len(tr.log), "max_delay": int(tr.max_delay), "seed": tr.seed,
            "final_consensus_error": consensus_error(tr.final),
            "method": tr.config.get("method"), "policy": tr.config.get("policy"), "alpha": tr.config.get("alpha")}


def _emit(obj, stream=None):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float), file=stream or sys.stdout)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dpbm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config")
    p_ver = sub.add_parser("verify", help="run a property suite")
    p_ver.add_argument("suite", choices=SUITES)
    p_ver.add_argument("--seed", type=int, default=0)
    p_info = sub.add_parser("info", help="describe a saved trace")
    p_info.add_argument("trace")
    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            cfg = load_config(args.config)
            summary = execute(cfg)
        except ConfigError as exc:
            _emit({"status": "error", "kind": "config", "errors": [{"field": f, "message": m} for f, m in exc.errors]},
                  sys.stderr)
            return 2
        except (ValueError, RuntimeError, OSError) as exc:
            _emit({"status": "error", "kind": type(exc).__name__, "message": str(exc)}, sys.stderr)
            return 1
        _emit({"status": "ok", **summary})
        return 0
    if args.command == "verify":
        rep = run_suite(args.suite, seed=args.seed)
        _emit(rep.to_dict())
        return 0 if rep.passed else 1
    try:
        _emit(describe_trace(args.trace))
    except (OSError, ValueError) as exc:
        _emit({"status": "error", "kind": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
