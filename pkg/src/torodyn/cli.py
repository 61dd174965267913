"""Configuration-driven command line front end.

Subcommands:
    run     execute one experiment from a JSON config, write report.json
            and CSV tables under the output directory
    verify  run a module's invariant suite and print PASS/FAIL lines
    sweep   expand a parameter grid, run every row, aggregate one CSV

Exit codes: 0 all verdicts pass, 2 a verdict failed, 1 operational error
(bad config, intake rejection, runtime failure); never conflated.

Config files are single JSON documents with a versioned schema:

    {"schema": "torodyn-run/v1", "experiment": "<name>",
     "seed": 0, "params": { ... experiment parameters ... }}

Sweeps add a "grid" of dotted parameter paths to value lists.  Values
from the environment override config fields: TORODYN_OUT, TORODYN_THREADS
and TORODYN_EXACT correspond to --out, --threads and --exact (explicit
command-line flags win over the environment).

CSV tables use the row-dict key order of their first row; the sweep CSV
column order is: row, grid keys (sorted), passed, error, measured scalar
keys (sorted), runtime_s.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

RUN_SCHEMA = "torodyn-run/v1"
SWEEP_SCHEMA = "torodyn-sweep/v1"
MAX_SWEEP_ROWS = 10_000

EXPERIMENT_NAMES = (
    "jacobian_superlevel",
    "zero_background_inflation",
    "norm_inflation",
    "concentration_scaling",
    "nonuniqueness_composition",
    "staged_compression",
    "ode_time_reversal",
)


# ---------------------------------------------------------------------------
# Config handling.


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"])


class ConfigError(Exception):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def validate_run_config(cfg: dict, schema: str = RUN_SCHEMA) -> list:
    """Collect every violation before any compute starts."""
    errors = []
    if not isinstance(cfg, dict):
        return ["config root must be a JSON object"]
    if cfg.get("schema") != schema:
        errors.append(f"schema: expected {schema!r}, got {cfg.get('schema')!r}")
    exp = cfg.get("experiment")
    if exp not in EXPERIMENT_NAMES:
        errors.append(f"experiment: unknown {exp!r}; choose from "
                      f"{', '.join(EXPERIMENT_NAMES)}")
    params = cfg.get("params")
    if not isinstance(params, dict):
        errors.append("params: must be an object")
        params = {}
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int):
        errors.append("seed: must be an integer")
    if exp in ("zero_background_inflation", "norm_inflation") \
            and isinstance(params, dict):
        from .experiments.inflation import InflationConfig
        try:
            icfg = InflationConfig(**{k: v for k, v in params.items()
                                      if k != "exact"})
            errors.extend(icfg.validate())
        except TypeError as exc:
            errors.append(f"params: {exc}")
    if exp == "nonuniqueness_composition" and isinstance(params, dict):
        from .experiments.composition import bck_range_satisfied
        q, p = params.get("q", 6.0), params.get("p", 1.1)
        if params.get("enforce_range", True) and not bck_range_satisfied(q, p, 2):
            errors.append(f"params: (q={q}, p={p}) violates the Sobolev "
                          "non-uniqueness range 1/p > 1/q + (p-1)/(p(d-1))")
    return errors


def _derive_seed(master: int, idx: int) -> int:
    digest = hashlib.sha256(f"{master}:{idx}".encode()).hexdigest()
    return int(digest[:8], 16)


# ---------------------------------------------------------------------------
# Experiment dispatch.


def _build_triple(spec, seed):
    from .experiments.composition import CascadeTriple, make_cascade_triple
    if isinstance(spec, str):
        return CascadeTriple.load(spec)
    spec = dict(spec or {})
    spec.pop("kind", None)
    return make_cascade_triple(**spec)


def execute_experiment(cfg: dict, exact: bool = False):
    """Run the experiment named by a validated config; returns the report."""
    from . import experiments as ex
    name = cfg["experiment"]
    params = dict(cfg.get("params", {}))
    seed = int(cfg.get("seed", 0))
    if name == "jacobian_superlevel":
        return ex.jacobian_superlevel_experiment(
            eta=params["eta"], d=params.get("d", 2), n=params.get("n", 512),
            delta_cutoff=params.get("delta_cutoff"),
            steps=params.get("steps", 1024), config=cfg)
    if name in ("zero_background_inflation", "norm_inflation"):
        exact_flag = bool(params.pop("exact", False)) or exact
        icfg = ex.InflationConfig(seed=seed, exact=exact_flag,
                                  **{k: v for k, v in params.items()
                                     if k != "seed"})
        if name == "zero_background_inflation":
            return ex.zero_background_inflation(icfg, config_dict=cfg)
        return ex.norm_inflation_experiment(icfg, config_dict=cfg)
    if name == "concentration_scaling":
        return ex.concentration_scaling_experiment(
            params["field"], params.get("mus", [1, 2, 4, 8]),
            q=params.get("q", 2.0), p=params.get("p", 1.5),
            n=params.get("n", 512),
            exponent_tol=params.get("exponent_tol", 0.02), config=cfg)
    if name == "nonuniqueness_composition":
        triple = _build_triple(params.get("triple"), seed)
        return ex.nonuniqueness_composition_experiment(
            params["u"], triple, q=params.get("q", 6.0),
            p=params.get("p", 1.1),
            intake_tol=params.get("intake_tol", 1e-2),
            output_tol=params.get("output_tol", 1e-2),
            div_tol=params.get("div_tol", 1e-6),
            enforce_range=params.get("enforce_range", True), config=cfg)
    if name == "staged_compression":
        return ex.staged_compression_experiment(
            k=params.get("k", 3), lambdas=params.get("lambdas", (4, 8, 16)),
            taus=params.get("taus", (0.0, 0.3, 0.6, 0.9)),
            deltas=params.get("deltas", (0.04, 0.05, 0.0625)),
            d=params.get("d", 2), n_seeds=params.get("n_seeds", 65536),
            probe_n=params.get("probe_n", 128),
            steps_per_unit=params.get("steps_per_unit", 2048),
            seed=seed, config=cfg)
    if name == "ode_time_reversal":
        rng = np.random.default_rng(seed)
        seeds_spec = params.get("seeds", {"kind": "uniform", "n": 4096})
        if seeds_spec.get("kind") == "uniform":
            seeds = rng.uniform(0.0, 1.0, (int(seeds_spec.get("n", 4096)), 2))
        else:
            raise ConfigError([f"unknown seeds kind {seeds_spec.get('kind')!r}"])
        vbar = params.get("vbar")
        if vbar == "staged-default" or vbar is None:
            from .experiments.staged import build_staged_compression
            field = build_staged_compression(
                params.get("lambdas", (4, 8, 16)),
                params.get("taus", (0.0, 0.3, 0.6, 0.9)),
                params.get("deltas", (0.04, 0.05, 0.0625)))
            T = params.get("T", 0.9)
        else:
            from .fields import build_field
            field = build_field(vbar)
            T = params.get("T")
        return ex.ode_time_reversal_experiment(
            field, seeds, T=T, probe_n=params.get("probe_n", 128),
            curve_nodes=params.get("curve_nodes"),
            residual_tol=params.get("residual_tol", 1e-3), seed=seed,
            config=cfg)
    raise ConfigError([f"unknown experiment {name!r}"])


# ---------------------------------------------------------------------------
# Output writing.


def write_report(report, outdir):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    if report.tables:
        tdir = out / "tables"
        tdir.mkdir(exist_ok=True)
        for name, rows in report.tables.items():
            write_csv(tdir / f"{name}.csv", rows)
    for i, child in enumerate(report.children):
        write_report(child, out / f"child_{i}")


def write_csv(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})


# ---------------------------------------------------------------------------
# Subcommands.


def cmd_run(config_path, out=None, exact: bool = False) -> int:
    try:
        cfg = load_config(config_path)
        errors = validate_run_config(cfg)
        if errors:
            for e in errors:
                print(f"config error: {e}", file=sys.stderr)
            return 1
        report = execute_experiment(cfg, exact=exact)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as exc:  # intake rejections, numeric failures
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outdir = out or cfg.get("out") or f"runs/{report.experiment}-{report.config_hash}"
    write_report(report, outdir)
    for line in report.summary_lines():
        print(line)
    print(f"report written to {outdir}")
    return 0 if report.passed else 2


def cmd_verify(suite: str, out=None) -> int:
    from .verify import SUITES, run_suite
    if suite not in SUITES:
        print(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}",
              file=sys.stderr)
        return 1
    try:
        results = run_suite(suite)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    failed = 0
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        failed += 0 if r["passed"] else 1
        print(f"{status} {r['name']}: {r['detail']} "
              f"[measured={r['lhs']:.6g}, allowed={r['rhs']:.6g}, "
              f"margin={r['rhs'] - r['lhs']:.3g}]")
    print(f"{len(results) - failed}/{len(results)} invariants passed")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out) / f"verify_{suite}.csv", results)
    return 0 if failed == 0 else 2


def _set_by_path(d: dict, path: str, value):
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


def _flatten_scalars(d: dict, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, (int, float, bool, str)):
            out[prefix + k] = v
    return out


def _sweep_row(args):
    idx, row_cfg, exact = args
    try:
        report = execute_experiment(row_cfg, exact=exact)
        row = {"passed": report.passed, "error": ""}
        row.update(_flatten_scalars(report.measured))
        row["runtime_s"] = report.runtime_s
        return idx, row
    except Exception as exc:
        return idx, {"passed": False, "error": str(exc)}


def cmd_sweep(config_path, out=None, threads: int = 1, exact: bool = False) -> int:
    try:
        cfg = load_config(config_path)
        errors = []
        if cfg.get("schema") != SWEEP_SCHEMA:
            errors.append(f"schema: expected {SWEEP_SCHEMA!r}")
        grid = cfg.get("grid")
        if not isinstance(grid, dict) or not grid:
            errors.append("grid: must be a non-empty object of "
                          "dotted-path -> value list")
        if errors:
            raise ConfigError(errors)
        keys = sorted(grid.keys())
        combos = list(itertools.product(*(grid[k] for k in keys)))
        if not combos or any(len(grid[k]) == 0 for k in keys):
            raise ConfigError(["grid: empty grid"])
        if len(combos) > MAX_SWEEP_ROWS:
            raise ConfigError([f"grid: {len(combos)} rows exceeds the "
                               f"{MAX_SWEEP_ROWS} limit"])
        master_seed = int(cfg.get("seed", 0))
        jobs = []
        for idx, combo in enumerate(combos):
            row_cfg = {"schema": RUN_SCHEMA,
                       "experiment": cfg.get("experiment"),
                       "seed": _derive_seed(master_seed, idx),
                       "params": json.loads(json.dumps(cfg.get("params", {})))}
            for k, v in zip(keys, combo):
                _set_by_path(row_cfg["params"], k, v)
            row_errors = validate_run_config(row_cfg)
            if row_errors:
                raise ConfigError([f"row {idx}: {e}" for e in row_errors])
            jobs.append((idx, row_cfg, exact))
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1

    results = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for idx, row in pool.map(_sweep_row, jobs):
                results[idx] = row
    else:
        for job in jobs:
            idx, row = _sweep_row(job)
            results[idx] = row

    rows = []
    any_error = False
    all_passed = True
    for idx, combo in enumerate(combos):
        res = results[idx]
        any_error |= bool(res.get("error"))
        all_passed &= bool(res.get("passed"))
        row = {"row": idx}
        row.update({k: v for k, v in zip(keys, combo)})
        base = {"passed": res.get("passed"), "error": res.get("error", "")}
        measured = {k: v for k, v in sorted(res.items())
                    if k not in ("passed", "error", "runtime_s")}
        row.update(base)
        row.update(measured)
        row["runtime_s"] = res.get("runtime_s", "")
        rows.append(row)
    outdir = Path(out or cfg.get("out") or "runs/sweep")
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(outdir / "sweep.csv", rows)
    print(f"{len(rows)} rows written to {outdir / 'sweep.csv'}")
    if any_error:
        return 1
    return 0 if all_passed else 2


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="torodyn",
        description="desk-scale laboratory for transport on the flat torus")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--exact", action="store_true",
                       help="disable flow-map memoization (slow)")

    p_ver = sub.add_parser("verify", help="run an invariant suite")
    p_ver.add_argument("suite", choices=["fields", "flow", "transport",
                                         "weakstar", "all"])
    p_ver.add_argument("--out", default=None)

    p_sw = sub.add_parser("sweep", help="run a parameter grid")
    p_sw.add_argument("--config", required=True)
    p_sw.add_argument("--out", default=None)
    p_sw.add_argument("--threads", type=int, default=1)
    p_sw.add_argument("--exact", action="store_true")

    args = parser.parse_args(argv)
    env_out = os.environ.get("TORODYN_OUT")
    env_threads = os.environ.get("TORODYN_THREADS")
    env_exact = os.environ.get("TORODYN_EXACT")

    out = getattr(args, "out", None) or env_out
    exact = getattr(args, "exact", False) or (env_exact not in (None, "", "0"))

    if args.command == "run":
        return cmd_run(args.config, out=out, exact=exact)
    if args.command == "verify":
        return cmd_verify(args.suite, out=out)
    if args.command == "sweep":
        threads = args.threads if args.threads != 1 else \
            int(env_threads) if env_threads else 1
        return cmd_sweep(args.config, out=out, threads=threads, exact=exact)
    return 1


if __name__ == "__main__":
    sys.exit(main())
