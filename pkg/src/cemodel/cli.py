"""Command-line runner: YAML config plus CSV tables in, CSV results out.

Exit codes: 0 success, 1 invalid configuration or inputs, 2 failure while
simulating.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd
import scipy
import pyarrow as pa
import pyarrow.csv as pa_csv
import yaml

from .cea import CEOutput, cea, cea_pw, icer_summary, summarize_ce, write_cea_tables
from .cohort import CohortDtstm, CohortSettings
from .data import add_intercept, expand, load_context
from .indiv import IndivCtstm, TransitionModel
from .params import read_coefs
from .psm import Psm
from .rng import substream
from .statevals import StateValTable, stateval_draw
from .transprobs import TransProbArray, transprobs_from_rates

MODEL_TYPES = ("cohort-dtstm", "indiv-ctstm", "psm")
COMMON_FIELDS = {"model_type", "seed", "n_samples", "data", "utility", "costs", "discount", "cea"}
MODEL_FIELDS = {
    "cohort-dtstm": {"transitions", "transprobs", "cohort"},
    "indiv-ctstm": {"transitions", "indiv"},
    "psm": {"curves", "psm"},
}


class ConfigError(Exception):
    """Invalid configuration or unreadable input (exit code 1)."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Config:
    """Parsed run configuration; records every input file it resolves."""

    def __init__(self, path: Path, seed: int | None = None):
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        self.path = path
        self.base = path.parent
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        self.raw = raw
        self.inputs: dict[str, Path] = {}
        self.seed = self._seed(seed)

    def _seed(self, override: int | None) -> int:
        seed = override if override is not None else self.raw.get("seed")
        if seed is None:
            raise ConfigError("seed is required (config field 'seed' or --seed)")
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        return seed

    def get(self, key: str, default=None):
        return self.raw.get(key, default)

    def require(self, *keys: str) -> Any:
        node: Any = self.raw
        for i, k in enumerate(keys):
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"missing config field '{'.'.join(keys[: i + 1])}'")
            node = node[k]
        return node

    def file(self, value: str, what: str) -> Path:
        p = Path(value)
        p = p if p.is_absolute() else self.base / p
        if not p.is_file():
            raise ConfigError(f"{what} file not found: {p}")
        self.inputs.setdefault(str(value), p)
        return p


def _unused_fields(cfg: Config, model_type: str) -> list[str]:
    allowed = COMMON_FIELDS | MODEL_FIELDS[model_type]
    return sorted(k for k in cfg.raw if k not in allowed)


def _grid(spec, what: str) -> np.ndarray:
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if isinstance(spec, dict) and {"start", "stop", "step"} <= set(spec):
        start, stop, step = (float(spec[k]) for k in ("start", "stop", "step"))
        if step <= 0 or stop < start:
            raise ConfigError(f"{what}: need step > 0 and stop >= start")
        n = int(np.floor((stop - start) / step + 1e-9))
        return start + step * np.arange(n + 1)
    raise ConfigError(f"{what} must be a list or a mapping with start, stop, step")


def _rates(spec, what: str) -> list[float]:
    rates = spec if isinstance(spec, list) else [spec]
    try:
        return [float(r) for r in rates]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be numbers") from exc


def _coefs(cfg: Config, spec: dict, n: int, label: str):
    if "coefs" not in spec or "family" not in spec:
        raise ConfigError(f"{label}: 'family' and 'coefs' are required")
    vcov = cfg.file(spec["vcov"], f"{label} covariance") if "vcov" in spec else None
    sp = read_coefs(cfg.file(spec["coefs"], f"{label} coefficient"), spec["family"], vcov, n, substream(cfg.seed, label))
    return sp.resize(n)


def _statevals(cfg: Config, spec: dict, ctx, n: int, label: str):
    if "table" not in spec:
        raise ConfigError(f"{label}: 'table' is required")
    tbl = StateValTable.from_csv(cfg.file(spec["table"], f"{label} table"), spec.get("dist", "fixed"))
    return stateval_draw(tbl, ctx, n, bool(spec.get("time_reset", False)), substream(cfg.seed, label))


def _build(cfg: Config, threads: int):
    """Load everything and return a callable that runs the simulation."""
    model_type = cfg.require("model_type")
    if model_type not in MODEL_TYPES:
        raise ConfigError(f"model_type must be one of {MODEL_TYPES}, not {model_type!r}")
    n = cfg.require("n_samples")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("n_samples must be a positive integer")
    data = cfg.require("data")
    ctx = load_context(
        cfg.file(cfg.require("data", "strategies"), "strategies"),
        cfg.file(cfg.require("data", "patients"), "patients"),
        cfg.file(cfg.require("data", "states"), "states"),
        cfg.file(data["tmat"], "transition matrix") if "tmat" in data else None,
    )
    input_data = add_intercept(expand(ctx))
    utility = _statevals(cfg, cfg.require("utility"), ctx, n, "utility")
    cost_specs = cfg.require("costs")
    if not isinstance(cost_specs, list) or not cost_specs:
        raise ConfigError("costs must be a non-empty list")
    costs = {}
    for spec in cost_specs:
        name = spec.get("name") if isinstance(spec, dict) else None
        if not name or name in costs:
            raise ConfigError("every cost model needs a unique 'name'")
        costs[name] = _statevals(cfg, spec, ctx, n, f"cost:{name}")
    disc = cfg.get("discount", {}) or {}
    dr_q = _rates(disc.get("qalys", [0.0, 0.03]), "discount.qalys")
    dr_c = _rates(disc.get("costs", [0.0, 0.03]), "discount.costs")

    def transition_params():
        if ctx.tmat is None:
            raise ConfigError(f"{model_type} needs data.tmat")
        specs = cfg.require("transitions")
        params = {}
        for spec in specs:
            trans = spec.get("transition")
            if not isinstance(trans, int):
                raise ConfigError("each transition needs an integer 'transition' number")
            params[trans] = _coefs(cfg, spec, n, f"transition:{trans}")
        return params

    if model_type == "cohort-dtstm":
        s = cfg.require("cohort")
        settings = CohortSettings(float(s.get("cycle_length", 1.0)), int(s.get("n_cycles", 1)), s.get("method", "trapezoid"))
        if "transprobs" in cfg.raw:
            tp = TransProbArray.from_frame(pd.read_csv(cfg.file(cfg.raw["transprobs"], "transition probability")))
            if tp.ids["sample"].nunique() != n:
                raise ConfigError(f"transition probability table has {tp.ids['sample'].nunique()} samples; n_samples is {n}")
        else:
            tp = transprobs_from_rates(ctx.tmat, transition_params(), input_data, settings.cycle_length)
        model = CohortDtstm(tp, settings, utility, costs)

        def run():
            sp = model.sim_stateprobs()
            return {"stateprobs": sp.by_group().to_frame()}, model, None

    elif model_type == "indiv-ctstm":
        s = cfg.get("indiv", {}) or {}
        params = transition_params()
        tm = TransitionModel(
            ctx.tmat,
            params,
            clock=s.get("clock", "reset"),
            start_age=s.get("start_age"),
            max_age=s.get("max_age"),
            max_t=float(s.get("max_t", 100.0)),
        )
        grid = _grid(s.get("t_grid", {"start": 0, "stop": min(tm.max_t, 30.0), "step": 1}), "indiv.t_grid")
        model = IndivCtstm(tm, input_data, n, cfg.seed, utility, costs)

        def run():
            dp = model.sim_disease(threads)
            return {"disprog": dp.to_frame(), "stateprobs": model.sim_stateprobs(grid).to_frame()}, model, None

    else:
        s = cfg.require("psm")
        specs = cfg.require("curves")
        if not isinstance(specs, list) or len(specs) != ctx.n_states:
            raise ConfigError(f"psm needs {ctx.n_states} curves (one fewer than the states including death)")
        curves = [_coefs(cfg, spec, n, f"curve:{i + 1}") for i, spec in enumerate(specs)]
        grid = _grid(cfg.require("psm", "t_grid"), "psm.t_grid")
        model = Psm(curves, input_data, n, utility, costs, s.get("method", "trapezoid"))

        def run():
            sc = model.sim_survival(grid)
            sp = model.sim_stateprobs()
            return {"survival": sc.to_frame(), "stateprobs": sp.by_group().to_frame()}, model, model.crossings_

    def simulate():
        tables, m, crossings = run()
        tables["qalys"] = m.sim_qalys(sorted(set(dr_q)))
        tables["costs"] = m.sim_costs(sorted(set(dr_c)))
        by_grp = bool((cfg.get("cea") or {}).get("by_grp", True))
        ce = summarize_ce(tables["qalys"], tables["costs"], by_grp, ctx.grp_weights())
        tables["ce_qalys"] = ce.qalys
        tables["ce_costs"] = ce.costs
        return tables, crossings

    return model_type, n, simulate


def _versions() -> dict[str, str]:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scipy": scipy.__version__,
        "pyarrow": pa.__version__,
        "pyyaml": yaml.__version__,
        "cemodel": own,
    }


def write_csv(df: pd.DataFrame, path: Path) -> None:
    """Fast CSV with shortest round-trip float text; NaN is written empty."""
    with open(path, "wb") as fh:
        fh.write((",".join(df.columns) + "\n").encode())
        table = pa.Table.from_pandas(df, preserve_index=False)
        pa_csv.write_csv(table, fh, pa_csv.WriteOptions(include_header=False, quoting_style="needed"))


def _write(out: Path, tables: dict[str, pd.DataFrame]) -> dict[str, str]:
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, df in tables.items():
        p = out / f"{name}.csv"
        write_csv(df, p)
        hashes[p.name] = _sha256(p)
    return hashes


def _manifest(out: Path, cfg: Config, extra: dict, outputs: dict[str, str], name: str = "manifest.json") -> None:
    doc = {
        "config": cfg.path.name,
        "config_sha256": _sha256(cfg.path),
        "seed": cfg.seed,
        **extra,
        "inputs": {k: _sha256(p) for k, p in sorted(cfg.inputs.items())},
        "outputs": dict(sorted(outputs.items())),
        "versions": _versions(),
    }
    (out / name).write_text(json.dumps(doc, indent=2) + "\n")


def cmd_simulate(args) -> int:
    cfg, stage = _stage(lambda: Config(Path(args.config), args.seed))
    if cfg is None:
        return stage
    model_type = cfg.get("model_type")
    if model_type in MODEL_TYPES:
        unused = _unused_fields(cfg, model_type)
        if unused:
            print(f"warning: config fields not used by {model_type}: {', '.join(unused)}", file=sys.stderr)
    built, stage = _stage(lambda: _build(cfg, args.threads))
    if built is None:
        return stage
    model_type, n, simulate = built
    try:
        tables, crossings = simulate()
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out_dir)
    hashes = _write(out, tables)
    _manifest(out, cfg, {"command": "simulate", "model_type": model_type, "n_samples": n, "psm_crossings": crossings}, hashes)
    return 0


def _stage(fn: Callable):
    """Run a loading step; validation problems map to exit code 1."""
    try:
        return fn(), 0
    except (ConfigError, ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return None, 1


def cmd_cea(args) -> int:
    cfg, stage = _stage(lambda: Config(Path(args.config), args.seed))
    if cfg is None:
        return stage
    out = Path(args.out_dir)

    def load():
        spec = cfg.require("cea")
        if "comparator" not in spec:
            raise ConfigError("missing config field 'cea.comparator'")
        run_dir = out
        if "run_dir" in spec:
            run_dir = Path(spec["run_dir"])
            run_dir = run_dir if run_dir.is_absolute() else cfg.base / run_dir
        q = cfg.file(spec["qalys"], "cea qalys") if "qalys" in spec else run_dir / "ce_qalys.csv"
        c = cfg.file(spec["costs"], "cea costs") if "costs" in spec else run_dir / "ce_costs.csv"
        for p in (q, c):
            if not p.is_file():
                raise ConfigError(f"cost-effectiveness table not found: {p}")
            cfg.inputs.setdefault(str(p.name), p)
        ce = CEOutput.from_csv(q, c)
        k = _grid(spec.get("wtp", {"start": 0, "stop": 100000, "step": 1000}), "cea.wtp")
        comparator = int(spec["comparator"])
        if comparator not in set(ce.qalys["strategy_id"]):
            raise ConfigError(f"comparator strategy {comparator} is not in the results")
        return ce, k, comparator, float(spec.get("dr_qalys", 0.03)), float(spec.get("dr_costs", 0.03)), spec

    loaded, stage = _stage(load)
    if loaded is None:
        return stage
    ce, k, comparator, dr_q, dr_c, spec = loaded
    try:
        res = cea(ce, k, dr_q, dr_c)
        pw = cea_pw(ce, comparator, k, dr_q, dr_c)
        icer = icer_summary(pw, float(spec.get("icer_wtp", k[-1])))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    paths = write_cea_tables(out, res, pw, icer)
    outputs = {p.name: _sha256(p) for p in paths}
    _manifest(out, cfg, {"command": "cea", "comparator": comparator}, outputs, "cea_manifest.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cemodel", description="Health economic simulation models")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "run a model and write outcome tables"), ("cea", "cost-effectiveness analysis of simulated outcomes")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML configuration file")
        p.add_argument("--out-dir", required=True, help="directory for result tables")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (results do not depend on it)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 1
    return cmd_simulate(args) if args.command == "simulate" else cmd_cea(args)


if __name__ == "__main__":
    sys.exit(main())
