"""Batch experiments: config ingestion, orchestration and serialisation.

Configs are flat ``key = value`` files with dotted keys; ``#`` starts a
comment.  Every run writes into its own directory: CSV data, a JSON
summary, the echoed config and a manifest.  Wall-clock timings go to a
separate ``timings.json`` so that all other outputs are byte-identical
between runs with the same config.
"""

from __future__ import annotations

import argparse
import decimal
import itertools
import json
import math
import os
import re
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import ControlSplit, Discretization, DomainError, Grid, ProblemConfig, SplitMode, min_control_time
from .krylov import NotConverged

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VALIDATION = 0, 2, 3, 4
SUBCOMMANDS = ("simulate", "follower", "leader", "validate", "oracle-check", "sweep")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# key -> (type, default)
SCHEMA = {
    "preset": (str, ""),
    "problem.k": (float, 0.3),
    "problem.T": (float, 1.0),
    "problem.sigma": (float, 10.0),
    "problem.delta": (float, 0.0),
    "problem.rho0": (float, 0.0),
    "problem.rho1": (float, 0.0),
    "split.mode": (str, "overlap"),
    "split.t_split": (float, 0.5),
    "grid.ny": (int, 16),
    "grid.nt": (int, 0),
    "grid.cfl": (float, 0.5),
    "initial.v0.preset": (str, "zero"),
    "initial.v1.preset": (str, "zero"),
    "control.w1.preset": (str, "zero"),
    "control.w1.file": (str, ""),
    "target.v2.preset": (str, "zero"),
    "target.v2.file": (str, ""),
    "target.v0.preset": (str, "zero"),
    "target.v0.file": (str, ""),
    "target.v1.preset": (str, "zero"),
    "target.v1.file": (str, ""),
    "target.generator.preset": (str, "sine(2)"),
    "target.rho_relative": (float, 0.0),
    "solver.tol": (float, 1e-10),
    "solver.max_iter": (int, 500),
    "solver.picard_omega": (float, 1.0),
    "solver.coupling": (str, "auto"),
    "solver.mode": (str, "auto"),
    "solver.leader_tol": (float, 0.0),
    "solver.leader_max_iter": (int, 0),
    "sweep.subcommand": (str, "leader"),
    "sweep.workers": (int, 1),
    "seed": (int, 0),
}

PRESETS = {
    "standing_wave": {
        "problem.k": "0",
        "problem.T": "1",
        "initial.v0.preset": "sine(1)",
        "initial.v1.preset": "zero",
        "grid.ny": "32",
    },
    "reachable_target": {
        "problem.k": "0.3",
        "problem.T": "7.5",
        "problem.sigma": "10",
        "grid.ny": "16",
        "target.v0.preset": "from_forward_run",
        "target.v1.preset": "from_forward_run",
        "target.generator.preset": "sine(2)",
        "target.v2.preset": "zero",
        "target.rho_relative": "0.05",
    },
}


@dataclass
class RunConfig:
    values: dict
    sweep: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def problem(self) -> ProblemConfig:
        v = self.values
        mode = v["split.mode"]
        try:
            split = ControlSplit(SplitMode(mode), v["split.t_split"] if mode == "time_partition" else None)
        except (ValueError, DomainError) as err:
            raise ConfigError(f"split.mode: {err}") from err
        return ProblemConfig(
            k=v["problem.k"],
            T=v["problem.T"],
            sigma=v["problem.sigma"],
            delta=v["problem.delta"],
            rho0=v["problem.rho0"],
            rho1=v["problem.rho1"],
            split=split,
        )

    def grid(self, problem: ProblemConfig) -> Grid:
        v = self.values
        if v["grid.nt"] > 0:
            return Grid(v["grid.ny"], v["grid.nt"], v["grid.cfl"])
        return Grid.for_config(problem, v["grid.ny"], v["grid.cfl"])

    def echo(self) -> str:
        lines = [f"{k} = {_fmt_value(self.values[k])}" for k in sorted(self.values)]
        lines += [f"sweep.{k} = {', '.join(vals)}" for k, vals in sorted(self.sweep.items())]
        return "\n".join(lines) + "\n"


def _fmt_value(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _convert(key, raw, line):
    typ = SCHEMA[key][0]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError("not finite")
            return val
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}", line) from None


def parse_config(text: str, overrides=()) -> RunConfig:
    """Parse config text plus ``key=value`` overrides into a validated RunConfig."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        entries.append((key, val, lineno))
    for i, ov in enumerate(overrides):
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value")
        key, val = (s.strip() for s in ov.split("=", 1))
        entries.append((key, val, f"override {i + 1}"))

    raw_values = {}
    sweep = {}
    seen = {}
    for key, val, where in entries:
        if key.startswith("sweep.") and key not in SCHEMA:
            inner = key[len("sweep."):]
            if inner not in SCHEMA:
                raise ConfigError(f"unknown sweep key {inner!r}", where)
            sweep[inner] = [s.strip() for s in val.split(",") if s.strip()]
            if not sweep[inner]:
                raise ConfigError(f"sweep over {inner!r} lists no values", where)
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", where)
        if key in seen and not str(where).startswith("override"):
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", where)
        seen[key] = where
        raw_values[key] = (val, where)

    values = {k: d for k, (_, d) in SCHEMA.items()}
    preset = raw_values.get("preset", ("", None))[0]
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}", raw_values["preset"][1])
        for k, v in PRESETS[preset].items():
            values[k] = _convert(k, v, None)
    for key, (val, where) in raw_values.items():
        values[key] = _convert(key, val, where)
    for key, vals in sweep.items():
        for v in vals:
            _convert(key, v, None)
    cfg = RunConfig(values, sweep)
    _check_semantics(cfg, seen)
    return cfg


def _check_semantics(cfg: RunConfig, where):
    v = cfg.values
    for key in ("grid.ny",):
        if v[key] < 2:
            raise ConfigError(f"{key} must be at least 2", where.get(key))
    if v["solver.tol"] <= 0:
        raise ConfigError("solver.tol must be positive", where.get("solver.tol"))
    if not 0 < v["solver.picard_omega"] <= 1:
        raise ConfigError("solver.picard_omega must lie in (0, 1]", where.get("solver.picard_omega"))
    if v["solver.coupling"] not in ("auto", "picard", "krylov"):
        raise ConfigError("solver.coupling must be auto, picard or krylov", where.get("solver.coupling"))
    if v["solver.mode"] not in ("auto", "cg", "prox"):
        raise ConfigError("solver.mode must be auto, cg or prox", where.get("solver.mode"))
    tables = {
        "initial.v0.preset": GRID_PRESETS,
        "initial.v1.preset": GRID_PRESETS,
        "target.v0.preset": TARGET_PRESETS,
        "target.v1.preset": TARGET_PRESETS,
        "target.v2.preset": FIELD_PRESETS,
        "control.w1.preset": SIGNAL_PRESETS,
        "target.generator.preset": SIGNAL_PRESETS,
    }
    for key, table in tables.items():
        try:
            _parse_preset(v[key], table)
        except ConfigError as err:
            raise ConfigError(f"{key}: {err}", where.get(key)) from None
    try:
        cfg.grid(cfg.problem())
    except DomainError as err:
        raise ConfigError(str(err)) from err


# -- presets -----------------------------------------------------------------
GRID_PRESETS = {"zero": 0, "constant": 1, "sine": 1, "bump": 2}
TARGET_PRESETS = GRID_PRESETS | {"from_forward_run": 0}
SIGNAL_PRESETS = {"zero": 0, "constant": 1, "sine": 1, "bump": 2}
FIELD_PRESETS = {"zero": 0, "constant": 1, "sine": 1, "bump": 2, "separable": 2}
_PRESET_RE = re.compile(r"^([a-z_]+)\s*(?:\((.*)\))?$")


def _parse_preset(text, table):
    m = _PRESET_RE.match(text.strip())
    if not m or m.group(1) not in table:
        raise ConfigError(f"unknown preset {text!r}; known: {', '.join(sorted(table))}")
    name, args = m.group(1), m.group(2)
    try:
        vals = [float(a) for a in args.split(",")] if args and args.strip() else []
    except ValueError:
        raise ConfigError(f"preset {text!r} has non-numeric arguments") from None
    if len(vals) != table[name]:
        raise ConfigError(f"preset {name} takes {table[name]} argument(s), got {len(vals)}")
    return name, vals


def _bump(s, c, w):
    out = np.zeros_like(s)
    inside = np.abs(s - c) < w
    out[inside] = 0.5 * (1 + np.cos(np.pi * (s[inside] - c) / w))
    return out


def _profile(name, args, s):
    if name == "zero":
        return np.zeros_like(s)
    if name == "constant":
        return np.full_like(s, args[0])
    if name == "sine":
        return np.sin(args[0] * np.pi * s)
    if name == "bump":
        return _bump(s, args[0], args[1])
    raise ConfigError(f"preset {name} is not a profile")


def grid_function(text, y):
    name, args = _parse_preset(text, GRID_PRESETS)
    f = _profile(name, args, y)
    return f


def time_signal(text, disc):
    name, args = _parse_preset(text, SIGNAL_PRESETS)
    return _profile(name, args, disc.t / disc.config.T)


def space_time_field(text, disc):
    name, args = _parse_preset(text, FIELD_PRESETS)
    y, s = disc.y, disc.t / disc.config.T
    if name == "separable":
        return np.outer(np.cos(args[1] * np.pi * s), np.sin(args[0] * np.pi * y))
    return np.outer(np.ones_like(s), _profile(name, args, y))


# -- CSV ---------------------------------------------------------------------
def _num(x):
    return f"{float(x):.17g}"


def write_signal(path, t, values):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,value\n")
        for a, b in zip(t, values):
            fh.write(f"{_num(a)},{_num(b)}\n")


def write_grid_function(path, y, values):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("y,value\n")
        for a, b in zip(y, values):
            fh.write(f"{_num(a)},{_num(b)}\n")


def write_field(path, t, y, values):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,y,value\n")
        for n, tn in enumerate(t):
            tt = _num(tn)
            for j, yj in enumerate(y):
                fh.write(f"{tt},{_num(yj)},{_num(values[n, j])}\n")


def _read_csv(path, header):
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    if not lines or lines[0].strip() != header:
        raise ConfigError(f"{path}: expected header {header!r}")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError:
            raise ConfigError(f"{path}: bad number", i) from None
        if len(rows[-1]) != header.count(",") + 1:
            raise ConfigError(f"{path}: wrong column count", i)
    return np.array(rows)


def read_signal(path, disc):
    rows = _read_csv(path, "t,value")
    if rows.shape[0] != disc.nt + 1 or not np.allclose(rows[:, 0], disc.t, atol=1e-12):
        raise ConfigError(f"{path}: time nodes do not match the grid ({disc.nt + 1} expected)")
    return rows[:, 1]


def read_grid_function(path, disc):
    rows = _read_csv(path, "y,value")
    if rows.shape[0] != disc.ny + 1 or not np.allclose(rows[:, 0], disc.y, atol=1e-12):
        raise ConfigError(f"{path}: y nodes do not match the grid ({disc.ny + 1} expected)")
    return rows[:, 1]


def read_field(path, disc):
    rows = _read_csv(path, "t,y,value")
    if rows.shape[0] != (disc.nt + 1) * (disc.ny + 1):
        raise ConfigError(f"{path}: expected {(disc.nt + 1) * (disc.ny + 1)} rows")
    return rows[:, 2].reshape(disc.nt + 1, disc.ny + 1)


# -- runs --------------------------------------------------------------------
class Run:
    """Collects outputs in a staging directory; publishes them only on success."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.", dir=self.out.parent))
        self.files = []
        self.timings = {}

    def path(self, name):
        self.files.append(name)
        return self.stage / name

    def json(self, name, obj):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def timed(self, label):
        run = self

        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[label] = time.perf_counter() - self.t0

        return _T()

    def publish(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for name in self.files:
            src = self.stage / name
            if src.is_dir():
                dst = self.out / name
                if dst.exists():
                    shutil.rmtree(dst)
            os.replace(src, self.out / name)
        shutil.rmtree(self.stage, ignore_errors=True)

    def abort(self):
        shutil.rmtree(self.stage, ignore_errors=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _setup(cfg: RunConfig):
    problem = cfg.problem()
    grid = cfg.grid(problem)
    try:
        disc = Discretization(problem, grid)
    except DomainError as err:
        raise ConfigError(str(err)) from err
    return disc


def _v2(cfg, disc):
    if cfg["target.v2.file"]:
        return read_field(cfg["target.v2.file"], disc)
    return space_time_field(cfg["target.v2.preset"], disc)


def _w1(cfg, disc):
    if cfg["control.w1.file"]:
        return read_signal(cfg["control.w1.file"], disc)
    return time_signal(cfg["control.w1.preset"], disc)


def run_simulate(cfg, disc, run: Run):
    from .wavesolver import energy, solve_forward, terminal_pair

    v0 = grid_function(cfg["initial.v0.preset"], disc.y)
    v1 = grid_function(cfg["initial.v1.preset"], disc.y)
    bc = disc.compose_boundary(_w1(cfg, disc), None)
    with run.timed("forward"):
        V = solve_forward(disc, bc=bc, v0=v0, v1=v1)
    write_field(run.path("field.csv"), disc.t, disc.y, V.values)
    tp = terminal_pair(disc, V)
    e = energy(disc, V)
    summary = {
        "max_abs": float(np.max(np.abs(V.values))),
        "terminal_position_l2": disc.norm(tp.position, "L2"),
        "terminal_velocity_hm1": disc.norm(_zero_ends(tp.velocity), "HM1"),
        "energy_first": float(e[0]),
        "energy_last": float(e[-1]),
    }
    run.json("summary.json", summary)
    return summary


def _zero_ends(f):
    f = np.array(f, dtype=float)
    f[0] = f[-1] = 0.0
    return f


def run_follower(cfg, disc, run: Run):
    from .nash import FollowerProblem, eval_J, eval_J2, solve_follower

    w1 = disc.mask1 * _w1(cfg, disc)
    v2 = _v2(cfg, disc)
    with run.timed("follower"):
        sol = solve_follower(disc, FollowerProblem(w1, v2, cfg["solver.tol"], cfg["solver.max_iter"]))
    write_signal(run.path("w1.csv"), disc.t, w1)
    write_signal(run.path("w2.csv"), disc.t, sol.w2.values)
    write_field(run.path("state.csv"), disc.t, disc.y, sol.v.values)
    summary = {
        "J1": eval_J(disc, w1),
        "J2": eval_J2(disc, w1, sol.w2, v2),
        "grad_norm": sol.grad_norm,
        "grad_norm_initial": sol.grad_norm_initial,
        "iterations": sol.iterations,
        "residual_history": list(sol.history),
    }
    run.json("summary.json", summary)
    return summary


def leader_targets(cfg, disc, v2):
    """Targets ``(v0, v1)`` and, for ``from_forward_run``, the generating leader."""
    from .leader import TargetSpec
    from .nash import solve_optimality_system
    from .wavesolver import terminal_pair

    generator = None
    need = "from_forward_run" in (cfg["target.v0.preset"], cfg["target.v1.preset"])
    if need:
        generator = disc.mask1 * time_signal(cfg["target.generator.preset"], disc)
        v, _ = solve_optimality_system(disc, generator, v2, tol=1e-12)
        tp = terminal_pair(disc, v)

    def pick(which, reachable):
        if cfg[f"target.{which}.file"]:
            return read_grid_function(cfg[f"target.{which}.file"], disc)
        if cfg[f"target.{which}.preset"] == "from_forward_run":
            return reachable
        return grid_function(cfg[f"target.{which}.preset"], disc.y)

    v0 = _zero_ends(pick("v0", tp.position if need else None))
    v1 = _zero_ends(pick("v1", tp.velocity if need else None))
    rho0, rho1 = cfg["problem.rho0"], cfg["problem.rho1"]
    rel = cfg["target.rho_relative"]
    if rel > 0:
        rho0 = rel * disc.norm(v0, "L2")
        rho1 = rel * disc.norm(v1, "HM1")
    return TargetSpec(v0, v1, rho0, rho1), generator


def run_leader(cfg, disc, run: Run):
    from .leader import LeaderOperator, duality_report, solve_base_pair, solve_leader

    v2 = _v2(cfg, disc)
    target, generator = leader_targets(cfg, disc, v2)
    rho_pos = target.rho0 > 0 or target.rho1 > 0
    mode = cfg["solver.mode"]
    if mode == "auto":
        mode = "prox" if rho_pos else "cg"
    tol = cfg["solver.leader_tol"] or (1e-9 if mode == "prox" else 1e-3)
    max_iter = cfg["solver.leader_max_iter"] or (100000 if mode == "prox" else 200)
    op = LeaderOperator(disc, coupling=cfg["solver.coupling"], omega=cfg["solver.picard_omega"])
    with run.timed("base_pair"):
        base = solve_base_pair(disc, v2)
    with run.timed("leader"):
        sol = solve_leader(disc, target, v2=v2, mode=mode, tol=tol, max_iter=max_iter, op=op, base=base)
    rep = duality_report(disc, op, sol, target)
    write_signal(run.path("w1_star.csv"), disc.t, sol.w1_star.values)
    write_grid_function(run.path("f0.csv"), disc.y, sol.f_star.f0)
    write_grid_function(run.path("f1.csv"), disc.y, sol.f_star.f1)
    write_grid_function(run.path("terminal_position.csv"), disc.y, sol.terminal.position)
    write_grid_function(run.path("terminal_velocity.csv"), disc.y, sol.terminal.velocity)
    if generator is not None:
        write_signal(run.path("generating_leader.csv"), disc.t, generator)
    summary = {
        "mode": mode,
        "rho0": target.rho0,
        "rho1": target.rho1,
        "residual_l2": sol.residual_l2,
        "residual_hm1": sol.residual_hm1,
        "target_l2": disc.norm(target.v0_target, "L2"),
        "target_hm1": disc.norm(target.v1_target, "HM1"),
        "theta": sol.theta_value,
        "J1": sol.primal_value,
        "iterations": sol.iterations,
        "coupling": op.coupling,
        "min_control_time": min_control_time(disc.config.k) if 0 < disc.config.k < 1 else None,
        "residual_history": list(sol.history),
        **{f"duality_{k}": v for k, v in rep.items()},
    }
    run.json("summary.json", summary)
    return summary


def run_validate(cfg, disc, run: Run):
    from . import validation

    with run.timed("validate"):
        checks = validation.run_all(cfg, disc)
    report = {"passed": all(c["passed"] for c in checks), "checks": checks}
    run.json("validate.json", report)
    return report


def run_oracle_check(cfg, disc, run: Run):
    from . import validation

    with run.timed("oracle"):
        checks = validation.oracle_checks(cfg)
    report = {"passed": all(c["passed"] for c in checks), "checks": checks}
    run.json("oracle.json", report)
    return report


RUNNERS = {
    "simulate": run_simulate,
    "follower": run_follower,
    "leader": run_leader,
    "validate": run_validate,
    "oracle-check": run_oracle_check,
}


def _member(args):
    text, sub, out = args
    try:
        return execute(parse_config(text), sub, Path(out))
    except (ConfigError, DomainError):
        return EXIT_CONFIG
    except NotConverged:
        return EXIT_SOLVER


def run_sweep(cfg: RunConfig, out: Path):
    sub = cfg["sweep.subcommand"]
    if sub not in RUNNERS:
        raise ConfigError(f"sweep.subcommand must be one of {', '.join(RUNNERS)}")
    keys = sorted(cfg.sweep)
    if not keys:
        raise ConfigError("sweep needs at least one 'sweep.<key> = a, b, ...' line")
    base = RunConfig(dict(cfg.values))
    jobs = []
    names = []
    for i, combo in enumerate(itertools.product(*(cfg.sweep[k] for k in keys))):
        vals = dict(base.values)
        for k, v in zip(keys, combo):
            vals[k] = _convert(k, v, None)
        name = f"run_{i:03d}"
        names.append((name, dict(zip(keys, combo))))
        jobs.append((RunConfig(vals).echo(), sub, str(out / name)))
    if cfg["sweep.workers"] > 1:
        with ProcessPoolExecutor(cfg["sweep.workers"]) as pool:
            codes = list(pool.map(_member, jobs))
    else:
        codes = [_member(j) for j in jobs]
    index = [{"name": n, "params": p, "exit_code": c} for (n, p), c in zip(names, codes)]
    return index


def execute(cfg: RunConfig, subcommand: str, out: Path) -> int:
    """Run one subcommand; returns the exit code."""
    run = Run(out)
    try:
        if subcommand == "sweep":
            with run.timed("sweep"):
                index = run_sweep(cfg, Path(out))
            run.json("sweep.json", {"subcommand": cfg["sweep.subcommand"], "runs": index})
            result = {"passed": all(r["exit_code"] == EXIT_OK for r in index)}
        else:
            disc = _setup(cfg)
            result = RUNNERS[subcommand](cfg, disc, run)
        with open(run.path("config.echo"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(cfg.echo())
        outputs = sorted(run.files) + ["manifest.json"]
        manifest = {
            "subcommand": subcommand,
            "config": dict(cfg.values),
            "sweep": dict(cfg.sweep),
            "grid": _grid_echo(cfg) if subcommand != "sweep" else None,
            "tolerances": {k: cfg[k] for k in ("solver.tol", "solver.max_iter", "solver.picard_omega",
                                              "solver.leader_tol", "solver.leader_max_iter")},
            "outputs": outputs,
            "timings_file": "timings.json",
        }
        run.json("manifest.json", manifest)
        with open(run.stage / "timings.json", "w", encoding="utf-8") as fh:
            json.dump(run.timings, fh, indent=2, sort_keys=True)
        run.files.append("timings.json")
        for name in run.files:
            p = run.stage / name
            if not p.is_dir() and p.stat().st_size == 0:
                raise RuntimeError(f"output {name} is empty")
    except BaseException:
        run.abort()
        if subcommand == "sweep":
            for child in Path(out).glob("run_[0-9][0-9][0-9]"):
                shutil.rmtree(child, ignore_errors=True)
        raise
    run.publish()
    if subcommand in ("validate", "oracle-check", "sweep") and not result.get("passed", True):
        return EXIT_VALIDATION
    return EXIT_OK


def _grid_echo(cfg):
    problem = cfg.problem()
    g = cfg.grid(problem)
    return {"ny": g.ny, "nt": g.nt, "cfl": g.cfl, "dy": 1.0 / g.ny, "dt": problem.T / g.nt}


def build_parser():
    p = argparse.ArgumentParser(prog="stackwave", description="Leader/follower boundary control experiments")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="repeatable")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    except OSError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, args.override)
        return execute(cfg, args.subcommand, Path(args.out))
    except (ConfigError, DomainError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConverged as err:
        print(f"solver did not converge: {err}", file=sys.stderr)
        return EXIT_SOLVER


def decimal_min_control_time(k: float, digits: int = 40) -> float:
    """Independent evaluation of the control-time formula in decimal arithmetic."""
    with decimal.localcontext() as ctx:
        ctx.prec = digits
        kd = decimal.Decimal(k)
        x = 2 * kd * (1 + kd) / (1 - kd)
        return float((x.exp() - 1) / kd)


if __name__ == "__main__":
    sys.exit(main())
