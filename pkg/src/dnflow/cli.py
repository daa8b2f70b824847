"""Batch front door: parse a TOML experiment config, run one of the
evolve / groundstate / verify / refine pipelines, and emit deterministic
CSV/JSON artifacts.

Usage:
    dnflow <command> --config <path> [--out <dir>] [--seed <u64>] [--quiet]

Exit codes: 0 success, 2 config error, 3 solver nonconvergence, 4 I/O error.
The environment variable DNFLOW_THREADS caps the numeric thread count
(default: available parallelism).

Config schema (all keys validated, unknown keys rejected):

    command = "evolve"                 # optional; must match the CLI command

    [grid]
    dim = 1                            # 1 or 2
    lengths = [1.0]                    # per-axis box lengths
    interior_counts = [127]            # per-axis interior node counts

    [model]
    m = 1                              # component count
    psi = {kind = "ppower", p = 2.0, eps = 0.0}
    # or  {kind = "quadratic", A = [[...], ...]}
    F = {kind = "ppower", p = 2.0, eps = 0.0}
    # or  {kind = "quadratic", theta = 1.0}

    [run]
    T = 1.0                            # evolve/verify/compare horizons
    N = 32                             # step count (or N_list for refine)
    N_list = [8, 16, 32, 64]
    residual_tol = 1e-9                # optional; default 1e-9*max(1, E_F(g))
    max_iter = 200                     # optional
    eps_schedule = [1e-2, 1e-4, 0.0]   # optional
    rq_tol = 1e-10                     # groundstate stall tolerance
    max_sweeps = 10000                 # groundstate sweep cap
    method = "flow"                    # groundstate: "flow" or "direct"
    upsilon = 9.87                     # optional scaled-energy rate column

    [initial]
    name = "sine_eigenvector"          # zero | sine_eigenvector | bump |
                                       # random_seeded | product_sine_2d
    params = {seed = 42, amplitude = 1.0, modes = 8, direction = [1.0]}
    # or: snapshot = "path/to/field.csv"

    [output]
    directory = "out"                  # overridden by --out
    timestamp = true                   # suppress for byte-identical reruns
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .diagnostics import (
    dissipation_series,
    energy_series,
    max_principle_check,
    scaled_energy_report,
)
from .errors import ConfigError, DnflowError, UnknownDatum
from .grids import Grid, VectorField, load_snapshot, lp_norm, save_snapshot, w1p_seminorm
from .groundstate import (
    FlowConfig,
    direct_rayleigh_minimize,
    ground_state_via_flow,
    rayleigh_series,
)
from .models import PPower, PPowerNorm, Quadratic, QuadraticFrobenius
from .refinement import refinement_study
from .scheme import StepConfig, evolve

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "builtin_initial",
    "run",
    "main",
]

COMMANDS = ("evolve", "groundstate", "verify", "refine")
SERIES_COLUMNS = (
    "step",
    "time",
    "energy",
    "cumulative_dissipation",
    "dissipation_potential",
    "sup_norm",
    "rayleigh",
    "scaled_energy",
)
INITIAL_NAMES = ("zero", "sine_eigenvector", "bump", "random_seeded", "product_sine_2d")


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    grid: Grid
    m: int
    dspec: object
    espec: object
    T: float | None
    N: int | None
    N_list: tuple[int, ...] | None
    residual_tol: float | None
    max_iter: int
    eps_schedule: tuple[float, ...] | None
    rq_tol: float
    max_sweeps: int
    method: str
    upsilon: float | None
    initial_name: str | None
    initial_params: dict
    initial_snapshot: str | None
    out_directory: str
    timestamp: bool
    config_dir: str = field(default=".")


def _fail(key: str, why: str):
    raise ConfigError(f"{key}: {why}")


def _take(table: dict, key: str, context: str, required=False, default=None):
    if key not in table:
        if required:
            _fail(f"{context}.{key}" if context else key, "missing required key")
        return default
    return table.pop(key)


def _no_extras(table: dict, context: str):
    if table:
        stray = sorted(table)[0]
        _fail(f"{context}.{stray}" if context else stray, "unknown key")


def _positive(value, key, kind=float):
    try:
        value = kind(value)
    except (TypeError, ValueError):
        _fail(key, f"expected a {kind.__name__}")
    if value <= 0:
        _fail(key, "must be positive")
    return value


def _parse_psi(table, m: int, context: str):
    table = dict(table)
    kind = _take(table, "kind", context, required=True)
    if kind == "ppower":
        p = _positive(_take(table, "p", context, required=True), f"{context}.p")
        if p <= 1:
            _fail(f"{context}.p", "must exceed 1")
        eps = float(_take(table, "eps", context, default=0.0))
        if eps < 0:
            _fail(f"{context}.eps", "must be nonnegative")
        _no_extras(table, context)
        return PPower(p, eps, m=m)
    if kind == "quadratic":
        A = _take(table, "A", context, required=True)
        _no_extras(table, context)
        try:
            return Quadratic(np.asarray(A, dtype=float))
        except ValueError as exc:
            _fail(f"{context}.A", str(exc))
    _fail(f"{context}.kind", f"unknown model kind {kind!r}")


def _parse_F(table, m: int, n: int, context: str):
    table = dict(table)
    kind = _take(table, "kind", context, required=True)
    if kind == "ppower":
        p = _positive(_take(table, "p", context, required=True), f"{context}.p")
        if p <= 1:
            _fail(f"{context}.p", "must exceed 1")
        eps = float(_take(table, "eps", context, default=0.0))
        if eps < 0:
            _fail(f"{context}.eps", "must be nonnegative")
        _no_extras(table, context)
        return PPowerNorm(p, eps, m=m, n=n)
    if kind == "quadratic":
        theta = _positive(_take(table, "theta", context, required=True), f"{context}.theta")
        _no_extras(table, context)
        return QuadraticFrobenius(theta, m=m, n=n)
    _fail(f"{context}.kind", f"unknown model kind {kind!r}")


def parse_config(path: str, command: str | None = None) -> ExperimentConfig:
    """Read and strictly validate a TOML experiment config."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        _fail("config", f"file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        _fail("config", f"invalid TOML: {exc}")

    cfg_command = _take(raw, "command", "")
    if command is None:
        command = cfg_command
    elif cfg_command is not None and cfg_command != command:
        _fail("command", f"config says {cfg_command!r} but CLI asked for {command!r}")
    if command not in COMMANDS:
        _fail("command", f"must be one of {COMMANDS}, got {command!r}")

    grid_tbl = dict(_take(raw, "grid", "", required=True))
    dim = _take(grid_tbl, "dim", "grid", required=True)
    if dim not in (1, 2):
        _fail("grid.dim", "must be 1 or 2")
    lengths = _take(grid_tbl, "lengths", "grid", required=True)
    counts = _take(grid_tbl, "interior_counts", "grid", required=True)
    _no_extras(grid_tbl, "grid")
    if not isinstance(lengths, list) or len(lengths) != dim:
        _fail("grid.lengths", f"must list {dim} positive lengths")
    if not isinstance(counts, list) or len(counts) != dim:
        _fail("grid.interior_counts", f"must list {dim} positive counts")
    try:
        grid = Grid(tuple(float(x) for x in lengths), tuple(int(n) for n in counts))
    except (TypeError, ValueError) as exc:
        _fail("grid", str(exc))

    model_tbl = dict(_take(raw, "model", "", required=True))
    m = _take(model_tbl, "m", "model", default=1)
    if not isinstance(m, int) or m < 1:
        _fail("model.m", "must be an integer >= 1")
    psi_tbl = _take(model_tbl, "psi", "model", required=True)
    F_tbl = _take(model_tbl, "F", "model", required=True)
    _no_extras(model_tbl, "model")
    dspec = _parse_psi(psi_tbl, m, "psi")
    espec = _parse_F(F_tbl, m, grid.dim, "F")
    if isinstance(dspec, Quadratic) and dspec.m != m:
        _fail("psi.A", f"must be {m} x {m} for m = {m}")

    run_tbl = dict(_take(raw, "run", "", default={}))
    T = _take(run_tbl, "T", "run")
    if T is not None:
        T = _positive(T, "run.T")
    N = _take(run_tbl, "N", "run")
    if N is not None and (not isinstance(N, int) or N < 1):
        _fail("run.N", "must be an integer >= 1")
    N_list = _take(run_tbl, "N_list", "run")
    if N_list is not None:
        if not isinstance(N_list, list) or any(not isinstance(n, int) or n < 1 for n in N_list):
            _fail("run.N_list", "must list integers >= 1")
        N_list = tuple(N_list)
    residual_tol = _take(run_tbl, "residual_tol", "run")
    if residual_tol is not None:
        residual_tol = _positive(residual_tol, "run.residual_tol")
    max_iter = _take(run_tbl, "max_iter", "run", default=200)
    if not isinstance(max_iter, int) or max_iter < 1:
        _fail("run.max_iter", "must be an integer >= 1")
    eps_schedule = _take(run_tbl, "eps_schedule", "run")
    if eps_schedule is not None:
        try:
            eps_schedule = tuple(float(e) for e in eps_schedule)
        except (TypeError, ValueError):
            _fail("run.eps_schedule", "must list nonincreasing eps levels")
        if any(e < 0 for e in eps_schedule) or any(
            b > a for a, b in zip(eps_schedule, eps_schedule[1:])
        ):
            _fail("run.eps_schedule", "must list nonincreasing eps levels")
    rq_tol = _positive(_take(run_tbl, "rq_tol", "run", default=1e-10), "run.rq_tol")
    max_sweeps = _take(run_tbl, "max_sweeps", "run", default=10_000)
    if not isinstance(max_sweeps, int) or max_sweeps < 1:
        _fail("run.max_sweeps", "must be an integer >= 1")
    method = _take(run_tbl, "method", "run", default="flow")
    if method not in ("flow", "direct"):
        _fail("run.method", "must be 'flow' or 'direct'")
    upsilon = _take(run_tbl, "upsilon", "run")
    if upsilon is not None:
        upsilon = _positive(upsilon, "run.upsilon")
    _no_extras(run_tbl, "run")

    init_tbl = dict(_take(raw, "initial", "", default={}))
    name = _take(init_tbl, "name", "initial")
    snapshot = _take(init_tbl, "snapshot", "initial")
    params = dict(_take(init_tbl, "params", "initial", default={}))
    _no_extras(init_tbl, "initial")
    if name is not None and snapshot is not None:
        _fail("initial", "give either a builtin name or a snapshot, not both")
    if name is not None and name not in INITIAL_NAMES:
        _fail("initial.name", f"must be one of {INITIAL_NAMES}")
    config_dir = os.path.dirname(os.path.abspath(path))
    if snapshot is not None:
        snap_path = os.path.join(config_dir, snapshot)
        if not os.path.exists(snap_path):
            _fail("initial.snapshot", f"file not found: {snap_path}")

    out_tbl = dict(_take(raw, "output", "", default={}))
    directory = _take(out_tbl, "directory", "output", default="out")
    timestamp = _take(out_tbl, "timestamp", "output", default=True)
    if not isinstance(timestamp, bool):
        _fail("output.timestamp", "must be a boolean")
    series = _take(out_tbl, "series", "output", default=None)
    if series is not None:
        if not isinstance(series, list) or any(s not in SELECTABLE_SERIES for s in series):
            _fail("output.series", f"entries must be among {SELECTABLE_SERIES}")
        series = tuple(series)
    _no_extras(out_tbl, "output")
    _no_extras(raw, "")

    if command in ("evolve", "verify") and (T is None or N is None):
        _fail("run", f"{command} requires run.T and run.N")
    if command == "refine":
        if T is None or N_list is None:
            _fail("run", "refine requires run.T and run.N_list")
        if m != 1:
            _fail("model.m", "refine requires m = 1")
    if command != "groundstate" and name is None and snapshot is None:
        _fail("initial", f"{command} requires an initial datum")

    return ExperimentConfig(
        command=command,
        grid=grid,
        m=m,
        dspec=dspec,
        espec=espec,
        T=T,
        N=N,
        N_list=N_list,
        residual_tol=residual_tol,
        max_iter=max_iter,
        eps_schedule=eps_schedule,
        rq_tol=rq_tol,
        max_sweeps=max_sweeps,
        method=method,
        upsilon=upsilon,
        initial_name=name,
        initial_params=params,
        initial_snapshot=snapshot,
        out_directory=directory,
        timestamp=timestamp,
        config_dir=config_dir,
    )


# --- builtin initial data ---------------------------------------------------


def _direction(params: dict, m: int) -> np.ndarray:
    d = params.get("direction")
    if d is None:
        vec = np.zeros(m)
        vec[0] = 1.0
        return vec
    vec = np.asarray(d, dtype=float)
    if vec.shape != (m,):
        raise UnknownDatum(f"direction must have {m} entries")
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        raise UnknownDatum("direction must be nonzero")
    return vec / nrm


def builtin_initial(name: str, params: dict, grid: Grid, m: int) -> VectorField:
    """Deterministic built-in initial data.

    Scalar profiles are placed along params["direction"] (default: the first
    coordinate axis) for m > 1.  random_seeded draws smooth random fields
    from numpy's default 64-bit seeded generator (PCG64), so identical seeds
    reproduce bit-identically.
    """
    params = dict(params)
    known = {"amplitude", "direction", "seed", "modes"}
    for key in params:
        if key not in known:
            raise UnknownDatum(f"unknown initial parameter {key!r}")
    amplitude = float(params.get("amplitude", 1.0))
    pos = grid.node_positions()

    if name == "zero":
        return VectorField.zeros(grid, m)
    if name == "sine_eigenvector":
        if grid.dim != 1:
            raise UnknownDatum("sine_eigenvector is a 1D datum; use product_sine_2d")
        profile = np.sin(np.pi * pos[:, 0] / grid.lengths[0])
    elif name == "product_sine_2d":
        if grid.dim != 2:
            raise UnknownDatum("product_sine_2d requires a 2D grid")
        profile = np.sin(np.pi * pos[:, 0] / grid.lengths[0]) * np.sin(
            np.pi * pos[:, 1] / grid.lengths[1]
        )
    elif name == "bump":
        profile = np.ones(grid.n_nodes)
        for a in range(grid.dim):
            s = pos[:, a] / grid.lengths[a]
            profile = profile * 4.0 * s * (1.0 - s)
    elif name == "random_seeded":
        seed = int(params.get("seed", 0))
        modes = int(params.get("modes", 8))
        rng = np.random.default_rng(seed)
        vals = np.zeros((m, grid.n_nodes))
        # smooth random data: decaying random sine series per component
        for c in range(m):
            for _ in range(modes):
                ks = rng.integers(1, 5, size=grid.dim)
                coeff = rng.standard_normal() / float(np.prod(ks))
                term = np.ones(grid.n_nodes)
                for a in range(grid.dim):
                    term = term * np.sin(ks[a] * np.pi * pos[:, a] / grid.lengths[a])
                vals[c] += coeff * term
        return VectorField(grid, amplitude * vals)
    else:
        raise UnknownDatum(f"unknown builtin initial datum {name!r}")

    vec = _direction(params, m)
    return VectorField(grid, amplitude * np.outer(vec, profile))


# --- deterministic artifact writers -----------------------------------------


def _atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if x is None:
        return ""
    return "%.17g" % float(x)


def write_series_csv(path: str, columns: dict):
    """Fixed-order CSV (step,time,energy,...); absent quantities emit empty
    cells, never NaN text.  Values carry 17 significant digits."""
    n_rows = max((len(v) for v in columns.values() if v is not None), default=0)
    lines = [",".join(SERIES_COLUMNS)]
    for i in range(n_rows):
        cells = []
        for name in SERIES_COLUMNS:
            col = columns.get(name)
            val = col[i] if col is not None and i < len(col) else None
            if name == "step":
                cells.append("" if val is None else str(int(val)))
            else:
                cells.append(_fmt(val))
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_series_csv(path: str) -> dict:
    """Round-trip reader for `write_series_csv` output (None for empty cells)."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        if tuple(header) != SERIES_COLUMNS:
            raise ValueError(f"unexpected series header in {path}")
        out = {name: [] for name in SERIES_COLUMNS}
        for line in f:
            cells = line.rstrip("\n").split(",")
            for name, cell in zip(SERIES_COLUMNS, cells):
                if cell == "":
                    out[name].append(None)
                elif name == "step":
                    out[name].append(int(cell))
                else:
                    out[name].append(float(cell))
    return out


def write_json(path: str, payload: dict, timestamp: bool):
    payload = dict(payload)
    if timestamp:
        payload["timestamp"] = datetime.now(timezone.utc).isoformat()
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --- pipelines ---------------------------------------------------------------


def _load_initial(config: ExperimentConfig, seed_override: int | None) -> VectorField:
    if config.initial_snapshot is not None:
        g = load_snapshot(os.path.join(config.config_dir, config.initial_snapshot))
        if g.grid != config.grid or g.m != config.m:
            raise ConfigError("initial.snapshot: grid/m do not match the config")
        return g
    params = dict(config.initial_params)
    if seed_override is not None:
        params["seed"] = seed_override
    try:
        return builtin_initial(config.initial_name, params, config.grid, config.m)
    except UnknownDatum as exc:
        raise ConfigError(f"initial: {exc}") from exc


def _step_config(config: ExperimentConfig) -> StepConfig:
    return StepConfig(
        residual_tol=config.residual_tol,
        max_iter=config.max_iter,
        eps_schedule=config.eps_schedule,
    )


def _power_p(config: ExperimentConfig) -> float | None:
    if isinstance(config.dspec, PPower) and isinstance(config.espec, PPowerNorm):
        if config.dspec.p == config.espec.p:
            return config.dspec.p
    return None


def _trajectory_columns(config, traj):
    energy = energy_series(traj)
    columns = {
        "step": list(range(traj.N + 1)),
        "time": list(traj.times()),
        "energy": list(energy.values),
        "cumulative_dissipation": list(energy.aux["cumulative_dissipation"]),
        "sup_norm": [f.sup_norm() for f in traj.fields],
    }
    if traj.N >= 2:
        diss = dissipation_series(traj)
        columns["dissipation_potential"] = [None] + list(diss.values)
    p = _power_p(config)
    if p is not None:
        ray = []
        for f in traj.fields:
            b = lp_norm(f, p)
            ray.append(None if b == 0.0 else w1p_seminorm(f, p) ** p / b**p)
        columns["rayleigh"] = ray
        if config.upsilon is not None:
            scaled = scaled_energy_report(traj, config.upsilon)
            columns["scaled_energy"] = list(scaled.values)
    return columns, energy


def _run_evolve(config, out_dir, seed, quiet):
    g = _load_initial(config, seed)
    traj = evolve(g, config.dspec, config.espec, config.T, config.N, _step_config(config))
    columns, energy = _trajectory_columns(config, traj)
    write_series_csv(os.path.join(out_dir, "series.csv"), columns)
    save_snapshot(traj.fields[-1], os.path.join(out_dir, "final_state.csv"))
    summary = {
        "command": "evolve",
        "N": traj.N,
        "T": config.T,
        "tau": traj.tau,
        "residual_tol": traj.residual_tol,
        "max_step_residual": max(s.residual for s in traj.stats),
        "total_iterations": sum(s.iterations for s in traj.stats),
        "final_energy": energy.values[-1],
        "energy_monotone": energy.passed,
    }
    write_json(os.path.join(out_dir, "summary.json"), summary, config.timestamp)
    if not quiet:
        print(f"evolve: N={traj.N} final energy {energy.values[-1]:.6e}")
    return 0


def _run_groundstate(config, out_dir, seed, quiet):
    p = _power_p(config)
    if p is None:
        raise ConfigError("model: groundstate requires matching p-power psi and F")
    flow_cfg = FlowConfig(
        rq_tol=config.rq_tol,
        max_sweeps=config.max_sweeps,
        eps=config.dspec.eps if config.dspec.eps > 0 else None,
        max_iter=config.max_iter,
    )
    if config.method == "direct":
        report = direct_rayleigh_minimize(
            config.grid, p, config.m, seed if seed is not None else 0, flow_cfg
        )
    else:
        if config.initial_name is None and config.initial_snapshot is None:
            g = builtin_initial("random_seeded", {"seed": seed or 0}, config.grid, config.m)
        else:
            g = _load_initial(config, seed)
        report = ground_state_via_flow(g, p, flow_cfg)
    save_snapshot(report.profile, os.path.join(out_dir, "profile.csv"))
    hist = report.rayleigh_history
    write_series_csv(
        os.path.join(out_dir, "rayleigh_history.csv"),
        {"step": list(range(len(hist))), "rayleigh": list(hist)},
    )
    summary = {
        "command": "groundstate",
        "method": config.method,
        "p": p,
        "m": config.m,
        "lambda_estimate": report.lambda_estimate,
        "upsilon": report.upsilon,
        "iterations": report.iterations,
        "converged": report.converged,
    }
    write_json(os.path.join(out_dir, "summary.json"), summary, config.timestamp)
    if not quiet:
        print(
            f"groundstate[{config.method}]: lambda={report.lambda_estimate:.12g} "
            f"({report.iterations} sweeps, converged={report.converged})"
        )
    return 0


def _run_verify(config, out_dir, seed, quiet):
    g = _load_initial(config, seed)
    traj = evolve(g, config.dspec, config.espec, config.T, config.N, _step_config(config))
    columns, energy = _trajectory_columns(config, traj)
    write_series_csv(os.path.join(out_dir, "series.csv"), columns)
    checks = {
        "energy_monotone": energy.passed,
        "identity_defect_max": float(energy.aux["identity_defect"].max(initial=0.0)),
        "identity_defect_ok": bool(
            energy.aux["identity_defect"].max(initial=0.0)
            <= 10.0 * traj.N * traj.residual_tol
        ),
    }
    if traj.N >= 2:
        diss = dissipation_series(traj)
        checks["dissipation_monotone"] = diss.passed
        checks["dissipation_violation"] = diss.monotone_violation
    if traj.m == 1:
        mp = max_principle_check(traj)
        checks["max_principle"] = mp.passed
        checks["max_principle_violation"] = mp.monotone_violation
    p = _power_p(config)
    if p is not None and lp_norm(traj.fields[0], p) > 0:
        ray = rayleigh_series(traj, p)
        checks["rayleigh_monotone"] = ray.passed
        checks["rayleigh_violation"] = ray.monotone_violation
    summary = {"command": "verify", "all_passed": all(
        v for k, v in checks.items() if isinstance(v, bool)
    )}
    summary.update(checks)
    write_json(os.path.join(out_dir, "summary.json"), summary, config.timestamp)
    if not quiet:
        flags = {k: v for k, v in checks.items() if isinstance(v, bool)}
        print(f"verify: {sum(flags.values())}/{len(flags)} checks passed")
    return 0


def _run_refine(config, out_dir, seed, quiet):
    g = _load_initial(config, seed)
    report = refinement_study(
        g, config.dspec, config.espec, config.T, config.N_list, _step_config(config)
    )
    lines = ["N_coarse,N_fine,sup_distance"]
    for (n1, n2), d in zip(
        zip(report.N_list, report.N_list[1:]), report.pairwise_sup_distances
    ):
        lines.append(f"{n1},{n2},{_fmt(d)}")
    _atomic_write(os.path.join(out_dir, "distances.csv"), "\n".join(lines) + "\n")
    summary = {
        "command": "refine",
        "N_list": list(report.N_list),
        "pairwise_sup_distances": list(report.pairwise_sup_distances),
        "contraction_ratios": list(report.contraction_ratios),
        "passed": report.passed,
    }
    write_json(os.path.join(out_dir, "summary.json"), summary, config.timestamp)
    if not quiet:
        print(f"refine: distances {report.pairwise_sup_distances} passed={report.passed}")
    return 0


def run(
    config: ExperimentConfig,
    out_dir: str | None = None,
    seed: int | None = None,
    quiet: bool = False,
) -> int:
    """Dispatch a validated config; returns the process exit status."""
    out_dir = out_dir or os.path.join(config.config_dir, config.out_directory)
    os.makedirs(out_dir, exist_ok=True)
    runner = {
        "evolve": _run_evolve,
        "groundstate": _run_groundstate,
        "verify": _run_verify,
        "refine": _run_refine,
    }[config.command]
    return runner(config, out_dir, seed, quiet)


def _limit_threads():
    want = os.environ.get("DNFLOW_THREADS")
    if not want:
        return
    try:
        count = max(1, int(want))
    except ValueError:
        return
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=count)
    except ImportError:
        pass


def _error_record(exc: DnflowError, code: int) -> str:
    return json.dumps(
        {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dnflow",
        description="Doubly nonlinear flow experiments: evolve, groundstate, verify, refine.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML experiment config")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None, help="seed override (u64)")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    _limit_threads()
    try:
        config = parse_config(args.config, args.command)
        return run(config, out_dir=args.out, seed=args.seed, quiet=args.quiet)
    except ConfigError as exc:
        print(_error_record(exc, 2), file=sys.stderr)
        return 2
    except DnflowError as exc:
        print(_error_record(exc, 3), file=sys.stderr)
        return 3
    except OSError as exc:
        print(
            json.dumps({"error": "IOError", "message": str(exc), "exit_code": 4}),
            file=sys.stderr,
        )
        return 4


if __name__ == "__main__":
    sys.exit(main())
