"""Experiment configuration, orchestration, CSV output and the command line.

A run is described by one YAML file::

    kind: dynamics            # dynamics | meanfield-sweep | phase-diagram | cooling | pulse
    seed: 7                   # master seed, mandatory
    output: runs/dyn          # output directory
    system:   {n_atoms: 100, n_modes: 2, zeta_tot: 15}
    initial:  {width_lambda: 20}
    schedule: {kappa_t_end: 1.0e4, kappa_dt: 0.05, n_trajectories: 4}

Every key is checked against a fixed schema; unknown keys are errors.  The
schema with defaults is the ``SCHEMA`` table below and is documented in the
README.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from .fieldanalysis import (NoPeaks, PulseTrace, averaged_output_intensity, grating_cluster,
                            pulse_metrics)
from .integrator import (MAX_KAPPA_DT, Schedule, TrajectoryRecord, adiabatic_fields,
                         run_ensemble)
from .meanfield import (NoCrossing, analytic_threshold, desk_ladder, sweep, threshold_detect)
from .model import LAMBDA_C, ParameterError, SystemParams
from .modes import ModeLadder, build_comb

THREADS_ENV = "COMBCAVITY_THREADS"

KINDS = ("dynamics", "meanfield-sweep", "phase-diagram", "cooling", "pulse")
VERBS = {
    "dynamics": "dynamics",
    "sweep": "meanfield-sweep",
    "phasediagram": "phase-diagram",
    "cooling": "cooling",
    "pulse": "pulse",
}

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ParseError(ValueError):
    """Malformed YAML, wrong value type or unknown key."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.key = key


class ValidationError(ValueError):
    """A well-formed config that breaks one or more invariants."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


# ---------------------------------------------------------------------------
# schema

_REQ = object()


@dataclass(frozen=True)
class _Key:
    kind: str
    default: Any = None
    choices: tuple | None = None


SCHEMA: dict[str, dict[str, _Key]] = {
    "system": {
        "kappa": _Key("float", 400.0),
        "delta_c": _Key("float", -400.0),
        "n_atoms": _Key("int", None),
        "n_modes": _Key("int", 1),
        "zeta_tot": _Key("float", None),
        "eta": _Key("float", None),
        "delta_k_frac": _Key("float", 4.26e-4),
        "trap_freq": _Key("float", 0.0),
    },
    "initial": {
        "width_lambda": _Key("float", _REQ),
        "kT": _Key("float", None),
    },
    "schedule": {
        "kappa_t_end": _Key("float", _REQ),
        "kappa_dt": _Key("float", 0.02),
        "n_samples": _Key("int", 200),
        "n_trajectories": _Key("int", 1),
        "adiabatic": _Key("bool", False),
        "write_trajectories": _Key("bool", True),
    },
    "sweep": {
        "zeta_tot": _Key("grid", None),
        "zeta_tot_relative": _Key("grid", None),
        "chi": _Key("floats", None),
        "direction": _Key("str", "both", ("up", "down", "both")),
        "width_lambda": _Key("float", 50.0),
        "cells_per_lambda": _Key("int", 32),
        "delta_k": _Key("float", 6.4e-4),
        "tol": _Key("float", 1e-9),
        "max_iter": _Key("int", 100_000),
        "seed_amplitude": _Key("float", 1e-3),
        "cut": _Key("float", 0.05),
    },
    "cooling": {
        "zeta_tot": _Key("floats", _REQ),
        "n_modes": _Key("ints", _REQ),
        "final_fraction": _Key("float", 0.0),
    },
    "pulse": {
        "source": _Key("str", "dynamics", ("dynamics", "clusters")),
        "clusters": _Key("clusters", None),
        "offset_lambda": _Key("float", 0.125),
        "samples": _Key("int", None),
        "average_last": _Key("int", 1),
        "threshold": _Key("float", 0.25),
        "spacing_tol": _Key("float", 0.1),
    },
}

_TOP = ("kind", "seed", "output") + tuple(SCHEMA)

_BLOCKS_FOR_KIND = {
    "dynamics": ({"system", "initial", "schedule"}, set()),
    "meanfield-sweep": ({"sweep"}, {"system"}),
    "phase-diagram": ({"sweep"}, {"system"}),
    "cooling": ({"system", "initial", "schedule", "cooling"}, set()),
    "pulse": ({"system", "pulse"}, {"initial", "schedule"}),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description (all defaults filled in)."""

    kind: str
    seed: int | None
    output: str
    system: dict | None = None
    initial: dict | None = None
    schedule: dict | None = None
    sweep: dict | None = None
    cooling: dict | None = None
    pulse: dict | None = None
    source: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed, "output": self.output}
        for name in SCHEMA:
            block = getattr(self, name)
            if block is not None:
                out[name] = dict(block)
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def with_overrides(self, seed: int | None = None, output: str | None = None):
        return replace(self, seed=self.seed if seed is None else seed,
                       output=self.output if output is None else output)

    def system_params(self, *, zeta_tot: float | None = None,
                      n_modes: int | None = None) -> SystemParams:
        s = self.system
        m = s["n_modes"] if n_modes is None else n_modes
        zt = s["zeta_tot"] if zeta_tot is None else zeta_tot
        n = s["n_atoms"] if s["n_atoms"] is not None else 1
        if zt is not None:
            return SystemParams.from_zeta_tot(
                zt, kappa=s["kappa"], delta_c=s["delta_c"], n_atoms=n, n_modes=m,
                delta_k_frac=s["delta_k_frac"], trap_freq=s["trap_freq"])
        return SystemParams(kappa=s["kappa"], delta_c=s["delta_c"], eta=s["eta"] or 0.0,
                            n_atoms=n, n_modes=m,
                            delta_k_frac=s["delta_k_frac"], trap_freq=s["trap_freq"])

    def validate(self) -> None:
        problems = _problems(self)
        if problems:
            raise ValidationError(problems)


def _key_lines(node, prefix=()) -> dict:
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            lines[path] = k.start_mark.line + 1
            lines.update(_key_lines(v, path))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = prefix + (i,)
            lines[path] = v.start_mark.line + 1
            lines.update(_key_lines(v, path))
    return lines


def _coerce(kind: str, value, where: str, line):
    def fail(what):
        raise ParseError(f"{where}: expected {what}, got {value!r}", line, where)

    if value is None:
        return None
    if kind == "float":
        if isinstance(value, bool):
            fail("a number")
        try:
            return float(value)
        except (TypeError, ValueError):
            fail("a number")
    if kind == "int":
        if isinstance(value, bool):
            fail("an integer")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            try:
                f = float(value)
            except ValueError:
                fail("an integer")
            if f.is_integer():
                return int(f)
        fail("an integer")
    if kind == "bool":
        if isinstance(value, bool):
            return value
        fail("true or false")
    if kind == "str":
        if isinstance(value, str):
            return value
        fail("a string")
    if kind in ("floats", "ints"):
        items = value if isinstance(value, list) else [value]
        return [_coerce(kind[:-1], v, where, line) for v in items]
    if kind == "grid":
        if isinstance(value, dict):
            extra = set(value) - {"start", "stop", "num"}
            if extra or set(value) != {"start", "stop", "num"}:
                fail("a list or a mapping with exactly start, stop, num")
            start = _coerce("float", value["start"], where + ".start", line)
            stop = _coerce("float", value["stop"], where + ".stop", line)
            num = _coerce("int", value["num"], where + ".num", line)
            if num < 2:
                fail("num >= 2")
            return [float(v) for v in np.linspace(start, stop, num)]
        return _coerce("floats", value, where, line)
    if kind == "clusters":
        if not isinstance(value, list):
            fail("a list of clusters")
        out = []
        for c in value:
            if not isinstance(c, dict) or set(c) - {"center_lambda", "n_sites"}:
                fail("clusters given as {center_lambda, n_sites}")
            if "center_lambda" not in c or "n_sites" not in c:
                fail("clusters given as {center_lambda, n_sites}")
            out.append({"center_lambda": _coerce("float", c["center_lambda"], where, line),
                        "n_sites": _coerce("int", c["n_sites"], where, line)})
        return out
    raise AssertionError(kind)


def _parse_block(name: str, raw, lines: dict) -> dict:
    line = lines.get((name,))
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError(f"block '{name}' must be a mapping", line, name)
    schema = SCHEMA[name]
    for key in raw:
        if key not in schema:
            raise ParseError(f"unknown key '{key}' in block '{name}'",
                             lines.get((name, str(key)), line), f"{name}.{key}")
    out = {}
    for key, entry in schema.items():
        if key in raw:
            value = _coerce(entry.kind, raw[key], f"{name}.{key}", lines.get((name, key), line))
            if entry.choices and value not in entry.choices:
                raise ParseError(f"{name}.{key} must be one of {', '.join(entry.choices)}",
                                 lines.get((name, key), line), f"{name}.{key}")
        elif entry.default is _REQ:
            value = _REQ
        else:
            value = entry.default
        out[key] = value
    return out


def parse_config(text: str, source: str | None = None, kind: str | None = None) -> ExperimentConfig:
    """Parse YAML text into a config without checking physical invariants."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                         mark.line + 1 if mark else None) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError("config must be a mapping", 1)
    lines = _key_lines(node) if node is not None else {}
    for key in data:
        if key not in _TOP:
            raise ParseError(f"unknown key '{key}'", lines.get((str(key),)), str(key))

    file_kind = data.get("kind")
    if file_kind is not None and file_kind not in KINDS:
        raise ParseError(f"kind must be one of {', '.join(KINDS)}", lines.get(("kind",)), "kind")
    if kind is not None and file_kind is not None and kind != file_kind:
        raise ValidationError([f"config kind '{file_kind}' does not match requested '{kind}'"])
    kind = kind or file_kind
    if kind is None:
        raise ValidationError(["experiment kind missing"])

    seed = data.get("seed")
    if seed is not None:
        seed = _coerce("int", seed, "seed", lines.get(("seed",)))
    output = data.get("output", f"runs/{kind}")
    if not isinstance(output, str):
        raise ParseError("output must be a path string", lines.get(("output",)), "output")

    blocks = {name: _parse_block(name, data[name], lines) for name in SCHEMA if name in data}
    if kind in ("meanfield-sweep", "phase-diagram") and blocks.get("system") is None:
        blocks["system"] = _parse_block("system", {}, lines)
    return ExperimentConfig(kind=kind, seed=seed, output=output, source=source, **blocks)


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    """Read, parse and validate a YAML experiment file.

    Raises
    ------
    ParseError
        Bad YAML, wrong value type or unknown key, with the offending line.
    ValidationError
        Missing blocks or violated invariants, all listed at once.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(), str(path), kind)
    cfg.validate()
    return cfg


def _missing(block: dict, name: str) -> list[str]:
    return [f"{name}.{k} is required" for k, v in block.items() if v is _REQ]


def _problems(cfg: ExperimentConfig) -> list[str]:
    out = []
    if cfg.seed is None:
        out.append("master seed is mandatory")
    elif not 0 <= cfg.seed < 2**64:
        out.append("seed must be an unsigned 64-bit integer")

    required, optional = _BLOCKS_FOR_KIND[cfg.kind]
    present = {name for name in SCHEMA if getattr(cfg, name) is not None}
    for name in sorted(required - present):
        out.append(f"block '{name}' is required for kind {cfg.kind}")
    for name in sorted(present - required - optional):
        out.append(f"block '{name}' is not used by kind {cfg.kind}")
    for name in sorted(present):
        out.extend(_missing(getattr(cfg, name), name))
    if out:
        return out

    particles = cfg.kind in ("dynamics", "cooling", "pulse")
    s = cfg.system
    if s is not None:
        if particles and s["n_atoms"] is None:
            out.append("system.n_atoms is required")
        if s["zeta_tot"] is not None and s["eta"] is not None:
            out.append("give either system.zeta_tot or system.eta, not both")
        if cfg.kind in ("dynamics", "pulse") and s["zeta_tot"] is None and s["eta"] is None:
            out.append("system.zeta_tot or system.eta is required")
        if cfg.kind == "cooling" and (s["zeta_tot"] is not None or s["eta"] is not None):
            out.append("cooling takes its pump values from cooling.zeta_tot, not the system block")
        try:
            cfg.system_params()
        except ParameterError as exc:
            out.extend(str(exc).split("; "))

    if cfg.initial is not None:
        if not cfg.initial["width_lambda"] > 0:
            out.append("initial.width_lambda must be positive")
        if cfg.initial["kT"] is not None and not cfg.initial["kT"] > 0:
            out.append("initial.kT must be positive")

    sch = cfg.schedule
    if sch is not None:
        if not sch["kappa_t_end"] > 0:
            out.append("schedule.kappa_t_end must be positive")
        if not 0 < sch["kappa_dt"] <= MAX_KAPPA_DT:
            out.append(f"schedule.kappa_dt must lie in (0, {MAX_KAPPA_DT}]")
        if sch["n_samples"] < 1:
            out.append("schedule.n_samples must be >= 1")
        if sch["n_trajectories"] < 1:
            out.append("schedule.n_trajectories must be >= 1")
        if sch["kappa_dt"] > 0 and sch["kappa_t_end"] < sch["kappa_dt"]:
            out.append("schedule.kappa_t_end is shorter than one step")

    sw = cfg.sweep
    if sw is not None:
        given = [k for k in ("zeta_tot", "zeta_tot_relative") if sw[k] is not None]
        if len(given) != 1:
            out.append("give exactly one of sweep.zeta_tot or sweep.zeta_tot_relative")
        for k in given:
            grid = np.asarray(sw[k])
            if grid.size < 2 or np.any(np.diff(np.sort(grid)) <= 0):
                out.append(f"sweep.{k} needs at least two distinct values")
            if np.any(grid <= 0):
                out.append(f"sweep.{k} values must be positive")
        if cfg.kind == "phase-diagram" and not sw["chi"]:
            out.append("sweep.chi is required for a phase diagram")
        if cfg.kind == "meanfield-sweep" and sw["chi"] and len(sw["chi"]) > 1:
            out.append("a single sweep takes at most one chi value")
        if sw["zeta_tot_relative"] is not None and not sw["chi"]:
            out.append("sweep.zeta_tot_relative needs sweep.chi")
        if sw["chi"] and any(c <= 0 for c in sw["chi"]):
            out.append("sweep.chi values must be positive")
        if sw["chi"] and not float(sw["width_lambda"]).is_integer():
            out.append("sweep.width_lambda must be a whole number of wavelengths when chi is set")
        if sw["width_lambda"] <= 0:
            out.append("sweep.width_lambda must be positive")
        if sw["cells_per_lambda"] < 32:
            out.append("sweep.cells_per_lambda must be >= 32")
        if not (sw["tol"] > 0 and sw["max_iter"] >= 1 and sw["delta_k"] > 0):
            out.append("sweep.tol, sweep.max_iter and sweep.delta_k must be positive")
        if not 0 < sw["cut"] < 1:
            out.append("sweep.cut must lie in (0, 1)")

    co = cfg.cooling
    if co is not None:
        if any(z < 0 for z in co["zeta_tot"]):
            out.append("cooling.zeta_tot values must be non-negative")
        if any(m < 1 for m in co["n_modes"]):
            out.append("cooling.n_modes values must be >= 1")
        if not 0 <= co["final_fraction"] < 1:
            out.append("cooling.final_fraction must lie in [0, 1)")

    pu = cfg.pulse
    if pu is not None:
        if pu["source"] == "clusters":
            if not pu["clusters"]:
                out.append("pulse.clusters is required for source 'clusters'")
            elif s is not None and s["n_atoms"] is not None:
                total = sum(c["n_sites"] for c in pu["clusters"])
                if total != s["n_atoms"]:
                    out.append(f"system.n_atoms={s['n_atoms']} but the clusters hold {total} atoms")
            if cfg.initial is not None or cfg.schedule is not None:
                out.append("source 'clusters' takes no initial or schedule block")
        else:
            if cfg.initial is None or cfg.schedule is None:
                out.append("source 'dynamics' needs initial and schedule blocks")
            if pu["clusters"]:
                out.append("pulse.clusters is only used with source 'clusters'")
        if pu["average_last"] < 1:
            out.append("pulse.average_last must be >= 1")
        if cfg.schedule is not None and pu["average_last"] > cfg.schedule["n_samples"] + 1:
            out.append("pulse.average_last exceeds the number of samples")
        if not 0 < pu["threshold"] < 1:
            out.append("pulse.threshold must lie in (0, 1)")
        if not pu["spacing_tol"] > 0:
            out.append("pulse.spacing_tol must be positive")
    return out


# ---------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, columns: list[tuple[str, str]], rows, cfg: ExperimentConfig,
                meta: dict | None = None) -> Path:
    """Comma-separated table with a commented header.

    The header carries the code version, the fully resolved config and the
    column names with units.
    """
    buf = io.StringIO()
    buf.write(f"# combcavity {__version__}\n")
    buf.write("# config:\n")
    for line in cfg.to_yaml().splitlines():
        buf.write(f"#   {line}\n")
    if meta:
        buf.write(f"# meta: {json.dumps(meta, sort_keys=True, default=_fmt)}\n")
    buf.write("# columns: " + ", ".join(f"{n} [{u}]" for n, u in columns) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([n for n, _ in columns])
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_table(path) -> dict[str, np.ndarray]:
    """Read a table written by :func:`write_table` back into columns."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    names = next(reader)
    cols = list(zip(*reader)) or [()] * len(names)
    out = {}
    for name, col in zip(names, cols):
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = np.array(col)
    return out


def _trajectory_columns(n_modes: int):
    cols = [("t", "1/omega_R"), ("kappa_t", "1"), ("theta_bar", "1"),
            ("ekin", "hbar omega_R"), ("photons", "1")]
    return cols + [(f"theta_{m}", "1") for m in range(n_modes)]


def _trajectory_rows(rec: TrajectoryRecord, kappa: float):
    return np.column_stack([rec.times, rec.times * kappa, rec.theta_bar, rec.ekin,
                            rec.photons, rec.theta])


def _ensemble_table(records: list[TrajectoryRecord], kappa: float):
    """Means and standard errors over trajectories (index order, so thread-order independent)."""
    n = len(records)
    stack = {name: np.array([getattr(r, name) for r in records])
             for name in ("theta_bar", "ekin", "photons", "theta")}

    def sem(a):
        return a.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(a.shape[1:], np.nan)

    times = records[0].times
    cols = [("t", "1/omega_R"), ("kappa_t", "1"), ("theta_bar", "1"), ("theta_bar_sem", "1"),
            ("ekin", "hbar omega_R"), ("ekin_sem", "hbar omega_R"), ("photons", "1"),
            ("photons_sem", "1")]
    cols += [(f"theta_{m}", "1") for m in range(stack["theta"].shape[2])]
    rows = np.column_stack([
        times, times * kappa,
        stack["theta_bar"].mean(0), sem(stack["theta_bar"]),
        stack["ekin"].mean(0), sem(stack["ekin"]),
        stack["photons"].mean(0), sem(stack["photons"]),
        stack["theta"].mean(0),
    ])
    return cols, rows


# ---------------------------------------------------------------------------
# experiments

@dataclass
class RunResult:
    kind: str
    out_dir: Path
    files: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _ensemble(cfg: ExperimentConfig, params: SystemParams, threads: int):
    ladder = build_comb(params)
    sch = cfg.schedule
    schedule = Schedule.from_kappa(params, sch["kappa_t_end"], sch["kappa_dt"], sch["n_samples"])
    kT = cfg.initial["kT"] if cfg.initial["kT"] is not None else params.kT_st
    records = run_ensemble(params, ladder, schedule, cfg.seed, sch["n_trajectories"],
                           cfg.initial["width_lambda"] * LAMBDA_C, kT, threads=threads,
                           adiabatic=sch["adiabatic"])
    return ladder, records


def _write_ensemble(cfg, params, records, out: Path, prefix: str, res: RunResult):
    kappa = params.kappa
    if cfg.schedule["write_trajectories"]:
        for rec in records:
            i = rec.meta["trajectory"]
            meta = {**rec.meta, "params": params.to_dict()}
            res.files.append(write_table(out / f"{prefix}traj_{i:04d}.csv",
                                         _trajectory_columns(params.n_modes),
                                         _trajectory_rows(rec, kappa), cfg, meta))
    cols, rows = _ensemble_table(records, kappa)
    meta = {**records[0].meta, "n_trajectories": len(records), "params": params.to_dict()}
    meta.pop("trajectory", None)
    res.files.append(write_table(out / f"{prefix}ensemble.csv", cols, rows, cfg, meta))
    return rows


def _run_dynamics(cfg, out, threads, log, res):
    params = cfg.system_params()
    _, records = _ensemble(cfg, params, threads)
    rows = _write_ensemble(cfg, params, records, out, "", res)
    res.summary = {"kappa_t_end": float(rows[-1, 1]), "theta_bar": float(rows[-1, 2]),
                   "ekin": float(rows[-1, 4]), "n_trajectories": len(records)}
    log(f"dynamics: {len(records)} trajectories to kappa*t={rows[-1, 1]:.4g}, "
        f"final theta_bar={rows[-1, 2]:.4f}, ekin={rows[-1, 4]:.4g}")


def _sweep_columns():
    return [("chi", "1"), ("n_modes", "1"), ("zeta_tot", "1"), ("theta_bar", "1"),
            ("direction", "-"), ("converged", "bool"), ("iterations", "1")]


def _sweep_rows(chi_value, result):
    return [(chi_value, result.theta.shape[1], z, tb, result.direction, c, it)
            for z, tb, c, it in zip(result.zeta_tot, result.theta_bar, result.converged,
                                    result.iterations)]


def _threshold(result, cut):
    try:
        return threshold_detect(result, cut)
    except NoCrossing:
        return math.nan


def _sweep_pair(cfg, ladder: ModeLadder, grid, directions):
    sw = cfg.sweep
    kw = dict(width=sw["width_lambda"] * LAMBDA_C, cells_per_lambda=sw["cells_per_lambda"],
              tol=sw["tol"], max_iter=sw["max_iter"], seed_amplitude=sw["seed_amplitude"])
    params = cfg.system_params(zeta_tot=1.0, n_modes=ladder.n_modes)
    grid = np.sort(np.asarray(grid, dtype=float))
    results = []
    up = None
    if "up" in directions:
        up = sweep(params, ladder, grid, "up", **kw)
        results.append(up)
    if "down" in directions:
        start = up.profiles[-1] if up is not None else None
        results.append(sweep(params, ladder, grid[::-1], "down", start=start, **kw))
    for r in results:
        r.profiles.clear()
    return results


def _chi_ladder(cfg, chi_value):
    sw = cfg.sweep
    width = sw["width_lambda"] * LAMBDA_C
    ladder = desk_ladder(chi_value, width, sw["delta_k"])
    realised = width * ladder.bandwidth / (2.0 * math.pi)
    return ladder, realised, analytic_threshold(realised, int(round(sw["width_lambda"])))


def _boundary_row(chi_req, chi_value, ladder, results, grid, analytic, cut):
    th = {r.direction: _threshold(r, cut) for r in results}
    step = float(np.max(np.diff(np.sort(grid))))
    return (chi_req, chi_value, ladder.n_modes, th.get("up", math.nan),
            th.get("down", math.nan), analytic, step)


_BOUNDARY_COLUMNS = [("chi_requested", "1"), ("chi", "1"), ("n_modes", "1"),
                     ("up_threshold", "1"), ("down_threshold", "1"),
                     ("analytic_threshold", "1"), ("grid_step", "1")]


def _directions(sw):
    return ("up", "down") if sw["direction"] == "both" else (sw["direction"],)


def _run_meanfield_sweep(cfg, out, threads, log, res):
    sw = cfg.sweep
    if sw["chi"]:
        ladder, chi_value, analytic = _chi_ladder(cfg, sw["chi"][0])
        chi_req = sw["chi"][0]
    else:
        ladder = build_comb(cfg.system_params(zeta_tot=1.0))
        chi_value = sw["width_lambda"] * LAMBDA_C * ladder.bandwidth / (2.0 * math.pi)
        chi_req, analytic = chi_value, math.nan
    grid = sw["zeta_tot"] if sw["zeta_tot"] is not None else \
        [analytic * r for r in sw["zeta_tot_relative"]]
    results = _sweep_pair(cfg, ladder, grid, _directions(sw))
    rows = [row for r in results for row in _sweep_rows(chi_value, r)]
    res.files.append(write_table(out / "sweep.csv", _sweep_columns(), rows, cfg))
    brow = _boundary_row(chi_req, chi_value, ladder, results, grid, analytic, sw["cut"])
    res.files.append(write_table(out / "thresholds.csv", _BOUNDARY_COLUMNS, [brow], cfg))
    res.summary = dict(zip([c for c, _ in _BOUNDARY_COLUMNS], brow))
    log(f"meanfield-sweep: chi={chi_value:.4g} M={ladder.n_modes} "
        f"up={brow[3]:.4g} down={brow[4]:.4g} analytic={analytic:.4g}")


def _run_phase_diagram(cfg, out, threads, log, res):
    sw = cfg.sweep

    def row(chi_req):
        ladder, chi_value, analytic = _chi_ladder(cfg, chi_req)
        grid = sw["zeta_tot"] if sw["zeta_tot"] is not None else \
            [analytic * r for r in sw["zeta_tot_relative"]]
        results = _sweep_pair(cfg, ladder, grid, _directions(sw))
        return chi_value, results, _boundary_row(chi_req, chi_value, ladder, results, grid,
                                                 analytic, sw["cut"])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(row, sw["chi"]))
    else:
        done = [row(c) for c in sw["chi"]]
    long_rows, boundary = [], []
    for chi_value, results, brow in done:
        long_rows.extend(r for res_ in results for r in _sweep_rows(chi_value, res_))
        boundary.append(brow)
        log(f"phase-diagram: chi={chi_value:.4g} M={brow[2]} up={brow[3]:.4g} "
            f"down={brow[4]:.4g} analytic={brow[5]:.4g}")
    res.files.append(write_table(out / "phase_diagram.csv", _sweep_columns(), long_rows, cfg))
    res.files.append(write_table(out / "boundary.csv", _BOUNDARY_COLUMNS, boundary, cfg))
    res.summary = {"rows": len(boundary)}


def _final_values(records, fraction):
    """Per-trajectory averages over the last ``fraction`` of the run (last sample if 0)."""
    t = records[0].times
    if fraction > 0:
        mask = t >= t[0] + (1.0 - fraction) * (t[-1] - t[0])
    else:
        mask = np.zeros(t.size, dtype=bool)
        mask[-1] = True
    out = {}
    for name in ("ekin", "theta_bar", "photons"):
        vals = np.array([getattr(r, name)[mask].mean() for r in records])
        sem = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else math.nan
        out[name] = (float(vals.mean()), float(sem))
    return out


def _run_cooling(cfg, out, threads, log, res):
    co = cfg.cooling
    rows = []
    for m in co["n_modes"]:
        for zt in co["zeta_tot"]:
            params = cfg.system_params(zeta_tot=zt, n_modes=m)
            _, records = _ensemble(cfg, params, threads)
            tag = f"cooling_z{zt:g}_M{m}_"
            _write_ensemble(cfg, params, records, out, tag, res)
            fin = _final_values(records, co["final_fraction"])
            kt_end = float(records[0].times[-1] * params.kappa)
            rows.append((zt, m, kt_end, *fin["ekin"], *fin["theta_bar"], *fin["photons"]))
            log(f"cooling: zeta_tot={zt:g} M={m} ekin={fin['ekin'][0]:.4g}"
                f"+-{fin['ekin'][1]:.2g} theta_bar={fin['theta_bar'][0]:.4f}")
    cols = [("zeta_tot", "1"), ("n_modes", "1"), ("kappa_t", "1"),
            ("ekin", "hbar omega_R"), ("ekin_sem", "hbar omega_R"), ("theta_bar", "1"),
            ("theta_bar_sem", "1"), ("photons", "1"), ("photons_sem", "1")]
    res.files.append(write_table(out / "cooling_final.csv", cols, rows, cfg))
    res.summary = {"rows": len(rows)}


def cluster_positions(clusters: list[dict], offset_lambda: float) -> np.ndarray:
    """Atom positions of several lambda_c gratings, in units of 1/k_c."""
    return np.concatenate([grating_cluster(c["center_lambda"] * LAMBDA_C, c["n_sites"],
                                           offset_lambda * LAMBDA_C) for c in clusters])


def _run_pulse(cfg, out, threads, log, res):
    pu = cfg.pulse
    params = cfg.system_params()
    if pu["source"] == "clusters":
        ladder = build_comb(params)
        x = cluster_positions(pu["clusters"], pu["offset_lambda"])
        field_sets = [(0, adiabatic_fields(x, params, ladder)[None, :])]
    else:
        ladder, records = _ensemble(cfg, params, threads)
        _write_ensemble(cfg, params, records, out, "", res)
        field_sets = [(r.meta["trajectory"], r.fields[-pu["average_last"]:]) for r in records]

    metric_rows, traces = [], []
    for i, fields in field_sets:
        trace = averaged_output_intensity(fields, pu["samples"])
        traces.append(trace)
        metric_rows.append((i, *_metric_row(trace, pu)))
        res.files.append(write_table(out / f"pulse_trace_{i:04d}.csv",
                                     [("t", "L/c"), ("intensity", "photons")],
                                     np.column_stack([trace.times, trace.intensity]), cfg))
    mean = PulseTrace(traces[0].times, np.mean([t.intensity for t in traces], axis=0))
    if len(traces) > 1:
        res.files.append(write_table(out / "pulse_trace_mean.csv",
                                     [("t", "L/c"), ("intensity", "photons")],
                                     np.column_stack([mean.times, mean.intensity]), cfg))
        metric_rows.append(("mean", *_metric_row(mean, pu)))
    cols = [("trajectory", "-"), ("n_peaks", "1"), ("peak_times", "L/c"),
            ("repetition_period", "L/c"), ("equispaced", "bool"), ("mean_width", "L/c"),
            ("contrast", "1")]
    res.files.append(write_table(out / "pulse_metrics.csv", cols, metric_rows, cfg))
    last = metric_rows[-1]
    res.summary = {"n_peaks": last[1], "equispaced": last[4]}
    log(f"pulse: {len(field_sets)} field set(s), n_peaks={last[1]} at t/(L/c)={last[2]}")


def _metric_row(trace, pu):
    try:
        m = pulse_metrics(trace, pu["threshold"], pu["spacing_tol"])
    except NoPeaks:
        return 0, "", math.nan, False, math.nan, 0.0
    times = " ".join(f"{t:.6g}" for t in m.peak_times)
    period = m.repetition_period if m.repetition_period is not None else math.nan
    return m.n_peaks, times, period, m.equispaced, float(np.mean(m.widths)), m.contrast


_DISPATCH: dict[str, Callable] = {
    "dynamics": _run_dynamics,
    "meanfield-sweep": _run_meanfield_sweep,
    "phase-diagram": _run_phase_diagram,
    "cooling": _run_cooling,
    "pulse": _run_pulse,
}


def run(config: ExperimentConfig, *, threads: int = 1,
        log: Callable[[str], None] = print) -> RunResult:
    """Execute an experiment and write its tables into ``config.output``.

    Outputs are fully determined by the config (including the master seed);
    the thread count only changes wall time.
    """
    config.validate()
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    res = RunResult(config.kind, out)
    _DISPATCH[config.kind](config, out, max(1, int(threads)), log, res)
    return res


# ---------------------------------------------------------------------------
# command line

def resolve_threads(flag: int | None, environ=os.environ) -> int:
    """``--threads`` wins over the environment variable, which wins over 1."""
    if flag is not None:
        value, source = flag, "--threads"
    elif environ.get(THREADS_ENV):
        source = THREADS_ENV
        try:
            value = int(environ[THREADS_ENV])
        except ValueError:
            raise ValidationError([f"{THREADS_ENV} must be an integer"]) from None
    else:
        return 1
    if value < 1:
        raise ValidationError([f"{source} must be >= 1"])
    return value


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="combcavity",
        description="Self-ordering and cooling of atoms in a comb-pumped cavity.")
    sub = parser.add_subparsers(dest="verb", required=True)
    helps = {
        "dynamics": "stochastic trajectory ensemble",
        "sweep": "mean-field pump sweep for one comb",
        "phasediagram": "mean-field thresholds over a bandwidth grid",
        "cooling": "kinetic-energy study over pump and mode count",
        "pulse": "output pulse train analysis",
        "validate": "check a config and print it with defaults",
    }
    for verb, text in helps.items():
        p = sub.add_parser(verb, help=text)
        p.add_argument("--config", required=True, type=Path, help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", type=str, default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: ${THREADS_ENV} or 1)")
    return parser


def _error_record(exc: BaseException, code: int) -> dict:
    rec = {"status": "error", "exit_code": code, "error": type(exc).__name__,
           "message": str(exc)}
    if isinstance(exc, ValidationError):
        rec["problems"] = exc.problems
    if isinstance(exc, ParseError):
        rec["line"] = exc.line
        rec["key"] = exc.key
    return rec


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    kind = VERBS.get(args.verb)
    try:
        text_kind = kind
        if args.verb == "validate":
            text_kind = None
        path = args.config
        if not path.is_file():
            raise ParseError(f"config file not found: {path}")
        cfg = parse_config(path.read_text(), str(path), text_kind)
        cfg = cfg.with_overrides(seed=args.seed, output=args.out)
        cfg.validate()
        threads = resolve_threads(args.threads)
    except (ParseError, ValidationError) as exc:
        print(json.dumps(_error_record(exc, EXIT_VALIDATION)), file=sys.stderr)
        return EXIT_VALIDATION

    if args.verb == "validate":
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK
    try:
        res = run(cfg, threads=threads)
    except Exception as exc:  # any module failure becomes a runtime error record
        rec = _error_record(exc, EXIT_RUNTIME)
        print(json.dumps(rec), file=sys.stderr)
        try:
            Path(cfg.output).mkdir(parents=True, exist_ok=True)
            (Path(cfg.output) / "error.json").write_text(json.dumps(rec, indent=2) + "\n")
        except OSError:
            pass
        return EXIT_RUNTIME
    print(json.dumps({"status": "ok", "kind": res.kind, "out": str(res.out_dir),
                      "files": len(res.files), "summary": res.summary}, default=_fmt))
    return EXIT_OK


def cli():
    sys.exit(main())


if __name__ == "__main__":
    cli()
