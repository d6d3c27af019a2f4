"""Command-line front end: ``critsense <command> --config <path> ...``.

The config file is flat ``key = value`` text (``#`` starts a comment). Every
energy is in units of the Ising coupling J. Command-line flags override the
file. Curves and grids go out as CSV, with a JSON record of the echoed
config, summary numbers and diagnostics next to it (``<out>.json``); with
``--format json`` a single JSON record holds everything.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from critsense import __version__, free_fermion
from critsense.fisher import qfi_point
from critsense.global_metric import SensingRegion, g_single
from critsense.lanczos import ConvergenceError
from critsense.probe_optimizer import (
    OptimizationError,
    SearchAxis,
    efficiency_map,
    fit_scaling,
    minimize_g,
)
from critsense.spin_lattice import FieldPoint, ProbeConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("sweep-g1d", "scaling", "optimize-2d", "efficiency", "qfi-point")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


# key -> parser; defaults that depend on the command are filled in later
SCHEMA = {
    "L": int,
    "J": float,
    "engine": str,
    "method": str,
    "mock_value": _floats,
    "h_x_cen": float,
    "h_z_cen": float,
    "dh_x": float,
    "dh_z": float,
    "B_x": float,
    "B_z": float,
    "B_x_min": float,
    "B_x_max": float,
    "B_x_step": float,
    "B_z_min": float,
    "B_z_max": float,
    "B_z_step": float,
    "L_values": _ints,
    "h_z": _floats,
    "compare_ed": _bool,
    "nodes": int,
    "refine": _bool,
    "rtol": float,
    "max_nodes": int,
    "polish": _bool,
    "fold_mirror": _bool,
    "grid_points": int,
    "B_x_ref": float,
    "B_z_ref": float,
    "cfi_step": float,
    "threads": int,
    "out": str,
    "format": str,
}

COMMON = {
    "J": 1.0, "method": "auto", "h_x_cen": 0.0, "h_z_cen": 0.0, "nodes": 16, "refine": True,
    "rtol": 1e-3, "max_nodes": 128, "threads": os.cpu_count() or 1, "out": "", "format": "csv",
}
DEFAULTS = {
    "sweep-g1d": {"L": 1000, "engine": "free_fermion", "dh_z": 0.1, "B_z_min": 0.0, "B_z_max": 2.0, "B_z_step": 0.02},
    "scaling": {
        "engine": "free_fermion", "dh_z": 0.05, "L_values": (64, 128, 256, 512, 1024),
        "B_z_min": -3.0, "B_z_max": 3.0, "B_z_step": 0.02, "polish": True, "fold_mirror": True,
    },
    "optimize-2d": {
        "L": 10, "engine": "ed", "dh_x": 0.2, "dh_z": 0.2, "nodes": 4, "refine": False,
        "B_x_min": 0.0, "B_x_max": 3.0, "B_x_step": 0.05, "B_z_min": -2.0, "B_z_max": 2.0, "B_z_step": 0.05,
        "polish": True, "fold_mirror": True,
    },
    "efficiency": {
        "L": 10, "h_x_cen": 0.5, "h_z_cen": 0.7, "dh_x": 0.2, "dh_z": 0.2, "B_x": 1.39, "B_z": -0.39,
        "grid_points": 11, "B_x_ref": 0.0, "B_z_ref": 0.0, "cfi_step": 1e-4,
    },
    "qfi-point": {"L": 10, "engine": "free_fermion", "B_z": 0.0, "h_z": (1.0,), "compare_ed": False},
}


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> dict:
        """Canonical text form of every key; re-parses to the same config."""
        out = {}
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, bool):
                out[k] = "true" if v else "false"
            elif isinstance(v, tuple):
                out[k] = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                out[k] = repr(v)
            else:
                out[k] = str(v)
        return out


def parse_text(text: str) -> dict[str, str]:
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        raw[key] = value
    return raw


def build_config(command: str, raw: dict[str, str]) -> RunConfig:
    """Typed, defaulted and validated run configuration."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    values = dict(COMMON)
    values.update(DEFAULTS[command])
    for key, text in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        try:
            values[key] = SCHEMA[key](text)
        except ValueError as err:
            raise ConfigError(f"bad value for {key!r}: {err}") from None
    cfg = RunConfig(command, values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    v = cfg.values
    for key, val in v.items():
        seq = val if isinstance(val, tuple) else (val,)
        if any(isinstance(x, float) and not math.isfinite(x) for x in seq):
            raise ConfigError(f"{key} must be finite")
    if v["J"] != 1.0:
        raise ConfigError("energies are given in units of J, so J must be 1")
    if v["format"] not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    if v["method"] not in ("auto", "dense", "iterative"):
        raise ConfigError("method must be auto, dense or iterative")
    if "engine" in v and v["engine"] not in ("free_fermion", "ed", "mock"):
        raise ConfigError("engine must be free_fermion, ed or mock")
    if v.get("engine") == "mock" and not v.get("mock_value"):
        raise ConfigError("the mock engine needs mock_value")
    if v.get("mock_value") and any(x <= 0 for x in v["mock_value"]):
        raise ConfigError("mock_value entries must be positive")
    if v["threads"] < 1 or v["nodes"] < 1 or v["max_nodes"] < v["nodes"] or not v["rtol"] > 0:
        raise ConfigError("threads and nodes must be >= 1, max_nodes >= nodes, rtol > 0")
    for key in ("dh_x", "dh_z"):
        if key in v and v[key] < 0:
            raise ConfigError(f"{key} must be >= 0")
    try:
        for L in v.get("L_values", ()) if cfg.command == "scaling" else (v["L"],):
            ProbeConfig(L)
            if v.get("engine") == "free_fermion" and L % 2:
                raise ConfigError("the free-fermion engine needs even L")
        for ax in ("B_x", "B_z"):
            if f"{ax}_step" in v:
                SearchAxis(v[f"{ax}_min"], v[f"{ax}_max"], v[f"{ax}_step"])
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if cfg.command == "scaling" and len(set(v["L_values"])) < 4:
        raise ConfigError("scaling needs at least four distinct L values")
    if cfg.command in ("optimize-2d", "efficiency") and v.get("engine", "ed") == "free_fermion":
        raise ConfigError("two-parameter commands need the ed or mock engine")
    if cfg.command == "efficiency" and v["grid_points"] < 2:
        raise ConfigError("grid_points must be >= 2")
    if cfg.command == "qfi-point" and not v["h_z"]:
        raise ConfigError("qfi-point needs at least one h_z value")


# -- commands ------------------------------------------------------------------

def _region1(v) -> SensingRegion:
    return SensingRegion.single(v["h_z_cen"], v["dh_z"])


def _region2(v) -> SensingRegion:
    return SensingRegion.rectangle((v["h_x_cen"], v["h_z_cen"]), (v["dh_x"], v["dh_z"]))


def _g_opts(v) -> dict:
    opts = {"rtol": v["rtol"], "max_nodes": v["max_nodes"], "refine": v["refine"]}
    if v["engine"] == "mock":
        mv = v["mock_value"]
        opts["value"] = mv[0] if len(mv) == 1 else np.diag(mv)
    elif v["engine"] == "ed":
        opts["method"] = v["method"]
    return opts


def _axis(v, name) -> SearchAxis:
    return SearchAxis(v[f"{name}_min"], v[f"{name}_max"], v[f"{name}_step"])


def cmd_sweep_g1d(cfg: RunConfig):
    v = cfg.values
    region = _region1(v)
    base = ProbeConfig(v["L"])
    rows, history = [], []
    for B in _axis(v, "B_z").grid():
        r = g_single(base.with_control(B_z=float(B)), region, v["engine"], v["nodes"], **_g_opts(v))
        rows.append((float(B), r.value))
        history.append({"B_z": float(B), "refinement": r.history, "converged": r.converged})
    i = int(np.argmin([g for _, g in rows]))
    summary = {"B_z_grid_min": rows[i][0], "g_grid_min": rows[i][1]}
    return ("B_z", "g"), rows, summary, {"quadrature": history}


def cmd_scaling(cfg: RunConfig):
    v = cfg.values
    region = _region1(v)
    rows, diag = [], []
    for L in v["L_values"]:
        opt = minimize_g(
            ProbeConfig(L), region, (_axis(v, "B_z"),), engine=v["engine"], nodes=v["nodes"],
            polish=v["polish"], fold_mirror=v["fold_mirror"], threads=1, **_g_opts(v),
        )
        rows.append((L, opt.g_star))
        diag.append({"L": L, "B_z_star": opt.B_star[0], "boundary": opt.boundary, "failures": len(opt.failures)})
    fit = fit_scaling([r[0] for r in rows], [r[1] for r in rows])
    summary = {"a": fit.a, "b": fit.b, "c": fit.c, "residual": fit.residual, "ill_determined": fit.ill_determined}
    return ("L", "g_star"), rows, summary, {"optima": diag}


def cmd_optimize2d(cfg: RunConfig):
    v = cfg.values
    opt = minimize_g(
        ProbeConfig(v["L"]), _region2(v), (_axis(v, "B_x"), _axis(v, "B_z")), engine=v["engine"],
        nodes_per_axis=v["nodes"], polish=v["polish"], fold_mirror=v["fold_mirror"], threads=v["threads"],
        **_g_opts(v),
    )
    rows = [(B[0], B[1], g) for B, g in opt.grid]
    summary = {
        "B_x_star": opt.B_star[0], "B_z_star": opt.B_star[1], "g_star": opt.g_star,
        "B_x_grid": opt.grid_best[0], "B_z_grid": opt.grid_best[1], "g_grid": opt.g_grid_best,
        "boundary": opt.boundary, "polished": opt.polished,
    }
    diag = {"failures": [[list(B), msg] for B, msg in opt.failures], "evaluations": len(opt.trace)}
    return ("B_x", "B_z", "g"), rows, summary, diag


def cmd_efficiency(cfg: RunConfig):
    v = cfg.values
    emap = efficiency_map(
        ProbeConfig(v["L"], B_x=v["B_x"], B_z=v["B_z"]), _region2(v), v["grid_points"],
        reference_B=(v["B_x_ref"], v["B_z_ref"]), step=v["cfi_step"], method=v["method"],
    )
    rows = [
        (float(x), float(z), float(emap.ratio_qfi_cfi[i, j]), float(emap.ratio_b0_bstar[i, j]))
        for i, x in enumerate(emap.h_x)
        for j, z in enumerate(emap.h_z)
    ]
    diag = {"flagged": [list(f) for f in emap.flagged]}
    return ("h_x", "h_z", "ratio_qfi_cfi", "ratio_b0_bstar"), rows, emap.summary(), diag


def cmd_qfi_point(cfg: RunConfig):
    v = cfg.values
    config = ProbeConfig(v["L"], B_z=v["B_z"])
    hz = np.array(v["h_z"], dtype=float)
    if v["engine"] == "free_fermion":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fq, _ = free_fermion.susceptibility(config.B_z + hz, config.J, config.L)
        fq = np.atleast_1d(fq)
    elif v["engine"] == "mock":
        fq = np.full(hz.shape, v["mock_value"][0])
    else:
        fq = _ed_qfi(config, hz, v["method"])
    header = ("h_z", "F_Q")
    columns = [hz, fq]
    summary = {"F_Q_max": float(np.max(fq)), "h_z_at_max": float(hz[int(np.argmax(fq))])}
    if v["compare_ed"]:
        ed = _ed_qfi(config, hz, v["method"])
        header += ("F_Q_ed",)
        columns.append(ed)
        summary["max_relative_difference"] = float(np.max(np.abs(fq - ed) / ed))
    return header, [tuple(float(c[i]) for c in columns) for i in range(hz.size)], summary, {}


def _ed_qfi(config, hz, method):
    out, warm = [], None
    for h in hz:
        F, warm = qfi_point(config, FieldPoint(0.0, float(h)), ("z",), method, warm)
        out.append(F.matrix[0, 0])
    return np.array(out)


HANDLERS = {
    "sweep-g1d": cmd_sweep_g1d,
    "scaling": cmd_scaling,
    "optimize-2d": cmd_optimize2d,
    "efficiency": cmd_efficiency,
    "qfi-point": cmd_qfi_point,
}


# -- output --------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.12g}"


def to_csv(header, rows) -> str:
    lines = [",".join(header)] + [",".join(_fmt(x) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(x) for k, x in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def record(cfg: RunConfig, header, rows, summary, diagnostics, elapsed: float) -> dict:
    return {
        "tool": "critsense",
        "version": __version__,
        "command": cfg.command,
        "config": cfg.echo(),
        "columns": list(header),
        "rows": [list(r) for r in rows],
        "summary": summary,
        "diagnostics": diagnostics,
        "timing": {"seconds": elapsed},
    }


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".critsense-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="critsense", description="Critical-probe global sensing calculations.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="output path (default: standard output)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--threads", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    return p


def load(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = parse_text(fh.read())
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from None
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, val = item.split("=", 1)
        raw[k.strip()] = val.strip()
    for key in ("out", "format", "threads"):
        if getattr(args, key) is not None:
            raw[key] = str(getattr(args, key))
    return build_config(args.command, raw)


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load(args)
    except ConfigError as err:
        print(f"critsense: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    t0 = time.perf_counter()
    try:
        header, rows, summary, diagnostics = HANDLERS[cfg.command](cfg)
    except (ArithmeticError, ValueError, ConvergenceError, OptimizationError) as err:
        print(f"critsense: numerical failure in {cfg.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    rec = _jsonable(record(cfg, header, rows, summary, diagnostics, time.perf_counter() - t0))

    out = cfg["out"]
    if cfg["format"] == "json":
        text = json.dumps(rec, indent=2) + "\n"
        if out:
            write_atomic(out, text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    text = to_csv(header, rows)
    if out:
        write_atomic(out, text)
        meta = {k: x for k, x in rec.items() if k not in ("columns", "rows")}
        write_atomic(out + ".json", json.dumps(meta, indent=2) + "\n")
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
