"""Command line: solve, extract boundaries, simulate and run the acceptance battery.

Configuration is an INI file with the sections ``problem``, ``grid``,
``solver``, ``simulation`` and ``output``.  Every key can be overridden with
``--override section.key=value``.

Exit codes: 0 success, 1 acceptance failure, 2 usage or configuration error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import acceptance
from . import feedback_synthesis as fb
from . import hjb_solver as hs
from . import problems
from . import sde_lab as lab
from ._io import write_csv
from .errors import ConfigurationError, DivergenceError, DomainError, InfeasibleResolutionError, SparseHJBError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

KINDS = ("scalar-linear", "lfc", "custom")
CONTROLLERS = ("l0", "l2", "l2-clamped", "det-law", "zero")

# Allowed keys per section, with defaults (None = depends on the problem kind).
SCHEMA = {
    "problem": {
        "kind": "scalar-linear",
        "penalty": "L0",
        "T": None,
        "x0": None,
        "c": "1",
        "sigma": None,
        "p": str(1.0 / 3.0),
        "k": "2",
        "d": "0.4",
        "A": "",
        "B": "",
        "S": "",
        "Q": "",
        "u_lo": None,
        "u_hi": None,
    },
    "grid": {"lower": None, "upper": None, "points": None},
    "solver": {"time_steps": "auto", "boundary": hs.ONE_SIDED, "cfl_safety": "0.5", "save_every": "auto"},
    "simulation": {"dt": "1e-3", "n_paths": "10000", "n_display": "5", "seed": "0", "controller": "l0"},
    "output": {"dir": "out"},
}

KIND_DEFAULTS = {
    "scalar-linear": {"T": "1", "x0": "0.5", "sigma": "0.1", "lower": "-2", "upper": "2", "points": "401"},
    "lfc": {"T": "0.5", "x0": "0.5 0", "sigma": "0.5", "lower": "-3 -3", "upper": "3 3", "points": "161 161"},
    "custom": {"T": "1", "x0": "0", "sigma": "0", "lower": "-2", "upper": "2", "points": "401"},
}

# Cap on stored slices for 2-D fields; the feedback then snaps to the nearest one.
MAX_SLICES_2D = 51


class UsageError(ConfigurationError):
    pass


# -- config ----------------------------------------------------------------------


def _floats(text: str, key: str) -> list:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"{key}: expected numbers, got {text!r}") from None


def _matrix(text: str, key: str) -> np.ndarray:
    """Rows separated by ';', entries by spaces or commas."""
    rows = [_floats(r, key) for r in text.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise UsageError(f"{key}: expected a rectangular matrix like '1 0; 0 1', got {text!r}")
    return np.array(rows)


@dataclass
class ExperimentConfig:
    raw: dict

    def get(self, section: str, key: str) -> str:
        return self.raw[section][key]

    def num(self, section: str, key: str) -> float:
        vals = _floats(self.get(section, key), f"{section}.{key}")
        if len(vals) != 1 or not math.isfinite(vals[0]):
            raise UsageError(f"{section}.{key}: expected one finite number, got {self.get(section, key)!r}")
        return vals[0]

    def int(self, section: str, key: str) -> int:
        v = self.num(section, key)
        if v != int(v):
            raise UsageError(f"{section}.{key}: expected an integer, got {self.get(section, key)!r}")
        return int(v)

    def vec(self, section: str, key: str) -> list:
        return _floats(self.get(section, key), f"{section}.{key}")

    @property
    def kind(self) -> str:
        return self.get("problem", "kind")


def _apply(raw: dict, section: str, key: str, value: str, where: str):
    if section not in SCHEMA:
        raise UsageError(f"{where}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise UsageError(f"{where}: unknown key '{key}' in section [{section}]")
    raw[section][key] = value.strip()


def load_config(path: Optional[str], overrides: Sequence[str] = (), seed: Optional[int] = None) -> ExperimentConfig:
    raw = {s: {} for s in SCHEMA}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case (A, B, T)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise UsageError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, value in parser.items(section):
                _apply(raw, section, key, value, f"{path} [{section}] {key}")
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise UsageError(f"--override expects section.key=value, got {ov!r}")
        lhs, value = ov.split("=", 1)
        section, key = lhs.split(".", 1)
        _apply(raw, section.strip(), key.strip(), value, f"--override {lhs}")
    if seed is not None:
        raw["simulation"]["seed"] = str(seed)

    kind = raw["problem"].get("kind", SCHEMA["problem"]["kind"])
    if kind not in KINDS:
        raise UsageError(f"problem.kind: expected one of {KINDS}, got {kind!r}")
    for section, keys in SCHEMA.items():
        for key, default in keys.items():
            if key in raw[section]:
                continue
            if default is None:
                default = KIND_DEFAULTS[kind].get(key, "")
            raw[section][key] = default
    cfg = ExperimentConfig(raw)
    validate(cfg)
    return cfg


# value type of every key; 'auto' is accepted where listed
KEY_TYPES = {
    ("problem", "penalty"): ("choice", ("L0", "L1", "L2", "l0", "l1", "l2", "L2-energy")),
    ("problem", "T"): "num",
    ("problem", "x0"): "vec",
    ("problem", "c"): "num",
    ("problem", "sigma"): "num",
    ("problem", "p"): "num",
    ("problem", "k"): "num",
    ("problem", "d"): "num",
    ("problem", "A"): "matrix",
    ("problem", "B"): "matrix",
    ("problem", "S"): "matrix",
    ("problem", "Q"): "matrix",
    ("problem", "u_lo"): "vec",
    ("problem", "u_hi"): "vec",
    ("grid", "lower"): "vec",
    ("grid", "upper"): "vec",
    ("grid", "points"): "vec",
    ("solver", "time_steps"): "int-or-auto",
    ("solver", "boundary"): ("choice", hs.BOUNDARY_POLICIES),
    ("solver", "cfl_safety"): "num",
    ("solver", "save_every"): "int-or-auto",
    ("simulation", "dt"): "num",
    ("simulation", "n_paths"): "int",
    ("simulation", "n_display"): "int",
    ("simulation", "seed"): "int",
    ("simulation", "controller"): ("choice", CONTROLLERS),
}


def validate(cfg: ExperimentConfig):
    """Type-check every key so a bad value fails before any work starts."""
    for (section, key), kind in KEY_TYPES.items():
        text = cfg.get(section, key)
        if text == "":
            continue
        if isinstance(kind, tuple):
            if text not in kind[1]:
                raise UsageError(f"{section}.{key}: expected one of {kind[1]}, got {text!r}")
        elif kind == "num":
            cfg.num(section, key)
        elif kind == "vec":
            cfg.vec(section, key)
        elif kind == "matrix":
            _matrix(text, f"{section}.{key}")
        elif kind == "int" or text != "auto":
            cfg.int(section, key)


# -- builders --------------------------------------------------------------------


def build_problem(cfg: ExperimentConfig, penalty: Optional[str] = None):
    kind = cfg.kind
    pen = penalty or cfg.get("problem", "penalty")
    T = cfg.num("problem", "T")
    lo_txt, hi_txt = cfg.get("problem", "u_lo"), cfg.get("problem", "u_hi")
    if kind == "scalar-linear":
        return problems.scalar_linear(
            c=cfg.num("problem", "c"),
            sigma=cfg.num("problem", "sigma"),
            T=T,
            penalty=pen,
            lower=cfg.num("problem", "u_lo") if lo_txt else -1.0,
            upper=cfg.num("problem", "u_hi") if hi_txt else 1.0,
        )
    if kind == "lfc":
        return problems.lfc(
            p=cfg.num("problem", "p"),
            k=cfg.num("problem", "k"),
            sigma=cfg.num("problem", "sigma"),
            d=cfg.num("problem", "d"),
            T=T,
            penalty=pen,
        )
    mats = {}
    for key in ("A", "B", "S", "Q"):
        if not cfg.get("problem", key):
            raise UsageError(f"problem.{key} is required for kind=custom")
        mats[key] = _matrix(cfg.get("problem", key), f"problem.{key}")
    m = mats["B"].shape[1]
    lower = cfg.vec("problem", "u_lo") if lo_txt else [-1.0] * m
    upper = cfg.vec("problem", "u_hi") if hi_txt else [1.0] * m
    return problems.custom_linear(mats["A"], mats["B"], mats["S"], mats["Q"], T, lower, upper, pen)


def build_grid(cfg: ExperimentConfig) -> hs.SpatialGrid:
    lower, upper = cfg.vec("grid", "lower"), cfg.vec("grid", "upper")
    points = [int(v) for v in cfg.vec("grid", "points")]
    if not (len(lower) == len(upper) == len(points)):
        raise UsageError("grid.lower, grid.upper and grid.points must have equal length")
    if len(lower) == 1:
        return hs.SpatialGrid(lower[0], upper[0], points[0])
    return hs.SpatialGrid(tuple(lower), tuple(upper), tuple(points))


def build_solver_config(cfg: ExperimentConfig, spec, grid) -> hs.SolverConfig:
    """Solver options; 'auto' steps are aligned so every simulation time is a slice."""
    dt = cfg.num("simulation", "dt")
    ts = cfg.get("solver", "time_steps")
    K = hs.aligned_time_steps(spec, grid, dt, cfg.num("solver", "cfl_safety")) if ts == "auto" else cfg.int("solver", "time_steps")
    se = cfg.get("solver", "save_every")
    if se == "auto":
        n_sim = int(round(spec.horizon / dt))
        per_sim = max(1, K // n_sim) if K % n_sim == 0 else 1
        save_every = per_sim
        if grid.dim > 1:
            save_every = per_sim * max(1, math.ceil(K / per_sim / (MAX_SLICES_2D - 1)))
    else:
        save_every = cfg.int("solver", "save_every")
    return hs.SolverConfig(
        time_steps=K,
        boundary_policy=cfg.get("solver", "boundary"),
        cfl_safety=cfg.num("solver", "cfl_safety"),
        save_every=save_every,
    )


def x0_of(cfg: ExperimentConfig, spec) -> np.ndarray:
    x0 = np.array(cfg.vec("problem", "x0"))
    if x0.size != spec.n:
        raise UsageError(f"problem.x0 has {x0.size} entries, the state has dimension {spec.n}")
    return x0


def out_dir(cfg: ExperimentConfig, cli_out: Optional[str]) -> Path:
    return Path(cli_out if cli_out is not None else cfg.get("output", "dir"))


def _field_for(cfg, spec, field_path: Optional[str], required: bool = True) -> Optional[hs.ValueField]:
    if field_path is None:
        if required:
            raise UsageError("--field is required for this command")
        return None
    if not Path(field_path).is_file():
        raise UsageError(f"value field file not found: {field_path}")
    return hs.read_field(field_path, spec)


# -- commands --------------------------------------------------------------------


def cmd_solve(args, cfg: ExperimentConfig) -> int:
    spec = build_problem(cfg)
    grid = build_grid(cfg)
    scfg = build_solver_config(cfg, spec, grid)
    t = time.perf_counter()
    field = hs.solve_backward(spec, grid, scfg)
    wall = time.perf_counter() - t
    path = hs.write_field(field, out_dir(cfg, args.out) / "value_field.txt")
    info = field.info
    print(f"grid: shape={grid.shape} spacing={tuple(round(h, 12) for h in grid.spacing)}")
    print(f"time steps: {info['time_steps']} dt={info['dt']:.6g} (CFL bound {info['dt_max']:.6g}), "
          f"slices stored: {field.times.size}, boundary: {info['boundary_policy']}")
    x0 = x0_of(cfg, spec)
    if grid.contains(x0[:, None])[0]:
        print(f"V(0, x0={x0.tolist()}) = {hs.value_at(field, 0.0, x0):.10g}")
    print(f"wall time: {wall:.3f} s")
    print(f"wrote {path}")
    return EXIT_OK


def _parse_times(text: Optional[str], T: float) -> np.ndarray:
    if text is None:
        return np.linspace(0.0, T, 50)
    if text.startswith("linspace:"):
        n = int(text.split(":", 1)[1])
        return np.linspace(0.0, T, n)
    vals = np.array(_floats(text, "--times"))
    if vals.size == 0 or np.any(vals < 0) or np.any(vals > T):
        raise UsageError(f"--times must lie in [0, {T}]")
    return vals


def cmd_boundary(args, cfg: ExperimentConfig) -> int:
    spec = build_problem(cfg)
    field = _field_for(cfg, spec, args.field)
    fmap = fb.FeedbackMap(field, spec)
    times = _parse_times(args.times, spec.horizon)
    boundaries = [fb.extract_boundary(fmap, s, j) for s in times for j in range(spec.m)]
    extra = None
    if cfg.kind == "scalar-linear":
        c, T = cfg.num("problem", "c"), spec.horizon
        sign = {"-": 1.0, "+": -1.0}

        def extra(s, branch):
            return sign[branch] * 0.5 * math.exp(-2.0 * c * (T - s))

    path = fb.write_boundaries(out_dir(cfg, args.out) / "boundary.csv", boundaries, field.grid.dim, extra)
    n_rows = sum(len(b) for bd in boundaries for b in bd.branches.values())
    print(f"{len(times)} times, {n_rows} boundary entries; wrote {path}")
    return EXIT_OK


def build_controller(cfg: ExperimentConfig, spec, name: str, field: Optional[hs.ValueField]):
    if name not in CONTROLLERS:
        raise UsageError(f"controller must be one of {CONTROLLERS}, got {name!r}")
    if name == "zero":
        return lab.zero_controller(spec.m)
    if name == "l0":
        if field is None:
            raise UsageError("controller l0 needs --field")
        return fb.FeedbackMap(field, spec)
    if cfg.kind != "scalar-linear":
        raise UsageError(f"controller {name} requires problem.kind=scalar-linear")
    c = cfg.num("problem", "c")
    if name == "det-law":
        if not (spec.controls.lower[0] == -1.0 and spec.controls.upper[0] == 1.0):
            raise UsageError("controller det-law assumes the control box [-1, 1]")
        return fb.DeterministicScalarLaw(c, spec.horizon)
    sched = lab.riccati_baseline(c, cfg.num("problem", "sigma"), spec.horizon)
    return lab.LinearFeedback(sched, spec.controls if name == "l2-clamped" else None)


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    spec = build_problem(cfg)
    name = args.controller or cfg.get("simulation", "controller")
    field = _field_for(cfg, spec, args.field, required=(name == "l0"))
    controller = build_controller(cfg, spec, name, field)
    x0 = x0_of(cfg, spec)
    dt = cfg.num("simulation", "dt")
    seed = cfg.int("simulation", "seed")
    n_paths = cfg.int("simulation", "n_paths")
    n_display = cfg.int("simulation", "n_display")
    out = out_dir(cfg, args.out)
    t = time.perf_counter()
    for i in range(n_display):
        path = lab.simulate(spec, controller, x0, 0.0, dt, seed, path_id=i)
        lab.write_path_csv(out / f"paths_{name}_{i}.csv", path)
    report = lab.monte_carlo(spec, controller, x0, 0.0, dt, n_paths, seed)
    rpath = lab.write_report_csv(out / f"report_{name}.csv", report, label=name)
    print(f"controller={name} paths={n_paths} seed={seed} dt={dt:g}")
    for p in ("L0", "L1", "L2"):
        print(f"  mean {p} cost {report.mean_cost[p]:.6g} (se {report.std_error[p]:.3g})")
    print(f"  sparsity fraction {report.sparsity_fraction:.4f}, exit fraction {report.exit_fraction:.4f}")
    print(f"  noise checksum {report.noise_checksum}")
    print(f"wall time: {time.perf_counter() - t:.3f} s; wrote {rpath} and {n_display} path files")
    return EXIT_OK


def cmd_compare(args, cfg: ExperimentConfig) -> int:
    spec = build_problem(cfg)
    grid = build_grid(cfg)
    if cfg.kind == "lfc":
        results = acceptance.lfc_battery(grid, spec.horizon)
    elif cfg.kind == "scalar-linear":
        field = _field_for(cfg, spec, args.field, required=False)
        if field is None:
            field = hs.solve_backward(spec, grid, build_solver_config(cfg, spec, grid))
        results = acceptance.scalar_battery(
            spec,
            field,
            x0=float(x0_of(cfg, spec)[0]),
            dt=cfg.num("simulation", "dt"),
            n_paths=cfg.int("simulation", "n_paths"),
            seed=cfg.int("simulation", "seed"),
            c=cfg.num("problem", "c"),
            sigma=cfg.num("problem", "sigma"),
        )
    else:
        raise UsageError("compare supports problem.kind scalar-linear or lfc")
    rows = []
    for r in results:
        print(r.line())
        rows.append([r.name, "PASS" if r.passed else "FAIL", r.measured, r.tolerance, r.seconds, r.detail])
    write_csv(out_dir(cfg, args.out) / "verdicts.csv", ["criterion", "verdict", "measured", "tolerance", "seconds", "detail"], rows)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparse-hjb", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI experiment file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides simulation.seed)")
        p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
        return p

    common(sub.add_parser("solve", help="solve the HJB equation and write the value field"))
    b = common(sub.add_parser("boundary", help="extract switching boundaries from a field"))
    b.add_argument("--field", help="value field file from 'solve'")
    b.add_argument("--times", help="comma list of times or 'linspace:N' (default 50 times)")
    s = common(sub.add_parser("simulate", help="simulate closed-loop paths and a Monte Carlo report"))
    s.add_argument("--field", help="value field file (needed for the l0 controller)")
    s.add_argument("--controller", choices=CONTROLLERS)
    c = common(sub.add_parser("compare", help="run the acceptance battery for the problem"))
    c.add_argument("--field", help="optional precomputed value field (scalar problems)")
    return ap


COMMANDS = {"solve": cmd_solve, "boundary": cmd_boundary, "simulate": cmd_simulate, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed)
        return COMMANDS[args.command](args, cfg)
    except (DivergenceError, InfeasibleResolutionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, DomainError, SparseHJBError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
