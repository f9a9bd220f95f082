"""Command-line pipeline: validate -> cell -> tensors -> macro -> micro -> compare.

Exit codes
----------
0 success; 1 stage ran but failed its checks; 2 usage error or unknown
subcommand; 3 missing input file; 4 parse or validation error; 5 solver
failure; 6 output I/O failure.  On failure a JSON error object is printed to
stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, fem, persist
from .cells import CellLoadCase, CellOperator, CellSolution, residual_check, solve_all_cells
from .config import ConfigError, macro_config_from_dict, micro_config_from_dict
from .correctors import compare_runs, is_monotone_decreasing, slope_fits
from .geometry import (GeometryError, MicrostructureError, build_cell_mesh, parse_microstructure,
                       random_spec, validate_geometry, write_microstructure)
from .macro import MacroRun, MacroState, MacroSystem, run_macro
from .micro import MicroRun, MicroState, MicroSystem, apriori_report, run_micro
from .tensors import TensorInputError, audit_tensors, compute_tensors

log = logging.getLogger("porolayer")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_MISSING, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = range(7)


class StageFailed(RuntimeError):
    """The stage completed but its result failed a check."""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="porolayer", description="Homogenized poroelastic plate toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--output-dir", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="concurrent tasks")
    common.add_argument("--tol", type=float, default=None, help="solver tolerance override")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for random microstructures (input 'random')")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    s = sub.add_parser("validate", parents=[common], help="check a layer microstructure")
    s.add_argument("micro", help="microstructure JSON, or 'random' with --seed")
    s = sub.add_parser("cell", parents=[common], help="solve the cell problems")
    s.add_argument("micro", help="microstructure JSON, or 'random' with --seed")
    s = sub.add_parser("tensors", parents=[common], help="effective tensors from a cell run")
    s.add_argument("cell_dir")
    s = sub.add_parser("macro", parents=[common], help="run the effective model")
    s.add_argument("config")
    s = sub.add_parser("micro", parents=[common], help="run the epsilon-resolved model")
    s.add_argument("config")
    s = sub.add_parser("compare", parents=[common], help="micro runs against a macro run")
    s.add_argument("macro_run")
    s.add_argument("micro_runs", nargs="+")
    return p


# -- helpers -------------------------------------------------------------------------

def _need(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return path


def _load_spec(arg, seed):
    if arg == "random":
        rng = np.random.default_rng(0 if seed is None else seed)
        return random_spec(rng), ["random"]
    return parse_microstructure(_need(arg)), [str(arg)]


def _out(args, default):
    return persist.ensure_dir(args.output_dir or default)


def _solve_cfg(args):
    return fem.SolveConfig(tol=args.tol) if args.tol else fem.SolveConfig()


def _load_cells(cell_dir):
    """Rebuild cell solutions written by the ``cell`` stage."""
    cell_dir = Path(cell_dir)
    spec = parse_microstructure(_need(cell_dir / "microstructure.json"))
    data = np.load(_need(cell_dir / "cell_solutions.npz"))
    mesh = build_cell_mesh(spec)
    op = CellOperator(mesh)
    sols = {}
    for key in data.files:
        kind, idx = key.split("_")
        case = CellLoadCase(int(idx[0]) - 1, int(idx[1]) - 1, kind)
        sols[key] = CellSolution(case, data[key], float("nan"), 0, op)
    return spec, sols


# -- stages --------------------------------------------------------------------------

def cmd_validate(args):
    spec, inputs = _load_spec(args.micro, args.seed)
    rep = validate_geometry(build_cell_mesh(spec))
    report = rep.to_dict()
    report["digest"] = spec.digest()
    print(json.dumps(persist._jsonable(report), sort_keys=True))
    outputs = []
    if args.output_dir:
        out = _out(args, ".")
        outputs.append(persist.write_json(out / "validation.json", report))
        persist.write_manifest(out, "validate", inputs, outputs, config=spec.to_dict())
    if not rep.ok:
        raise GeometryError("; ".join(rep.errors), rep)
    return {"outputs": outputs}


def cmd_cell(args):
    spec, inputs = _load_spec(args.micro, args.seed)
    out = _out(args, "cell_run")
    t0 = time.perf_counter()
    mesh = build_cell_mesh(spec)
    cfg = _solve_cfg(args)
    sols = solve_all_cells(mesh, cfg=cfg, jobs=args.jobs)
    t1 = time.perf_counter()
    write_microstructure(spec, out / "microstructure.json")
    outputs = [out / "microstructure.json"]
    outputs.append(persist.write_npz(out / "cell_solutions.npz",
                                     **{k: s.values for k, s in sorted(sols.items())}))
    report = {k: residual_check(s) for k, s in sorted(sols.items())}
    report["solver_tol"] = cfg.tol
    outputs.append(persist.write_json(out / "cell_report.json", report))
    persist.write_manifest(out, "cell", inputs, outputs, config=spec.to_dict(),
                           timings={"solve": t1 - t0},
                           extra={"iterations": {k: s.iterations for k, s in sorted(sols.items())}})
    return {"outputs": outputs}


def cmd_tensors(args):
    cell_dir = _need(args.cell_dir)
    spec, sols = _load_cells(cell_dir)
    out = _out(args, cell_dir)
    t = compute_tensors(sols)
    rep = audit_tensors(t)
    outputs = [out / "tensors.json", out / "audit.json"]
    t.save(outputs[0])
    persist.write_json(outputs[1], rep.to_dict())
    persist.write_manifest(out, "tensors", [str(cell_dir)], outputs, config=spec.to_dict())
    if not rep.passed:
        raise StageFailed(f"tensor audit failed: {rep.to_dict()}")
    return {"outputs": outputs}


def _inline_macro_config(path):
    data = persist.read_json(path)
    if "tensors_file" in data and "tensors" not in data:
        tf = Path(data.pop("tensors_file"))
        tf = tf if tf.is_absolute() else path.parent / tf
        data["tensors"] = persist.read_json(_need(tf))
    return data


def _state_arrays(states, fields):
    return {f: np.array([getattr(s, f) for s in states]) for f in fields}


MACRO_FIELDS = ("v_plus", "v_minus", "p_plus", "p_minus", "u", "w", "u1", "du1")


def write_macro_vtk(system, state, path):
    top = system.top
    v = state.v_plus.reshape(-1, 2)
    persist.write_vtk_rectilinear(path, top.x2, top.z2, {"velocity": v},
                                  title=f"upper bulk velocity t={state.t:.6g}")


def cmd_macro(args):
    path = _need(args.config)
    data = _inline_macro_config(path)
    cfg = macro_config_from_dict(data, path.parent)
    out = _out(args, "macro_run")
    t0 = time.perf_counter()
    run = run_macro(cfg)
    t1 = time.perf_counter()
    outputs = [persist.write_json(out / "config.json", data)]
    keys, rows = run.series_rows()
    outputs.append(persist.write_csv(out / "macro_series.csv", keys, rows))
    arrs = _state_arrays(run.snapshots, MACRO_FIELDS)
    arrs["t"] = np.array([s.t for s in run.snapshots])
    outputs.append(persist.write_npz(out / "macro_states.npz", **arrs))
    stride = int(data.get("vtk_stride", 0))
    vtk = []
    if stride > 0:
        for i, s in enumerate(run.snapshots[::stride]):
            p = out / f"macro_{i:04d}.vtk"
            write_macro_vtk(run.system, s, p)
            vtk.append(p)
    persist.write_manifest(out, "macro", [str(path)], outputs + vtk, config=data,
                           timings={"run": t1 - t0})
    return {"outputs": outputs, "run": run}


def load_macro_run(run_dir):
    run_dir = Path(run_dir)
    data = persist.read_json(_need(run_dir / "config.json"))
    cfg = macro_config_from_dict(data, run_dir)
    arr = np.load(_need(run_dir / "macro_states.npz"))
    snaps = [MacroState(float(arr["t"][i]), *(arr[f][i] for f in MACRO_FIELDS))
             for i in range(len(arr["t"]))]
    return MacroRun(MacroSystem(cfg), snaps)


def cmd_micro(args):
    path = _need(args.config)
    data = persist.read_json(path)
    cfg = micro_config_from_dict(data, path.parent)
    out = _out(args, "micro_run")
    t0 = time.perf_counter()
    run = run_micro(cfg)
    t1 = time.perf_counter()
    stored = dict(data)
    stored["layer_cell_file"] = "layer_cell.json"
    write_microstructure(cfg.cell, out / "layer_cell.json")
    outputs = [out / "layer_cell.json", persist.write_json(out / "config.json", stored)]
    keys = ["t", "energy", "divergence_residual"]
    outputs.append(persist.write_csv(out / "micro_series.csv", keys,
                                     np.column_stack([run.series[k] for k in keys])))
    rep = apriori_report(run)
    outputs.append(persist.write_csv(out / "apriori.csv", ["quantity", "value"],
                                     sorted(rep.items())))
    arrs = _state_arrays(run.snapshots, ("v", "p", "u"))
    arrs["t"] = np.array([s.t for s in run.snapshots])
    outputs.append(persist.write_npz(out / "micro_states.npz", **arrs))
    stride = int(data.get("vtk_stride", 0))
    vtk = []
    if stride > 0:
        m = run.system.mesh
        for i, s in enumerate(run.snapshots[::stride]):
            p = out / f"micro_{i:04d}.vtk"
            persist.write_vtk_rectilinear(p, m.x2, m.z2, {"velocity": s.v.reshape(-1, 2),
                                                          "displacement": s.u.reshape(-1, 2)})
            vtk.append(p)
    persist.write_manifest(out, "micro", [str(path)], outputs + vtk, config=data,
                           timings={"run": t1 - t0})
    return {"outputs": outputs, "run": run}


def load_micro_run(run_dir):
    run_dir = Path(run_dir)
    data = persist.read_json(_need(run_dir / "config.json"))
    cfg = micro_config_from_dict(data, run_dir)
    arr = np.load(_need(run_dir / "micro_states.npz"))
    snaps = [MicroState(float(arr["t"][i]), arr["v"][i], arr["p"][i], arr["u"][i])
             for i in range(len(arr["t"]))]
    return MicroRun(MicroSystem(cfg), snaps, {}, {})


def cmd_compare(args):
    macro = load_macro_run(args.macro_run)
    out = _out(args, "compare_run")

    def one(d):
        run = load_micro_run(d)
        sols = solve_all_cells(build_cell_mesh(run.cfg.cell), cfg=fem.SolveConfig(tol=1e-12))
        return compare_runs(run, macro, sols)

    dirs = list(args.micro_runs)
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            tables = list(pool.map(one, dirs))
    else:
        tables = [one(d) for d in dirs]
    tables.sort(key=lambda t: -t["eps"])
    rows = [[t["eps"], k, v] for t in tables for k, v in sorted(t.items()) if k != "eps"]
    eps_set = {t["eps"] for t in tables}
    summary = {}
    if len(eps_set) >= 2:
        slopes = slope_fits(tables)
        rows += [["slope", k, v] for k, v in sorted(slopes.items())]
        summary = {"slopes": slopes,
                   "monotone": {k: is_monotone_decreasing(tables, k)
                                for k in tables[0] if k not in ("eps", "layer_pressure_scaled")}}
    else:
        rows.append(["notice", "slopes", "omitted: need at least two eps values"])
        summary = {"notice": "slope fits need at least two eps values"}
    outputs = [persist.write_csv(out / "errors.csv", ["eps", "quantity", "value"], rows)]
    outputs.append(persist.write_json(out / "errors.json", {"tables": tables, **summary}))
    persist.write_manifest(out, "compare", [args.macro_run, *dirs], outputs,
                           config={"macro": args.macro_run, "micro": dirs})
    return {"outputs": outputs, "tables": tables}


COMMANDS = {"validate": cmd_validate, "cell": cmd_cell, "tensors": cmd_tensors,
            "macro": cmd_macro, "micro": cmd_micro, "compare": cmd_compare}


def _error(code, exc):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def run_command(argv=None):
    """Run one subcommand; returns ``(exit_code, result)``."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    except UsageError as exc:
        return _error(EXIT_USAGE, exc), None
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return EXIT_OK, COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        return _error(EXIT_MISSING, exc), None
    except persist.ArtifactIOError as exc:
        return _error(EXIT_IO, exc), None
    except StageFailed as exc:
        return _error(EXIT_FAILED, exc), None
    except fem.SolverError as exc:
        return _error(EXIT_SOLVER, exc), None
    except (ConfigError, MicrostructureError, GeometryError, TensorInputError,
            json.JSONDecodeError, ValueError, KeyError) as exc:
        return _error(EXIT_INVALID, exc), None
    except OSError as exc:
        return _error(EXIT_IO, exc), None
    except Exception as exc:  # noqa: BLE001 - reported as a failed stage
        return _error(EXIT_FAILED, exc), None


def main(argv=None):
    code, _ = run_command(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
