"""Command-line front end: simulate, converge, check-mesh.

File outputs use fixed 17-significant-digit formatting so reruns with the
same config are byte-identical.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import (
    ConfigError,
    RunConfig,
    build_mesh_from_config,
    build_model_from_config,
    initial_state,
    parse_config,
)
from .diagnostics import ConvergenceReport, EntropyLedger, refinement_study
from .mesh import Mesh, MeshFormatError, MeshValidationError, load_mesh, validate_mesh
from .model import DetailedBalanceViolation, NotPositiveDefinite
from .scheme import State
from .solver import simulate_trajectory


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_ledger_csv(path, ledger: EntropyLedger) -> None:
    n = len(ledger.rows[0].masses) if ledger.rows else 0
    header = "k,t,H,grad_term,pressure_term,slack,min_value,newton_iters,fallback"
    header += "".join(f",mass_{i + 1}" for i in range(n))
    lines = [header]
    for r in ledger.rows:
        cols = [str(r.k), _fmt(r.t), _fmt(r.h), _fmt(r.grad_term),
                _fmt(r.pressure_term), _fmt(r.slack), _fmt(r.min_value),
                str(r.newton_iters), str(int(r.fallback_used))]
        cols += [_fmt(m) for m in r.masses]
        lines.append(",".join(cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_fields_csv(path, mesh: Mesh, state: State) -> None:
    n = state.values.shape[0]
    header = "cell_id,x,y" + "".join(f",u_{i + 1}" for i in range(n))
    lines = [header]
    for cid in range(mesh.n_cells):
        x, y = mesh.cells[cid].center
        cols = [str(cid), _fmt(x), _fmt(y)]
        cols += [_fmt(state.values[i, cid]) for i in range(n)]
        lines.append(",".join(cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_vtk(path, mesh: Mesh, state: State) -> None:
    """Legacy-ASCII rectilinear VTK with per-species cell data (Cartesian only)."""
    if mesh.cartesian is None:
        raise ConfigError("VTK output needs a Cartesian mesh")
    nx, ny, lx, ly = mesh.cartesian
    xs = [i * lx / nx for i in range(nx + 1)]
    ys = [j * ly / ny for j in range(ny + 1)]
    n = state.values.shape[0]
    lines = [
        "# vtk DataFile Version 3.0",
        "cross-diffusion cell fields",
        "ASCII",
        "DATASET RECTILINEAR_GRID",
        f"DIMENSIONS {nx + 1} {ny + 1} 1",
        f"X_COORDINATES {nx + 1} double",
        " ".join(_fmt(v) for v in xs),
        f"Y_COORDINATES {ny + 1} double",
        " ".join(_fmt(v) for v in ys),
        "Z_COORDINATES 1 double",
        "0",
        f"CELL_DATA {mesh.n_cells}",
    ]
    for i in range(n):
        lines.append(f"SCALARS u_{i + 1} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in state.values[i])
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_convergence_csv(path, report: ConvergenceReport) -> None:
    n = report.diffs[0].shape[0] if report.diffs else 0
    header = "level,nx,dx,dt,bv_ratio"
    header += "".join(f",l2_diff_{i + 1}" for i in range(n))
    header += "".join(f",order_{i + 1}" for i in range(n))
    lines = [header]
    levels = len(report.nx)
    for lvl in range(levels):
        cols = [str(lvl), str(report.nx[lvl]), _fmt(report.sizes[lvl]),
                _fmt(report.dts[lvl]), _fmt(report.bv_ratios[lvl])]
        if lvl < levels - 1:
            cols += [_fmt(v) for v in report.diffs[lvl]]
        else:
            cols += [""] * n
        if lvl < levels - 2:
            cols += [_fmt(v) for v in report.orders[lvl]]
        else:
            cols += [""] * n
        lines.append(",".join(cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _snapshot_indices(n_states: int, cadence: int) -> list[int]:
    last = n_states - 1
    if cadence > 0:
        keep = [k for k in range(n_states) if k % cadence == 0]
        if last not in keep:
            keep.append(last)
        return keep
    return [last]


def run_simulation(config: RunConfig) -> int:
    """Build everything, loop the stepper, write ledger and snapshots.
    Nonzero exit on any rejected step; the ledger is written up to failure."""
    outdir = Path(config.output.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        model = build_model_from_config(config)
        mesh = build_mesh_from_config(config)
        state = initial_state(config, mesh, model)
    except (DetailedBalanceViolation, NotPositiveDefinite, MeshFormatError,
            MeshValidationError, ConfigError, OSError, ValueError) as exc:
        (outdir / "error.log").write_text(f"{exc}\n", encoding="utf-8")
        print(f"error: {exc}", file=sys.stderr)
        return 1

    t_final, dt = config.time.t_final, config.time.dt
    n_steps = max(1, round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * max(t_final, dt):
        print(f"warning: t_final is not an integer multiple of dt; "
              f"running {n_steps} steps to t = {_fmt(n_steps * dt)}", file=sys.stderr)

    result = simulate_trajectory(model, mesh, state, dt, n_steps, config.solver)
    write_ledger_csv(outdir / "ledger.csv", result.ledger)
    for k in _snapshot_indices(len(result.states), config.output.cadence):
        write_fields_csv(outdir / f"fields_{k:06d}.csv", mesh, result.states[k])
        if config.output.vtk:
            write_vtk(outdir / f"fields_{k:06d}.vtk", mesh, result.states[k])
    if result.failure is not None:
        (outdir / "error.log").write_text(f"step {len(result.states)}: "
                                          f"{result.failure}\n", encoding="utf-8")
        print(f"error: {result.failure}", file=sys.stderr)
        return 1
    return 0


def run_convergence(config: RunConfig, levels: int) -> int:
    """Refinement study wrapper; writes convergence.csv in the output dir."""
    if levels < 2:
        raise ConfigError("need --levels >= 2")
    outdir = Path(config.output.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        report = refinement_study(config, levels)
    except Exception as exc:
        (outdir / "error.log").write_text(f"{exc}\n", encoding="utf-8")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_convergence_csv(outdir / "convergence.csv", report)
    for lvl in range(len(report.nx)):
        line = f"level {lvl}: nx={report.nx[lvl]} dx={report.sizes[lvl]:.4e} " \
               f"bv_ratio={report.bv_ratios[lvl]:.4e}"
        if lvl < len(report.diffs):
            line += " l2_diff=" + " ".join(f"{v:.4e}" for v in report.diffs[lvl])
        print(line)
    return 0


def check_mesh(path) -> int:
    try:
        mesh = load_mesh(Path(path).read_text(encoding="utf-8"))
    except (MeshFormatError, MeshValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = validate_mesh(mesh)
    print(f"cells: {mesh.n_cells}, edges: {len(mesh.edges)} "
          f"({mesh.n_interior_edges} interior)")
    print(f"total area: {_fmt(mesh.total_area)}, size: {_fmt(mesh.size)}, "
          f"xi: {_fmt(mesh.xi)}")
    print(report.summary())
    return 0 if report.ok else 1


def _load_config(path, overrides) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text, overrides)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="crossfv",
        description="Finite-volume solver for cross-diffusion population systems "
                    "with runtime entropy certificates.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a time-dependent simulation")
    p_sim.add_argument("config")
    p_sim.add_argument("--override", action="append", default=[],
                       metavar="section.key=value")

    p_conv = sub.add_parser("converge", help="run a mesh-refinement study")
    p_conv.add_argument("config")
    p_conv.add_argument("--levels", type=int, required=True)
    p_conv.add_argument("--override", action="append", default=[],
                        metavar="section.key=value")

    p_mesh = sub.add_parser("check-mesh", help="validate a mesh file")
    p_mesh.add_argument("file")

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return run_simulation(_load_config(args.config, args.override))
        if args.command == "converge":
            return run_convergence(_load_config(args.config, args.override),
                                   args.levels)
        return check_mesh(args.file)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
