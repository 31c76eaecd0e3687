"""Run configuration: parsing, emission, and initial data.

Configs are plain text, one `section.key = value` per line, '#' comments.
Matrix rows are 1-based: `model.a.1 = 2.0 1.0`.  Unknown keys are errors so
typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, build_cartesian, load_mesh
from .model import InteractionMatrix, ModelData, build_model
from .scheme import State
from .solver import SolverConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n: int
    delta: float
    a: tuple[tuple[float, ...], ...]
    pi: tuple[float, ...] | None = None


@dataclass
class MeshConfig:
    cartesian: tuple[int, int, float, float] | None = None
    file: str | None = None


@dataclass
class TimeConfig:
    t_final: float
    dt: float


@dataclass
class InitSpec:
    kind: str                  # constant | gaussian | checkerboard
    params: tuple[float, ...]  # (c) | (cx, cy, sigma, amplitude) | (hi, lo)


@dataclass
class OutputConfig:
    directory: str = "out"
    cadence: int = 0           # write cell fields every k steps; 0 = final only
    vtk: bool = False


@dataclass
class RunConfig:
    model: ModelConfig
    mesh: MeshConfig
    time: TimeConfig
    init: tuple[InitSpec, ...]
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


def _raw_entries(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        raw[key] = value
    return raw


def _floats(key: str, value: str, count: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(tok) for tok in value.split())
    except ValueError:
        raise ConfigError(f"key '{key}': expected numbers, got '{value}'") from None
    if count is not None and len(vals) != count:
        raise ConfigError(f"key '{key}': expected {count} values, got {len(vals)}")
    return vals


def _float(key: str, value: str) -> float:
    return _floats(key, value, 1)[0]


def _int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"key '{key}': expected an integer, got '{value}'") from None


def parse_config(text: str, overrides=()) -> RunConfig:
    """Parse config text, apply `section.key=value` overrides, validate."""
    raw = _raw_entries(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        raw[key] = value

    def take(key, default=None, required=False):
        if key in raw:
            return raw.pop(key)
        if required:
            raise ConfigError(f"missing required key '{key}'")
        return default

    n = _int("model.n", take("model.n", required=True))
    if n < 2:
        raise ConfigError("key 'model.n': need at least 2 species")
    delta = _float("model.delta", take("model.delta", required=True))
    if delta <= 0:
        raise ConfigError("key 'model.delta': must be positive")
    rows = []
    for i in range(1, n + 1):
        key = f"model.a.{i}"
        rows.append(_floats(key, take(key, required=True), n))
    extra_rows = [k for k in raw if k.startswith("model.a.")]
    if extra_rows:
        raise ConfigError(f"key '{extra_rows[0]}': matrix row outside 1..{n}")
    if any(v <= 0 for row in rows for v in row):
        raise ConfigError("key 'model.a': all interaction coefficients must be positive")
    pi_raw = take("model.pi")
    pi = None
    if pi_raw is not None:
        pi = _floats("model.pi", pi_raw, n)
        if any(v <= 0 for v in pi):
            raise ConfigError("key 'model.pi': weights must be positive")
    model = ModelConfig(n=n, delta=delta, a=tuple(rows), pi=pi)

    cart_raw = take("mesh.cartesian")
    file_raw = take("mesh.file")
    if (cart_raw is None) == (file_raw is None):
        raise ConfigError("exactly one of 'mesh.cartesian' and 'mesh.file' is required")
    if cart_raw is not None:
        toks = cart_raw.split()
        if len(toks) != 4:
            raise ConfigError("key 'mesh.cartesian': expected 'nx ny Lx Ly'")
        nx, ny = _int("mesh.cartesian", toks[0]), _int("mesh.cartesian", toks[1])
        lx, ly = _float("mesh.cartesian", toks[2]), _float("mesh.cartesian", toks[3])
        if nx < 1 or ny < 1 or lx <= 0 or ly <= 0:
            raise ConfigError("key 'mesh.cartesian': need nx, ny >= 1 and Lx, Ly > 0")
        mesh = MeshConfig(cartesian=(nx, ny, lx, ly))
    else:
        mesh = MeshConfig(file=file_raw)

    t_final = _float("time.t_final", take("time.t_final", required=True))
    dt = _float("time.dt", take("time.dt", required=True))
    if t_final <= 0:
        raise ConfigError("key 'time.t_final': must be positive")
    if dt <= 0:
        raise ConfigError("key 'time.dt': must be positive")
    if dt > t_final:
        raise ConfigError("key 'time.dt': must not exceed t_final")
    time = TimeConfig(t_final=t_final, dt=dt)

    init = []
    for i in range(1, n + 1):
        key = f"init.{i}"
        toks = take(key, required=True).split()
        kind = toks[0] if toks else ""
        params = _floats(key, " ".join(toks[1:])) if len(toks) > 1 else ()
        if kind == "constant":
            if len(params) != 1:
                raise ConfigError(f"key '{key}': constant needs 1 value")
            if params[0] < 0:
                raise ConfigError(f"key '{key}': amplitude must be >= 0")
        elif kind == "gaussian":
            if len(params) != 4:
                raise ConfigError(f"key '{key}': gaussian needs cx cy sigma amplitude")
            if params[2] <= 0:
                raise ConfigError(f"key '{key}': gaussian sigma must be positive")
            if params[3] < 0:
                raise ConfigError(f"key '{key}': amplitude must be >= 0")
        elif kind == "checkerboard":
            if len(params) != 2:
                raise ConfigError(f"key '{key}': checkerboard needs hi lo")
            if params[0] < 0 or params[1] < 0:
                raise ConfigError(f"key '{key}': amplitude must be >= 0")
        else:
            raise ConfigError(f"key '{key}': unknown init kind '{kind}'")
        init.append(InitSpec(kind, params))
    extra_init = [k for k in raw if k.startswith("init.")]
    if extra_init:
        raise ConfigError(f"key '{extra_init[0]}': init entry outside 1..{n}")

    solver_kwargs = {}
    for name, conv in (
        ("newton_tol", _float), ("max_newton_iters", _int),
        ("line_search_shrink", _float), ("max_line_search", _int),
        ("fixed_point_damping", _float), ("max_fp_iters", _int),
        ("tol_neg", _float), ("entropy_slack_factor", _float),
    ):
        value = take(f"solver.{name}")
        if value is not None:
            solver_kwargs[name] = conv(f"solver.{name}", value)
    ladder_raw = take("solver.eps_ladder")
    if ladder_raw is not None:
        solver_kwargs["eps_ladder"] = _floats("solver.eps_ladder", ladder_raw)
    try:
        solver = SolverConfig(**solver_kwargs)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None

    directory = take("output.directory", default="out")
    cadence = _int("output.cadence", take("output.cadence", default="0"))
    if cadence < 0:
        raise ConfigError("key 'output.cadence': must be >= 0")
    vtk = bool(_int("output.vtk", take("output.vtk", default="0")))
    output = OutputConfig(directory=directory, cadence=cadence, vtk=vtk)

    if raw:
        raise ConfigError(f"unknown key '{next(iter(raw))}'")
    return RunConfig(model=model, mesh=mesh, time=time, init=tuple(init),
                     solver=solver, output=output)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_config(config: RunConfig) -> str:
    """Canonical text form; parse_config(emit_config(c)) == c."""
    lines = [f"model.n = {config.model.n}",
             f"model.delta = {_fmt(config.model.delta)}"]
    for i, row in enumerate(config.model.a, start=1):
        lines.append(f"model.a.{i} = " + " ".join(_fmt(v) for v in row))
    if config.model.pi is not None:
        lines.append("model.pi = " + " ".join(_fmt(v) for v in config.model.pi))
    if config.mesh.cartesian is not None:
        nx, ny, lx, ly = config.mesh.cartesian
        lines.append(f"mesh.cartesian = {nx} {ny} {_fmt(lx)} {_fmt(ly)}")
    else:
        lines.append(f"mesh.file = {config.mesh.file}")
    lines.append(f"time.t_final = {_fmt(config.time.t_final)}")
    lines.append(f"time.dt = {_fmt(config.time.dt)}")
    for i, spec in enumerate(config.init, start=1):
        lines.append(f"init.{i} = {spec.kind} " + " ".join(_fmt(v) for v in spec.params))
    s = config.solver
    lines += [
        f"solver.newton_tol = {_fmt(s.newton_tol)}",
        f"solver.max_newton_iters = {s.max_newton_iters}",
        f"solver.line_search_shrink = {_fmt(s.line_search_shrink)}",
        f"solver.max_line_search = {s.max_line_search}",
        "solver.eps_ladder = " + " ".join(_fmt(e) for e in s.eps_ladder),
        f"solver.fixed_point_damping = {_fmt(s.fixed_point_damping)}",
        f"solver.max_fp_iters = {s.max_fp_iters}",
        f"solver.tol_neg = {_fmt(s.tol_neg)}",
        f"solver.entropy_slack_factor = {_fmt(s.entropy_slack_factor)}",
        f"output.directory = {config.output.directory}",
        f"output.cadence = {config.output.cadence}",
        f"output.vtk = {int(config.output.vtk)}",
    ]
    return "\n".join(lines) + "\n"


def build_model_from_config(config: RunConfig) -> ModelData:
    matrix = InteractionMatrix(np.array(config.model.a, dtype=float),
                               config.model.delta)
    pi = np.array(config.model.pi, dtype=float) if config.model.pi else None
    return build_model(matrix, pi)


def build_mesh_from_config(config: RunConfig) -> Mesh:
    if config.mesh.cartesian is not None:
        nx, ny, lx, ly = config.mesh.cartesian
        return build_cartesian(nx, ny, lx, ly)
    with open(config.mesh.file, encoding="utf-8") as fh:
        return load_mesh(fh.read())


def initial_state(config: RunConfig, mesh: Mesh, model: ModelData) -> State:
    """Cellwise initial data.

    Constants and checkerboards are exact cell means; gaussians use the
    midpoint rule (value at the cell center) as the mean approximation.
    """
    if model.n != config.model.n:
        raise ConfigError("model and config disagree on the species count")
    values = np.zeros((config.model.n, mesh.n_cells))
    x = mesh.centers[:, 0]
    y = mesh.centers[:, 1]
    for i, spec in enumerate(config.init):
        if spec.kind == "constant":
            values[i] = spec.params[0]
        elif spec.kind == "gaussian":
            cx, cy, sigma, amp = spec.params
            values[i] = amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2)
                                     / (2.0 * sigma**2))
        elif spec.kind == "checkerboard":
            if mesh.cartesian is None:
                raise ConfigError("checkerboard initial data needs a Cartesian mesh")
            hi, lo = spec.params
            nx = mesh.cartesian[0]
            ids = np.arange(mesh.n_cells)
            values[i] = np.where((ids % nx + ids // nx) % 2 == 0, hi, lo)
        else:
            raise ConfigError(f"unknown init kind '{spec.kind}'")
    return State(values, 0)
