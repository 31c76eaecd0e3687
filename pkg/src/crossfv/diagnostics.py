"""Runtime certificates: entropy production, mass balance, and refinement studies.

The central object is the per-step entropy certificate

    H(next) + dt * lam * sum_i sum_sigma tau (D u_i)^2
            + dt/delta * sum_i pi_i sum_sigma tau ubar_i (D p_i)^2  <=  H(prev),

evaluated with the min-upwinded mobilities of the accepted state.  Both
dissipation terms are sums of squares with nonnegative weights, so they are
certified nonnegative for arbitrary state pairs; a solved step must satisfy
the inequality up to solver slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, build_cartesian
from .model import ModelData, total_entropy
from .scheme import State


class MeshNotNested(ValueError):
    pass


@dataclass
class EntropyCertificate:
    h_prev: float
    h_next: float
    grad_term: float
    pressure_term: float
    slack: float
    tolerance: float
    satisfied: bool


@dataclass
class LedgerRow:
    k: int
    t: float
    h: float
    grad_term: float
    pressure_term: float
    slack: float
    masses: tuple[float, ...]
    min_value: float
    newton_iters: int
    fallback_used: bool
    satisfied: bool
    tolerance: float


@dataclass
class EntropyLedger:
    """Audit trail of a run: one row per accepted step plus the initial row."""

    rows: list[LedgerRow] = field(default_factory=list)

    @classmethod
    def start(cls, model: ModelData, mesh: Mesh, state: State) -> "EntropyLedger":
        ledger = cls()
        masses = mass_per_species(mesh, state)
        ledger.rows.append(LedgerRow(
            k=0, t=0.0, h=total_entropy(model, mesh, state),
            grad_term=0.0, pressure_term=0.0, slack=0.0,
            masses=tuple(float(m) for m in masses),
            min_value=float(state.values.min()),
            newton_iters=0, fallback_used=False, satisfied=True, tolerance=0.0,
        ))
        return ledger

    def append(self, k: int, t: float, report) -> None:
        self.rows.append(LedgerRow(
            k=k, t=t, h=report.entropy_after,
            grad_term=report.dissipation_gradient_term,
            pressure_term=report.dissipation_pressure_term,
            slack=report.entropy_slack,
            masses=tuple(float(m) for m in report.masses),
            min_value=report.min_value,
            newton_iters=report.newton_iters,
            fallback_used=report.fallback_used,
            satisfied=report.entropy_inequality_satisfied,
            tolerance=report.entropy_tolerance,
        ))

    @property
    def h_values(self) -> np.ndarray:
        return np.array([r.h for r in self.rows])

    def fully_certified(self) -> bool:
        return all(r.satisfied for r in self.rows)

    def h_nonincreasing(self) -> bool:
        """Entropy column nonincreasing within each step's slack tolerance."""
        return all(
            self.rows[i].h <= self.rows[i - 1].h + self.rows[i].tolerance
            for i in range(1, len(self.rows))
        )


@dataclass
class ConvergenceReport:
    """Self-convergence ladder: per-level runs plus inter-level L2 gaps."""

    nx: list[int]
    sizes: list[float]            # mesh sizes, strictly decreasing
    dts: list[float]
    diffs: list[np.ndarray]       # len levels-1, per-species L2 differences
    orders: list[np.ndarray]      # len levels-2, log2(e_h / e_{h/2})
    bv_ratios: list[float]        # weak-BV value / sup |grad phi| per level

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.sizes[1:], self.sizes[:-1])):
            raise ValueError("mesh sizes must be strictly decreasing")


def entropy_certificate(model: ModelData, mesh: Mesh, prev: State, nxt: State,
                        dt: float, tolerance: float) -> EntropyCertificate:
    """Evaluate the entropy production inequality for one step."""
    h_prev = total_entropy(model, mesh, prev)
    h_next = total_entropy(model, mesh, nxt)
    u = nxt.values
    uk = u[:, mesh.int_k]
    ul = u[:, mesh.int_l]
    ubar = np.minimum(np.maximum(uk, 0.0), np.maximum(ul, 0.0))
    du2 = (ul - uk) ** 2
    p = model.a @ u
    dp2 = (p[:, mesh.int_l] - p[:, mesh.int_k]) ** 2
    grad_term = dt * model.lam * float((mesh.int_tau * du2).sum())
    pressure_term = dt / model.delta * float(
        (model.pi[:, None] * mesh.int_tau * ubar * dp2).sum())
    slack = h_prev - h_next - grad_term - pressure_term
    return EntropyCertificate(h_prev, h_next, grad_term, pressure_term,
                              slack, tolerance, slack >= -tolerance)


def mass_per_species(mesh: Mesh, state: State) -> np.ndarray:
    """M_i = sum_K m(K) u_{i,K}."""
    values = getattr(state, "values", state)
    return values @ mesh.areas


def weak_bv_functional(mesh: Mesh, trajectory: list[State], dt: float, phi) -> float:
    """max over species of |sum_k sum_K m(K) (u^k - u^{k-1}) phi(x_K, t_k)|.

    phi is called as phi(x, y, t) with vectorized cell-center coordinates.
    The caller divides by sup |grad phi| to form the boundedness ratio.
    """
    if len(trajectory) < 2:
        raise ValueError("need at least two states")
    x = mesh.centers[:, 0]
    y = mesh.centers[:, 1]
    totals = np.zeros(trajectory[0].values.shape[0])
    for k in range(1, len(trajectory)):
        w = mesh.areas * (trajectory[k].values - trajectory[k - 1].values)
        totals += w @ np.asarray(phi(x, y, k * dt), dtype=float)
    return float(np.max(np.abs(totals)))


def discrete_gradient_norm_sq(mesh: Mesh, v) -> float:
    """Gradient part of the discrete H1 norm, sum_sigma tau (D_sigma v)^2."""
    v = np.asarray(v, dtype=float)
    dv = v[mesh.int_l] - v[mesh.int_k]
    return float(mesh.int_tau @ dv**2)


def _nesting_factors(coarse: Mesh, fine: Mesh) -> tuple[int, int]:
    if coarse.cartesian is None or fine.cartesian is None:
        raise MeshNotNested("both meshes must be Cartesian grids")
    cnx, cny, clx, cly = coarse.cartesian
    fnx, fny, flx, fly = fine.cartesian
    if abs(clx - flx) > 1e-12 * clx or abs(cly - fly) > 1e-12 * cly:
        raise MeshNotNested("meshes cover different domains")
    if fnx % cnx or fny % cny:
        raise MeshNotNested(f"{fnx}x{fny} is not an integer refinement of {cnx}x{cny}")
    return fnx // cnx, fny // cny


def l2_difference(coarse_mesh: Mesh, coarse_state: State,
                  fine_mesh: Mesh, fine_state: State) -> np.ndarray:
    """Per-species L2 norm of the piecewise-constant difference, exact on the
    fine cells of a nested Cartesian pair."""
    rx, ry = _nesting_factors(coarse_mesh, fine_mesh)
    cnx = coarse_mesh.cartesian[0]
    fnx = fine_mesh.cartesian[0]
    ids = np.arange(fine_mesh.n_cells)
    ix, iy = ids % fnx, ids // fnx
    parents = (iy // ry) * cnx + (ix // rx)
    d = coarse_state.values[:, parents] - fine_state.values
    return np.sqrt((fine_mesh.areas * d**2).sum(axis=1))


def _default_bv_phi(x, y, t):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def refinement_study(base_config, levels: int) -> ConvergenceReport:
    """Rerun the configured problem with nx doubling per level and dt scaled
    with the mesh size; reports self-convergence gaps and weak-BV ratios.

    Every level's entropy ledger must come back fully certified.
    """
    # imported here: the runner sits above this module in the import graph
    from .config import build_model_from_config, initial_state
    from .solver import CertificateViolation, simulate_trajectory

    if levels < 2:
        raise ValueError("need at least 2 refinement levels")
    if base_config.mesh.cartesian is None:
        raise ValueError("refinement study needs a Cartesian base mesh")

    nx0, ny0, lx, ly = base_config.mesh.cartesian
    dt0 = base_config.time.dt
    t_final = base_config.time.t_final
    model = build_model_from_config(base_config)

    meshes, finals, trajectories, dts = [], [], [], []
    bv_ratios = []
    for level in range(levels):
        f = 2**level
        mesh = build_cartesian(nx0 * f, ny0 * f, lx, ly)
        dt = dt0 / f
        n_steps = max(1, round(t_final / dt))
        state0 = initial_state(base_config, mesh, model)
        result = simulate_trajectory(model, mesh, state0, dt, n_steps,
                                     base_config.solver)
        if result.failure is not None:
            raise result.failure
        if not result.ledger.fully_certified():
            raise CertificateViolation(
                f"refinement level {level}: entropy ledger not fully certified")
        bv = weak_bv_functional(mesh, result.states, dt, _default_bv_phi)
        bv_ratios.append(bv / math.pi)   # sup |grad phi| = pi for this phi
        meshes.append(mesh)
        finals.append(result.states[-1])
        trajectories.append(result.states)
        dts.append(dt)

    diffs = [
        l2_difference(meshes[i], finals[i], meshes[i + 1], finals[i + 1])
        for i in range(levels - 1)
    ]
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = [np.log2(diffs[i] / diffs[i + 1]) for i in range(levels - 2)]
    return ConvergenceReport(
        nx=[m.cartesian[0] for m in meshes],
        sizes=[m.size for m in meshes],
        dts=dts,
        diffs=diffs,
        orders=orders,
        bv_ratios=bv_ratios,
    )
