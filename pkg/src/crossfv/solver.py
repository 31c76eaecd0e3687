"""Implicit time stepping: Newton with backtracking, an epsilon-regularized
continuation in entropy variables as fallback, and certificate checks on
acceptance.

The per-step nonlinear system is solved primarily by a semismooth Newton
method on the primal densities.  The fallback mirrors the regularized map
used to construct solutions: for each rung eps > 0 of a decreasing ladder, a
damped fixed-point iteration of

    F_eps(w) = solution of  eps * (stiffness + mass) w_out = -G(u(w))

is run in entropy variables, warm-starting the next rung, and the final
eps = 0 rung is finished by Newton.  For small eps the fixed point of F_eps
is repelling for plain iteration (the map's Lipschitz constant grows like
1/(eps * dt)), so the damping shrinks adaptively and a rung that makes no
progress exits early; each converged rung self-checks the regularized energy
bound eps * dt * sum_i ||w_i||^2_{1,2} <= sum_K m(K) h(prev_K).

A step is accepted only if the solution is nonnegative within tol_neg
(tiny negatives are clamped to zero and logged) and per-species mass is
conserved to 1e-10 relative; the entropy-production certificate is evaluated
on the accepted state and recorded.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import MatrixRankWarning, splu, spsolve

from .diagnostics import EntropyLedger, entropy_certificate, mass_per_species
from .mesh import Mesh
from .model import ModelData, total_entropy
from .scheme import (
    SparseSystem,
    State,
    discrete_h1_norm_sq,
    flux_divergence,
    jacobian,
    residual,
    residual_regularized,
    unflatten_values,
)

MASS_DRIFT_RTOL = 1e-10

# smallest damping factor tried before a rung is declared stalled
_MIN_DAMPING = 1e-8


class NoConvergence(RuntimeError):
    pass


class SingularSystem(RuntimeError):
    pass


class CertificateViolation(RuntimeError):
    pass


@dataclass
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    line_search_shrink: float = 0.5
    max_line_search: int = 30
    eps_ladder: tuple[float, ...] = (1e-2, 1e-4, 1e-6, 0.0)
    fixed_point_damping: float = 0.5
    max_fp_iters: int = 200
    tol_neg: float = 1e-10
    entropy_slack_factor: float = 10.0

    def __post_init__(self):
        if self.newton_tol <= 0 or self.tol_neg <= 0 or self.entropy_slack_factor <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton_iters < 1 or self.max_line_search < 1 or self.max_fp_iters < 1:
            raise ValueError("iteration budgets must be >= 1")
        if not 0.0 < self.line_search_shrink < 1.0:
            raise ValueError("line_search_shrink must lie in (0, 1)")
        if not 0.0 < self.fixed_point_damping <= 1.0:
            raise ValueError("fixed_point_damping must lie in (0, 1]")
        ladder = tuple(float(e) for e in self.eps_ladder)
        if not ladder or ladder[-1] != 0.0:
            raise ValueError("eps_ladder must end at 0")
        if any(b <= a for a, b in zip(ladder[1:], ladder[:-1])):
            raise ValueError("eps_ladder must be strictly decreasing")
        if any(e < 0 for e in ladder):
            raise ValueError("eps_ladder entries must be nonnegative")
        self.eps_ladder = ladder


@dataclass
class EpsRung:
    eps: float
    iterations: int
    residual_norm: float
    converged: bool
    energy_lhs: float | None = None   # eps * dt * sum_i ||w_i||^2_{1,2}
    energy_rhs: float | None = None   # sum_K m(K) h(prev_K)


@dataclass
class StepReport:
    newton_iters: int
    fallback_used: bool
    eps_path: list[EpsRung]
    residual_norm: float
    entropy_before: float
    entropy_after: float
    dissipation_gradient_term: float
    dissipation_pressure_term: float
    entropy_slack: float
    entropy_tolerance: float
    entropy_inequality_satisfied: bool
    min_value: float
    masses: np.ndarray
    clamp_magnitude: float = 0.0


def solve_sparse(system: SparseSystem) -> np.ndarray:
    """Direct sparse solve with relative residual <= 1e-12 (one refinement
    step is attempted before giving up)."""
    a = system.to_csr()
    b = system.rhs
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            x = spsolve(a, b)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("linear solve produced non-finite entries")
    scale = max(float(np.max(np.abs(b))) if b.size else 0.0, 1e-300)
    if float(np.max(np.abs(a @ x - b))) > 1e-12 * scale:
        x = x + spsolve(a, b - a @ x)
        if float(np.max(np.abs(a @ x - b))) > 1e-12 * scale:
            raise SingularSystem("linear solve did not reach 1e-12 relative residual")
    return x


def _epsilon_operator(mesh: Mesh, eps: float) -> sparse.csc_matrix:
    """eps * (stiffness + lumped mass): the screened-Laplacian SPD operator."""
    ncells = mesh.n_cells
    k, l = mesh.int_k, mesh.int_l
    diag = np.arange(ncells)
    rows = np.concatenate([k, l, k, l, diag])
    cols = np.concatenate([k, l, l, k, diag])
    vals = np.concatenate([mesh.int_tau, mesh.int_tau,
                           -mesh.int_tau, -mesh.int_tau, mesh.areas])
    return (eps * sparse.coo_matrix((vals, (rows, cols)),
                                    shape=(ncells, ncells))).tocsc()


def _regularized_rhs(model: ModelData, mesh: Mesh, w_in: np.ndarray,
                     prev: State, dt: float) -> np.ndarray:
    u = model.entropy_transform_inv @ w_in
    g = (mesh.areas / dt) * (u - prev.values) + flux_divergence(model, mesh, u)
    return -g


def solve_linear_epsilon(model: ModelData, mesh: Mesh, w_in: np.ndarray,
                         prev: State, dt: float, eps: float) -> np.ndarray:
    """One application of the regularized map: solve the linear system

        eps * (sum_sigma tau (w_out - w_out,neighbor) + m(K) w_out) = -G(u(w_in))

    per species, with the right-hand side frozen at w_in."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    w_in = np.asarray(w_in, dtype=float)
    try:
        lu = splu(_epsilon_operator(mesh, eps))
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    rhs = _regularized_rhs(model, mesh, w_in, prev, dt)
    return np.stack([lu.solve(rhs[i]) for i in range(w_in.shape[0])])


def _make_report(model, mesh, prev, nxt, dt, cfg, *, newton_iters, fallback_used,
                 eps_path, residual_norm, min_value=None, clamp_magnitude=0.0):
    h_prev = total_entropy(model, mesh, prev)
    tol = cfg.entropy_slack_factor * cfg.newton_tol * (1.0 + abs(h_prev))
    cert = entropy_certificate(model, mesh, prev, nxt, dt, tol)
    return StepReport(
        newton_iters=newton_iters,
        fallback_used=fallback_used,
        eps_path=eps_path,
        residual_norm=residual_norm,
        entropy_before=cert.h_prev,
        entropy_after=cert.h_next,
        dissipation_gradient_term=cert.grad_term,
        dissipation_pressure_term=cert.pressure_term,
        entropy_slack=cert.slack,
        entropy_tolerance=cert.tolerance,
        entropy_inequality_satisfied=cert.satisfied,
        min_value=float(nxt.values.min()) if min_value is None else min_value,
        masses=mass_per_species(mesh, nxt),
        clamp_magnitude=clamp_magnitude,
    )


def _newton_core(model, mesh, prev, dt, cfg, initial):
    cand = State(initial.values.copy(), prev.time_index + 1)
    rnorm = residual(model, mesh, prev, cand, dt).norm
    iters = 0

    def step_once():
        system = jacobian(model, mesh, prev, cand, dt)
        return unflatten_values(solve_sparse(system), model.n)

    while rnorm > cfg.newton_tol:
        if iters >= cfg.max_newton_iters:
            raise NoConvergence(
                f"newton: residual {rnorm:.3e} after {iters} iterations")
        direction = step_once()
        alpha = 1.0
        for _ in range(cfg.max_line_search + 1):
            trial = cand.values + alpha * direction
            tnorm = residual(model, mesh, prev, State(trial, cand.time_index), dt).norm
            if tnorm <= (1.0 - 1e-4 * alpha) * rnorm:
                cand.values = trial
                rnorm = tnorm
                break
            alpha *= cfg.line_search_shrink
        else:
            raise NoConvergence(
                f"newton: line search stalled at residual {rnorm:.3e}")
        iters += 1

    # one polishing step once converged: quadratic convergence pushes the
    # conservation defect of the accepted state to machine level
    if rnorm > 1e-3 * cfg.newton_tol and iters < cfg.max_newton_iters:
        trial = cand.values + step_once()
        tnorm = residual(model, mesh, prev, State(trial, cand.time_index), dt).norm
        if tnorm < rnorm:
            cand.values = trial
            rnorm = tnorm
            iters += 1
    return cand, iters, rnorm


def newton_step_solve(model: ModelData, mesh: Mesh, prev: State, dt: float,
                      cfg: SolverConfig | None = None,
                      initial: State | None = None):
    """Solve one implicit step by backtracking Newton from prev (or from an
    explicit initial iterate).  Returns (state, report)."""
    cfg = cfg or SolverConfig()
    cand, iters, rnorm = _newton_core(model, mesh, prev, dt, cfg,
                                      prev if initial is None else initial)
    report = _make_report(model, mesh, prev, cand, dt, cfg,
                          newton_iters=iters, fallback_used=False,
                          eps_path=[], residual_norm=rnorm)
    return cand, report


def epsilon_continuation_solve(model: ModelData, mesh: Mesh, prev: State,
                               dt: float, cfg: SolverConfig | None = None):
    """Damped fixed-point continuation over the eps ladder, finished by Newton.

    Each positive rung iterates w <- (1-theta) w + theta F_eps(w) with the
    residual-monotone safeguard described in the module docstring; the final
    eps = 0 rung runs Newton from the continuation iterate."""
    cfg = cfg or SolverConfig()
    w = model.entropy_transform @ prev.values
    rungs: list[EpsRung] = []

    for eps in cfg.eps_ladder[:-1]:
        try:
            lu = splu(_epsilon_operator(mesh, eps))
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        theta = cfg.fixed_point_damping
        rnorm = residual_regularized(model, mesh, w, prev, dt, eps).norm
        iters = 0
        while rnorm > cfg.newton_tol and iters < cfg.max_fp_iters:
            rhs = _regularized_rhs(model, mesh, w, prev, dt)
            w_map = np.stack([lu.solve(rhs[i]) for i in range(model.n)])
            proposal = (1.0 - theta) * w + theta * w_map
            pnorm = residual_regularized(model, mesh, proposal, prev, dt, eps).norm
            iters += 1
            if pnorm < rnorm:
                w = proposal
                rnorm = pnorm
                theta = min(cfg.fixed_point_damping, 2.0 * theta)
            else:
                theta *= 0.5
                if theta < _MIN_DAMPING:
                    break   # repelling fixed point: stop burning budget
        converged = rnorm <= cfg.newton_tol
        energy_lhs = energy_rhs = None
        if converged:
            energy_lhs = eps * dt * sum(
                discrete_h1_norm_sq(mesh, w[i]) for i in range(model.n))
            energy_rhs = total_entropy(model, mesh, prev)
        rungs.append(EpsRung(eps, iters, rnorm, converged, energy_lhs, energy_rhs))

    start = State(model.entropy_transform_inv @ w, prev.time_index)
    cand, iters, rnorm = _newton_core(model, mesh, prev, dt, cfg, start)
    report = _make_report(model, mesh, prev, cand, dt, cfg,
                          newton_iters=iters, fallback_used=True,
                          eps_path=rungs, residual_norm=rnorm)
    return cand, report


def advance(model: ModelData, mesh: Mesh, prev: State, dt: float,
            cfg: SolverConfig | None = None):
    """Advance one time step with certificate checks.

    Tries Newton, falls back to the epsilon continuation, then rejects the
    step unless the solution is nonnegative within tol_neg and per-species
    mass drifted by at most 1e-10 relative.  Entries in [-tol_neg, 0) are
    clamped to zero and the clamp magnitude is recorded; the entropy
    certificate is evaluated on the accepted (clamped) state."""
    cfg = cfg or SolverConfig()
    if float(prev.values.min()) < -cfg.tol_neg:
        raise ValueError("previous state has entries below -tol_neg")

    try:
        state, report = newton_step_solve(model, mesh, prev, dt, cfg)
    except NoConvergence:
        state, report = epsilon_continuation_solve(model, mesh, prev, dt, cfg)

    min_value = float(state.values.min())
    if min_value < -cfg.tol_neg:
        raise CertificateViolation(
            f"nonnegativity: min value {min_value:.6e} below -{cfg.tol_neg:.1e}")

    m_prev = mass_per_species(mesh, prev)
    m_next = mass_per_species(mesh, state)
    drift = np.abs(m_next - m_prev) / np.maximum(np.abs(m_prev), 1e-12)
    if float(drift.max()) > MASS_DRIFT_RTOL:
        i = int(drift.argmax())
        raise CertificateViolation(
            f"mass conservation: species {i} drifted {drift[i]:.3e} relative")

    clamp = max(-min_value, 0.0)
    if clamp > 0.0:
        state.values = np.maximum(state.values, 0.0)

    report = _make_report(model, mesh, prev, state, dt, cfg,
                          newton_iters=report.newton_iters,
                          fallback_used=report.fallback_used,
                          eps_path=report.eps_path,
                          residual_norm=report.residual_norm,
                          min_value=min_value,
                          clamp_magnitude=clamp)
    return state, report


@dataclass
class SimulationResult:
    states: list[State]
    ledger: EntropyLedger
    failure: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    @property
    def final_state(self) -> State:
        return self.states[-1]


def simulate_trajectory(model: ModelData, mesh: Mesh, initial: State, dt: float,
                        n_steps: int, cfg: SolverConfig | None = None) -> SimulationResult:
    """Run the time loop, collecting every accepted state and the ledger.
    A rejected step stops the loop; the partial trajectory is returned with
    the failure attached."""
    cfg = cfg or SolverConfig()
    ledger = EntropyLedger.start(model, mesh, initial)
    states = [initial]
    for k in range(1, n_steps + 1):
        try:
            state, report = advance(model, mesh, states[-1], dt, cfg)
        except (NoConvergence, CertificateViolation, SingularSystem) as exc:
            return SimulationResult(states, ledger, exc)
        states.append(state)
        ledger.append(k, k * dt, report)
    return SimulationResult(states, ledger)
