"""Discrete fluxes, residuals, and the semismooth Jacobian of the implicit step.

One implicit Euler step of the finite-volume discretization reads, per cell K
and species i,

    m(K)/dt * (u_i,K - prev_i,K) + sum_{sigma in E_K} F_i,K,sigma = 0,
    F_i,K,sigma = -tau_sigma * (delta * D u_i + ubar_i,sigma * D p_i(u)),

with D v = v_neighbor - v_K across the edge and ubar the min-upwinded
mobility.  The mobility uses positive parts, ubar = min(u_K^+, u_L^+):
Newton iterates may leave the nonnegative cone, and at an accepted
nonnegative solution the clipped and the plain min coincide.  Exterior edges
carry no flux (no-flux boundary, both differences vanish).

All kernels are pure functions of (model, mesh, states) with a fixed edge
summation order, so results are independent of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .mesh import EXTERIOR, Mesh
from .model import ModelData


@dataclass
class State:
    """Per-cell, per-species densities at one time level; shape (n, cells)."""

    values: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("state values must be an (n_species, n_cells) array")

    def copy(self) -> "State":
        return State(self.values.copy(), self.time_index)


@dataclass
class Residual:
    values: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass
class SparseSystem:
    """COO triplets plus right-hand side; unknowns are species-major per cell,
    x[K * n + i] = u_{i,K}.  The rhs is the Newton right-hand side -R(cand)."""

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    rhs: np.ndarray
    shape: tuple[int, int]

    def to_csr(self) -> sparse.csr_matrix:
        # CSR conversion sums duplicate (row, col) entries
        return sparse.coo_matrix((self.vals, (self.rows, self.cols)),
                                 shape=self.shape).tocsr()


def flatten_values(values: np.ndarray) -> np.ndarray:
    return values.T.ravel()


def unflatten_values(x: np.ndarray, n_species: int) -> np.ndarray:
    return x.reshape(-1, n_species).T


def upwind_value(uk: float, ul: float):
    return np.minimum(uk, ul)


def upwind_value_pos(uk: float, ul: float):
    """min of positive parts, min(uk^+, ul^+)."""
    return np.minimum(np.maximum(uk, 0.0), np.maximum(ul, 0.0))


def _edge_arrays(model: ModelData, mesh: Mesh, values: np.ndarray):
    """Per-species differences and clipped upwind mobilities on interior edges."""
    uk = values[:, mesh.int_k]
    ul = values[:, mesh.int_l]
    p = model.a @ values
    du = ul - uk
    dp = p[:, mesh.int_l] - p[:, mesh.int_k]
    ubar = np.minimum(np.maximum(uk, 0.0), np.maximum(ul, 0.0))
    return uk, ul, du, dp, ubar


def flux_divergence(model: ModelData, mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """sum_{sigma in E_K} F_{i,K,sigma} for every cell and species."""
    n, ncells = values.shape
    _, _, du, dp, ubar = _edge_arrays(model, mesh, values)
    f = -mesh.int_tau * (model.delta * du + ubar * dp)   # flux leaving the owner
    out = np.zeros_like(values)
    for i in range(n):
        out[i] = np.bincount(mesh.int_k, weights=f[i], minlength=ncells)
        out[i] -= np.bincount(mesh.int_l, weights=f[i], minlength=ncells)
    return out


def flux(model: ModelData, mesh: Mesh, state: State, species: int,
         edge_id: int, owner: int) -> float:
    """Flux of one species through one edge, seen from the owner cell."""
    e = mesh.edges[edge_id]
    if owner not in e.cells:
        raise ValueError(f"cell {owner} does not bound edge {edge_id}")
    if e.kind == EXTERIOR:
        return 0.0
    k, l = e.cells
    if owner == l:
        k, l = l, k
    u = state.values
    du = u[species, l] - u[species, k]
    dp = model.a[species] @ u[:, l] - model.a[species] @ u[:, k]
    ubar = min(max(u[species, k], 0.0), max(u[species, l], 0.0))
    return float(-e.transmissibility * (model.delta * du + ubar * dp))


def residual(model: ModelData, mesh: Mesh, prev: State, cand: State,
             dt: float) -> Residual:
    """Per-cell defect of the implicit step at the candidate state."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    vals = (mesh.areas / dt) * (cand.values - prev.values)
    vals += flux_divergence(model, mesh, cand.values)
    return Residual(vals)


def residual_regularized(model: ModelData, mesh: Mesh, w: np.ndarray,
                         prev: State, dt: float, eps: float) -> Residual:
    """Defect of the eps-regularized step in entropy variables w.

    Adds eps times the screened-Laplacian term, per cell K:
    sum_sigma tau_sigma (w_K - w_{K,sigma}) + m(K) w_K, so eps = 0 reduces to
    residual() evaluated at u(w).
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    w = np.asarray(w, dtype=float)
    u = model.entropy_transform_inv @ w
    vals = (mesh.areas / dt) * (u - prev.values)
    vals += flux_divergence(model, mesh, u)
    if eps != 0.0:
        ncells = mesh.n_cells
        for i in range(w.shape[0]):
            dw = mesh.int_tau * (w[i, mesh.int_k] - w[i, mesh.int_l])
            stiff = np.bincount(mesh.int_k, weights=dw, minlength=ncells)
            stiff -= np.bincount(mesh.int_l, weights=dw, minlength=ncells)
            vals[i] += eps * (stiff + mesh.areas * w[i])
    return Residual(vals)


def jacobian(model: ModelData, mesh: Mesh, prev: State, cand: State,
             dt: float) -> SparseSystem:
    """Exact derivative of residual() w.r.t. the candidate state.

    The upwind selector (argmin cell and clipping branch) is frozen at the
    candidate; ties pick the owner cell.  Away from switching points this
    matches central finite differences of residual().
    """
    n, ncells = cand.values.shape
    uk, ul, du, dp, ubar = _edge_arrays(model, mesh, cand.values)
    tau = mesh.int_tau
    k, l = mesh.int_k, mesh.int_l

    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    idx = np.arange(ncells * n)
    put(idx, idx, np.repeat(mesh.areas / dt, n))

    base_k = k * n
    base_l = l * n
    for i in range(n):
        rk = base_k + i
        rl = base_l + i
        vd = tau * model.delta
        put(rk, rk, vd)
        put(rk, rl, -vd)
        put(rl, rk, -vd)
        put(rl, rl, vd)
        for j in range(n):
            vp = tau * ubar[i] * model.a[i, j]
            ck = base_k + j
            cl = base_l + j
            put(rk, ck, vp)
            put(rk, cl, -vp)
            put(rl, ck, -vp)
            put(rl, cl, vp)
        # mobility: ubar_i depends on u_i at the argmin cell only, and only
        # while the clipped value is positive
        sel_k = np.maximum(uk[i], 0.0) <= np.maximum(ul[i], 0.0)
        sel_cell = np.where(sel_k, k, l)
        active = np.where(sel_k, uk[i], ul[i]) > 0.0
        vm = -tau * dp[i] * active
        cm = sel_cell * n + i
        put(rk, cm, vm)
        put(rl, cm, -vm)

    rhs = -flatten_values(residual(model, mesh, prev, cand, dt).values)
    dim = ncells * n
    return SparseSystem(np.concatenate(rows), np.concatenate(cols),
                        np.concatenate(vals), rhs, (dim, dim))


def discrete_h1_norm_sq(mesh: Mesh, v) -> float:
    """sum_sigma tau_sigma (D_sigma v)^2 + sum_K m(K) v_K^2."""
    v = np.asarray(v, dtype=float)
    dv = v[mesh.int_l] - v[mesh.int_k]
    return float(mesh.int_tau @ dv**2 + mesh.areas @ v**2)
