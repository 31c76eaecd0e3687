"""Interaction data for the cross-diffusion system and its entropy structure.

The system couples n species through pressures p_i(u) = sum_j a_ij u_j with a
common diffusion coefficient delta.  Under detailed balance there are weights
pi_i > 0 making (pi_i a_ij) symmetric; when its smallest eigenvalue lam is
positive, the weighted quadratic form

    h(u) = (1 / (2 delta)) * sum_ij pi_i a_ij u_i u_j

is a Lyapunov functional for the dynamics.  The same matrix scaled by
1/delta maps densities to the entropy variables w_i = (pi_i / delta) p_i(u)
used by the regularized solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DB_RTOL = 1e-10


class DetailedBalanceViolation(ValueError):
    """No positive weights symmetrize the interaction matrix."""

    def __init__(self, i: int, j: int, residual: float):
        self.pair = (i, j)
        self.residual = residual
        super().__init__(
            f"detailed balance fails on species pair ({i}, {j}): "
            f"relative residual {residual:.3e} (ratio cycle through species 0 "
            f"does not close)"
        )


class NotSymmetric(ValueError):
    pass


class NotPositiveDefinite(ValueError):
    pass


@dataclass
class InteractionMatrix:
    """Positive n x n coupling matrix and the common diffusion coefficient."""

    a: np.ndarray
    delta: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise ValueError("interaction matrix must be square")
        if self.a.shape[0] < 2:
            raise ValueError("need at least 2 species")
        if not np.all(self.a > 0):
            raise ValueError("all interaction coefficients must be positive")
        if not self.delta > 0:
            raise ValueError("diffusion coefficient delta must be positive")

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass
class ModelData:
    """Interaction matrix plus everything derived from detailed balance.

    sym is the symmetrized weighted matrix (pi_i a_ij), lam its smallest
    eigenvalue, and entropy_transform the matrix (pi_i a_ij / delta) sending
    densities to entropy variables (with its precomputed inverse).
    """

    matrix: InteractionMatrix
    pi: np.ndarray
    sym: np.ndarray
    lam: float
    entropy_transform: np.ndarray
    entropy_transform_inv: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.n

    @property
    def a(self) -> np.ndarray:
        return self.matrix.a

    @property
    def delta(self) -> float:
        return self.matrix.delta


def detailed_balance_weights(a, rtol: float = DB_RTOL) -> np.ndarray:
    """Weights pi with pi_i a_ij = pi_j a_ji, normalized to pi_0 = 1.

    Ratios are propagated along the star rooted at species 0 and every pair
    is verified afterwards; an inconsistent ratio cycle raises
    DetailedBalanceViolation naming the pair where the residual shows up.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("interaction matrix must be square")
    if not np.all(a > 0):
        raise ValueError("all interaction coefficients must be positive")
    n = a.shape[0]
    pi = np.ones(n)
    for j in range(1, n):
        pi[j] = a[0, j] / a[j, 0]
    for i in range(n):
        for j in range(i + 1, n):
            lhs = pi[i] * a[i, j]
            rhs = pi[j] * a[j, i]
            res = abs(lhs - rhs) / max(lhs, rhs)
            if res > rtol:
                raise DetailedBalanceViolation(i, j, res)
    return pi


def smallest_eigenvalue_sym(m, rtol: float = 1e-12) -> float:
    """Smallest eigenvalue of a symmetric matrix (LAPACK symmetric solver)."""
    m = np.asarray(m, dtype=float)
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > rtol * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    return float(np.linalg.eigvalsh(m)[0])


def build_model(matrix: InteractionMatrix, pi=None) -> ModelData:
    """Assemble ModelData; fails when the entropy structure is absent.

    pi defaults to the detailed-balance weights normalized to pi_0 = 1; an
    explicit override is verified against every pair before use.
    """
    a, delta = matrix.a, matrix.delta
    n = matrix.n
    if pi is None:
        pi = detailed_balance_weights(a)
    else:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (n,) or not np.all(pi > 0):
            raise ValueError("pi override must be n positive reals")
        for i in range(n):
            for j in range(i + 1, n):
                lhs, rhs = pi[i] * a[i, j], pi[j] * a[j, i]
                res = abs(lhs - rhs) / max(lhs, rhs)
                if res > DB_RTOL:
                    raise DetailedBalanceViolation(i, j, res)

    weighted = pi[:, None] * a
    sym = 0.5 * (weighted + weighted.T)   # defensive symmetrization
    lam = smallest_eigenvalue_sym(sym)
    if lam <= 0:
        raise NotPositiveDefinite(
            f"weighted interaction matrix has smallest eigenvalue {lam:.6g} <= 0; "
            "the model is not entropy-dissipative"
        )
    transform = weighted / delta
    transform_inv = np.linalg.inv(transform)
    if np.max(np.abs(transform @ transform_inv - np.eye(n))) > 1e-10:
        raise ValueError("entropy-variable transform could not be inverted accurately")
    return ModelData(matrix, pi, sym, lam, transform, transform_inv)


def pressure(model: ModelData, u):
    """p_i = sum_j a_ij u_j; u may be a vector or an (n, cells) array."""
    return model.a @ np.asarray(u, dtype=float)


def entropy_density(model: ModelData, u) -> float:
    u = np.asarray(u, dtype=float)
    return float(0.5 / model.delta * (u @ model.sym @ u))


def entropy_density_cells(model: ModelData, values: np.ndarray) -> np.ndarray:
    """h(u_K) for every cell of an (n, cells) array."""
    return 0.5 / model.delta * np.einsum("ij,ik,jk->k", model.sym, values, values)


def total_entropy(model: ModelData, mesh, state) -> float:
    """sum_K m(K) h(u_K); accepts a State or a bare (n, cells) array."""
    values = getattr(state, "values", state)
    return float(mesh.areas @ entropy_density_cells(model, values))


def primal_to_entropy(model: ModelData, u):
    return model.entropy_transform @ np.asarray(u, dtype=float)


def entropy_to_primal(model: ModelData, w):
    return model.entropy_transform_inv @ np.asarray(w, dtype=float)
