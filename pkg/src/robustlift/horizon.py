"""Stacking the lifted recurrence over a time window into one linear solve.

The unknown is Y = (y(0), ..., y(T)).  Row block 0 pins y(0); row block
t >= 1 encodes y(t) - B(t-1) y(t-1) = c(t-1).  The matrix therefore has
identity diagonal blocks and -B(t) on the subdiagonal, and the right
hand side stacks the initial lift above the constant columns.

A normalized copy M / (1 + rho) with operator norm at most one is kept
alongside; `row_access` reproduces its rows entry for entry from the
stored step blocks, which is what a query oracle would serve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.io import mmwrite

from .carleman import LiftedStep, delta_dim

__all__ = [
    "HorizonSystem",
    "assemble_horizon",
    "row_access",
    "SparsityReport",
    "sparsity_bounds",
    "composition_count",
    "hockey_stick_total",
    "uniform_sparsity_bound",
    "ConditionReport",
    "condition_bounds",
    "save_matrix_market",
]

DENSE_SVD_LIMIT = 2000


@dataclass(frozen=True)
class HorizonSystem:
    matrix: sparse.csr_matrix
    matrix_normalized: sparse.csr_matrix
    rhs: np.ndarray
    rhs_normalized: np.ndarray
    steps: tuple[LiftedStep, ...]
    rho: float
    d: int
    n_levels: int

    @property
    def t_window(self) -> int:
        return len(self.steps)

    @property
    def block_dim(self) -> int:
        return delta_dim(self.d, self.n_levels)

    @property
    def dim(self) -> int:
        return (self.t_window + 1) * self.block_dim

    @property
    def inv_scale(self) -> float:
        return 1.0 / (1.0 + self.rho)


def assemble_horizon(steps, y0: np.ndarray, rho: float,
                     dims: tuple[int, int] | None = None) -> HorizonSystem:
    """Build M, its normalized copy, and the stacked right hand side.

    An empty step list is the T = 0 window (M is the identity); it needs
    explicit dims = (d, n_levels) since no step carries them.
    """
    per_step = tuple(steps) if isinstance(steps, (list, tuple)) else (steps,)
    if per_step:
        d, n_levels = per_step[0].d, per_step[0].n_levels
    elif dims is not None:
        d, n_levels = dims
    else:
        raise ValueError("empty window needs explicit dims=(d, n_levels)")
    dim = delta_dim(d, n_levels)
    if any(s.dim != dim for s in per_step):
        raise ValueError("all steps must share the lifted dimension")
    y0 = np.asarray(y0, dtype=float)
    if len(y0) != dim:
        raise ValueError("initial lift has the wrong dimension")
    if rho < 0:
        raise ValueError("rho must be nonnegative")

    t_window = len(per_step)
    eye = sparse.identity(dim, format="csr")
    grid = [[None] * (t_window + 1) for _ in range(t_window + 1)]
    for t in range(t_window + 1):
        grid[t][t] = eye
        if t >= 1:
            grid[t][t - 1] = (-per_step[t - 1].b_matrix).tocsr()
    matrix = sparse.bmat(grid, format="csr")
    inv = 1.0 / (1.0 + rho)
    normalized = matrix.copy()
    normalized.data = normalized.data * inv
    rhs = np.concatenate([y0] + [s.c_vector for s in per_step])
    return HorizonSystem(
        matrix=matrix,
        matrix_normalized=normalized,
        rhs=rhs,
        rhs_normalized=rhs * inv,
        steps=per_step,
        rho=float(rho),
        d=d,
        n_levels=n_levels,
    )


def row_access(system: HorizonSystem, t: int, r: int) -> list[tuple[int, float]]:
    """Nonzeros of one row of the normalized matrix, served from the steps.

    Row (t, r): for t = 0 a single diagonal entry; otherwise the diagonal
    entry plus row r of -B(t-1) placed in column block t-1, all scaled by
    1 / (1 + rho).
    """
    dim = system.block_dim
    if not (0 <= t <= system.t_window and 0 <= r < dim):
        raise IndexError("row index outside the stacked system")
    inv = system.inv_scale
    entries = [(t * dim + r, 1.0 * inv)]
    if t >= 1:
        b = system.steps[t - 1].b_matrix
        start, stop = b.indptr[r], b.indptr[r + 1]
        base = (t - 1) * dim
        for idx in range(start, stop):
            entries.append((base + int(b.indices[idx]), (-b.data[idx]) * inv))
    entries.sort(key=lambda e: e[0])
    return entries


# ----------------------------------------------------------------------
# sparsity


def composition_count(j: int, s: int, degree: int) -> int:
    """Number of words alpha in {0..degree}^j with |alpha| = s, exactly."""
    total = 0
    for k in range(j + 1):
        rem = s - k * (degree + 1)
        if rem < 0:
            break
        total += (-1) ** k * math.comb(j, k) * math.comb(rem + j - 1, j - 1)
    return total


def hockey_stick_total(j: int, n_levels: int) -> int:
    """sum_{s=1..N} C(s+j-1, j-1) collapsed to C(N+j, j) - 1."""
    return math.comb(n_levels + j, j) - 1


def uniform_sparsity_bound(s_star: int, n_levels: int) -> int:
    return max(s_star**j * hockey_stick_total(j, n_levels)
               for j in range(1, n_levels + 1))


@dataclass(frozen=True)
class SparsityReport:
    per_level_terms: np.ndarray
    block_row_bounds: np.ndarray
    s_b: int
    s_row: int
    uniform_s_star: int | None
    uniform_bound: int | None


def sparsity_bounds(row_sparsities, n_levels: int,
                    s_star: int | None = None) -> SparsityReport:
    """Row-sparsity bounds of B and of the stacked matrix.

    `row_sparsities` holds, per step, the per-degree row sparsities
    (index l gives the max row nonzeros of Q_l); integer convolution of
    that series bounds each block row, and the stacked matrix adds one
    diagonal entry.
    """
    per_step = row_sparsities
    if per_step and isinstance(per_step[0], (int, np.integer)):
        per_step = [per_step]
    worst_terms = None
    worst_rows = None
    s_b = 0
    for series in per_step:
        series = [int(x) for x in series]
        table = np.zeros((n_levels, n_levels + 1), dtype=object)
        power = [1]
        for j in range(n_levels):
            new = [0] * min(len(power) + len(series) - 1, n_levels + 1)
            for a, ca in enumerate(power):
                if ca == 0 or a >= n_levels + 1:
                    continue
                for bdeg, cb in enumerate(series):
                    if a + bdeg >= n_levels + 1:
                        break
                    new[a + bdeg] += ca * cb
            power = new
            for s in range(min(len(power), n_levels + 1)):
                table[j, s] = power[s]
        rows = np.array([int(sum(table[j, 1:])) for j in range(n_levels)],
                        dtype=object)
        peak = int(rows.max()) if len(rows) else 0
        if peak >= s_b:
            s_b = peak
            worst_terms, worst_rows = table, rows
    return SparsityReport(
        per_level_terms=worst_terms,
        block_row_bounds=worst_rows,
        s_b=s_b,
        s_row=s_b + 1,
        uniform_s_star=s_star,
        uniform_bound=(uniform_sparsity_bound(s_star, n_levels)
                       if s_star is not None else None),
    )


# ----------------------------------------------------------------------
# conditioning


@dataclass(frozen=True)
class ConditionReport:
    rho: float
    t_window: int
    norm_bound: float
    inverse_norm_bound: float
    kappa_bound_geometric: float
    kappa_bound: float
    measured_norm: float | None
    measured_kappa: float | None


def condition_bounds(rho: float, t_window: int,
                     system: HorizonSystem | None = None,
                     dense_limit: int = DENSE_SVD_LIMIT) -> ConditionReport:
    """Closed-form condition bounds; measured SVD when the size allows."""
    if not (0.0 <= rho):
        raise ValueError("rho must be nonnegative")
    geo_sum = float(sum(rho**k for k in range(t_window + 1)))
    inv_bound = 1.0 / (1.0 - rho) if rho < 1.0 else geo_sum
    kappa_geo = (1.0 + rho) * geo_sum
    closed = min((1.0 + rho) / (1.0 - rho) if rho < 1.0 else math.inf,
                 2.0 * (t_window + 1))
    measured_norm = measured_kappa = None
    if system is not None and system.dim <= dense_limit:
        svals = np.linalg.svd(system.matrix.toarray(), compute_uv=False)
        measured_norm = float(svals[0])
        measured_kappa = float(svals[0] / svals[-1])
    return ConditionReport(
        rho=float(rho),
        t_window=t_window,
        norm_bound=1.0 + rho,
        inverse_norm_bound=min(geo_sum, inv_bound),
        kappa_bound_geometric=kappa_geo,
        kappa_bound=min(kappa_geo, closed),
        measured_norm=measured_norm,
        measured_kappa=measured_kappa,
    )


def save_matrix_market(system: HorizonSystem, path: str,
                       normalized: bool = True) -> None:
    target = system.matrix_normalized if normalized else system.matrix
    mmwrite(path, target)
