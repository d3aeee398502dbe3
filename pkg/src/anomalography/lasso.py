"""Cyclic coordinate descent for l1-penalized least squares.

Shared by the batch and online solvers: the batch solver sweeps the
per-column subproblems of a masked panel all at once, the online solver
minimizes 0.5 * ||F (y - R a)||^2 + lam * ||a||_1 for the stacked
weighting operator F built from the current subspace estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import DimensionMismatchError, NonFiniteInputError, RoutingMatrix


def soft_threshold(x, lam):
    """Elementwise soft-thresholding sign(x) * max(|x| - lam, 0)."""
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


@dataclass
class LassoProblem:
    """min_a 0.5 * ||response - design @ a||^2 + lam * ||a||_1."""

    response: np.ndarray
    design: np.ndarray
    lam: float
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=np.float64)
        # Column-major storage: coordinate descent touches one column at a time.
        self.design = np.asfortranarray(self.design, dtype=np.float64)
        if self.design.ndim != 2:
            raise DimensionMismatchError("design", "expected a 2-d array")
        if self.response.shape != (self.design.shape[0],):
            raise DimensionMismatchError("response", "length must match design rows")
        if not (np.isfinite(self.response).all() and np.isfinite(self.design).all()):
            raise NonFiniteInputError("lasso problem has non-finite entries")
        if self.lam < 0 or not np.isfinite(self.lam):
            raise DimensionMismatchError("lam", "must be nonnegative and finite")
        if self.warm_start is not None and self.warm_start.shape != (self.design.shape[1],):
            raise DimensionMismatchError("warm_start", "length must match design columns")

    @cached_property
    def column_norms_sq(self) -> np.ndarray:
        return np.einsum("mf,mf->f", self.design, self.design)

    def objective(self, a: np.ndarray) -> float:
        r = self.response - self.design @ a
        return 0.5 * float(r @ r) + self.lam * float(np.abs(a).sum())


def _kkt_violation(design: np.ndarray, residual: np.ndarray, a: np.ndarray, lam: float) -> float:
    """Largest violation of the subgradient optimality conditions."""
    grad = design.T @ residual
    on = a != 0.0
    viol_off = np.maximum(np.abs(grad[~on]) - lam, 0.0)
    viol_on = np.abs(grad[on] - lam * np.sign(a[on]))
    pieces = [viol_off, viol_on]
    return max((float(p.max()) for p in pieces if p.size), default=0.0)


def lasso_cd(problem: LassoProblem, tol: float = 1e-8, max_passes: int = 200):
    """Cyclic coordinate descent on a LassoProblem.

    Each scalar update minimizes the objective exactly in one coordinate,
    so the objective never increases. Sweeps stop once the largest
    coordinate change falls below tol * (1 + max|a|) and the subgradient
    conditions hold within 10 * tol, or after max_passes sweeps.

    Coordinates whose design column is identically zero are pinned at 0.

    Returns (a, passes).
    """
    X = problem.design
    y = problem.response
    lam = problem.lam
    n_coords = X.shape[1]
    col_sq = problem.column_norms_sq
    active = col_sq > 0.0
    if problem.warm_start is not None:
        a = np.where(active, problem.warm_start.astype(np.float64), 0.0)
    else:
        a = np.zeros(n_coords)
    r = y - X @ a
    order = np.flatnonzero(active)
    passes = 0
    for _ in range(max_passes):
        passes += 1
        max_delta = 0.0
        for f in order:
            c = X[:, f]
            old = a[f]
            rho = c @ r + col_sq[f] * old
            new = soft_threshold(rho, lam) / col_sq[f]
            if new != old:
                r += c * (old - new)
                a[f] = new
                delta = abs(new - old)
                if delta > max_delta:
                    max_delta = delta
        if max_delta <= tol * (1.0 + float(np.abs(a).max(initial=0.0))):
            if _kkt_violation(X, r, a, lam) <= 10.0 * tol:
                break
    return a, passes


class MaskedColumnCd:
    """One-sweep coordinate descent over all time columns of a masked panel.

    Solves the T independent subproblems
    min_{a_t} 0.5 * ||Omega_t (e_t - R a_t)||^2 + lam * ||a_t||_1
    one cyclic pass at a time, visiting flows in index order and using the
    already-updated values of preceding flows (plain cyclic CD, vectorized
    across t). The caller owns the masked residual panel E = Omega * (e - R A)
    and the coefficient panel A; both are updated in place.
    """

    def __init__(self, routing: RoutingMatrix, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[0] != routing.n_links:
            raise DimensionMismatchError("mask", "row count must match routing links")
        self.n_flows = routing.n_flows
        self.n_slots = mask.shape[1]
        self.supports = routing.column_supports
        # Per flow: float copy of the mask rows on its path and the per-slot
        # count of observed path links. The count is ||Omega_t r_f||^2 for
        # binary routing, the exact curvature of the scalar subproblem.
        self.path_masks = [mask[sup].astype(np.float64) for sup in self.supports]
        self.denoms = [pm.sum(axis=0) for pm in self.path_masks]

    def sweep(self, E: np.ndarray, A: np.ndarray, lam: float) -> float:
        """One cyclic pass; returns the largest coordinate change."""
        max_delta = 0.0
        for f in range(self.n_flows):
            sup = self.supports[f]
            if sup.size == 0:
                continue
            denom = self.denoms[f]
            rho = E[sup].sum(axis=0) + denom * A[f]
            new = soft_threshold(rho, lam)
            np.divide(new, denom, out=new, where=denom > 0.0)
            new[denom == 0.0] = 0.0
            delta = A[f] - new
            if np.any(delta):
                E[sup] += self.path_masks[f] * delta
                A[f] = new
                max_delta = max(max_delta, float(np.abs(delta).max()))
        return max_delta
