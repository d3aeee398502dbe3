"""Domain types and shared dense linear algebra.

Conventions used throughout the package: link-load panels are L x T
(row = link, column = time slot), routing matrices are L x F over
origin-destination flows, subspace bases are L x rho, and all numerics
are float64. Unobserved entries of a measurement vector are stored as 0
and only ever read through the observation mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.linalg


class AnomalographyError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(AnomalographyError):
    """Inconsistent dimensions; ``field`` names the offending input."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


class NonFiniteInputError(AnomalographyError):
    """An input contains NaN or infinite entries."""


class NotPositiveDefiniteError(AnomalographyError):
    """A matrix required to be positive definite failed its factorization."""


class RankBoundExceededError(AnomalographyError):
    """Numerical rank exceeds the requested factorization size."""


class MissingDataError(AnomalographyError):
    """An operation that needs fully observed data was given missing entries."""


class NumericsError(AnomalographyError):
    """Non-finite values or a failed iteration inside a solver."""


# Named substreams hanging off one root seed. Every consumer of randomness
# draws from its own child stream, so ablating e.g. the noise level leaves
# traffic, anomalies and masks bit-identical.
STREAM_IDS = {
    "positions": 0,
    "traffic": 1,
    "anomalies": 2,
    "noise": 3,
    "mask": 4,
    "churn": 5,
    "batch_init": 6,
    "online_init": 7,
}


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for the named substream of a root seed."""
    key = (STREAM_IDS[name],) + tuple(extra)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dims:
    """Problem dimensions: links L, flows F, horizon T, factorization size rho.

    F >= L is permitted (and typical: F = N(N-1) grows faster than the
    link count).
    """

    n_links: int
    n_flows: int
    horizon: int
    rank_bound: int

    def __post_init__(self):
        for name in ("n_links", "n_flows", "horizon", "rank_bound"):
            if getattr(self, name) < 1:
                raise DimensionMismatchError(name, "must be a positive integer")


@dataclass(frozen=True)
class RoutingMatrix:
    """Binary L x F routing matrix; column f is the link support of flow f.

    Columns may be identically zero (flow currently routed over no link,
    e.g. while its endpoints are being rewired).
    """

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64, copy=True)
        if entries.ndim != 2:
            raise DimensionMismatchError("routing", "expected a 2-d array")
        if not np.isin(entries, (0.0, 1.0)).all():
            raise NonFiniteInputError("routing entries must be 0 or 1")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n_links(self) -> int:
        return self.entries.shape[0]

    @property
    def n_flows(self) -> int:
        return self.entries.shape[1]

    @cached_property
    def column_supports(self) -> tuple[np.ndarray, ...]:
        """Per-flow arrays of link indices, for fast access to r_f."""
        return tuple(
            np.flatnonzero(self.entries[:, f]) for f in range(self.n_flows)
        )


@dataclass(frozen=True)
class ObservationMask:
    """Set of observed link indices at one slot. May be empty."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size and idx[0] < 0:
            raise DimensionMismatchError("mask", "negative link index")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_bool(cls, observed: np.ndarray) -> "ObservationMask":
        return cls(np.flatnonzero(observed))

    def boolean(self, n_links: int) -> np.ndarray:
        out = np.zeros(n_links, dtype=bool)
        out[self.indices] = True
        return out

    @property
    def count(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class Observation:
    """One slot of masked link loads y_t with its routing matrix reference."""

    y: np.ndarray
    mask: ObservationMask
    routing: RoutingMatrix
    t: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1:
            raise DimensionMismatchError("y", "expected a 1-d array")
        observed = self.mask.boolean(y.shape[0])
        object.__setattr__(self, "y", _readonly(np.where(observed, y, 0.0)))


@dataclass(frozen=True)
class Subspace:
    """L x rho basis of the nominal-traffic subspace (not orthonormalized)."""

    basis: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64)
        if basis.ndim != 2:
            raise DimensionMismatchError("basis", "expected a 2-d array")
        if not np.isfinite(basis).all():
            raise NonFiniteInputError("subspace basis has non-finite entries")
        object.__setattr__(self, "basis", _readonly(basis))

    @property
    def n_links(self) -> int:
        return self.basis.shape[0]

    @property
    def rank_bound(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class AnomalyMap:
    """Sparse F x T anomaly amplitudes as (flow, time, amplitude) triplets.

    Stored triplets are sorted by (flow, time) and carry amplitude != 0,
    so dense -> triplets -> dense is the identity.
    """

    n_flows: int
    n_slots: int
    flows: np.ndarray
    times: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        flows = np.asarray(self.flows, dtype=np.int64)
        times = np.asarray(self.times, dtype=np.int64)
        amps = np.asarray(self.amplitudes, dtype=np.float64)
        if not (flows.shape == times.shape == amps.shape) or flows.ndim != 1:
            raise DimensionMismatchError("triplets", "flows/times/amplitudes must be aligned 1-d arrays")
        if flows.size:
            if flows.min() < 0 or flows.max() >= self.n_flows:
                raise DimensionMismatchError("flows", "flow index out of range")
            if times.min() < 0 or times.max() >= self.n_slots:
                raise DimensionMismatchError("times", "time index out of range")
            if not np.isfinite(amps).all():
                raise NonFiniteInputError("anomaly amplitudes must be finite")
            if (amps == 0.0).any():
                raise DimensionMismatchError("amplitudes", "stored amplitudes must be nonzero")
        order = np.lexsort((times, flows))
        keys = flows[order] * self.n_slots + times[order]
        if keys.size > 1 and (np.diff(keys) == 0).any():
            raise DimensionMismatchError("triplets", "duplicate (flow, time) entry")
        for name, arr in (("flows", flows[order]), ("times", times[order])):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "amplitudes", _readonly(amps[order]))

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "AnomalyMap":
        dense = np.asarray(dense, dtype=np.float64)
        f_idx, t_idx = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1], f_idx, t_idx, dense[f_idx, t_idx])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_flows, self.n_slots))
        out[self.flows, self.times] = self.amplitudes
        return out

    @property
    def nnz(self) -> int:
        return int(self.flows.size)


@dataclass(frozen=True)
class HyperParams:
    """Penalty weights and solver knobs shared by the batch and online paths.

    lam_star weighs the rank surrogate, lam_one the anomaly sparsity;
    beta is the forgetting factor of the online tracker (beta = 1 keeps
    an infinite memory and enables the fast recursive update).
    """

    lam_star: float = 0.36
    lam_one: float = 0.11
    beta: float = 0.99
    rho: int = 5
    detect_threshold: float = 0.1
    lasso_tol: float = 1e-8
    lasso_max_passes: int = 200
    bcd_tol: float = 1e-6
    bcd_max_iters: int = 500
    eta: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not (self.lam_star > 0 and np.isfinite(self.lam_star)):
            raise DimensionMismatchError("lam_star", "must be positive and finite")
        if not (self.lam_one >= 0 and np.isfinite(self.lam_one)):
            raise DimensionMismatchError("lam_one", "must be nonnegative and finite")
        if not 0.0 < self.beta <= 1.0:
            raise DimensionMismatchError("beta", "must lie in (0, 1]")
        if self.rho < 1:
            raise DimensionMismatchError("rho", "must be a positive integer")
        if self.detect_threshold < 0:
            raise DimensionMismatchError("detect_threshold", "must be nonnegative")
        if self.lasso_tol <= 0 or self.bcd_tol <= 0:
            raise DimensionMismatchError("tol", "tolerances must be positive")
        if self.lasso_max_passes < 1 or self.bcd_max_iters < 1:
            raise DimensionMismatchError("max_iters", "iteration caps must be positive")
        if self.eta <= 1.0:
            raise DimensionMismatchError("eta", "backtracking factor must exceed 1")


def validate(obs: Observation, dims: Dims) -> None:
    """Check an observation against expected dimensions.

    Raises DimensionMismatchError naming the offending field; solver ops
    assume inputs that passed this check.
    """
    if obs.y.shape[0] != dims.n_links:
        raise DimensionMismatchError(
            "y", f"expected length {dims.n_links}, got {obs.y.shape[0]}"
        )
    idx = obs.mask.indices
    if idx.size and idx[-1] >= dims.n_links:
        raise DimensionMismatchError(
            "mask", f"link index {int(idx[-1])} out of range for L={dims.n_links}"
        )
    if obs.routing.entries.shape != (dims.n_links, dims.n_flows):
        raise DimensionMismatchError(
            "routing",
            f"expected shape {(dims.n_links, dims.n_flows)}, got {obs.routing.entries.shape}",
        )


def solve_pd(H: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve H x = b for symmetric positive definite H via Cholesky.

    b may be a vector or a matrix of stacked right-hand sides. Never forms
    an explicit inverse. The residual satisfies
    ``norm(H x - b, inf) <= 1e-10 * max(1, norm(b, inf))`` on the
    well-conditioned ridge systems this package produces.
    """
    H = np.asarray(H, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatchError("H", "expected a square matrix")
    if b.shape[0] != H.shape[0]:
        raise DimensionMismatchError("b", "right-hand side length mismatch")
    if not (np.isfinite(H).all() and np.isfinite(b).all()):
        raise NonFiniteInputError("solve_pd received non-finite input")
    try:
        factor = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def solve_pd_batch(H: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve n stacked SPD systems H[i] x[i] = B[i].

    H has shape (n, k, k) and B shape (n, k). Uses a batched Cholesky
    factorization with explicit triangular substitution; k is small
    (the factorization size rho), so the Python loop over k is cheap.
    """
    H = np.asarray(H, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if H.ndim != 3 or H.shape[1] != H.shape[2]:
        raise DimensionMismatchError("H", "expected shape (n, k, k)")
    if B.shape != H.shape[:2]:
        raise DimensionMismatchError("B", "expected shape (n, k)")
    if not (np.isfinite(H).all() and np.isfinite(B).all()):
        raise NonFiniteInputError("solve_pd_batch received non-finite input")
    try:
        C = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    k = H.shape[1]
    Z = np.empty_like(B)
    for i in range(k):
        acc = B[:, i]
        if i:
            acc = acc - np.einsum("nj,nj->n", C[:, i, :i], Z[:, :i])
        Z[:, i] = acc / C[:, i, i]
    X = np.empty_like(B)
    for i in reversed(range(k)):
        acc = Z[:, i]
        if i < k - 1:
            acc = acc - np.einsum("nj,nj->n", C[:, i + 1:, i], X[:, i + 1:])
        X[:, i] = acc / C[:, i, i]
    return X
