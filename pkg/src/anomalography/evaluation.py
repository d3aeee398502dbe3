"""Detection metrics, cost diagnostics, and full-observation baselines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    AnomalyMap,
    DimensionMismatchError,
    HyperParams,
    MissingDataError,
    NonFiniteInputError,
    Observation,
    RoutingMatrix,
    Subspace,
)
from .batch import BatchProblem, bcd_solve
from .lasso import LassoProblem, lasso_cd
from .online import estimate_slot, project_coeffs, slot_loss


def _dense(a) -> np.ndarray:
    return a.to_dense() if isinstance(a, AnomalyMap) else np.asarray(a, dtype=np.float64)


@dataclass(frozen=True)
class DetectionReport:
    """Detection and false-alarm tallies at one threshold.

    Rates are exact count ratios; a rate whose denominator is zero is
    None rather than a number.
    """

    threshold: float
    detections: int
    positives: int
    false_alarms: int
    negatives: int

    @property
    def p_d(self) -> float | None:
        return self.detections / self.positives if self.positives else None

    @property
    def p_fa(self) -> float | None:
        return self.false_alarms / self.negatives if self.negatives else None


def detection_rates(a_hat, a_true, threshold: float,
                    truth_threshold: float | None = None) -> DetectionReport:
    """Entrywise detection and false-alarm rates.

    An entry is declared anomalous when |a_hat| >= threshold; it truly is
    anomalous when |a_true| >= truth_threshold (defaulting to the same
    threshold, the symmetric hypothesis test). P_D counts declared among
    true, P_FA counts declared among the complement.
    """
    A_hat = _dense(a_hat)
    A_true = _dense(a_true)
    if A_hat.shape != A_true.shape:
        raise DimensionMismatchError("a_true", "shape must match a_hat")
    if truth_threshold is None:
        truth_threshold = threshold
    declared = np.abs(A_hat) >= threshold
    actual = np.abs(A_true) >= truth_threshold
    return DetectionReport(
        threshold=float(threshold),
        detections=int(np.count_nonzero(declared & actual)),
        positives=int(np.count_nonzero(actual)),
        false_alarms=int(np.count_nonzero(declared & ~actual)),
        negatives=int(np.count_nonzero(~actual)),
    )


def roc_sweep(a_hat, a_true, thresholds: Sequence[float],
              truth_threshold: float = 0.1) -> list[DetectionReport]:
    """Detection reports over an ascending threshold sweep.

    Truth labels are fixed by truth_threshold while the declaration
    threshold sweeps, so the reports trace a standard ROC curve: both
    rates are non-increasing in the threshold, reaching (1, 1) at 0 and
    (0, 0) beyond max|a_hat|.
    """
    thresholds = [float(th) for th in thresholds]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise DimensionMismatchError("thresholds", "must be strictly ascending")
    return [
        detection_rates(a_hat, a_true, th, truth_threshold=truth_threshold)
        for th in thresholds
    ]


def roc_auc(reports: Sequence[DetectionReport]) -> float:
    """Trapezoidal area under the (P_FA, P_D) points, anchored at (0, 0)
    and (1, 1)."""
    pts = {(0.0, 0.0), (1.0, 1.0)}
    for r in reports:
        if r.p_fa is None or r.p_d is None:
            raise DimensionMismatchError("reports", "rate undefined (empty class)")
        pts.add((r.p_fa, r.p_d))
    xy = sorted(pts)
    xs = np.array([p[0] for p in xy])
    ys = np.array([p[1] for p in xy])
    return float(np.trapezoid(ys, xs))


class ErrorTrace:
    """Running averages of squared estimation errors,
    e_a[t] = (1/t) * sum_{i<=t} ||a_hat_i - a_i||^2 and likewise e_x.
    """

    def __init__(self):
        self._sum_a = 0.0
        self._sum_x = 0.0
        self.e_a: list[float] = []
        self.e_x: list[float] = []

    def update(self, a_hat, a_true, x_hat, x_true) -> tuple[float, float]:
        da = np.asarray(a_hat) - np.asarray(a_true)
        dx = np.asarray(x_hat) - np.asarray(x_true)
        self._sum_a += float(da @ da)
        self._sum_x += float(dx @ dx)
        t = len(self.e_a) + 1
        self.e_a.append(self._sum_a / t)
        self.e_x.append(self._sum_x / t)
        return self.e_a[-1], self.e_x[-1]


def _slot_loss_grad(basis, obs, q, a, params) -> np.ndarray:
    idx = obs.mask.indices
    resid = obs.y[idx] - basis[idx] @ q - obs.routing.entries[idx] @ a
    g = np.zeros_like(basis)
    g[idx] = -np.outer(resid, q)
    return g


def target_cost(basis: np.ndarray, observations: Sequence[Observation],
                params: HyperParams, stride: int = 1,
                warm_starts: Sequence[np.ndarray] | None = None,
                return_grad: bool = False):
    """Average attainable cost of a fixed basis over a stream prefix:
    the mean over slots of min_{q,a} of the slot loss, plus
    lam_star * ||L||_F^2 / (2 t).

    Each slot's inner minimum is evaluated by re-running the per-slot
    estimator at this basis; when warm_starts supplies historical anomaly
    estimates, each slot reports the better of the fresh solve and the
    warm candidate, so the result never exceeds the cost evaluated at the
    historical iterates. stride > 1 evaluates every stride-th slot and
    averages over those only (a documented small-sample bias; the
    regularizer still uses the full prefix length).

    With return_grad the envelope gradient at the per-slot minimizers is
    returned as a second value.
    """
    t_total = len(observations)
    if t_total == 0:
        raise DimensionMismatchError("observations", "need at least one slot")
    if stride < 1:
        raise DimensionMismatchError("stride", "must be a positive integer")
    if warm_starts is not None and len(warm_starts) != t_total:
        raise DimensionMismatchError("warm_starts", "must align with observations")
    sub = Subspace(basis)
    picked = range(0, t_total, stride)
    values = []
    grads = []
    for i in picked:
        obs = observations[i]
        warm = warm_starts[i] if warm_starts is not None else None
        est = estimate_slot(sub, obs, params, warm_start=warm)
        val = slot_loss(basis, obs, est.q_hat, est.a_hat, params)
        q, a = est.q_hat, est.a_hat
        if warm is not None:
            q_w = project_coeffs(basis, obs, warm, params.lam_star)
            val_w = slot_loss(basis, obs, q_w, warm, params)
            if val_w < val:
                val, q, a = val_w, q_w, warm
        values.append(val)
        if return_grad:
            grads.append(_slot_loss_grad(basis, obs, q, a, params))
    reg = 0.5 * params.lam_star / t_total * float(np.sum(basis * basis))
    value = float(np.mean(values)) + reg
    if not return_grad:
        return value
    grad = np.mean(grads, axis=0) + (params.lam_star / t_total) * basis
    return value, grad


def approx_cost(basis: np.ndarray, slots: Sequence[tuple[Observation, np.ndarray, np.ndarray]],
                params: HyperParams) -> float:
    """Average cost of a fixed basis at historical per-slot iterates
    (q[tau], a[tau]) instead of the per-slot minimizers; upper-bounds
    target_cost at the same basis by construction."""
    t_total = len(slots)
    if t_total == 0:
        raise DimensionMismatchError("slots", "need at least one slot")
    total = sum(slot_loss(basis, obs, q, a, params) for obs, q, a in slots)
    return total / t_total + 0.5 * params.lam_star / t_total * float(np.sum(basis * basis))


def _principal_subspace(Y: np.ndarray, rank: int) -> np.ndarray:
    U, _, _ = np.linalg.svd(Y, full_matrices=False)
    return U[:, :rank]


def _require_full(Y: np.ndarray, mask: np.ndarray | None, who: str):
    if mask is not None and not np.asarray(mask, dtype=bool).all():
        raise MissingDataError(f"{who} requires fully observed data")
    if not np.isfinite(Y).all():
        raise NonFiniteInputError(f"{who} received non-finite entries")


def pca_residual_energies(Y: np.ndarray, rank: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Squared distances of each column to the top principal subspace."""
    Y = np.asarray(Y, dtype=np.float64)
    _require_full(Y, mask, "pca_residual_energies")
    U = _principal_subspace(Y, rank)
    resid = Y - U @ (U.T @ Y)
    return np.einsum("lt,lt->t", resid, resid)


def pca_residual_detector(Y: np.ndarray, rank: int, threshold: float,
                          mask: np.ndarray | None = None) -> np.ndarray:
    """Classical subspace baseline: flag slot t when the squared residual
    of y_t outside the top principal subspace exceeds the threshold.
    Produces per-slot flags only; it cannot attribute anomalies to flows.
    Requires fully observed data."""
    return pca_residual_energies(Y, rank, mask=mask) > threshold


def anomography(Y: np.ndarray, rank: int, routing: RoutingMatrix,
               lam_scale: float = 1e-4,
               mask: np.ndarray | None = None) -> AnomalyMap:
    """Anomography baseline: project out the top principal subspace, then
    represent each residual column sparsely in the routing dictionary via
    a lightly penalized lasso (lam = lam_scale * ||R' y_resid||_inf per
    column). Requires fully observed data."""
    Y = np.asarray(Y, dtype=np.float64)
    _require_full(Y, mask, "anomography")
    U = _principal_subspace(Y, rank)
    resid = Y - U @ (U.T @ Y)
    R = routing.entries
    A = np.zeros((routing.n_flows, Y.shape[1]))
    for t in range(Y.shape[1]):
        lam = lam_scale * float(np.abs(R.T @ resid[:, t]).max(initial=0.0))
        if lam == 0.0 and not resid[:, t].any():
            continue
        problem = LassoProblem(resid[:, t], R, lam)
        A[:, t], _ = lasso_cd(problem)
    return AnomalyMap.from_dense(A)


def entry_rates_from_slot_flags(flags: np.ndarray, a_true, truth_threshold: float) -> DetectionReport:
    """Entry-level rates for a detector that only flags whole slots:
    every flow of a flagged slot counts as declared anomalous."""
    A_true = _dense(a_true)
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (A_true.shape[1],):
        raise DimensionMismatchError("flags", "need one flag per slot")
    declared = np.broadcast_to(flags, A_true.shape)
    actual = np.abs(A_true) >= truth_threshold
    return DetectionReport(
        threshold=float("nan"),
        detections=int(np.count_nonzero(declared & actual)),
        positives=int(np.count_nonzero(actual)),
        false_alarms=int(np.count_nonzero(declared & ~actual)),
        negatives=int(np.count_nonzero(~actual)),
    )


def benchmark_anomaly_extract(Y_flows: np.ndarray, mask: np.ndarray,
                              params: HyperParams) -> AnomalyMap:
    """Reference anomalies for a flow-level panel (no routing compression:
    the routing matrix is the identity). Runs the batch solver and keeps
    amplitudes exceeding 50 * ||Y||_F / (number of panel entries), with
    the Frobenius norm taken over observed entries."""
    Y_flows = np.asarray(Y_flows, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    prob = BatchProblem(
        Y=Y_flows,
        mask=mask,
        routing=RoutingMatrix(np.eye(Y_flows.shape[0])),
        params=params,
    )
    solution = bcd_solve(prob)
    cutoff = 50.0 * float(np.linalg.norm(prob.Y)) / (Y_flows.shape[0] * Y_flows.shape[1])
    A = solution.anomalies.to_dense()
    A[np.abs(A) <= cutoff] = 0.0
    return AnomalyMap.from_dense(A)
