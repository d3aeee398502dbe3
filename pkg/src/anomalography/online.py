"""Online trackers: per-slot estimation plus recursive subspace updates.

Each arriving slot is processed in two stages. First, with the subspace
basis held at its previous value, the anomaly vector solves a lasso whose
design absorbs the projection coefficients in closed form: minimizing
0.5 * ||Omega(y - L q - R a)||^2 + (lam_star/2)||q||^2 over q at fixed a
leaves 0.5 * ||F (y - R a)||^2 with a stacked operator F built from
(lam_star I + L' Omega L)^{-1}. Second, the basis itself is refreshed,
either by exponentially weighted recursive least squares per link
(online_step; rls_fast_step is the beta = 1 fast path that propagates
the inverses by rank-one updates) or by one accelerated stochastic
gradient step on the current slot's loss (sgd_step).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    AnomalographyError,
    DimensionMismatchError,
    Dims,
    HyperParams,
    NumericsError,
    Observation,
    Subspace,
    solve_pd,
    solve_pd_batch,
    substream,
    validate,
)
from .lasso import LassoProblem, lasso_cd


class SlotOrderError(AnomalographyError):
    """Observations must arrive with consecutive slot indices."""


class SlotEstimate(NamedTuple):
    """Per-slot estimates: anomaly amplitudes, projection coefficients, and
    the nominal-traffic estimate x_hat = L q."""

    a_hat: np.ndarray
    q_hat: np.ndarray
    x_hat: np.ndarray


def project_coeffs(basis: np.ndarray, obs: Observation, a: np.ndarray, lam_star: float) -> np.ndarray:
    """Ridge projection coefficients q = argmin_q of the slot loss at fixed a."""
    idx = obs.mask.indices
    rho = basis.shape[1]
    if idx.size == 0:
        return np.zeros(rho)
    Lm = basis[idx]
    H = lam_star * np.eye(rho) + Lm.T @ Lm
    resid = obs.y[idx] - obs.routing.entries[idx] @ a
    return solve_pd(H, Lm.T @ resid)


def estimate_slot(subspace: Subspace, obs: Observation, params: HyperParams,
                  warm_start: np.ndarray | None = None) -> SlotEstimate:
    """Jointly estimate (a, q) for one slot at a fixed subspace basis.

    The projection coefficients are eliminated in closed form, the
    remaining lasso in a is solved by coordinate descent (optionally warm
    started), and q is recovered by the ridge solve at the lasso solution.
    With an empty mask, a = 0 and q = 0.
    """
    basis = subspace.basis
    n_links, rho = basis.shape
    n_flows = obs.routing.n_flows
    validate(obs, Dims(n_links, n_flows, max(obs.t, 1), rho))
    idx = obs.mask.indices
    if idx.size == 0:
        zero_a = np.zeros(n_flows)
        return SlotEstimate(zero_a, np.zeros(rho), np.zeros(n_links))
    Lm = basis[idx]
    Rm = obs.routing.entries[idx]
    yv = obs.y[idx]
    H = params.lam_star * np.eye(rho) + Lm.T @ Lm
    # One factorization serves y and every routing column.
    coeffs = solve_pd(H, Lm.T @ np.column_stack([yv, Rm]))
    Dy, P = coeffs[:, 0], coeffs[:, 1:]
    sqrt_ls = np.sqrt(params.lam_star)
    design = np.vstack([Rm - Lm @ P, sqrt_ls * P])
    response = np.concatenate([yv - Lm @ Dy, sqrt_ls * Dy])
    problem = LassoProblem(response, design, params.lam_one, warm_start=warm_start)
    a_hat, _ = lasso_cd(problem, params.lasso_tol, params.lasso_max_passes)
    q_hat = Dy - P @ a_hat
    return SlotEstimate(a_hat, q_hat, basis @ q_hat)


def slot_loss(basis: np.ndarray, obs: Observation, q: np.ndarray, a: np.ndarray,
              params: HyperParams) -> float:
    """Penalized one-slot fit
    0.5 * ||Omega(y - L q - R a)||^2 + (lam_star/2)||q||^2 + lam_one ||a||_1."""
    idx = obs.mask.indices
    resid = obs.y[idx] - basis[idx] @ q - obs.routing.entries[idx] @ a
    return 0.5 * float(resid @ resid) + 0.5 * params.lam_star * float(q @ q) \
        + params.lam_one * float(np.abs(a).sum())


@dataclass(frozen=True)
class OnlineState:
    """Recursive tracker state after slot t.

    G and s hold the per-link exponentially weighted second-moment
    matrices and cross terms; subspace row l solves
    (G[l] + lam_star I) l_l = s[l]. M, maintained only on the beta = 1
    fast path, carries (G[l] + lam_star I)^{-1}. prev_a warm starts the
    next slot's lasso.
    """

    subspace: Subspace
    G: np.ndarray
    s: np.ndarray
    t: int
    params: HyperParams
    prev_a: np.ndarray
    M: np.ndarray | None = None

    @classmethod
    def initial(cls, n_links: int, n_flows: int, params: HyperParams) -> "OnlineState":
        rho = params.rho
        rng = substream(params.seed, "online_init")
        basis = rng.normal(0.0, 1.0 / np.sqrt(n_links), (n_links, rho))
        return cls(
            subspace=Subspace(basis),
            G=np.zeros((n_links, rho, rho)),
            s=np.zeros((n_links, rho)),
            t=0,
            params=params,
            prev_a=np.zeros(n_flows),
        )


def _check_slot(state_t: int, obs: Observation):
    if obs.t != state_t + 1:
        raise SlotOrderError(f"expected slot {state_t + 1}, got {obs.t}")


def _second_moment_update(state: OnlineState, obs: Observation, est: SlotEstimate):
    """Exponentially weighted updates of (G, s) for one slot."""
    p = state.params
    omega = obs.mask.boolean(state.subspace.n_links).astype(np.float64)
    q = est.q_hat
    innovation = obs.y - obs.routing.entries @ est.a_hat
    G = p.beta * state.G + omega[:, None, None] * np.outer(q, q)
    s = p.beta * state.s + (omega * innovation)[:, None] * q
    return G, s


def online_step(state: OnlineState, obs: Observation):
    """One slot of the exponentially weighted recursive tracker.

    Estimates (a, q) at the previous basis, updates the per-link second
    moments, and re-solves every link's ridge system. Links unobserved at
    this slot change only through the beta-rescaling of their moments.
    Returns (new_state, estimate) where estimate.x_hat uses the updated
    basis.
    """
    _check_slot(state.t, obs)
    p = state.params
    est = estimate_slot(state.subspace, obs, p, warm_start=state.prev_a)
    G, s = _second_moment_update(state, obs, est)
    rho = p.rho
    basis = solve_pd_batch(G + p.lam_star * np.eye(rho), s)
    new_state = replace(
        state, subspace=Subspace(basis), G=G, s=s, t=obs.t, prev_a=est.a_hat, M=None
    )
    return new_state, SlotEstimate(est.a_hat, est.q_hat, basis @ est.q_hat)


def _inverse_update(M: np.ndarray, q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Rank-one update of the stacked inverses M_l = (G_l + lam_star I)^{-1}
    after G_l gains omega_l q q'. Links with omega_l = 0 keep M_l unchanged."""
    Mq = np.einsum("lij,j->li", M, q)
    gain = 1.0 + Mq @ q
    return M - (omega / gain)[:, None, None] * (Mq[:, :, None] * Mq[:, None, :])


def rls_fast_step(state: OnlineState, obs: Observation):
    """beta = 1 fast path: identical estimates to online_step, but each
    link's inverse system matrix is propagated by a rank-one update
    instead of being re-factorized.

    Raises DimensionMismatchError unless params.beta == 1.
    """
    p = state.params
    if p.beta != 1.0:
        raise DimensionMismatchError("beta", "fast path requires beta == 1")
    _check_slot(state.t, obs)
    rho = p.rho
    n_links = state.subspace.n_links
    M = state.M
    if M is None:
        # Exact handoff from a state advanced without M; at t = 0 this is
        # the I / lam_star initialization.
        M = np.linalg.inv(state.G + p.lam_star * np.eye(rho))
    est = estimate_slot(state.subspace, obs, p, warm_start=state.prev_a)
    G, s = _second_moment_update(state, obs, est)
    omega = obs.mask.boolean(n_links).astype(np.float64)
    M = _inverse_update(M, est.q_hat, omega)
    basis = np.einsum("lij,lj->li", M, s)
    new_state = replace(
        state, subspace=Subspace(basis), G=G, s=s, t=obs.t, prev_a=est.a_hat, M=M
    )
    return new_state, SlotEstimate(est.a_hat, est.q_hat, basis @ est.q_hat)


@dataclass(frozen=True)
class NesterovState:
    """Accelerated stochastic-gradient tracker state after slot t.

    Carries the last two basis iterates, the extrapolated point, the
    momentum scalar k, the step-size state mu (never decreased across
    slots), and the backtracking growth factor eta.
    """

    L_cur: np.ndarray
    L_prev: np.ndarray
    L_tilde: np.ndarray
    k: float
    mu: float
    eta: float
    t: int
    prev_a: np.ndarray

    @classmethod
    def initial(cls, n_links: int, n_flows: int, params: HyperParams) -> "NesterovState":
        rng = substream(params.seed, "online_init")
        basis = rng.normal(0.0, 1.0 / np.sqrt(n_links), (n_links, params.rho))
        return cls(
            L_cur=basis,
            L_prev=basis,
            L_tilde=basis,
            k=1.0,
            mu=1.0,
            eta=params.eta,
            t=0,
            prev_a=np.zeros(n_flows),
        )


def sgd_step(state: NesterovState, obs: Observation, params: HyperParams):
    """One accelerated stochastic-gradient slot.

    (a, q) are estimated exactly as in the recursive tracker, at the
    previous basis iterate. The slot loss in L (its subspace penalty
    attenuated by 1/t) is then decreased by a gradient step from the
    extrapolated point, with backtracking that only ever grows the step
    curvature mu. Momentum follows the usual k-sequence
    k_next = (1 + sqrt(1 + 4 k^2)) / 2.
    """
    _check_slot(state.t, obs)
    t = obs.t
    est = estimate_slot(Subspace(state.L_cur), obs, params, warm_start=state.prev_a)
    a, q = est.a_hat, est.q_hat
    omega = obs.mask.boolean(state.L_cur.shape[0]).astype(np.float64)
    target = obs.y - obs.routing.entries @ a
    const = 0.5 * params.lam_star * float(q @ q) + params.lam_one * float(np.abs(a).sum())

    def loss(L):
        r = omega * (target - L @ q)
        return 0.5 * float(r @ r) + 0.5 * params.lam_star / t * float(np.sum(L * L)) + const

    def grad(L):
        return -np.outer(omega * (target - L @ q), q) + (params.lam_star / t) * L

    Lt = state.L_tilde
    f_ref = loss(Lt)
    g = grad(Lt)
    if not np.isfinite(g).all():
        raise NumericsError("non-finite gradient in stochastic tracker")
    g_sq = float(np.sum(g * g))
    mu = state.mu
    for i in range(61):
        if i == 60:
            raise NumericsError("backtracking failed to find a valid step")
        cand = Lt - g / mu
        # Majorization test against the quadratic model at L_tilde.
        if loss(cand) <= f_ref - g_sq / mu + 0.5 * mu * float(np.sum((cand - Lt) ** 2)):
            break
        mu = state.mu * state.eta ** (i + 1)
    L_new = Lt - g / mu
    k_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * state.k ** 2))
    L_tilde_next = L_new + ((state.k - 1.0) / k_next) * (L_new - state.L_cur)
    new_state = NesterovState(
        L_cur=L_new,
        L_prev=state.L_cur,
        L_tilde=L_tilde_next,
        k=k_next,
        mu=mu,
        eta=state.eta,
        t=t,
        prev_a=a,
    )
    return new_state, SlotEstimate(a, q, L_new @ q)


@dataclass
class TrackerRun:
    """Record of one pass over a stream: per-slot estimates, basis step
    sizes ||L[t] - L[t-1]||_F, optional basis snapshots, and the final
    state object."""

    estimates: list[SlotEstimate]
    observations: list[Observation]
    step_norms: np.ndarray
    snapshots: dict[int, np.ndarray]
    final_basis: np.ndarray
    state: object


def run_tracker(observations: Sequence[Observation], params: HyperParams,
                algorithm: str = "rls", snapshot_stride: int = 0) -> TrackerRun:
    """Drive one tracker over a sequence of observations.

    algorithm: "rls" (recursive, any beta), "rls-fast" (beta = 1 rank-one
    path), or "sgd" (accelerated stochastic gradient). snapshot_stride > 0
    stores a copy of the basis every that-many slots.
    """
    observations = list(observations)
    if not observations:
        raise DimensionMismatchError("observations", "need at least one slot")
    n_links = observations[0].y.shape[0]
    n_flows = observations[0].routing.n_flows
    if algorithm in ("rls", "rls-fast"):
        state = OnlineState.initial(n_links, n_flows, params)
        basis = state.subspace.basis
        step = online_step if algorithm == "rls" else rls_fast_step
    elif algorithm == "sgd":
        state = NesterovState.initial(n_links, n_flows, params)
        basis = state.L_cur
        step = lambda st, obs: sgd_step(st, obs, params)
    else:
        raise DimensionMismatchError("algorithm", f"unknown tracker {algorithm!r}")
    estimates = []
    step_norms = []
    snapshots = {}
    for obs in observations:
        state, est = step(state, obs)
        new_basis = state.subspace.basis if isinstance(state, OnlineState) else state.L_cur
        estimates.append(est)
        step_norms.append(float(np.linalg.norm(new_basis - basis)))
        basis = new_basis
        if snapshot_stride and obs.t % snapshot_stride == 0:
            snapshots[obs.t] = basis.copy()
    return TrackerRun(
        estimates=estimates,
        observations=observations,
        step_norms=np.array(step_norms),
        snapshots=snapshots,
        final_basis=basis,
        state=state,
    )
