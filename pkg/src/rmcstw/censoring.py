"""Censoring-score model: per-arm Cox proportional hazards on censoring times.

Within each treatment arm the censoring time is modeled as the "event"
(indicator 1 - delta) with observed events treated as censored-for-this-
model. Coefficients maximize the Breslow-ties partial likelihood; the
cumulative baseline hazard is the Breslow estimator. The fitted censoring
survival is K(t, x) = exp(-Lambda0(t) * exp(theta' x)).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import ObservationalDataset, StepFunction
from .errors import ConvergenceError, DimensionMismatchError, SingularInformationError

_SCORE_TOL = 1e-8
_MAX_ITER = 100
_THETA_BOUND = 50.0


class NoCensoringEventsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ArmCensoringFit:
    """Cox fit for one arm: coefficients, Breslow baseline, and the risk-set
    sums at the censoring knots (kept for variance computations)."""

    arm: int
    theta: np.ndarray
    baseline: StepFunction
    knots: np.ndarray        # distinct censoring times
    counts: np.ndarray       # censoring events per knot
    risk_sums: np.ndarray    # sum of exp(theta' x) over units at risk, per knot
    converged: bool
    iterations: int
    max_score_residual: float

    @property
    def degenerate(self) -> bool:
        return self.knots.size == 0

    def risk_score(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.theta):
            raise DimensionMismatchError(
                f"expected {len(self.theta)} covariates, got {X.shape[1]}")
        return np.exp(X @ self.theta)


@dataclass(frozen=True)
class CensoringFit:
    arm0: ArmCensoringFit
    arm1: ArmCensoringFit

    def __getitem__(self, arm: int) -> ArmCensoringFit:
        return self.arm1 if arm == 1 else self.arm0


def _cox_stats(t_sorted, X_sorted, knot_idx, sum_x_events, counts, theta):
    """Log partial likelihood, score and information at theta.

    ``knot_idx[k]`` is the position of the first unit in the risk set of
    knot k (units are sorted by ascending time, so risk sets are suffixes).
    """
    m, p = X_sorted.shape
    lp = X_sorted @ theta if p else np.zeros(m)
    shift = lp.max() if m else 0.0
    r = np.exp(lp - shift)
    s0_suffix = np.cumsum(r[::-1])[::-1]
    s0 = s0_suffix[knot_idx]
    loglik = float(np.sum(sum_x_events @ theta) - counts @ (np.log(s0) + shift))
    if p == 0:
        return loglik, np.zeros(0), np.zeros((0, 0)), s0 * np.exp(shift)
    xr = X_sorted * r[:, None]
    s1 = np.cumsum(xr[::-1], axis=0)[::-1][knot_idx]
    xxr = np.einsum("ij,ik->ijk", X_sorted, xr).reshape(m, p * p)
    s2 = np.cumsum(xxr[::-1], axis=0)[::-1][knot_idx].reshape(-1, p, p)
    ebar = s1 / s0[:, None]
    score = sum_x_events.sum(axis=0) - counts @ ebar
    info = np.einsum("k,kij->ij", counts, s2 / s0[:, None, None]) - np.einsum(
        "k,ki,kj->ij", counts, ebar, ebar)
    return loglik, score, info, s0 * np.exp(shift)


def _fit_arm(arm: int, U, cens, X, tol, max_iter) -> ArmCensoringFit:
    order = np.argsort(U, kind="stable")
    t = U[order]
    c = cens[order]
    Xs = X[order]
    m, p = Xs.shape

    if not c.any():
        warnings.warn(f"arm {arm} has no censoring events; censoring survival is 1",
                      NoCensoringEventsWarning, stacklevel=3)
        empty = np.zeros(0)
        return ArmCensoringFit(arm, np.zeros(p), StepFunction(empty, empty, 0.0),
                               empty, empty, empty, True, 0, 0.0)

    knot_times, inverse = np.unique(t[c == 1], return_inverse=True)
    counts = np.bincount(inverse).astype(float)
    knot_idx = np.searchsorted(t, knot_times, side="left")
    nk = len(knot_times)
    sum_x_events = np.zeros((nk, p))
    if p:
        np.add.at(sum_x_events, inverse, Xs[c == 1])

    theta = np.zeros(p)
    loglik, score, info, s0 = _cox_stats(t, Xs, knot_idx, sum_x_events, counts, theta)
    iterations = 0
    resid = float(np.max(np.abs(score))) if p else 0.0
    converged = resid <= tol
    while not converged:
        iterations += 1
        if iterations > max_iter:
            raise ConvergenceError(f"censoring model for arm {arm}: no convergence "
                                   f"in {max_iter} iterations")
        try:
            direction = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularInformationError(
                f"censoring model for arm {arm}: singular information") from None
        step = 1.0
        for _ in range(40):
            cand = theta + step * direction
            cand_ll, cand_score, cand_info, cand_s0 = _cox_stats(
                t, Xs, knot_idx, sum_x_events, counts, cand)
            if cand_ll >= loglik - 1e-12:
                theta, loglik, score, info, s0 = cand, cand_ll, cand_score, cand_info, cand_s0
                break
            step *= 0.5
        else:
            raise ConvergenceError(f"censoring model for arm {arm}: step-halving stalled")
        if np.max(np.abs(theta)) > _THETA_BOUND:
            raise ConvergenceError(f"censoring model for arm {arm}: coefficients diverging")
        resid = float(np.max(np.abs(score)))
        converged = resid <= tol
    if p and iterations:
        # one polishing step so the optimum holds to machine precision
        try:
            cand = theta + np.linalg.solve(info, score)
            cand_ll, cand_score, cand_info, cand_s0 = _cox_stats(
                t, Xs, knot_idx, sum_x_events, counts, cand)
            if np.max(np.abs(cand_score)) < resid:
                theta, score, info, s0 = cand, cand_score, cand_info, cand_s0
                resid = float(np.max(np.abs(cand_score)))
        except np.linalg.LinAlgError:
            pass

    increments = counts / s0
    baseline = StepFunction(knot_times, np.cumsum(increments), 0.0)
    return ArmCensoringFit(arm, theta, baseline, knot_times, counts, s0,
                           True, iterations, resid)


def fit_censoring_cox(data: ObservationalDataset, *, tol: float = _SCORE_TOL,
                      max_iter: int = _MAX_ITER) -> CensoringFit:
    """Fit the censoring-score Cox model separately in each arm.

    An arm with no censoring events yields a degenerate fit (K == 1) and a
    NoCensoringEventsWarning rather than an error.
    """
    cens = (1 - data.delta).astype(np.int8)
    fits = {}
    for arm in (0, 1):
        mask = data.A == arm
        fits[arm] = _fit_arm(arm, data.U[mask], cens[mask], data.X[mask], tol, max_iter)
    return CensoringFit(arm0=fits[0], arm1=fits[1])


def censoring_survival(fit: CensoringFit, arm: int, t, x, side: str = "right"):
    """K(t, x) = exp(-Lambda0(t[side]) * exp(theta' x)) for one arm.

    ``t`` may be a scalar or vector; ``x`` is a single covariate vector.
    """
    armfit = fit[arm]
    x = np.asarray(x, dtype=float).reshape(-1)
    if len(x) != len(armfit.theta):
        raise DimensionMismatchError(
            f"expected {len(armfit.theta)} covariates, got {len(x)}")
    lam = armfit.baseline(t, side=side)
    risk = float(np.exp(x @ armfit.theta))
    out = np.exp(-np.asarray(lam, dtype=float) * risk)
    return float(out) if np.ndim(out) == 0 else out
