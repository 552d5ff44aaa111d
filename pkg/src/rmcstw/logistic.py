"""Logistic treatment model fit by Newton-Raphson maximum likelihood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import ObservationalDataset
from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    SeparationError,
    SingularDesignError,
)

_SCORE_TOL = 1e-8
_MAX_ITER = 100
_BETA_BOUND = 20.0
_SCORE_EPS = 1e-10  # fitted probabilities must stay inside (eps, 1-eps)
_CLIP = 1e-15


def _design(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def _loglik(A, lp):
    # sum_i A*lp - log(1 + exp(lp)), stable for large |lp|
    return float(np.sum(A * lp - np.logaddexp(0.0, lp)))


@dataclass(frozen=True)
class PropensityFit:
    """Fitted treatment model: coefficients (intercept first) and per-unit scores."""

    beta: np.ndarray
    scores: np.ndarray
    converged: bool
    iterations: int
    max_score_residual: float

    @property
    def p(self) -> int:
        return len(self.beta) - 1


def fit_logistic(data: ObservationalDataset, *, tol: float = _SCORE_TOL,
                 max_iter: int = _MAX_ITER) -> PropensityFit:
    """Maximize the Bernoulli log-likelihood of A given (1, X).

    Newton-Raphson with step-halving; convergence is declared when every
    score-equation component sum_i (A_i - e_i) (1, X_i)_j is below ``tol``
    in absolute value. Raises SeparationError when the fit runs toward the
    parameter-space boundary and SingularDesignError on a rank-deficient
    design.
    """
    Xd = _design(data.X)
    A = np.asarray(data.A, dtype=float)
    n, k = Xd.shape
    if n < k or np.linalg.matrix_rank(Xd) < k:
        raise SingularDesignError("design matrix (intercept + X) is rank deficient")

    beta = np.zeros(k)
    lp = Xd @ beta
    ll = _loglik(A, lp)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        probs = expit(lp)
        score = Xd.T @ (A - probs)
        resid = float(np.max(np.abs(score)))
        if resid <= tol:
            # one polishing step: keeps the optimum at machine precision so
            # that scores are invariant under covariate rescaling
            beta, lp, _ = _try_newton_step(Xd, A, beta, lp, ll, polish=True)
            break
        if np.max(np.abs(beta)) > _BETA_BOUND:
            raise SeparationError("coefficients diverging; data appear separated")
        if np.min(probs) <= _SCORE_EPS or np.max(probs) >= 1.0 - _SCORE_EPS:
            raise SeparationError("fitted probabilities at the boundary; data appear separated")
        beta, lp, ll = _try_newton_step(Xd, A, beta, lp, ll, polish=False)
    else:
        raise ConvergenceError(f"no convergence in {max_iter} iterations")

    # final scores go through the same arithmetic as predict_ps so that
    # predicting on the training rows reproduces them bit-for-bit
    scores = np.clip(expit(beta[0] + data.X @ beta[1:]), _CLIP, 1.0 - _CLIP)
    if np.min(scores) <= _SCORE_EPS or np.max(scores) >= 1.0 - _SCORE_EPS:
        raise SeparationError("fitted probabilities at the boundary; data appear separated")
    score = Xd.T @ (A - scores)
    return PropensityFit(beta=beta, scores=scores, converged=True,
                         iterations=iterations,
                         max_score_residual=float(np.max(np.abs(score))))


def _try_newton_step(Xd, A, beta, lp, ll, *, polish):
    probs = expit(lp)
    w = probs * (1.0 - probs)
    H = (Xd * w[:, None]).T @ Xd
    score = Xd.T @ (A - probs)
    try:
        direction = np.linalg.solve(H, score)
    except np.linalg.LinAlgError:
        if polish:
            return beta, lp, ll
        raise SingularDesignError("singular information matrix") from None
    if polish:
        cand = beta + direction
        cand_lp = Xd @ cand
        cand_probs = expit(cand_lp)
        new_resid = np.max(np.abs(Xd.T @ (A - cand_probs)))
        if new_resid < np.max(np.abs(score)) and 0.0 < cand_probs.min() and cand_probs.max() < 1.0:
            return cand, cand_lp, _loglik(A, cand_lp)
        return beta, lp, ll
    step = 1.0
    for _ in range(40):
        cand = beta + step * direction
        cand_lp = Xd @ cand
        cand_ll = _loglik(A, cand_lp)
        if cand_ll >= ll - 1e-12:
            return cand, cand_lp, cand_ll
        step *= 0.5
    raise ConvergenceError("step-halving failed to improve the log-likelihood")


def predict_ps(fit: PropensityFit, X_new: np.ndarray) -> np.ndarray:
    """Scores logistic(beta' (1, x)) for new covariate rows."""
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != fit.p:
        raise DimensionMismatchError(
            f"expected {fit.p} covariates, got {X_new.shape[1]}")
    lp = fit.beta[0] + X_new @ fit.beta[1:]
    return np.clip(expit(lp), _CLIP, 1.0 - _CLIP)
