"""Weighted Nelson-Aalen cumulative hazards and restricted mean survival.

The treatment-specific cumulative hazard accumulates, at each distinct
event time u of the arm, the ratio of combined-weight event mass to
combined-weight at-risk mass, where a unit's combined weight at u is its
balancing weight divided by its fitted censoring survival evaluated just
before u. The restricted mean is the exact area under exp(-hazard) on
[0, L], computed segment by segment (no quadrature).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .censoring import CensoringFit, fit_censoring_cox
from .data import ObservationalDataset, StepFunction
from .errors import (
    EmptyRiskSetError,
    NonpositiveLError,
    ZeroWeightArmError,
)
from .logistic import PropensityFit, fit_logistic
from .weights import WeightAssignment, WeightScheme, compute_weights


@dataclass(frozen=True)
class ArmPieces:
    """Per-(sample, arm) workspace shared by the estimator and the variance:
    at-risk / event indicator matrices over the arm's distinct event times,
    and censoring survival evaluated at each event time's left limit."""

    arm: int
    idx: np.ndarray          # rows of the full dataset: included & this arm
    U: np.ndarray
    event: np.ndarray        # bool
    risk_score: np.ndarray   # exp(theta_a' X_i)
    times: np.ndarray        # distinct event times of the arm
    Kc_left: np.ndarray      # (m, K) censoring survival at times[k]^-
    Y: np.ndarray            # (m, K) at-risk indicator, float
    event_col: np.ndarray    # for units with event: column index of their time
    last_followup: float


def build_arm_pieces(data: ObservationalDataset, included: np.ndarray,
                     cfit: CensoringFit, arm: int) -> ArmPieces:
    mask = included & (data.A == arm)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ZeroWeightArmError(f"arm {arm} has no included units")
    U = data.U[idx]
    event = data.delta[idx] == 1
    armfit = cfit[arm]
    risk_score = np.exp(data.X[idx] @ armfit.theta)
    times = np.unique(U[event])
    lam_left = armfit.baseline(times, side="left") if times.size else np.zeros(0)
    Kc_left = np.exp(-np.outer(risk_score, lam_left))
    Y = (U[:, None] >= times[None, :]).astype(float)
    event_col = np.searchsorted(times, U[event])
    return ArmPieces(arm=arm, idx=idx, U=U, event=event, risk_score=risk_score,
                     times=times, Kc_left=Kc_left, Y=Y, event_col=event_col,
                     last_followup=float(U.max()))


@dataclass(frozen=True)
class WeightedCumulativeHazard:
    """Fitted cumulative hazard for one arm with its jump table."""

    arm: int
    hazard: StepFunction
    times: np.ndarray
    numerators: np.ndarray
    denominators: np.ndarray
    last_followup: float


def weighted_nelson_aalen(data: ObservationalDataset, w: WeightAssignment,
                          cfit: CensoringFit, arm: int,
                          pieces: ArmPieces | None = None) -> WeightedCumulativeHazard:
    """Treatment-specific cumulative hazard under combined weights
    w_i / K(u^-, X_i), normalized within each risk set."""
    if pieces is None:
        pieces = build_arm_pieces(data, w.included, cfit, arm)
    wts = w.weights[pieces.idx]
    total = wts.sum()
    if total <= 0.0:
        raise ZeroWeightArmError(f"arm {arm} has zero total weight")
    omega = wts[:, None] / pieces.Kc_left
    denom = np.einsum("ik,ik->k", omega, pieces.Y)
    numer = np.bincount(pieces.event_col,
                        weights=omega[pieces.event, pieces.event_col],
                        minlength=len(pieces.times))
    bad = (numer > 0) & (denom <= 0)
    if bad.any():
        raise EmptyRiskSetError(
            f"event at t={pieces.times[np.argmax(bad)]:g} with zero at-risk mass")
    jumps = np.divide(numer, denom, out=np.zeros_like(numer), where=denom > 0)
    hazard = StepFunction(pieces.times, np.cumsum(jumps), 0.0)
    return WeightedCumulativeHazard(arm=arm, hazard=hazard, times=pieces.times,
                                    numerators=numer, denominators=denom,
                                    last_followup=pieces.last_followup)


def restricted_mean(haz: WeightedCumulativeHazard, L: float) -> tuple[float, bool]:
    """Exact integral of exp(-hazard) over [0, L] and a flag marking that L
    exceeds the arm's last observed follow-up (flat extension used)."""
    if L <= 0:
        raise NonpositiveLError("restriction time must be positive")
    k = int(np.searchsorted(haz.times, L, side="right"))
    knots = haz.times[:k]
    surv = np.exp(-haz.hazard.values[:k])
    edges = np.concatenate([[0.0], knots, [L]])
    levels = np.concatenate([[1.0], surv])
    mu = float(np.diff(edges) @ levels)
    return mu, bool(L > haz.last_followup)


def survival_curve(haz: WeightedCumulativeHazard, grid) -> np.ndarray:
    """exp(-hazard) evaluated on a nondecreasing, nonnegative time grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size and (np.any(np.diff(grid) < 0) or grid[0] < 0):
        raise ValueError("grid must be nondecreasing and nonnegative")
    return np.exp(-haz.hazard(grid))


@dataclass
class RmcstResult:
    """Point estimates at one restriction time; inference fields are filled
    by the inference module when requested."""

    scheme: WeightScheme
    L: float
    mu1: float
    mu0: float
    delta: float
    n_included: int
    truncated1: bool
    truncated0: bool
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    se_mu1: float | None = None
    se_mu0: float | None = None
    ci_mu1: tuple[float, float] | None = None
    ci_mu0: tuple[float, float] | None = None
    variance_method: str | None = None


def rmcst_estimate(haz1: WeightedCumulativeHazard, haz0: WeightedCumulativeHazard,
                   L: float, scheme: WeightScheme | None = None,
                   n_included: int = 0) -> RmcstResult:
    """Point part of the restricted-mean contrast at restriction time L."""
    mu1, t1 = restricted_mean(haz1, L)
    mu0, t0 = restricted_mean(haz0, L)
    return RmcstResult(scheme=scheme, L=L, mu1=mu1, mu0=mu0, delta=mu1 - mu0,
                       n_included=n_included, truncated1=t1, truncated0=t0)


@dataclass
class SchemeFit:
    """Everything fitted for one weighting scheme on one dataset."""

    scheme: WeightScheme
    ps: PropensityFit
    w: WeightAssignment
    cfit: CensoringFit
    pieces1: ArmPieces
    pieces0: ArmPieces
    haz1: WeightedCumulativeHazard
    haz0: WeightedCumulativeHazard

    def estimates(self, L_list) -> list[RmcstResult]:
        return [rmcst_estimate(self.haz1, self.haz0, L, self.scheme, self.w.n_included)
                for L in L_list]


class FitCache:
    """Shares censoring fits and arm workspaces across schemes that retain
    the same analysis sample (keyed by the inclusion mask)."""

    def __init__(self, data: ObservationalDataset):
        self.data = data
        self._censor: dict[bytes, CensoringFit] = {}
        self._pieces: dict[tuple[bytes, int], ArmPieces] = {}

    def censoring(self, included: np.ndarray) -> CensoringFit:
        key = included.tobytes()
        if key not in self._censor:
            sub = self.data if included.all() else self.data.subset(included)
            self._censor[key] = fit_censoring_cox(sub)
        return self._censor[key]

    def pieces(self, included: np.ndarray, cfit: CensoringFit, arm: int) -> ArmPieces:
        key = (included.tobytes(), arm)
        if key not in self._pieces:
            self._pieces[key] = build_arm_pieces(self.data, included, cfit, arm)
        return self._pieces[key]


def fit_scheme(data: ObservationalDataset, scheme: WeightScheme, *,
               ps: PropensityFit | None = None,
               refit_after_trim: bool = True,
               cache: FitCache | None = None) -> SchemeFit:
    """Full pipeline for one scheme: treatment model, weights (with any
    trimming/re-fit), censoring model on the analysis sample, and the two
    weighted hazards. The censoring model is fit on the trimmed sample when
    the scheme excludes units."""
    ps = ps if ps is not None else fit_logistic(data)
    w = compute_weights(data, ps, scheme, refit_after_trim=refit_after_trim)
    cache = cache if cache is not None else FitCache(data)
    cfit = cache.censoring(w.included)
    pieces1 = cache.pieces(w.included, cfit, 1)
    pieces0 = cache.pieces(w.included, cfit, 0)
    haz1 = weighted_nelson_aalen(data, w, cfit, 1, pieces1)
    haz0 = weighted_nelson_aalen(data, w, cfit, 0, pieces0)
    return SchemeFit(scheme=scheme, ps=ps, w=w, cfit=cfit,
                     pieces1=pieces1, pieces0=pieces0, haz1=haz1, haz0=haz0)


def point_estimates(data: ObservationalDataset, schemes, L_list, *,
                    refit_after_trim: bool = True) -> dict[str, list[RmcstResult]]:
    """Point estimates for several schemes, sharing the treatment model and
    censoring fits where the analysis sample coincides."""
    ps = fit_logistic(data)
    cache = FitCache(data)
    out = {}
    for scheme in schemes:
        sf = fit_scheme(data, scheme, ps=ps, refit_after_trim=refit_after_trim, cache=cache)
        out[scheme.key] = sf.estimates(L_list)
    return out
