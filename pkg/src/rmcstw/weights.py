"""Balancing weights built from propensity scores.

Supported schemes: inverse probability of treatment weighting (iptw),
overlap weighting (ow), symmetric trimming, asymmetric trimming, and
quantile truncation (winsorization) of the scores. Trimming excludes units
and, by default, re-fits the treatment model on the retained sample before
building IPTW weights from the re-fit scores.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import ObservationalDataset
from .errors import (
    AllUnitsTrimmedError,
    ArmEmptyAfterTrimError,
    EmptyArmError,
    RefitFailedError,
    RmcstError,
    ZeroTotalWeightError,
)
from .logistic import PropensityFit, fit_logistic, predict_ps

KINDS = ("iptw", "ow", "symtrim", "asymtrim", "truncate")


@dataclass(frozen=True)
class WeightScheme:
    """Weighting scheme descriptor. ``alpha`` is the symmetric-trimming
    threshold, ``q`` the asymmetric-trimming / truncation quantile."""

    kind: str
    alpha: float = 0.0
    q: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if not (0.0 <= self.alpha < 0.5):
            raise ValueError("alpha must lie in [0, 0.5)")
        if not (0.0 <= self.q < 0.5):
            raise ValueError("q must lie in [0, 0.5)")
        if self.alpha != 0.0 and self.kind != "symtrim":
            raise ValueError("alpha applies to symmetric trimming only")
        if self.q != 0.0 and self.kind not in ("asymtrim", "truncate"):
            raise ValueError("q applies to asymmetric trimming and truncation only")

    @property
    def trims(self) -> bool:
        return self.kind in ("symtrim", "asymtrim")

    @property
    def key(self) -> str:
        """Stable label used in reports, e.g. ``symtrim(0.10)``."""
        if self.kind == "symtrim":
            return f"symtrim({self.alpha:g})"
        if self.kind in ("asymtrim", "truncate"):
            return f"{self.kind}({self.q:g})"
        return self.kind

    @property
    def tilting(self) -> str:
        """Target-population tilting: which function of the propensity score
        reweights the combined population this scheme aims at."""
        if self.kind == "ow":
            return "overlap"
        if self.trims:
            return "trim_region"
        return "uniform"


def parse_scheme(text: str) -> WeightScheme:
    """Parse labels like ``ow``, ``symtrim(0.1)``, ``truncate(0.05)``."""
    text = text.strip().lower()
    if "(" in text:
        kind, _, rest = text.partition("(")
        value = float(rest.rstrip(")"))
        if kind == "symtrim":
            return WeightScheme(kind, alpha=value)
        return WeightScheme(kind, q=value)
    return WeightScheme(text)


@dataclass(frozen=True)
class WeightAssignment:
    """Per-unit balancing weights plus the inclusion mask and the scores the
    weights were actually built from (re-fit after trimming, winsorized
    under truncation)."""

    scheme: WeightScheme
    included: np.ndarray
    weights: np.ndarray
    ps_used: PropensityFit
    effective_ps: np.ndarray

    @property
    def n_included(self) -> int:
        return int(self.included.sum())


def _iptw(A, scores):
    return np.where(A == 1, 1.0 / scores, 1.0 / (1.0 - scores))


def _ow(A, scores):
    return np.where(A == 1, 1.0 - scores, scores)


def base_weights(kind: str, A, scores):
    if kind == "ow":
        return _ow(A, scores)
    return _iptw(A, scores)


def weight_derivative_factor(kind: str, A, scores):
    """d(weight)/d(score) for the smooth schemes, used by the closed-form
    variance. Treated and control branches of each scheme differ."""
    if kind == "ow":
        return np.where(A == 1, -1.0, 1.0)
    return np.where(A == 1, -1.0 / scores**2, 1.0 / (1.0 - scores) ** 2)


def compute_weights(data: ObservationalDataset, fit: PropensityFit,
                    scheme: WeightScheme, refit_after_trim: bool = True) -> WeightAssignment:
    """Turn propensity scores into balancing weights under ``scheme``.

    Trimming schemes exclude units and (by default) re-fit the treatment
    model on the retained sample; truncation winsorizes the scores at the
    (q, 1-q) quantiles and keeps every unit.
    """
    A = data.A
    e = fit.scores
    n = data.n

    if scheme.kind in ("iptw", "ow"):
        included = np.ones(n, dtype=bool)
        weights = base_weights(scheme.kind, A, e)
        return WeightAssignment(scheme, included, weights, fit, e)

    if scheme.kind == "truncate":
        lo, hi = np.quantile(e, [scheme.q, 1.0 - scheme.q])
        eff = np.clip(e, lo, hi)
        included = np.ones(n, dtype=bool)
        weights = _iptw(A, eff)
        return WeightAssignment(scheme, included, weights, fit, eff)

    if scheme.kind == "symtrim":
        keep = (e >= scheme.alpha) & (e <= 1.0 - scheme.alpha)
    else:  # asymtrim: common-support exclusion, then arm-specific quantile cuts
        lo = max(e[A == 1].min(), e[A == 0].min())
        hi = min(e[A == 1].max(), e[A == 0].max())
        if lo > hi:
            raise AllUnitsTrimmedError("common propensity-score region is empty")
        keep = (e >= lo) & (e <= hi)
        if scheme.q > 0.0:
            kt = keep & (A == 1)
            kc = keep & (A == 0)
            if not kt.any() or not kc.any():
                raise ArmEmptyAfterTrimError("an arm is empty inside the common region")
            cut_lo = np.quantile(e[kt], scheme.q)
            cut_hi = np.quantile(e[kc], 1.0 - scheme.q)
            keep &= (e >= cut_lo) & (e <= cut_hi)

    if not keep.any():
        raise AllUnitsTrimmedError(f"{scheme.key} removed every unit")
    if not (keep & (A == 1)).any() or not (keep & (A == 0)).any():
        raise ArmEmptyAfterTrimError(f"{scheme.key} removed an entire treatment arm")

    if refit_after_trim:
        try:
            refit = fit_logistic(data.subset(keep))
        except (RmcstError, EmptyArmError) as exc:
            raise RefitFailedError(f"re-fit on trimmed sample failed: {exc}") from exc
        eff = np.empty(n)
        eff[keep] = refit.scores
        eff[~keep] = predict_ps(refit, data.X[~keep]) if (~keep).any() else 0.0
        ps_used = refit
    else:
        eff = e.copy()
        ps_used = fit

    weights = np.where(keep, _iptw(A, eff), 0.0)
    return WeightAssignment(scheme, keep, weights, ps_used, eff)


@dataclass(frozen=True)
class BalanceTable:
    treated_mean: np.ndarray
    control_mean: np.ndarray
    std_diff: np.ndarray


def weighted_covariate_means(data: ObservationalDataset, w: WeightAssignment) -> BalanceTable:
    """Arm-wise weighted covariate means over included units, with
    standardized mean differences (pooled unweighted arm SDs)."""
    means = []
    for a in (1, 0):
        mask = w.included & (data.A == a)
        total = w.weights[mask].sum()
        if total <= 0.0:
            raise ZeroTotalWeightError(f"arm {a} has zero total weight")
        means.append(w.weights[mask] @ data.X[mask] / total)
    m1, m0 = means
    sds = []
    for a in (1, 0):
        mask = w.included & (data.A == a)
        sds.append(np.var(data.X[mask], axis=0, ddof=1) if mask.sum() > 1 else np.zeros(data.p))
    pooled = np.sqrt((sds[0] + sds[1]) / 2.0)
    diff = m1 - m0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        std_diff = np.where(pooled > 0, diff / pooled, np.where(diff == 0, 0.0, np.inf))
    return BalanceTable(m1, m0, std_diff)
