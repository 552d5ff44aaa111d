"""Uncertainty for the restricted-mean contrast: closed-form variance from
per-unit influence contributions, and nonparametric bootstrap.

The closed-form variance stacks the estimating equations actually solved by
the pipeline: the logistic score for the treatment model, the Breslow
baseline increments of the censoring model, and the weighted Nelson-Aalen
increments, propagated through the exact restricted-mean integral. Unit i's
contribution has three pieces:

* a weighted martingale residual of the hazard estimator in the unit's arm,
* a logistic-score projection accounting for the estimated scores, and
* a correction for the estimated censoring baseline hazard.

Estimating the censoring-model regression coefficients adds no variance
under this model pair, so no coefficient correction appears. For trimming
schemes the variance is conditional on the realized trimmed sample (the
re-fit treatment model contributes its score projection on that sample).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .censoring import CensoringFit
from .data import ObservationalDataset
from .errors import (
    InvalidBError,
    RmcstError,
    TooManyFailedReplicatesError,
)
from .estimator import (
    FitCache,
    RmcstResult,
    SchemeFit,
    fit_scheme,
    rmcst_estimate,
    weighted_nelson_aalen,
)
from .logistic import fit_logistic
from .utils import TAG_BOOT, parallel_map, stream
from .weights import WeightAssignment, weight_derivative_factor

Z975 = 1.96  # Wald multiplier for 95% intervals
TARGETS = ("mu1", "mu0", "delta")


class SmallSampleVarianceWarning(UserWarning):
    pass


class TrimmedVarianceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class InfluenceContributions:
    """Per-unit influence pieces for the contrast at one restriction time.

    ``psi_beta`` holds the hazard-martingale plus treatment-model score
    parts, ``psi_theta`` the censoring-baseline part; the variance of the
    estimate is sum(total**2). Excluded units contribute zero.
    """

    L: float
    psi_beta: np.ndarray
    psi_theta: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.psi_beta + self.psi_theta

    @property
    def variance(self) -> float:
        return float(np.sum(self.total**2))


@dataclass(frozen=True)
class _ArmInfluence:
    """One arm's pieces at one L: martingale part, baseline part, and the
    derivative of the arm's restricted mean w.r.t. the model coefficients."""

    psi_mart: np.ndarray   # full length n
    psi_base: np.ndarray   # full length n
    B: np.ndarray          # (p+1,)


def _lp_derivative(data, w: WeightAssignment) -> np.ndarray:
    """d(weight_i)/d(linear predictor_i) of the treatment model the weights
    were built from; zero where winsorization flattened the score."""
    scheme = w.scheme
    if scheme.kind == "truncate":
        raw = w.ps_used.scores
        eff = w.effective_ps
        interior = (eff == raw).astype(float)
        gprime = weight_derivative_factor("iptw", data.A, eff)
        return gprime * raw * (1.0 - raw) * interior
    kind = "ow" if scheme.kind == "ow" else "iptw"
    eff = w.effective_ps
    return weight_derivative_factor(kind, data.A, eff) * eff * (1.0 - eff)


def _arm_influence(data, sf: SchemeFit, arm: int, L_list) -> list[_ArmInfluence]:
    """Influence pieces for the restricted mean of one arm at each L."""
    pieces = sf.pieces1 if arm == 1 else sf.pieces0
    haz = sf.haz1 if arm == 1 else sf.haz0
    n = data.n
    wts = sf.w.weights[pieces.idx]
    omega = wts[:, None] / pieces.Kc_left
    times = pieces.times
    jumps = np.divide(haz.numerators, haz.denominators,
                      out=np.zeros_like(haz.numerators),
                      where=haz.denominators > 0)
    cum = np.cumsum(jumps)
    # martingale residual matrix R[i,k] = dN_i(t_k) - Y_i(t_k) * jump_k
    R = -pieces.Y * jumps[None, :]
    R[pieces.event, pieces.event_col] += 1.0

    dwdlp = _lp_derivative(data, sf.w)[pieces.idx]
    Xt = np.column_stack([np.ones(len(pieces.idx)), data.X[pieces.idx]])

    armfit = sf.cfit[arm]
    cens_times = armfit.knots
    has_cens = cens_times.size > 0
    if has_cens:
        dlam = armfit.counts / armfit.risk_sums
        cens_col = np.searchsorted(cens_times, pieces.U)  # for censored units
    out = []
    for L in L_list:
        kL = int(np.searchsorted(times, L, side="right"))
        if kL == 0:
            zero = np.zeros(n)
            out.append(_ArmInfluence(zero, zero, np.zeros(data.p + 1)))
            continue
        seg_end = np.concatenate([times[1:kL], [L]])
        seg_len = seg_end - times[:kL]
        surv = np.exp(-cum[:kL])
        G = np.cumsum((surv * seg_len)[::-1])[::-1]
        scale = np.divide(G, haz.denominators[:kL],
                          out=np.zeros(kL), where=haz.denominators[:kL] > 0)
        Z = omega[:, :kL] * R[:, :kL] * scale[None, :]
        zrow = Z.sum(axis=1)

        psi_mart = np.zeros(n)
        psi_mart[pieces.idx] = -zrow

        B = -(dwdlp * (zrow / wts)) @ Xt

        psi_base = np.zeros(n)
        if has_cens:
            V = pieces.risk_score @ Z
            tail = np.concatenate([np.cumsum(V[::-1])[::-1], [0.0]])
            pos = np.searchsorted(times[:kL], cens_times, side="right")
            E = tail[pos]
            ratio = E / armfit.risk_sums
            contrib = np.zeros(len(pieces.idx))
            cens_units = ~pieces.event
            contrib[cens_units] = -ratio[cens_col[cens_units]]
            prefix = np.concatenate([[0.0], np.cumsum(ratio * dlam)])
            at_risk_pos = np.searchsorted(cens_times, pieces.U, side="right")
            contrib += pieces.risk_score * prefix[at_risk_pos]
            psi_base[pieces.idx] = contrib
        out.append(_ArmInfluence(psi_mart, psi_base, B))
    return out


def influence_contributions(data: ObservationalDataset, sf: SchemeFit,
                            L_list) -> dict[str, list[InfluenceContributions]]:
    """Per-unit influence contributions for mu1, mu0 and delta at each L."""
    arm1 = _arm_influence(data, sf, 1, L_list)
    arm0 = _arm_influence(data, sf, 0, L_list)

    w = sf.w
    fit_mask = w.included
    escore = w.ps_used.scores if w.scheme.kind == "truncate" else w.effective_ps
    Xt = np.column_stack([np.ones(data.n), data.X])
    Xf = Xt[fit_mask]
    ef = escore[fit_mask]
    info = (Xf * (ef * (1.0 - ef))[:, None]).T @ Xf
    resid = np.zeros(data.n)
    resid[fit_mask] = data.A[fit_mask] - ef

    def score_projection(B: np.ndarray) -> np.ndarray:
        u = np.linalg.solve(info, B)
        return resid * (Xt @ u)

    out = {t: [] for t in TARGETS}
    for k, L in enumerate(L_list):
        pieces = {
            "mu1": (arm1[k].psi_mart, arm1[k].psi_base, arm1[k].B),
            "mu0": (arm0[k].psi_mart, arm0[k].psi_base, arm0[k].B),
            "delta": (arm1[k].psi_mart - arm0[k].psi_mart,
                      arm1[k].psi_base - arm0[k].psi_base,
                      arm1[k].B - arm0[k].B),
        }
        for target, (mart, base, B) in pieces.items():
            psi_beta = mart + score_projection(B)
            out[target].append(InfluenceContributions(L=L, psi_beta=psi_beta,
                                                      psi_theta=base))
    return out


def closed_form_inference(data: ObservationalDataset, sf: SchemeFit,
                          L_list) -> list[dict[str, float]]:
    """Standard errors for (mu1, mu0, delta) at each L, with caveat warnings
    for small samples and trimmed (conditional-on-trim) schemes."""
    n_inc = sf.w.n_included
    if n_inc < 50:
        warnings.warn(f"closed-form variance with {n_inc} units may be unstable",
                      SmallSampleVarianceWarning, stacklevel=2)
    if sf.scheme.trims:
        warnings.warn("variance for a trimming scheme is conditional on the "
                      "realized trimmed sample", TrimmedVarianceWarning, stacklevel=2)
    contribs = influence_contributions(data, sf, L_list)
    return [{t: float(np.sqrt(contribs[t][k].variance)) for t in TARGETS}
            for k in range(len(L_list))]


def closed_form_variance(data: ObservationalDataset, w: WeightAssignment,
                         cfit: CensoringFit, result: RmcstResult) -> float:
    """Variance of the contrast in ``result`` (spec-level convenience that
    rebuilds the hazards from the supplied fits)."""
    from .estimator import build_arm_pieces  # local to avoid cycles at import

    pieces1 = build_arm_pieces(data, w.included, cfit, 1)
    pieces0 = build_arm_pieces(data, w.included, cfit, 0)
    haz1 = weighted_nelson_aalen(data, w, cfit, 1, pieces1)
    haz0 = weighted_nelson_aalen(data, w, cfit, 0, pieces0)
    sf = SchemeFit(scheme=w.scheme, ps=w.ps_used, w=w, cfit=cfit,
                   pieces1=pieces1, pieces0=pieces0, haz1=haz1, haz0=haz0)
    contribs = influence_contributions(data, sf, [result.L])
    return contribs["delta"][0].variance


def attach_closed_form(data, sf: SchemeFit, results: list[RmcstResult]) -> None:
    ses = closed_form_inference(data, sf, [r.L for r in results])
    for r, se in zip(results, ses):
        r.se = se["delta"]
        r.ci_low = r.delta - Z975 * se["delta"]
        r.ci_high = r.delta + Z975 * se["delta"]
        r.se_mu1 = se["mu1"]
        r.se_mu0 = se["mu0"]
        r.ci_mu1 = (r.mu1 - Z975 * se["mu1"], r.mu1 + Z975 * se["mu1"])
        r.ci_mu0 = (r.mu0 - Z975 * se["mu0"], r.mu0 + Z975 * se["mu0"])
        r.variance_method = "closed_form"


# ---------------------------------------------------------------------------
# bootstrap


@dataclass(frozen=True)
class BootstrapSummary:
    """Percentile intervals and bootstrap variances per scheme.

    ``estimates[scheme_key]`` has shape (B_ok, 3, len(L_list)) with target
    axis ordered (mu1, mu0, delta).
    """

    L_list: tuple
    estimates: dict
    n_failed: dict
    B: int

    def ci(self, scheme_key: str, L: float, target: str = "delta",
           level: float = 0.95) -> tuple[float, float]:
        est = self._col(scheme_key, L, target)
        lo, hi = np.percentile(est, [50 * (1 - level), 100 - 50 * (1 - level)])
        return float(lo), float(hi)

    def se(self, scheme_key: str, L: float, target: str = "delta") -> float:
        est = self._col(scheme_key, L, target)
        return float(np.std(est, ddof=1)) if len(est) > 1 else 0.0

    def variance(self, scheme_key: str, L: float, target: str = "delta") -> float:
        return self.se(scheme_key, L, target) ** 2

    def _col(self, scheme_key, L, target):
        k = self.L_list.index(L)
        return self.estimates[scheme_key][:, TARGETS.index(target), k]


def _resample_estimates(args):
    data, schemes, L_list, refit, seed_keys, b_range = args
    n = data.n
    rows = []
    for b in b_range:
        rng = stream(*seed_keys, TAG_BOOT, b)
        idx = rng.integers(0, n, size=n)
        per_scheme = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                sample = ObservationalDataset(data.X[idx], data.A[idx],
                                              data.U[idx], data.delta[idx])
                ps = fit_logistic(sample)
            except RmcstError:
                rows.append({s.key: None for s in schemes})
                continue
            cache = FitCache(sample)
            for scheme in schemes:
                try:
                    sf = fit_scheme(sample, scheme, ps=ps,
                                    refit_after_trim=refit, cache=cache)
                    ests = sf.estimates(L_list)
                    per_scheme[scheme.key] = np.array(
                        [[e.mu1 for e in ests], [e.mu0 for e in ests],
                         [e.delta for e in ests]])
                except RmcstError:
                    per_scheme[scheme.key] = None
        rows.append(per_scheme)
    return rows


def bootstrap_all(data: ObservationalDataset, schemes, B: int, L_list, seed,
                  *, refit_after_trim: bool = True, n_workers: int = 1,
                  max_failed_frac: float = 0.10) -> BootstrapSummary:
    """Nonparametric bootstrap of the whole pipeline, shared across schemes.

    Replicate b draws rows with replacement using an independent stream keyed
    by (seed, b), so results do not depend on worker count. Replicates where
    a fit fails are dropped per scheme; more than ``max_failed_frac`` failures
    for any scheme is an error.
    """
    if B < 2:
        raise InvalidBError("B must be at least 2")
    seed_keys = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    L_list = tuple(float(L) for L in L_list)
    workers = max(1, n_workers)
    chunks = np.array_split(np.arange(B), min(workers * 4, B))
    tasks = [(data, tuple(schemes), L_list, refit_after_trim, seed_keys, chunk)
             for chunk in chunks if len(chunk)]
    results = parallel_map(_resample_estimates, tasks, workers)
    rows = [row for part in results for row in part]

    estimates, n_failed = {}, {}
    for scheme in schemes:
        good = [row[scheme.key] for row in rows if row.get(scheme.key) is not None]
        n_failed[scheme.key] = B - len(good)
        if n_failed[scheme.key] > max_failed_frac * B:
            raise TooManyFailedReplicatesError(
                f"{n_failed[scheme.key]} of {B} bootstrap replicates failed "
                f"for {scheme.key}")
        estimates[scheme.key] = np.stack(good) if good else np.empty((0, 3, len(L_list)))
    return BootstrapSummary(L_list=L_list, estimates=estimates,
                            n_failed=n_failed, B=B)


def bootstrap_ci(data: ObservationalDataset, scheme, B: int, L_list, seed,
                 *, refit_after_trim: bool = True,
                 n_workers: int = 1) -> BootstrapSummary:
    """Single-scheme wrapper around :func:`bootstrap_all`."""
    return bootstrap_all(data, [scheme], B, L_list, seed,
                         refit_after_trim=refit_after_trim, n_workers=n_workers)


def attach_bootstrap(summary: BootstrapSummary, scheme_key: str,
                     results: list[RmcstResult]) -> None:
    for r in results:
        r.se = summary.se(scheme_key, r.L, "delta")
        r.ci_low, r.ci_high = summary.ci(scheme_key, r.L, "delta")
        r.se_mu1 = summary.se(scheme_key, r.L, "mu1")
        r.se_mu0 = summary.se(scheme_key, r.L, "mu0")
        r.ci_mu1 = summary.ci(scheme_key, r.L, "mu1")
        r.ci_mu0 = summary.ci(scheme_key, r.L, "mu0")
        r.variance_method = "bootstrap"


def analyze(data: ObservationalDataset, schemes, L_list, *,
            variance: str = "closed", B: int = 200, seed: int = 0,
            refit_after_trim: bool = True,
            n_workers: int = 1) -> list[RmcstResult]:
    """Point estimates plus inference for each scheme and restriction time."""
    if variance not in ("closed", "bootstrap", "none"):
        raise ValueError("variance must be 'closed', 'bootstrap' or 'none'")
    ps = fit_logistic(data)
    cache = FitCache(data)
    boot = None
    if variance == "bootstrap":
        boot = bootstrap_all(data, schemes, B, L_list, seed,
                             refit_after_trim=refit_after_trim,
                             n_workers=n_workers)
    out = []
    for scheme in schemes:
        sf = fit_scheme(data, scheme, ps=ps, refit_after_trim=refit_after_trim,
                        cache=cache)
        results = sf.estimates(L_list)
        if variance == "closed":
            attach_closed_form(data, sf, results)
        elif variance == "bootstrap":
            attach_bootstrap(boot, scheme.key, results)
        out.extend(results)
    return out
