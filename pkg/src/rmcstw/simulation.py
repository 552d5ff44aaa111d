"""Monte Carlo study: data generation, true estimand values, and the
replication harness producing bias, relative efficiency, and coverage.

The generating process uses six covariates (three correlated standard
normals, three Bernoulli(0.5)), a logistic treatment model whose slopes are
scaled by an overlap multiplier gamma, exponential survival in each arm
whose log-rate optionally includes the treatment linear predictor, and
exponential covariate-dependent censoring shared across arms. True values
of the tilted estimands come from a super-population draw of both
counterfactual outcomes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache, partial

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .data import ObservationalDataset
from .errors import RmcstError, RootNotBracketedError, TruthMissingError
from .estimator import FitCache, fit_scheme
from .inference import TARGETS, Z975, bootstrap_all, closed_form_inference
from .logistic import fit_logistic
from .utils import TAG_CALIB, TAG_DATA, TAG_TRUTH, parallel_map, stream
from .weights import WeightScheme

PS_SLOPES = np.array([0.15, 0.30, 0.30, -0.20, -0.25, -0.25])
OUTCOME_INTERCEPT = {1: -1.0, 0: -1.4}
OUTCOME_SLOPES = {
    1: np.array([0.4, 0.2, 0.1, -0.1, -0.2, -0.3]),
    0: np.array([0.0, -0.2, -0.3, -0.5, -0.6, -0.7]),
}
PS_TERM_COEF = {1: 2.0, 0: -1.0}
CENSOR_INTERCEPT = -1.6
CENSOR_SLOPES = np.array([-0.3, 0.5, 0.5, 0.2, -0.4, -0.5])

_CORR = 0.5
_CHOL = np.linalg.cholesky((1 - _CORR) * np.eye(3) + _CORR * np.ones((3, 3)))

OUTCOME_VARIANTS = ("with_ps_term", "without_ps_term")
CENSORING_VARIANTS = ("correct_cox", "misspecified")
VARIANCE_METHODS = ("closed_form", "bootstrap", "both")


def default_scheme_grid() -> tuple[WeightScheme, ...]:
    return (
        WeightScheme("iptw"),
        WeightScheme("ow"),
        WeightScheme("symtrim", alpha=0.05),
        WeightScheme("symtrim", alpha=0.10),
        WeightScheme("symtrim", alpha=0.15),
        WeightScheme("asymtrim", q=0.0),
        WeightScheme("asymtrim", q=0.01),
        WeightScheme("asymtrim", q=0.05),
        WeightScheme("truncate", q=0.025),
        WeightScheme("truncate", q=0.05),
        WeightScheme("truncate", q=0.10),
    )


@dataclass(frozen=True)
class SimulationScenario:
    gamma: float = 1.0
    n: int = 1000
    reps: int = 1000
    L_list: tuple[float, ...] = (2.0, 5.0, 10.0)
    schemes: tuple[WeightScheme, ...] = field(default_factory=default_scheme_grid)
    outcome_variant: str = "with_ps_term"
    censoring_variant: str = "correct_cox"
    variance_method: str = "closed_form"
    bootstrap_b: int = 200
    master_seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if any(L <= 0 for L in self.L_list):
            raise ValueError("every restriction time must be positive")
        if self.outcome_variant not in OUTCOME_VARIANTS:
            raise ValueError(f"outcome_variant must be one of {OUTCOME_VARIANTS}")
        if self.censoring_variant not in CENSORING_VARIANTS:
            raise ValueError(f"censoring_variant must be one of {CENSORING_VARIANTS}")
        if self.variance_method not in VARIANCE_METHODS:
            raise ValueError(f"variance_method must be one of {VARIANCE_METHODS}")
        object.__setattr__(self, "L_list", tuple(float(L) for L in self.L_list))
        object.__setattr__(self, "schemes", tuple(self.schemes))

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"gamma = {self.gamma!r}\n")
            fh.write(f"n = {self.n}\n")
            fh.write(f"reps = {self.reps}\n")
            fh.write(f"L = {','.join(repr(L) for L in self.L_list)}\n")
            fh.write(f"schemes = {';'.join(s.key for s in self.schemes)}\n")
            fh.write(f"outcome_variant = {self.outcome_variant}\n")
            fh.write(f"censoring_variant = {self.censoring_variant}\n")
            fh.write(f"variance_method = {self.variance_method}\n")
            fh.write(f"B = {self.bootstrap_b}\n")
            fh.write(f"seed = {self.master_seed}\n")

    @classmethod
    def from_file(cls, path) -> "SimulationScenario":
        from .weights import parse_scheme

        kv = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, value = line.partition("=")
                kv[key.strip()] = value.strip()
        kwargs = {}
        if "gamma" in kv:
            kwargs["gamma"] = float(kv["gamma"])
        if "n" in kv:
            kwargs["n"] = int(kv["n"])
        if "reps" in kv:
            kwargs["reps"] = int(kv["reps"])
        if "L" in kv:
            kwargs["L_list"] = tuple(float(x) for x in kv["L"].split(","))
        if "schemes" in kv:
            kwargs["schemes"] = tuple(parse_scheme(s) for s in kv["schemes"].split(";"))
        if "outcome_variant" in kv:
            kwargs["outcome_variant"] = kv["outcome_variant"]
        if "censoring_variant" in kv:
            kwargs["censoring_variant"] = kv["censoring_variant"]
        if "variance_method" in kv:
            kwargs["variance_method"] = kv["variance_method"]
        if "B" in kv:
            kwargs["bootstrap_b"] = int(kv["B"])
        if "seed" in kv:
            kwargs["master_seed"] = int(kv["seed"])
        return cls(**kwargs)


def draw_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    """Three correlated standard normals followed by three Bernoulli(0.5)."""
    normal = rng.standard_normal((n, 3)) @ _CHOL.T
    binary = (rng.random((n, 3)) < 0.5).astype(float)
    return np.column_stack([normal, binary])


def treatment_logit(X: np.ndarray, gamma: float, beta0: float) -> np.ndarray:
    return beta0 + X @ (gamma * PS_SLOPES)


def outcome_log_rate(X, arm: int, gamma: float, beta0: float, variant: str) -> np.ndarray:
    lp = OUTCOME_INTERCEPT[arm] + X @ OUTCOME_SLOPES[arm]
    if variant == "with_ps_term":
        lp = lp + PS_TERM_COEF[arm] * treatment_logit(X, gamma, beta0)
    return lp


def quadratic_censoring_shift(X: np.ndarray) -> np.ndarray:
    """Default misspecification hook: a quadratic term the Cox censoring
    model cannot capture."""
    return 0.3 * X[:, 0] ** 2


def censoring_log_rate(X, variant: str, shift=None) -> np.ndarray:
    lp = CENSOR_INTERCEPT + X @ CENSOR_SLOPES
    if variant == "misspecified":
        lp = lp + (shift or quadratic_censoring_shift)(X)
    return lp


@lru_cache(maxsize=8)
def _calibration_sample_key(draws: int, seed: int):
    rng = stream(TAG_CALIB, seed)
    return draw_covariates(rng, draws)


def calibrate_intercept(gamma: float, *, draws: int = 1_000_000,
                        seed: int = 20240301, tol: float = 1e-10) -> float:
    """Intercept making the mean treatment probability 0.5, by monotone
    root-finding on a fixed covariate sample."""
    return _calibrate_cached(float(gamma), int(draws), int(seed), float(tol))


@lru_cache(maxsize=64)
def _calibrate_cached(gamma: float, draws: int, seed: int, tol: float) -> float:
    X = _calibration_sample_key(draws, seed)
    s = X @ (gamma * PS_SLOPES)

    def fraction_treated_gap(b):
        return float(np.mean(expit(b + s)) - 0.5)

    lo, hi = -2.0, 2.0
    while fraction_treated_gap(lo) > 0:
        lo *= 2.0
        if lo < -50.0:
            raise RootNotBracketedError("calibration bracket exceeded |b0| = 50")
    while fraction_treated_gap(hi) < 0:
        hi *= 2.0
        if hi > 50.0:
            raise RootNotBracketedError("calibration bracket exceeded |b0| = 50")
    return float(brentq(fraction_treated_gap, lo, hi, xtol=tol))


@dataclass(frozen=True)
class LatentData:
    """Generator-side quantities retained for truth checks and diagnostics."""

    true_ps: np.ndarray
    T1: np.ndarray
    T0: np.ndarray


def _exponential(rng: np.random.Generator, rate: np.ndarray) -> np.ndarray:
    v = rng.random(len(rate))
    return -np.log1p(-v) / rate


def generate_dataset(scenario: SimulationScenario, rep_index: int,
                     beta0: float | None = None,
                     censoring_shift=None) -> tuple[ObservationalDataset, LatentData]:
    """One simulated dataset; draws come from the stream keyed by
    (master_seed, rep_index) so replications are independent and
    scheduling-order free."""
    if beta0 is None:
        beta0 = calibrate_intercept(scenario.gamma)
    rng = stream(scenario.master_seed, TAG_DATA, rep_index)
    X = draw_covariates(rng, scenario.n)
    e = expit(treatment_logit(X, scenario.gamma, beta0))
    A = (rng.random(scenario.n) < e).astype(int)
    T1 = _exponential(rng, np.exp(outcome_log_rate(X, 1, scenario.gamma, beta0,
                                                   scenario.outcome_variant)))
    T0 = _exponential(rng, np.exp(outcome_log_rate(X, 0, scenario.gamma, beta0,
                                                   scenario.outcome_variant)))
    C = _exponential(rng, np.exp(censoring_log_rate(X, scenario.censoring_variant,
                                                    censoring_shift)))
    T = np.where(A == 1, T1, T0)
    U = np.minimum(T, C)
    delta = (T <= C).astype(int)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = ObservationalDataset(X=X, A=A, U=U, delta=delta)
    return data, LatentData(true_ps=e, T1=T1, T0=T0)


# ---------------------------------------------------------------------------
# true values


@dataclass(frozen=True)
class TruthEntry:
    mu1: float
    mu0: float
    delta: float
    se_mu1: float
    se_mu0: float
    se_delta: float

    def value(self, target: str) -> float:
        return getattr(self, target)


@dataclass(frozen=True)
class TruthTable:
    gamma: float
    outcome_variant: str
    super_n: int
    seed: int
    entries: dict

    def get(self, scheme_key: str, L: float) -> TruthEntry:
        try:
            return self.entries[(scheme_key, float(L))]
        except KeyError:
            raise TruthMissingError(f"no truth for {scheme_key} at L={L}") from None


def _tilting_weights(scheme: WeightScheme, e: np.ndarray, A: np.ndarray) -> np.ndarray:
    if scheme.kind == "ow":
        return e * (1.0 - e)
    if scheme.kind == "symtrim":
        return ((e >= scheme.alpha) & (e <= 1.0 - scheme.alpha)).astype(float)
    if scheme.kind == "asymtrim":
        lo = max(e[A == 1].min(), e[A == 0].min())
        hi = min(e[A == 1].max(), e[A == 0].max())
        keep = (e >= lo) & (e <= hi)
        if scheme.q > 0.0:
            cut_lo = np.quantile(e[keep & (A == 1)], scheme.q)
            cut_hi = np.quantile(e[keep & (A == 0)], 1.0 - scheme.q)
            keep &= (e >= cut_lo) & (e <= cut_hi)
        return keep.astype(float)
    return np.ones_like(e)  # iptw and truncate target the combined population


def _weighted_mean_and_se(h, z):
    total = h.sum()
    mean = float(h @ z / total)
    se = float(np.sqrt(np.sum((h * (z - mean)) ** 2)) / total)
    return mean, se


def compute_truth(scenario: SimulationScenario, super_n: int = 1_000_000,
                  seed: int | None = None) -> TruthTable:
    """Tilted true estimand values from a super-population draw of both
    counterfactual outcomes (common uniforms across arms per unit)."""
    seed = scenario.master_seed if seed is None else seed
    beta0 = calibrate_intercept(scenario.gamma)
    rng = stream(seed, TAG_TRUTH)
    X = draw_covariates(rng, super_n)
    e = expit(treatment_logit(X, scenario.gamma, beta0))
    A = (rng.random(super_n) < e).astype(int)
    v = rng.random(super_n)
    T1 = -np.log1p(-v) / np.exp(outcome_log_rate(X, 1, scenario.gamma, beta0,
                                                 scenario.outcome_variant))
    T0 = -np.log1p(-v) / np.exp(outcome_log_rate(X, 0, scenario.gamma, beta0,
                                                 scenario.outcome_variant))

    tilt = {scheme.key: _tilting_weights(scheme, e, A) for scheme in scenario.schemes}
    entries = {}
    for L in scenario.L_list:
        z1 = np.minimum(T1, L)
        z0 = np.minimum(T0, L)
        for scheme in scenario.schemes:
            h = tilt[scheme.key]
            mu1, se1 = _weighted_mean_and_se(h, z1)
            mu0, se0 = _weighted_mean_and_se(h, z0)
            dse = float(np.sqrt(np.sum((h * ((z1 - z0) - (mu1 - mu0))) ** 2)) / h.sum())
            entries[(scheme.key, float(L))] = TruthEntry(
                mu1=mu1, mu0=mu0, delta=mu1 - mu0,
                se_mu1=se1, se_mu0=se0, se_delta=dse)
    return TruthTable(gamma=scenario.gamma, outcome_variant=scenario.outcome_variant,
                      super_n=super_n, seed=seed, entries=entries)


# ---------------------------------------------------------------------------
# replication study


@dataclass(frozen=True)
class CellStats:
    """Aggregates for one (scheme, L, target) cell of a study."""

    scheme: str
    gamma: float
    L: float
    target: str
    truth: float
    mean_est: float
    bias: float
    mc_var: float
    rel_eff: float
    coverage_closed: float
    coverage_boot: float
    mean_se_closed: float
    mean_se_boot: float
    n_used: int
    n_failed: int


@dataclass(frozen=True)
class SimulationReport:
    scenario: SimulationScenario
    cells: tuple

    def get(self, scheme_key: str, L: float, target: str = "delta") -> CellStats:
        for c in self.cells:
            if c.scheme == scheme_key and c.L == float(L) and c.target == target:
                return c
        raise KeyError((scheme_key, L, target))


def _study_rep(payload, rep: int):
    scenario, beta0 = payload
    nL = len(scenario.L_list)
    shape = (len(TARGETS), nL)
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data, _ = generate_dataset(scenario, rep, beta0)
        try:
            ps = fit_logistic(data)
        except RmcstError:
            return {s.key: None for s in scenario.schemes}
        cache = FitCache(data)
        boot = None
        if scenario.variance_method in ("bootstrap", "both"):
            try:
                boot = bootstrap_all(data, scenario.schemes, scenario.bootstrap_b,
                                     scenario.L_list,
                                     (scenario.master_seed, TAG_DATA, rep))
            except RmcstError:
                boot = None
        for scheme in scenario.schemes:
            try:
                sf = fit_scheme(data, scheme, ps=ps, cache=cache)
                results = sf.estimates(scenario.L_list)
                est = np.array([[r.mu1 for r in results],
                                [r.mu0 for r in results],
                                [r.delta for r in results]])
                se_cf = np.full(shape, np.nan)
                lo_cf = np.full(shape, np.nan)
                hi_cf = np.full(shape, np.nan)
                if scenario.variance_method in ("closed_form", "both"):
                    ses = closed_form_inference(data, sf, scenario.L_list)
                    for k in range(nL):
                        for t, target in enumerate(TARGETS):
                            se_cf[t, k] = ses[k][target]
                    center = est
                    lo_cf = center - Z975 * se_cf
                    hi_cf = center + Z975 * se_cf
                lo_bs = np.full(shape, np.nan)
                hi_bs = np.full(shape, np.nan)
                se_bs = np.full(shape, np.nan)
                if boot is not None and scheme.key in boot.estimates \
                        and len(boot.estimates[scheme.key]):
                    for k, L in enumerate(scenario.L_list):
                        for t, target in enumerate(TARGETS):
                            lo_bs[t, k], hi_bs[t, k] = boot.ci(scheme.key, L, target)
                            se_bs[t, k] = boot.se(scheme.key, L, target)
                out[scheme.key] = (est, se_cf, lo_cf, hi_cf, se_bs, lo_bs, hi_bs)
            except RmcstError:
                out[scheme.key] = None
    return out


def run_study(scenario: SimulationScenario, truth: TruthTable,
              n_workers: int = 1) -> SimulationReport:
    """Replicated estimation over the scenario grid.

    Hard estimation failures are recorded per scheme and excluded from that
    scheme's aggregates. The aggregation is a deterministic fold in
    replication order, so the report is identical for any worker count.
    """
    for scheme in scenario.schemes:
        for L in scenario.L_list:
            truth.get(scheme.key, L)
    beta0 = calibrate_intercept(scenario.gamma)
    worker = partial(_study_rep, (scenario, beta0))
    rows = parallel_map(worker, range(scenario.reps), n_workers)

    nL = len(scenario.L_list)
    R = scenario.reps
    cells = []
    arrays = {}
    for scheme in scenario.schemes:
        key = scheme.key
        est = np.full((R, 3, nL), np.nan)
        se_cf = np.full((R, 3, nL), np.nan)
        lo_cf = np.full((R, 3, nL), np.nan)
        hi_cf = np.full((R, 3, nL), np.nan)
        se_bs = np.full((R, 3, nL), np.nan)
        lo_bs = np.full((R, 3, nL), np.nan)
        hi_bs = np.full((R, 3, nL), np.nan)
        for r, row in enumerate(rows):
            packed = row.get(key)
            if packed is None:
                continue
            est[r], se_cf[r], lo_cf[r], hi_cf[r], se_bs[r], lo_bs[r], hi_bs[r] = packed
        arrays[key] = (est, se_cf, lo_cf, hi_cf, se_bs, lo_bs, hi_bs)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        iptw_var = {}
        if "iptw" in arrays:
            est = arrays["iptw"][0]
            for t in range(3):
                for k in range(nL):
                    iptw_var[(t, k)] = float(np.nanvar(est[:, t, k], ddof=1))

        for scheme in scenario.schemes:
            key = scheme.key
            est, se_cf, lo_cf, hi_cf, se_bs, lo_bs, hi_bs = arrays[key]
            for k, L in enumerate(scenario.L_list):
                for t, target in enumerate(TARGETS):
                    col = est[:, t, k]
                    n_used = int(np.isfinite(col).sum())
                    tr = truth.get(key, L).value(target)
                    mean_est = float(np.nanmean(col)) if n_used else float("nan")
                    mc_var = float(np.nanvar(col, ddof=1)) if n_used > 1 else float("nan")
                    re = iptw_var.get((t, k), float("nan")) / mc_var if mc_var else float("nan")
                    cov_cf = _coverage(lo_cf[:, t, k], hi_cf[:, t, k], tr)
                    cov_bs = _coverage(lo_bs[:, t, k], hi_bs[:, t, k], tr)
                    cells.append(CellStats(
                        scheme=key, gamma=scenario.gamma, L=float(L), target=target,
                        truth=tr, mean_est=mean_est, bias=mean_est - tr,
                        mc_var=mc_var, rel_eff=re,
                        coverage_closed=cov_cf, coverage_boot=cov_bs,
                        mean_se_closed=float(np.nanmean(se_cf[:, t, k])),
                        mean_se_boot=float(np.nanmean(se_bs[:, t, k])),
                        n_used=n_used, n_failed=R - n_used))
    return SimulationReport(scenario=scenario, cells=tuple(cells))


def _coverage(lo, hi, truth) -> float:
    ok = np.isfinite(lo) & np.isfinite(hi)
    if not ok.any():
        return float("nan")
    return float(100.0 * np.mean((lo[ok] <= truth) & (truth <= hi[ok])))
