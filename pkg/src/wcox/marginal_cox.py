"""Weighted marginal Cox model for the log hazard ratios of a categorical
treatment, with sandwich and bootstrap inference.

The working model is lambda_z(t) = lambda_0(t) exp(sum_j tau_j 1{z = j}),
so exp(tau_j) is the marginal hazard ratio of group j versus group 0 in
the population targeted by the balancing weights.  tau solves the
weighted partial-likelihood score equation

    sum_i w_i delta_i { D_i - Dbar(Y_i; tau) } = 0,

with D_i the treatment indicator vector, risk sets {l : Y_l >= Y_i}, and
Breslow handling of ties.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from ._engine import CoxProblem, fit_cox
from .data_model import Cohort, ConvergenceError, StudyError, ValidationError
from .propensity import (
    PropensityFit,
    WeightSet,
    compute_weights,
    fit_multinomial_logit,
    multinomial_information,
    multinomial_probs,
    trim as trim_cohort,
)

__all__ = [
    "RiskProcesses",
    "ScoreResult",
    "MhrEstimate",
    "StackedPieces",
    "SandwichResult",
    "BootstrapResult",
    "FitBundle",
    "risk_processes",
    "evaluate_score",
    "fit_mhr",
    "stacked_pieces",
    "sandwich_covariance",
    "bootstrap_covariance",
    "confidence_intervals",
    "fit_weighted_mhr",
]


def _indicator_design(treatment: np.ndarray, n_treatments: int) -> np.ndarray:
    d = np.zeros((treatment.shape[0], n_treatments))
    pos = treatment >= 1
    d[np.flatnonzero(pos), treatment[pos] - 1] = 1.0
    return d


def _check_alignment(cohort: Cohort, weights: WeightSet):
    if weights.n != cohort.n:
        raise ValidationError("weights must align with the cohort")


@dataclass(frozen=True)
class RiskProcesses:
    """Weighted at-risk averages at one time point.

    s0 = (1/n) sum_l w_l 1(Y_l >= t) exp(eta_l), s1 its treatment-indicator
    moment (length J), s2 = diag(s1) for the indicator design, and
    dbar = s1 / s0 is the weighted at-risk mean of the indicators.
    """

    t: float
    s0: float
    s1: np.ndarray
    s2: np.ndarray
    dbar: np.ndarray


def risk_processes(cohort: Cohort, weights: WeightSet, tau, t: float) -> RiskProcesses:
    """Compute the at-risk averages S(0), S(1), S(2), and Dbar at time t."""
    _check_alignment(cohort, weights)
    tau = np.asarray(tau, dtype=np.float64)
    j = cohort.n_treatments
    d = _indicator_design(cohort.treatment, j)
    eta = d @ tau
    at_risk = cohort.time >= t
    r = weights.weights * at_risk * np.exp(eta)
    n = cohort.n
    s0 = float(r.sum()) / n
    s1 = (r @ d) / n
    if s0 <= 0.0:
        raise ValidationError(f"empty weighted risk set at t = {t:g}")
    return RiskProcesses(t=float(t), s0=s0, s1=s1, s2=np.diag(s1), dbar=s1 / s0)


@dataclass(frozen=True)
class ScoreResult:
    """Weighted partial-likelihood score, log-likelihood, and information."""

    score: np.ndarray
    loglik: float
    info: np.ndarray


def evaluate_score(cohort: Cohort, weights: WeightSet, tau) -> ScoreResult:
    """Evaluate the weighted score equation at a given tau.

    Degree-1 homogeneous in the weights: scaling all weights by c > 0
    scales the score by c and leaves the root unchanged.
    """
    _check_alignment(cohort, weights)
    tau = np.asarray(tau, dtype=np.float64)
    j = cohort.n_treatments
    if tau.shape != (j,):
        raise ValidationError(f"tau must have one component per group, shape ({j},)")
    prob = CoxProblem(
        cohort.time,
        cohort.event,
        _indicator_design(cohort.treatment, j),
        weights.weights,
    )
    loglik, score, info = prob.quantities(tau)
    return ScoreResult(score=score, loglik=loglik, info=info)


@dataclass(frozen=True)
class MhrEstimate:
    """Estimated log marginal hazard ratios with optional covariance.

    tau[k] is the log hazard ratio of group k+1 versus the reference;
    se / ci_low / ci_high are populated once a covariance is attached
    (ci bounds are on the hazard-ratio scale).
    """

    tau: np.ndarray
    treatment_labels: tuple[str, ...]
    loglik: float
    iterations: int
    score_norm: float
    n: int
    n_events: int
    scheme: str | None = None
    cov_tau: np.ndarray | None = None
    variance_method: str = "none"
    ci_level: float = 0.95

    @property
    def hr(self) -> np.ndarray:
        return np.exp(self.tau)

    @property
    def se(self) -> np.ndarray:
        if self.cov_tau is None:
            return np.full(self.tau.shape, np.nan)
        return np.sqrt(np.diag(self.cov_tau))

    @property
    def ci_low(self) -> np.ndarray:
        z = norm.ppf(0.5 + self.ci_level / 2.0)
        return np.exp(self.tau - z * self.se)

    @property
    def ci_high(self) -> np.ndarray:
        z = norm.ppf(0.5 + self.ci_level / 2.0)
        return np.exp(self.tau + z * self.se)

    def with_covariance(self, cov_tau, method: str, ci_level=0.95) -> "MhrEstimate":
        cov_tau = np.asarray(cov_tau, dtype=np.float64)
        return replace(self, cov_tau=cov_tau, variance_method=method, ci_level=ci_level)


def fit_mhr(cohort: Cohort, weights: WeightSet, *, score_tol=1e-9, max_iter=50) -> MhrEstimate:
    """Point estimate of the log marginal hazard ratios.

    Newton-Raphson from tau = 0 with step-halving; the gradient tolerance
    is applied on a mean-one weight scale so the iterate sequence is
    invariant to positive rescaling of the weights.

    Raises
    ------
    ConvergenceError
        When a group has no observed events (monotone likelihood) or the
        solver diverges (any |tau| > 20 with a non-vanishing gradient).
    """
    _check_alignment(cohort, weights)
    j = cohort.n_treatments
    ev_by_group = np.bincount(
        cohort.treatment[cohort.event == 1], minlength=j + 1
    )
    if np.any(ev_by_group == 0):
        empty = [
            cohort.treatment_labels[k] for k in np.flatnonzero(ev_by_group == 0)
        ]
        raise ConvergenceError(
            f"no observed events in group(s) {empty}: "
            "the marginal hazard ratio diverges (monotone likelihood)"
        )
    core = fit_cox(
        cohort.time,
        cohort.event,
        _indicator_design(cohort.treatment, j),
        weights.weights,
        score_tol=score_tol,
        max_iter=max_iter,
        separation_bound=20.0,
    )
    return MhrEstimate(
        tau=core.beta,
        treatment_labels=cohort.treatment_labels,
        loglik=core.loglik,
        iterations=core.iterations,
        score_norm=core.score_norm,
        n=cohort.n,
        n_events=int(np.sum(cohort.event)),
        scheme=weights.scheme,
    )


@dataclass(frozen=True)
class StackedPieces:
    """Per-unit estimating functions and bread blocks of the stacked
    M-estimation system (tau block first, then gamma in ravel order).

    psi   : (n, J)   weighted score residuals w d (D - Dbar(Y))
    psi_c : (n, J)   corrected residuals (martingale-style second term
                     removed), the meat contribution of the tau block
    pi    : (n, J(p+1)) propensity score residuals (D - e) x design
    a_tt, a_tg, a_gg : bread blocks, -1/n d(sum phi)/d(theta); a_gt = 0
    """

    psi: np.ndarray
    psi_c: np.ndarray
    pi: np.ndarray
    a_tt: np.ndarray
    a_tg: np.ndarray
    a_gg: np.ndarray

    def bread(self) -> np.ndarray:
        j = self.a_tt.shape[0]
        k = self.a_gg.shape[0]
        a = np.zeros((j + k, j + k))
        a[:j, :j] = self.a_tt
        a[:j, j:] = self.a_tg
        a[j:, j:] = self.a_gg
        return a

    def meat(self) -> np.ndarray:
        phi = np.hstack([self.psi_c, self.pi])
        return phi.T @ phi / phi.shape[0]


def _corrected_residuals(cohort: Cohort, weights: WeightSet, tau) -> tuple[np.ndarray, np.ndarray]:
    """psi and its risk-set-corrected version, both (n, J)."""
    j = cohort.n_treatments
    d = _indicator_design(cohort.treatment, j)
    w = weights.weights
    eta = d @ tau
    expeta = np.exp(eta)
    order = np.argsort(cohort.time, kind="stable")
    t_s = cohort.time[order]
    starts = np.searchsorted(t_s, t_s, side="left")
    r_s = (w * expeta)[order]
    s0_all = np.cumsum(r_s[::-1])[::-1]

    ev_pos = np.flatnonzero(cohort.event[order] == 1)
    ev_times = t_s[ev_pos]
    s0_ev = s0_all[starts[ev_pos]]
    w_ev = w[order][ev_pos]
    dbar_ev = np.empty((ev_pos.size, j))
    for a in range(j):
        dbar_ev[:, a] = np.cumsum((r_s * d[order][:, a])[::-1])[::-1][starts[ev_pos]] / s0_ev

    psi = np.zeros((cohort.n, j))
    is_ev = cohort.event == 1
    dbar_at_own = np.zeros((cohort.n, j))
    dbar_at_own[order[ev_pos]] = dbar_ev
    psi[is_ev] = (w[:, None] * (d - dbar_at_own))[is_ev]

    # correction: w_i e^{eta_i} sum_{events e: Y_e <= Y_i} q_e (D_i - Dbar(Y_e)),
    # q_e = w_e / sum_{l: Y_l >= Y_e} w_l e^{eta_l}
    q_ev = w_ev / s0_ev
    cum_q = np.concatenate([[0.0], np.cumsum(q_ev)])
    cum_qd = np.vstack([np.zeros(j), np.cumsum(q_ev[:, None] * dbar_ev, axis=0)])
    upto = np.searchsorted(ev_times, cohort.time, side="right")
    corr = (w * expeta)[:, None] * (d * cum_q[upto][:, None] - cum_qd[upto])
    return psi, psi - corr


def stacked_pieces(
    cohort: Cohort,
    psfit: PropensityFit,
    weights: WeightSet,
    tau,
    *,
    fd_step=1e-6,
) -> StackedPieces:
    """Assemble the stacked estimating-equation pieces at (tau, gamma).

    a_tt and a_gg are analytic (weighted partial-likelihood information
    and multinomial Fisher information, each divided by n); a_tg is the
    central finite difference of the aggregate tau-score with respect to
    gamma, with the weights rebuilt from the perturbed propensities, step
    fd_step * max(1, |gamma_m|) per component.  a_gt is exactly zero.
    """
    _check_alignment(cohort, weights)
    tau = np.asarray(tau, dtype=np.float64)
    n = cohort.n
    j = cohort.n_treatments

    psi, psi_c = _corrected_residuals(cohort, weights, tau)
    sr = evaluate_score(cohort, weights, tau)
    a_tt = sr.info / n

    onehot = _indicator_design(cohort.treatment, psfit.n_treatments)
    resid = onehot - psfit.probs[:, 1:]
    pi = (resid[:, :, None] * psfit.design[:, None, :]).reshape(n, -1)
    a_gg = multinomial_information(psfit.probs, psfit.design) / n

    if weights.scheme == "unit":
        a_tg = np.zeros((j, pi.shape[1]))
    else:
        gamma = psfit.gamma
        flat = gamma.ravel()
        a_tg = np.empty((j, flat.size))
        for m in range(flat.size):
            h = fd_step * max(1.0, abs(flat[m]))
            plus = flat.copy()
            plus[m] += h
            minus = flat.copy()
            minus[m] -= h
            scores = []
            for g in (plus, minus):
                probs_g = multinomial_probs(g.reshape(gamma.shape), cohort.covariates)
                w_g = compute_weights(
                    probs_g, cohort.treatment, weights.scheme, weights.att_target
                )
                scores.append(evaluate_score(cohort, w_g, tau).score)
            a_tg[:, m] = -(scores[0] - scores[1]) / (2.0 * h * n)

    return StackedPieces(psi=psi, psi_c=psi_c, pi=pi, a_tt=a_tt, a_tg=a_tg, a_gg=a_gg)


@dataclass(frozen=True)
class SandwichResult:
    """Sandwich covariance of the stacked estimator.

    cov_tau propagates the propensity-estimation step; cov_tau_fixed
    treats the weights as known (gamma rows and columns deleted), which is
    the weighted robust (Lin-Wei style) variance.
    """

    cov_tau: np.ndarray
    cov_tau_fixed: np.ndarray
    cov_joint: np.ndarray | None
    bread: np.ndarray | None
    meat: np.ndarray | None
    pieces: StackedPieces | None


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


def sandwich_covariance(
    cohort: Cohort,
    psfit: PropensityFit | None,
    weights: WeightSet,
    tau,
) -> SandwichResult:
    """Stacked M-estimation sandwich covariance A^-1 B A^-T / n.

    With psfit=None (or UNIT weights, whose gamma cross block vanishes)
    the result reduces to the fixed-weight robust variance.
    """
    tau = np.asarray(tau, dtype=np.float64)
    n = cohort.n
    if psfit is None:
        psi, psi_c = _corrected_residuals(cohort, weights, tau)
        a_tt = evaluate_score(cohort, weights, tau).info / n
        meat_tt = psi_c.T @ psi_c / n
        a_inv = np.linalg.inv(a_tt)
        cov_fixed = _symmetrize(a_inv @ meat_tt @ a_inv.T / n)
        return SandwichResult(
            cov_tau=cov_fixed,
            cov_tau_fixed=cov_fixed,
            cov_joint=None,
            bread=None,
            meat=None,
            pieces=None,
        )
    pieces = stacked_pieces(cohort, psfit, weights, tau)
    bread = pieces.bread()
    meat = pieces.meat()
    j = tau.shape[0]
    try:
        a_inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError:
        raise ConvergenceError("singular bread matrix in the sandwich") from None
    cov_joint = _symmetrize(a_inv @ meat @ a_inv.T / n)
    att_inv = np.linalg.inv(pieces.a_tt)
    meat_tt = pieces.psi_c.T @ pieces.psi_c / n
    cov_fixed = _symmetrize(att_inv @ meat_tt @ att_inv.T / n)
    return SandwichResult(
        cov_tau=cov_joint[:j, :j],
        cov_tau_fixed=cov_fixed,
        cov_joint=cov_joint,
        bread=bread,
        meat=meat,
        pieces=pieces,
    )


@dataclass(frozen=True)
class BootstrapResult:
    """Nonparametric bootstrap covariance of tau."""

    cov_tau: np.ndarray
    draws: np.ndarray
    n_requested: int
    n_dropped: int
    drop_reasons: dict


def bootstrap_covariance(
    cohort: Cohort,
    scheme: str,
    n_boot: int,
    seed,
    *,
    att_target=None,
    max_drop_fraction=0.2,
) -> BootstrapResult:
    """Resample units with replacement; refit propensities and tau each time.

    Replicates where a treatment group disappears, a group loses all its
    events, or either fit fails are dropped and counted; more than
    `max_drop_fraction` dropped raises StudyError ("bootstrap unstable").
    The covariance is the empirical covariance (ddof=1) of the retained
    tau draws.  Fully deterministic given (cohort, scheme, n_boot, seed).
    """
    if n_boot < 2:
        raise ValidationError("bootstrap needs at least 2 replicates")
    if seed is None:
        raise ValidationError("bootstrap requires a seed")
    j = cohort.n_treatments
    n = cohort.n
    children = np.random.SeedSequence(seed).spawn(n_boot)
    draws = []
    reasons: dict[str, int] = {}
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.integers(0, n, size=n)
        sub = cohort.subset(idx)
        sizes = np.bincount(sub.treatment, minlength=j + 1)
        if np.any(sizes == 0):
            reasons["missing_group"] = reasons.get("missing_group", 0) + 1
            continue
        try:
            if scheme == "unit":
                w = compute_weights(
                    np.full((n, j + 1), 1.0 / (j + 1)), sub.treatment, "unit"
                )
            else:
                ps = fit_multinomial_logit(sub)
                w = compute_weights(ps, sub.treatment, scheme, att_target)
            est = fit_mhr(sub, w)
        except (ConvergenceError, ValidationError) as exc:
            key = "propensity" if "propensity" in str(exc) else "cox"
            reasons[key] = reasons.get(key, 0) + 1
            continue
        draws.append(est.tau)
    n_dropped = n_boot - len(draws)
    if n_dropped > max_drop_fraction * n_boot:
        raise StudyError(
            f"bootstrap unstable: {n_dropped} of {n_boot} replicates dropped "
            f"({reasons})"
        )
    arr = np.asarray(draws)
    cov = np.atleast_2d(np.cov(arr.T, ddof=1))
    return BootstrapResult(
        cov_tau=cov,
        draws=arr,
        n_requested=n_boot,
        n_dropped=n_dropped,
        drop_reasons=reasons,
    )


def confidence_intervals(estimate: MhrEstimate, level: float = 0.95) -> np.ndarray:
    """Hazard-ratio point estimates and Wald limits, shape (J, 3).

    Columns are (hr, low, high) with limits exp(tau -+ z se); z is the
    standard normal quantile for the requested two-sided level.
    """
    if estimate.cov_tau is None:
        raise ValidationError("estimate has no covariance attached")
    if not (0.0 < level < 1.0):
        raise ValidationError("confidence level must lie in (0, 1)")
    z = norm.ppf(0.5 + level / 2.0)
    se = estimate.se
    return np.column_stack(
        [
            np.exp(estimate.tau),
            np.exp(estimate.tau - z * se),
            np.exp(estimate.tau + z * se),
        ]
    )


@dataclass(frozen=True)
class FitBundle:
    """Everything produced by one weighted analysis."""

    estimate: MhrEstimate
    psfit: PropensityFit | None
    weights: WeightSet
    sandwich: SandwichResult | None = None
    bootstrap: BootstrapResult | None = None
    trim_result: object | None = None


def fit_weighted_mhr(
    cohort: Cohort,
    scheme: str = "ipw",
    *,
    att_target=None,
    variance: str = "robust",
    n_boot: int = 200,
    seed=None,
    trim_threshold=None,
    refit_trim=True,
    ci_level: float = 0.95,
) -> FitBundle:
    """Full pipeline: propensity fit, optional trim, weights, tau, variance.

    variance is one of 'robust' (stacked sandwich, the default), 'bootstrap'
    (resampling the post-trim cohort, refitting propensities and tau each
    replicate), or 'none'.  Trimming, when requested, happens once before
    any variance estimation.
    """
    if variance not in ("robust", "bootstrap", "none"):
        raise ValidationError(f"unknown variance method {variance!r}")
    psfit = None
    trim_result = None
    if scheme != "unit" or trim_threshold is not None:
        psfit = fit_multinomial_logit(cohort)
    if trim_threshold is not None:
        trim_result = trim_cohort(cohort, psfit, trim_threshold, refit=refit_trim)
        cohort = trim_result.cohort
        psfit = trim_result.fit
    if scheme == "unit":
        j = cohort.n_treatments
        weights = compute_weights(
            np.full((cohort.n, j + 1), 1.0 / (j + 1)), cohort.treatment, "unit"
        )
    else:
        weights = compute_weights(psfit, cohort.treatment, scheme, att_target)
    estimate = fit_mhr(cohort, weights)
    sandwich = None
    boot = None
    if variance == "robust":
        sandwich = sandwich_covariance(
            cohort, None if scheme == "unit" else psfit, weights, estimate.tau
        )
        estimate = estimate.with_covariance(sandwich.cov_tau, "robust", ci_level)
    elif variance == "bootstrap":
        boot = bootstrap_covariance(
            cohort, scheme, n_boot, seed, att_target=att_target
        )
        estimate = estimate.with_covariance(boot.cov_tau, "bootstrap", ci_level)
    return FitBundle(
        estimate=estimate,
        psfit=psfit,
        weights=weights,
        sandwich=sandwich,
        bootstrap=boot,
        trim_result=trim_result,
    )
