"""Generalized propensity scores, balancing weights, trimming, and balance
diagnostics for multiple treatment groups.

The propensity model is a multinomial logistic regression of treatment on
the covariates with group 0 as the reference category:

    e_j(x; gamma) = exp(gamma_j' xt) / (1 + sum_k exp(gamma_k' xt)),

where xt is the covariate vector with an intercept prepended and gamma is
a (J, p+1) matrix.  The flattened parameter order is gamma.ravel(), i.e.
all coefficients of group 1, then group 2, and so on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data_model import Cohort, ConvergenceError, ValidationError

__all__ = [
    "PropensityFit",
    "WeightSet",
    "TrimResult",
    "BalanceReport",
    "fit_multinomial_logit",
    "multinomial_probs",
    "multinomial_information",
    "compute_weights",
    "parse_scheme",
    "trim",
    "balance_table",
    "propensity_histogram",
]

SCHEMES = ("ipw", "att", "ow", "unit")


def _design(covariates: np.ndarray) -> np.ndarray:
    """Covariate matrix with an intercept column prepended."""
    covariates = np.asarray(covariates, dtype=np.float64)
    return np.column_stack([np.ones(covariates.shape[0]), covariates])


def multinomial_probs(gamma: np.ndarray, covariates: np.ndarray) -> np.ndarray:
    """Propensities e_j(x; gamma) for all groups, shape (n, J+1).

    Column 0 is the reference group; rows sum to one.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    xt = _design(covariates)
    logits = np.column_stack([np.zeros(xt.shape[0]), xt @ gamma.T])
    logits -= logits.max(axis=1, keepdims=True)
    num = np.exp(logits)
    return num / num.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PropensityFit:
    """Fitted multinomial propensity model.

    Attributes
    ----------
    gamma : ndarray, shape (J, p+1)
        Coefficients per non-reference group, intercept first.
    probs : ndarray, shape (n, J+1)
        Fitted propensities on the estimation sample; rows sum to one.
    design : ndarray, shape (n, p+1)
        Covariates with intercept, as used in the fit.
    loglik : float
    iterations : int
    score_norm : float
        Gradient inf-norm at the solution.
    ridged : bool
        True when the ridge fallback stabilized the Newton steps.
    """

    gamma: np.ndarray
    probs: np.ndarray
    design: np.ndarray
    loglik: float
    iterations: int
    score_norm: float
    ridged: bool

    @property
    def n_treatments(self) -> int:
        return self.gamma.shape[0]


def _multinomial_quantities(gamma, xt, onehot, need_hessian=True):
    n = xt.shape[0]
    logits = np.column_stack([np.zeros(n), xt @ gamma.T])
    lse = logsumexp(logits, axis=1)
    loglik = float(np.sum((onehot * logits[:, 1:]).sum(axis=1) - lse))
    probs = np.exp(logits - lse[:, None])
    resid = onehot - probs[:, 1:]
    score = (resid.T @ xt).ravel()
    if not need_hessian:
        return loglik, score, probs, None
    return loglik, score, probs, multinomial_information(probs, xt)


def fit_multinomial_logit(
    cohort: Cohort,
    *,
    score_tol=1e-8,
    max_iter=100,
    max_halvings=30,
    separation_bound=30.0,
    ridge=1e-8,
    condition_limit=1e12,
) -> PropensityFit:
    """Maximum-likelihood multinomial logistic propensity model.

    Newton-Raphson from gamma = 0 with step-halving; converges when the
    gradient inf-norm is at most `score_tol`.  When the Fisher information
    is ill-conditioned (condition estimate beyond `condition_limit`) a
    small ridge is added and a warning is issued.

    Raises
    ------
    ConvergenceError
        On iteration exhaustion, failed step-halving, or quasi-separation
        (any coefficient beyond `separation_bound` in absolute value).
    """
    j = cohort.n_treatments
    if j < 1:
        raise ValidationError("at least two treatment groups are required")
    xt = _design(cohort.covariates)
    d = xt.shape[1]
    onehot = np.zeros((cohort.n, j))
    pos = cohort.treatment >= 1
    onehot[np.flatnonzero(pos), cohort.treatment[pos] - 1] = 1.0

    gamma = np.zeros((j, d))
    loglik, score, probs, hess = _multinomial_quantities(gamma, xt, onehot)
    ridged = False
    iterations = 0
    gnorm = float(np.max(np.abs(score)))
    for _ in range(max_iter):
        if gnorm <= score_tol:
            break
        if np.linalg.cond(hess) > condition_limit:
            hess = hess + ridge * np.eye(j * d)
            if not ridged:
                warnings.warn(
                    "ill-conditioned propensity information matrix; "
                    f"adding ridge {ridge:g}",
                    stacklevel=2,
                )
            ridged = True
        step = np.linalg.solve(hess, score).reshape(j, d)
        accepted = False
        for _h in range(max_halvings + 1):
            cand = gamma + step
            ll_new, score_new, probs_new, hess_new = _multinomial_quantities(
                cand, xt, onehot
            )
            if np.isfinite(ll_new) and ll_new >= loglik - 1e-10 * (1.0 + abs(loglik)):
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            raise ConvergenceError(
                "step-halving failed to improve the multinomial likelihood"
            )
        gamma, loglik, score, probs, hess = cand, ll_new, score_new, probs_new, hess_new
        iterations += 1
        gnorm = float(np.max(np.abs(score)))
        if np.max(np.abs(gamma)) > separation_bound and gnorm > score_tol:
            raise ConvergenceError(
                f"propensity coefficients beyond |gamma| > {separation_bound:g}: "
                "quasi-separation of treatment groups"
            )
    if gnorm > score_tol:
        raise ConvergenceError(
            f"propensity model did not converge within {max_iter} iterations "
            f"(gradient inf-norm {gnorm:.3e})"
        )
    probs = probs.copy()
    probs.setflags(write=False)
    gamma = gamma.copy()
    gamma.setflags(write=False)
    return PropensityFit(
        gamma=gamma,
        probs=probs,
        design=xt,
        loglik=loglik,
        iterations=iterations,
        score_norm=gnorm,
        ridged=ridged,
    )


def multinomial_information(probs: np.ndarray, design: np.ndarray) -> np.ndarray:
    """Fisher information of the multinomial logit, shape (J(p+1), J(p+1)).

    Block (a, b) is design' diag(e_a (1{a=b} - e_b)) design in the
    gamma.ravel() parameter order.
    """
    probs = np.asarray(probs, dtype=np.float64)
    design = np.asarray(design, dtype=np.float64)
    j = probs.shape[1] - 1
    d = design.shape[1]
    e = probs[:, 1:]
    info = np.empty((j * d, j * d))
    for a in range(j):
        for b in range(a, j):
            c = e[:, a] * ((1.0 if a == b else 0.0) - e[:, b])
            block = design.T @ (c[:, None] * design)
            info[a * d : (a + 1) * d, b * d : (b + 1) * d] = block
            info[b * d : (b + 1) * d, a * d : (a + 1) * d] = block.T
    return info


@dataclass(frozen=True)
class WeightSet:
    """Balancing weights w_i = h(X_i) / e_{i, Z_i} for one scheme.

    `tilt` holds the per-unit numerator h(X_i): 1 for IPW, e_{i,j'} for
    ATT(j'), the harmonic-mean term (sum_k 1/e_{i,k})^-1 for OW, and
    e_{i,Z_i} for UNIT (so that UNIT weights are exactly one).
    """

    scheme: str
    weights: np.ndarray
    tilt: np.ndarray
    att_target: int | None = None

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def parse_scheme(text: str) -> tuple[str, str | None]:
    """Parse a scheme string such as 'ipw', 'ow', 'unit', or 'att:<label>'.

    Returns (scheme, att_target_label); the label is resolved against the
    cohort's treatment labels by the caller.
    """
    head, _, tail = text.strip().partition(":")
    head = head.lower()
    if head == "att":
        label = tail.strip()  # group labels stay case-sensitive
        if not label:
            raise ValidationError("att scheme needs a target group, e.g. att:1")
        return "att", label
    if head not in ("ipw", "ow", "unit") or tail:
        raise ValidationError(
            f"unknown weighting scheme {text.strip()!r}; expected one of "
            "ipw, ow, unit, att:<label>"
        )
    return head, None


def compute_weights(fit_or_probs, treatment, scheme: str, att_target=None) -> WeightSet:
    """Balancing weights for the requested target population.

    Parameters
    ----------
    fit_or_probs : PropensityFit or ndarray, shape (n, J+1)
    treatment : ndarray of group indices in 0..J
    scheme : {'ipw', 'att', 'ow', 'unit'}
    att_target : int, required for scheme 'att'
        Index of the treated group whose population is the target.
    """
    probs = fit_or_probs.probs if isinstance(fit_or_probs, PropensityFit) else fit_or_probs
    probs = np.asarray(probs, dtype=np.float64)
    treatment = np.asarray(treatment)
    n, g = probs.shape
    if treatment.shape != (n,):
        raise ValidationError("treatment must align with the propensity rows")
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValidationError("propensities must lie in [0, 1]")
    if np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-8:
        raise ValidationError("propensity rows must sum to one")
    if treatment.min() < 0 or treatment.max() >= g:
        raise ValidationError("treatment index outside the propensity columns")

    e_assigned = probs[np.arange(n), treatment]
    if np.any(e_assigned == 0.0):
        rows = np.flatnonzero(e_assigned == 0.0)
        raise ValidationError(
            f"assigned-group propensity is zero (infinite weight); "
            f"rows {rows[:10].tolist()}"
        )

    if scheme == "ipw":
        tilt = np.ones(n)
    elif scheme == "att":
        if att_target is None or not (0 <= int(att_target) < g):
            raise ValidationError("att scheme needs a valid target group index")
        tilt = probs[:, int(att_target)].copy()
    elif scheme == "ow":
        if np.any(probs == 0.0):
            raise ValidationError("overlap weights need all propensities positive")
        tilt = 1.0 / (1.0 / probs).sum(axis=1)
    elif scheme == "unit":
        tilt = e_assigned.copy()
    else:
        raise ValidationError(f"unknown weighting scheme {scheme!r}")

    weights = tilt / e_assigned
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0.0):
        raise ValidationError("weights must come out finite and positive")
    weights.setflags(write=False)
    tilt.setflags(write=False)
    return WeightSet(
        scheme=scheme,
        weights=weights,
        tilt=tilt,
        att_target=None if att_target is None else int(att_target),
    )


@dataclass(frozen=True)
class TrimResult:
    """Outcome of propensity trimming."""

    cohort: Cohort
    fit: PropensityFit
    threshold: float
    kept: np.ndarray
    removed: np.ndarray
    removed_by_group: np.ndarray
    refitted: bool


def trim(cohort: Cohort, fit: PropensityFit, threshold: float, refit=True) -> TrimResult:
    """Remove units whose smallest propensity falls below `threshold`.

    The symmetric rule drops unit i when min_j e_{i,j} < threshold.  With
    refit=True (default) the propensity model is re-estimated on the
    trimmed cohort.  threshold must lie in [0, 1/(J+1)): at 1/(J+1) or
    above even perfectly uniform propensities would be removed.
    """
    g = cohort.n_treatments + 1
    if not (0.0 <= threshold < 1.0 / g):
        raise ValidationError(
            f"trim threshold must lie in [0, {1.0 / g:.4g}) for {g} groups"
        )
    keep_mask = fit.probs.min(axis=1) >= threshold
    kept = np.flatnonzero(keep_mask)
    removed = np.flatnonzero(~keep_mask)
    removed_by_group = np.bincount(cohort.treatment[removed], minlength=g)
    if removed.size == 0:
        return TrimResult(cohort, fit, float(threshold), kept, removed,
                          removed_by_group, refitted=False)
    lost = np.flatnonzero(np.bincount(cohort.treatment[kept], minlength=g) == 0)
    if lost.size:
        names = [cohort.treatment_labels[k] for k in lost]
        raise ValidationError(
            f"trimming at {threshold:g} removed every unit of group(s) {names}"
        )
    trimmed = cohort.subset(kept)
    new_fit = fit_multinomial_logit(trimmed) if refit else fit
    return TrimResult(trimmed, new_fit, float(threshold), kept, removed,
                      removed_by_group, refitted=bool(refit))


def _weighted_moments(x, w):
    """Weighted mean and frequency-weight variance sum(w (x-m)^2)/(sum(w)-1)."""
    wsum = w.sum()
    m = (w * x).sum() / wsum
    if wsum <= 1.0:
        return m, np.nan
    return m, float((w * (x - m) ** 2).sum() / (wsum - 1.0))


def _smd(m1, v1, m2, v2):
    denom = np.sqrt((v1 + v2) / 2.0)
    if denom == 0.0 or not np.isfinite(denom):
        return 0.0 if m1 == m2 else np.nan
    return float((m1 - m2) / denom)


@dataclass(frozen=True)
class BalanceReport:
    """Standardized mean differences before and after weighting.

    smd arrays have one row per ordered group pair and one column per
    covariate; `pairs` lists the (j, j') index pairs, j < j'.
    """

    treatment_labels: tuple[str, ...]
    covariate_names: tuple[str, ...]
    pairs: tuple[tuple[int, int], ...]
    smd_unweighted: np.ndarray
    smd_weighted: np.ndarray
    means_weighted: np.ndarray
    vars_weighted: np.ndarray

    def max_abs_weighted(self) -> float:
        finite = self.smd_weighted[np.isfinite(self.smd_weighted)]
        return float(np.max(np.abs(finite))) if finite.size else 0.0

    def to_rows(self):
        """Flat rows (dicts) for CSV export, one per covariate x pair."""
        rows = []
        for r, (j, k) in enumerate(self.pairs):
            for c, name in enumerate(self.covariate_names):
                rows.append(
                    {
                        "covariate": name,
                        "group_a": self.treatment_labels[j],
                        "group_b": self.treatment_labels[k],
                        "smd_unweighted": self.smd_unweighted[r, c],
                        "smd_weighted": self.smd_weighted[r, c],
                    }
                )
        return rows


def balance_table(cohort: Cohort, weights: WeightSet, covariate_names=None) -> BalanceReport:
    """Pairwise standardized mean differences for every covariate.

    SMD(j, j') = (m_j - m_j') / sqrt((s2_j + s2_j') / 2) with weighted
    group means and frequency-weight variances sum(w (x-m)^2)/(sum(w)-1),
    so UNIT weights reproduce the unweighted sample statistics.  When both
    group variances vanish the SMD is 0 for equal means and NaN otherwise.
    """
    p = cohort.n_covariates
    g = cohort.n_treatments + 1
    if covariate_names is None:
        covariate_names = tuple(f"x{c + 1}" for c in range(p))
    covariate_names = tuple(covariate_names)
    if len(covariate_names) != p:
        raise ValidationError("one covariate name per column is required")
    if weights.n != cohort.n:
        raise ValidationError("weights must align with the cohort")

    w = weights.weights
    ones = np.ones(cohort.n)
    means_w = np.empty((g, p))
    vars_w = np.empty((g, p))
    means_u = np.empty((g, p))
    vars_u = np.empty((g, p))
    for grp in range(g):
        rows = cohort.treatment == grp
        for c in range(p):
            x = cohort.covariates[rows, c]
            means_w[grp, c], vars_w[grp, c] = _weighted_moments(x, w[rows])
            means_u[grp, c], vars_u[grp, c] = _weighted_moments(x, ones[rows])

    pairs = tuple((j, k) for j in range(g) for k in range(j + 1, g))
    smd_w = np.empty((len(pairs), p))
    smd_u = np.empty((len(pairs), p))
    for r, (j, k) in enumerate(pairs):
        for c in range(p):
            smd_w[r, c] = _smd(means_w[j, c], vars_w[j, c], means_w[k, c], vars_w[k, c])
            smd_u[r, c] = _smd(means_u[j, c], vars_u[j, c], means_u[k, c], vars_u[k, c])

    return BalanceReport(
        treatment_labels=cohort.treatment_labels,
        covariate_names=covariate_names,
        pairs=pairs,
        smd_unweighted=smd_u,
        smd_weighted=smd_w,
        means_weighted=means_w,
        vars_weighted=vars_w,
    )


def propensity_histogram(fit_or_probs, treatment, n_bins=30):
    """Binned propensity counts per (propensity component, treatment group).

    Returns (counts, edges): counts has shape (J+1, J+1, n_bins) indexed by
    [component j, group g, bin], with equal-width bins on [0, 1].
    """
    probs = fit_or_probs.probs if isinstance(fit_or_probs, PropensityFit) else fit_or_probs
    probs = np.asarray(probs, dtype=np.float64)
    treatment = np.asarray(treatment)
    g = probs.shape[1]
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    counts = np.zeros((g, g, n_bins), dtype=np.int64)
    for comp in range(g):
        for grp in range(g):
            counts[comp, grp], _ = np.histogram(
                probs[treatment == grp, comp], bins=edges
            )
    return counts, edges
