"""Weighted Cox partial-likelihood engine shared by the fitting routines.

Conventions, used everywhere: risk set at an event time Y_i is
{l : Y_l >= Y_i} (ties included), tied event times are handled Breslow
style, and all sums accumulate in ascending-time order with at-risk
totals accumulated from the latest tie block backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import ConvergenceError, ValidationError

__all__ = ["CoxProblem", "CoxFitCore", "fit_cox"]


_REVCUM_BLOCK = 4096


def _revcum(x: np.ndarray) -> np.ndarray:
    """revcum(x)[k] = x[k] + x[k+1] + ... accumulated from the end.

    Long inputs use a two-level blocked accumulation: per-prefix rounding
    error is then O(block + n/block) ulps instead of O(n), which matters
    for the multi-million-record stacked fits.
    """
    n = x.shape[0]
    if n <= _REVCUM_BLOCK:
        return np.cumsum(x[::-1])[::-1]
    b = _REVCUM_BLOCK
    nb = -(-n // b)
    rev = np.zeros(nb * b, dtype=np.float64)
    rev[:n] = x[::-1]
    within = np.cumsum(rev.reshape(nb, b), axis=1)
    offsets = np.concatenate([[0.0], np.cumsum(within[:-1, -1])])
    return (within + offsets[:, None]).ravel()[:n][::-1]


class CoxProblem:
    """Preprocessed weighted Cox problem: sorted arrays and tie blocks."""

    def __init__(self, time, event, design, weights):
        time = np.asarray(time, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        design = np.asarray(design, dtype=np.float64)
        if design.ndim != 2 or design.shape[0] != time.shape[0]:
            raise ValidationError("design matrix rows must match the cohort size")
        if weights.shape != time.shape:
            raise ValidationError("weights must be one per unit")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValidationError("weights must be finite and nonnegative")
        order = np.argsort(time, kind="stable")
        self.order = order
        self.t = time[order]
        self.d = np.asarray(event)[order].astype(bool)
        self.Q = design[order]
        self.w = weights[order]
        self.q = design.shape[1]
        self.n = time.shape[0]
        # first sorted position of each tie block: risk set of a record at
        # position k is positions starts[k]..n-1
        self.starts = np.searchsorted(self.t, self.t, side="left")
        ev = np.flatnonzero(self.d & (self.w > 0))
        self.ev = ev
        self.ev_starts = self.starts[ev]
        self.w_ev = self.w[ev]
        self.n_events = int(np.count_nonzero(self.d))

    def quantities(self, beta, need_info=True):
        """Weighted partial log-likelihood, score, and information at beta.

        Returns (loglik, score, info); info is None unless requested.
        The log-likelihood uses the unnormalized risk-set totals
        sum_{l in R} w_l exp(eta_l).
        """
        beta = np.asarray(beta, dtype=np.float64)
        eta = self.Q @ beta
        # shift before exponentiating; all downstream uses are ratio- or
        # log-consistent so the shift cancels exactly in score and info
        shift = np.max(eta) if eta.size else 0.0
        if not np.isfinite(shift):
            return -np.inf, np.full(self.q, np.nan), None
        r = self.w * np.exp(eta - shift)
        s0 = _revcum(r)[self.ev_starts]
        eta_ev = eta[self.ev]
        # s0 can underflow to 0 for wild step-halving candidates; the
        # resulting non-finite loglik is rejected by the caller
        with np.errstate(divide="ignore", invalid="ignore"):
            loglik = float(np.sum(self.w_ev * (eta_ev - shift - np.log(s0))))
            dbar = np.empty((self.ev.size, self.q))
            for a in range(self.q):
                dbar[:, a] = _revcum(r * self.Q[:, a])[self.ev_starts] / s0
            score = self.w_ev @ (self.Q[self.ev] - dbar)
            if not need_info:
                return loglik, score, None
            info = np.empty((self.q, self.q))
            for a in range(self.q):
                ra = r * self.Q[:, a]
                for b in range(a, self.q):
                    s2ab = _revcum(ra * self.Q[:, b])[self.ev_starts] / s0
                    info[a, b] = info[b, a] = float(
                        np.sum(self.w_ev * (s2ab - dbar[:, a] * dbar[:, b]))
                    )
        return loglik, score, info


@dataclass(frozen=True)
class CoxFitCore:
    """Converged Newton solution on the raw (unnormalized) weight scale."""

    beta: np.ndarray
    loglik: float
    score: np.ndarray
    info: np.ndarray
    iterations: int
    score_norm: float  # gradient inf-norm on the mean-one weight scale


def fit_cox(
    time,
    event,
    design,
    weights,
    *,
    score_tol=1e-9,
    max_iter=50,
    max_halvings=30,
    separation_bound=20.0,
) -> CoxFitCore:
    """Maximize the weighted Cox partial likelihood by damped Newton.

    Weights are rescaled to mean one internally, which keeps the gradient
    tolerance meaningful across weight scales and makes the iterate
    sequence invariant to positive rescaling of the weights; reported
    loglik/score/info are transformed back to the raw weight scale.

    Raises
    ------
    ConvergenceError
        On a singular information matrix, failed step-halving, iteration
        exhaustion, or divergence (any |beta| beyond `separation_bound`
        while the gradient is still above tolerance), which indicates a
        monotone likelihood / separation in the survival ordering.
    """
    weights = np.asarray(weights, dtype=np.float64)
    wbar = float(weights.mean()) if weights.size else 0.0
    if not np.isfinite(wbar) or wbar <= 0.0:
        raise ValidationError("weights must have a positive, finite mean")
    prob = CoxProblem(time, event, design, weights / wbar)
    if prob.n_events == 0:
        raise ValidationError("no observed events in the data")
    if prob.ev.size == 0:
        raise ValidationError("all events carry zero weight")

    # attainable float64 accuracy of the summed score scales with the
    # weighted event mass; below this floor Newton only chases rounding
    # noise (only reachable for cohorts in the millions of records)
    w_ev_total = float(np.sum(prob.w_ev))
    tol = max(score_tol, 1024.0 * np.finfo(np.float64).eps * w_ev_total)

    beta = np.zeros(prob.q)
    loglik, score, info = prob.quantities(beta)
    iterations = 0
    converged = False
    for _ in range(max_iter):
        gnorm = float(np.max(np.abs(score)))
        if gnorm <= tol:
            converged = True
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise ConvergenceError(
                "singular partial-likelihood information matrix"
            ) from None
        accepted = False
        for _h in range(max_halvings + 1):
            cand = beta + step
            ll_new, score_new, info_new = prob.quantities(cand)
            if np.isfinite(ll_new) and ll_new >= loglik - 1e-10 * (1.0 + abs(loglik)):
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            raise ConvergenceError(
                "step-halving failed to improve the partial likelihood"
            )
        beta, loglik, score, info = cand, ll_new, score_new, info_new
        iterations += 1
        if np.max(np.abs(beta)) > separation_bound and np.max(np.abs(score)) > tol:
            raise ConvergenceError(
                "coefficients diverged beyond |beta| > "
                f"{separation_bound:g}: monotone likelihood (separation in "
                "the survival ordering)"
            )
    else:
        gnorm = float(np.max(np.abs(score)))
        converged = gnorm <= tol
    if not converged:
        raise ConvergenceError(
            f"no convergence within {max_iter} Newton iterations "
            f"(gradient inf-norm {gnorm:.3e})"
        )

    # exact raw-scale transforms: score and info are degree-1 homogeneous
    # in the weights; the loglik picks up -log(wbar) per weighted event
    return CoxFitCore(
        beta=beta,
        loglik=wbar * (loglik - np.log(wbar) * w_ev_total),
        score=wbar * score,
        info=wbar * info,
        iterations=iterations,
        score_norm=gnorm,
    )
