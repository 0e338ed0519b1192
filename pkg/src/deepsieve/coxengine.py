"""Stratified cause-specific Cox regression with fractional cause weights.

Each failure type ``j`` is fitted separately by solving the weighted score

    U_j(theta) = sum_i w_ij * (W_i - Wbar_{S_i}(T_i; theta)),

where ``w_ij`` is the probability that event ``i`` is of type ``j`` and the
risk-set mean ``Wbar`` runs over everyone in the stratum still at risk
(``T_l >= T_i``).  Tied event times share one risk set (Breslow).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Dataset
from .errors import (NoEventsForType, SeparationWarning, SingularInformation,
                     SmallEventMassWarning)


@dataclass(frozen=True)
class CoxOptions:
    center: bool = True
    tol: float = 1e-6
    loglik_tol: float = 1e-9
    max_iter: int = 100
    separation_bound: float = 50.0


class RiskSets:
    """Sort order and risk-set boundaries for (time, stratum) data."""

    def __init__(self, time, strata=None):
        time = np.asarray(time, dtype=float)
        strata = np.zeros(len(time), dtype=np.int64) if strata is None else np.asarray(strata)
        order = np.lexsort((-time, strata))
        ts, ss = time[order], strata[order]
        n = len(time)
        new_group = np.ones(n, dtype=bool)
        new_group[1:] = (ts[1:] != ts[:-1]) | (ss[1:] != ss[:-1])
        new_stratum = np.ones(n, dtype=bool)
        new_stratum[1:] = ss[1:] != ss[:-1]
        pos = np.arange(n)
        # last position of each tie group
        group_id = np.cumsum(new_group) - 1
        group_last = np.r_[pos[new_group][1:] - 1, n - 1]
        self.order = order
        self.tie_end = group_last[group_id]
        self.stratum_start = np.maximum.accumulate(np.where(new_stratum, pos, 0))
        self.n = n


def _risk_sums(values_sorted, risk: RiskSets, at):
    """Sum of ``values_sorted`` over the risk set of each sorted position in ``at``."""
    c = np.cumsum(values_sorted, axis=0)
    c = np.concatenate([np.zeros((1,) + c.shape[1:]), c])
    return c[risk.tie_end[at] + 1] - c[risk.stratum_start[at]]


def score_parts(theta, W, risk: RiskSets, weights, need_info=True):
    """Weighted score, information matrix and log partial likelihood."""
    theta = np.asarray(theta, dtype=float)
    eta = W @ theta
    shift = eta.max()
    e = np.exp(eta - shift)
    o = risk.order
    ws = weights[o]
    at = np.flatnonzero(ws != 0)
    es, Ws = e[o], W[o]
    s0 = _risk_sums(es, risk, at)
    s1 = _risk_sums(es[:, None] * Ws, risk, at)
    wbar = s1 / s0[:, None]
    wa = ws[at]
    score = wa @ (Ws[at] - wbar)
    loglik = float(wa @ (eta[o][at] - np.log(s0) - shift))
    info = None
    if need_info:
        s2 = _risk_sums(es[:, None, None] * Ws[:, :, None] * Ws[:, None, :], risk, at)
        cov = s2 / s0[:, None, None] - wbar[:, :, None] * wbar[:, None, :]
        info = np.tensordot(wa, cov, axes=1)
    return score, info, loglik


def weighted_score(theta, dataset: Dataset, weights, center: bool = False):
    """Score vector, information matrix and log partial likelihood of one type.

    ``weights`` holds one cause weight per subject; entries for non-events
    are ignored.
    """
    w = np.asarray(weights, dtype=float) * dataset.event
    if not np.any(w != 0):
        raise NoEventsForType("all cause weights are zero")
    W = dataset.design
    if center:
        W = W - W.mean(axis=0)
    return score_parts(theta, W, RiskSets(dataset.time, dataset.stratum), w)


@dataclass
class TypeFit:
    theta: np.ndarray
    loglik: float
    score_norm: float
    iterations: int
    converged: bool
    event_mass: float
    information: np.ndarray | None = None
    separated: bool = False
    error: str | None = None

    @property
    def beta(self) -> float:
        return float(self.theta[0])

    @property
    def ve(self) -> float:
        return float(1.0 - np.exp(self.theta[0]))

    @property
    def ok(self) -> bool:
        return self.error is None and not self.separated

    def covariance(self) -> np.ndarray:
        """Model-based covariance (inverse information)."""
        return np.linalg.inv(self.information)


def _solve(info, score):
    try:
        cond = np.linalg.cond(info)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularInformation(f"information matrix is singular (condition {cond:.3g})")
    return np.linalg.solve(info, score)


def fit_weighted_cox(W, risk: RiskSets, weights, options: CoxOptions | None = None) -> TypeFit:
    """Newton-Raphson with step halving, started at zero."""
    options = options or CoxOptions()
    weights = np.asarray(weights, dtype=float)
    mass = float(weights.sum())
    if not np.any(weights != 0):
        raise NoEventsForType("all cause weights are zero")
    p = W.shape[1]
    if options.center:
        W = W - W.mean(axis=0)
    if mass < p + 1:
        warnings.warn(SmallEventMassWarning(
            f"event mass {mass:.3g} is below the number of coefficients + 1"), stacklevel=2)
    theta = np.zeros(p)
    score, info, ll = score_parts(theta, W, risk, weights)
    converged = separated = False
    it = 0
    ll_change = np.inf
    for it in range(1, options.max_iter + 1):
        if np.max(np.abs(score)) < options.tol and ll_change < options.loglik_tol:
            converged = True
            it -= 1
            break
        delta = _solve(info, score)
        step = 1.0
        for _ in range(40):
            cand = theta + step * delta
            s_new, i_new, ll_new = score_parts(cand, W, risk, weights)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            step *= 0.5
        ll_change = abs(ll_new - ll) / max(1.0, abs(ll))
        theta, score, info, ll = cand, s_new, i_new, ll_new
        if np.max(np.abs(theta)) > options.separation_bound:
            separated = True
            break
    else:
        converged = bool(np.max(np.abs(score)) < options.tol and ll_change < options.loglik_tol)
    if not separated and np.max(np.abs(theta)) > 10:
        # the score of a monotone likelihood dies off exponentially, so Newton
        # can stop well inside the bound; moving further out must not help
        far = np.where(np.abs(theta) > 10, 1.5 * theta, theta)
        ll_far = score_parts(far, W, risk, weights, need_info=False)[2]
        separated = bool(ll_far >= ll - 1e-12 * max(1.0, abs(ll)))
    if separated:
        warnings.warn(SeparationWarning(
            "partial likelihood is monotone in a coefficient (separation)"), stacklevel=2)
    return TypeFit(theta=theta, loglik=ll, score_norm=float(np.max(np.abs(score))),
                   iterations=it, converged=converged, event_mass=mass, information=info,
                   separated=separated)


def fit_type(dataset: Dataset, weights, options: CoxOptions | None = None) -> TypeFit:
    w = np.asarray(weights, dtype=float) * dataset.event
    return fit_weighted_cox(dataset.design, RiskSets(dataset.time, dataset.stratum), w, options)


@dataclass
class CompetingFit:
    types: list
    covariate_names: tuple = ()

    @property
    def beta(self) -> np.ndarray:
        return np.array([t.beta if t.error is None else np.nan for t in self.types])

    @property
    def ve(self) -> np.ndarray:
        return 1.0 - np.exp(self.beta)

    @property
    def ok(self) -> bool:
        return all(t.ok for t in self.types)

    def to_dict(self) -> dict:
        out = []
        for j, t in enumerate(self.types):
            out.append({
                "type": j,
                "coefficients": dict(zip(("arm",) + tuple(self.covariate_names),
                                         [float(v) for v in t.theta])),
                "ve": t.ve if t.error is None else None,
                "score_norm": t.score_norm, "iterations": t.iterations,
                "converged": t.converged, "separated": t.separated,
                "loglik": t.loglik, "event_mass": t.event_mass, "error": t.error,
            })
        return {"types": out}

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def fit_competing(dataset: Dataset, cause_weights, options: CoxOptions | None = None,
                  risk: RiskSets | None = None) -> CompetingFit:
    """Fit every failure type; a failure in one type is recorded, not raised."""
    cause_weights = np.asarray(cause_weights, dtype=float)
    if cause_weights.ndim != 2 or cause_weights.shape[0] != dataset.n:
        raise ValueError("cause weights must be an (n, types) array")
    W = dataset.design
    risk = risk or RiskSets(dataset.time, dataset.stratum)
    fits = []
    for j in range(cause_weights.shape[1]):
        w = cause_weights[:, j] * dataset.event
        try:
            fits.append(fit_weighted_cox(W, risk, w, options))
        except (NoEventsForType, SingularInformation) as exc:
            fits.append(TypeFit(theta=np.full(W.shape[1], np.nan), loglik=np.nan,
                                score_norm=np.nan, iterations=0, converged=False,
                                event_mass=float(w.sum()), error=f"{type(exc).__name__}: {exc}"))
    return CompetingFit(fits, dataset.covariate_names)
