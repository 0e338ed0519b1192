"""Deliberately naive reference implementations used as test oracles."""
import numpy as np
from scipy.optimize import minimize

from deepsieve.datamodel import Dataset


def cox_loglik_direct(theta, W, time, event_weight, strata):
    """Weighted Breslow partial log-likelihood by explicit loops over subjects."""
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    for i in range(len(time)):
        if event_weight[i] == 0:
            continue
        denom = 0.0
        for l in range(len(time)):
            if strata[l] == strata[i] and time[l] >= time[i]:
                denom += np.exp(W[l] @ theta)
        total += event_weight[i] * (W[i] @ theta - np.log(denom))
    return total


def cox_score_direct(theta, W, time, event_weight, strata):
    theta = np.asarray(theta, dtype=float)
    score = np.zeros(W.shape[1])
    for i in range(len(time)):
        if event_weight[i] == 0:
            continue
        num = np.zeros(W.shape[1])
        denom = 0.0
        for l in range(len(time)):
            if strata[l] == strata[i] and time[l] >= time[i]:
                e = np.exp(W[l] @ theta)
                num += e * W[l]
                denom += e
        score += event_weight[i] * (W[i] - num / denom)
    return score


def competing_cox_direct(ds: Dataset, cause):
    """Cause-specific Cox fits for integer causes (-1 for non-events)."""
    W = ds.design
    out = []
    for j in range(int(cause.max()) + 1):
        w = ((cause == j) & ds.event).astype(float)

        def neg(th):
            return (-cox_loglik_direct(th, W, ds.time, w, ds.stratum),
                    -cox_score_direct(th, W, ds.time, w, ds.stratum))

        res = minimize(neg, np.zeros(W.shape[1]), jac=True, method="BFGS",
                       options={"gtol": 1e-11, "maxiter": 1000})
        out.append(res.x)
    return np.array(out)


def random_cox_instance(rng, n=30, p=2, strata=2, ties=True):
    arm = rng.integers(0, 2, n)
    x = rng.normal(size=(n, p - 1))
    time = rng.exponential(1.0, n) * np.exp(-0.4 * arm)
    if ties:
        time = np.round(time, 1) + 0.05
    event = rng.uniform(size=n) < 0.8
    cause = np.where(event, rng.integers(0, 2, n), -1)
    stratum = rng.integers(1, strata + 1, n)
    ds = Dataset.from_arrays(arm=arm, time=time, event=event, covariates=x, stratum=stratum)
    return ds, cause
