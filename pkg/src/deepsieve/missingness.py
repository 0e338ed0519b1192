"""Inverse-probability-weighted and augmented estimators for endpoints whose
marks were not sequenced.

Both estimators reuse the weighted Cox solver: the augmented score

    sum_i [R_i/pi_i * nu_ij - (R_i/pi_i - 1) * m_ij] * (W_i - Wbar_j(T_i))

is a Cox score whose event weights are the bracketed terms, so the
augmentation is carried as a change of event weight.  Unsequenced endpoints
always stay in the risk sets.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .coxengine import CompetingFit, CoxOptions, fit_competing
from .datamodel import Dataset
from .errors import DegenerateMissingness, FlooredWeightsWarning, SeparationWarning


def nuisance_design(dataset: Dataset) -> np.ndarray:
    """Intercept, arm, covariates, stratum dummies, auxiliaries and time."""
    cols = [np.ones(dataset.n), dataset.arm.astype(float)]
    cols += list(dataset.covariates.T)
    for s in range(1, dataset.L):
        cols.append((dataset.stratum == s).astype(float))
    cols += list(dataset.aux.T)
    cols.append(dataset.time)
    return np.column_stack(cols)


def logistic_fit(X, y, max_iter=100, tol=1e-10, bound=30.0):
    """Logistic regression by IRLS; ``y`` may be fractional.

    Returns ``(coef, separated)``.  Separation is declared when a
    coefficient passes ``bound`` and iteration stops there.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    shift = X.mean(axis=0)
    shift[0] = 0.0
    Xs = (X - shift) / scale
    Xs[:, 0] = 1.0
    beta = np.zeros(X.shape[1])
    separated = False
    for _ in range(max_iter):
        mu = expit(Xs @ beta)
        w = mu * (1 - mu)
        grad = Xs.T @ (y - mu)
        H = (Xs * w[:, None]).T @ Xs
        step = np.linalg.lstsq(H + 1e-10 * np.eye(len(beta)), grad, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(beta)) > bound:
            separated = True
            break
        if np.max(np.abs(step)) < tol:
            break
    coef = beta / scale
    coef[0] = beta[0] - np.sum(beta[1:] * shift[1:] / scale[1:])
    return coef, separated


@dataclass
class MissingnessModel:
    """Fitted P(sequenced | W, S, A, T, endpoint); ``pi`` is 1 for non-endpoints."""

    coef: np.ndarray
    pi: np.ndarray
    floor: float
    n_floored: int
    separated: bool = False
    degenerate: bool = False

    def diagnostics(self) -> dict:
        return {"coef": [float(c) for c in self.coef], "floor": self.floor,
                "n_floored": self.n_floored, "separated": self.separated,
                "degenerate": self.degenerate}


def fit_missingness(dataset: Dataset, floor: float = 0.01, design=None) -> MissingnessModel:
    """Logistic model for the sequencing indicator among endpoints.

    Raises :class:`DegenerateMissingness` when no endpoint was sequenced.
    When every endpoint was sequenced all probabilities are 1.
    """
    X = nuisance_design(dataset) if design is None else np.asarray(design, dtype=float)
    ev = dataset.event
    r = dataset.sequenced[ev].astype(float)
    pi = np.ones(dataset.n)
    if r.size == 0 or r.sum() == 0:
        raise DegenerateMissingness("no sequenced endpoints")
    if r.min() == 1:
        return MissingnessModel(np.zeros(X.shape[1]), pi, floor, 0, degenerate=True)
    coef, separated = logistic_fit(X[ev], r)
    if separated:
        warnings.warn(SeparationWarning("missingness model is separated"), stacklevel=2)
    raw = expit(X[ev] @ coef)
    n_floored = int((raw < floor).sum())
    if n_floored:
        warnings.warn(FlooredWeightsWarning(
            f"{n_floored} sequencing probabilities floored at {floor}"), stacklevel=2)
    pi[ev] = np.maximum(raw, floor)
    return MissingnessModel(coef, pi, floor, n_floored, separated)


@dataclass
class OutcomeRegression:
    """Predicted type probabilities m_j for every endpoint (zero rows elsewhere)."""

    coef: np.ndarray
    m: np.ndarray


def fit_outcome_regression(dataset: Dataset, cause_weights, design=None) -> OutcomeRegression:
    """Regress each type's classification probability on (W, S, A, T) among
    sequenced endpoints, predict for all endpoints, clamp and renormalize."""
    X = nuisance_design(dataset) if design is None else np.asarray(design, dtype=float)
    nu = np.asarray(cause_weights, dtype=float)
    fit_rows = dataset.has_marks
    ev = dataset.event
    coefs, preds = [], []
    for j in range(nu.shape[1]):
        coef, _ = logistic_fit(X[fit_rows], nu[fit_rows, j])
        coefs.append(coef)
        preds.append(expit(X[ev] @ coef))
    pred = np.clip(np.column_stack(preds), 0.0, 1.0)
    pred /= pred.sum(axis=1, keepdims=True)
    m = np.zeros_like(nu)
    m[ev] = pred
    return OutcomeRegression(np.array(coefs), m)


def ipw_weights(dataset: Dataset, model: MissingnessModel, cause_weights) -> np.ndarray:
    r = dataset.has_marks.astype(float)
    return np.asarray(cause_weights, dtype=float) * (r / model.pi)[:, None]


def aipw_weights(dataset: Dataset, model: MissingnessModel, outcome: OutcomeRegression,
                 cause_weights) -> np.ndarray:
    r = dataset.has_marks.astype(float)
    ratio = (r / model.pi)[:, None]
    w = ratio * np.asarray(cause_weights, dtype=float) - (ratio - 1.0) * outcome.m
    return w * dataset.event[:, None]


def fit_ipw(dataset: Dataset, model: MissingnessModel, cause_weights,
            options: CoxOptions | None = None) -> CompetingFit:
    return fit_competing(dataset, ipw_weights(dataset, model, cause_weights), options)


def fit_aipw(dataset: Dataset, model: MissingnessModel, outcome: OutcomeRegression,
             cause_weights, options: CoxOptions | None = None) -> CompetingFit:
    return fit_competing(dataset, aipw_weights(dataset, model, outcome, cause_weights), options)
