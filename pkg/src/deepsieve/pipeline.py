"""One full estimation pass: priors -> classification -> weighted Cox fits."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .classify import ClassificationTable, classify_dataset
from .coxengine import CompetingFit, CoxOptions, RiskSets, fit_competing
from .datamodel import Dataset, ThresholdSpec, naive_bins
from .deconvolve import (BinomialLikelihood, ConditioningSpec, PriorOptions, PriorSet,
                         SupportGrid, fit_priors)
from .errors import ConfigError, SieveWarning
from .missingness import (MissingnessModel, OutcomeRegression, aipw_weights,
                          fit_missingness, fit_outcome_regression, ipw_weights)

ESTIMATORS = ("base", "ipw", "aipw", "naive")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything that determines an estimate.

    ``estimator`` is ``base`` (complete marks, unsequenced endpoints only in
    risk sets), ``ipw``, ``aipw``, or ``naive`` (empirical labels K/M as
    exact causes, no classification model).
    """

    thresholds: ThresholdSpec = field(default_factory=lambda: ThresholdSpec.binary(0.01))
    prior: PriorOptions = field(default_factory=PriorOptions)
    conditioning: ConditioningSpec = field(default_factory=ConditioningSpec)
    cox: CoxOptions = field(default_factory=CoxOptions)
    estimator: str = "base"
    positivity_floor: float = 0.01

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")

    @property
    def grid(self) -> SupportGrid:
        return SupportGrid.midpoints(self.prior.grid_size)


@dataclass
class PipelineResult:
    fit: CompetingFit
    cause_weights: np.ndarray
    priors: PriorSet | None = None
    table: ClassificationTable | None = None
    missingness: MissingnessModel | None = None
    outcome: OutcomeRegression | None = None
    warnings: list = field(default_factory=list)


def naive_cause_weights(dataset: Dataset, thresholds: ThresholdSpec) -> np.ndarray:
    """One-hot weights from the empirical bin of K/M (zero rows when M is 0)."""
    w = np.zeros((dataset.n, thresholds.n_bins))
    has = dataset.has_marks
    bins = naive_bins(dataset.k, dataset.m, thresholds)
    rows = np.flatnonzero(has & (bins >= 0))
    w[rows, bins[rows]] = 1.0
    return w


def run_pipeline(dataset: Dataset, config: PipelineConfig,
                 likelihood: BinomialLikelihood | None = None,
                 priors: PriorSet | None = None) -> PipelineResult:
    """Estimate type-specific coefficients for one dataset.

    ``likelihood`` (rows aligned with subjects) and ``priors`` may be passed
    in to skip recomputation; the bootstrap uses both.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SieveWarning)
        result = _run(dataset, config, likelihood, priors)
    result.warnings = [w.message for w in caught if issubclass(w.category, SieveWarning)]
    for w in caught:
        if not issubclass(w.category, SieveWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return result


def _run(dataset, config, likelihood, priors):
    risk = RiskSets(dataset.time, dataset.stratum)
    if config.estimator == "naive":
        cw = naive_cause_weights(dataset, config.thresholds)
        return PipelineResult(fit_competing(dataset, cw, config.cox, risk), cw)

    if priors is None:
        priors = fit_priors(dataset, config.conditioning, config.prior, config.grid,
                            likelihood=likelihood)
    table = classify_dataset(dataset, priors, config.conditioning, config.thresholds,
                             likelihood=likelihood)
    cw = table.weights(dataset.n)
    model = outcome = None
    if config.estimator == "ipw":
        model = fit_missingness(dataset, config.positivity_floor)
        cw = ipw_weights(dataset, model, cw)
    elif config.estimator == "aipw":
        model = fit_missingness(dataset, config.positivity_floor)
        outcome = fit_outcome_regression(dataset, cw)
        cw = aipw_weights(dataset, model, outcome, cw)
    fit = fit_competing(dataset, cw, config.cox, risk)
    return PipelineResult(fit, cw, priors, table, model, outcome)
