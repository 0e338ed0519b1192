"""Bootstrap covariance, confidence intervals and the two Wald tests."""
from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2, norm

from .datamodel import Dataset
from .deconvolve import endpoint_likelihood, fit_priors
from .errors import (BootstrapUnstable, DegenerateVariance, DomainError,
                     PseudoInverseWarning, SieveError, SieveWarning)
from .pipeline import PipelineConfig, PipelineResult, run_pipeline


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for bootstrap replicate ``index``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def resample_by_arm(dataset: Dataset, rng: np.random.Generator) -> np.ndarray:
    """Subjects drawn with replacement within each arm, keeping arm sizes."""
    parts = []
    for arm in (0, 1):
        rows = np.flatnonzero(dataset.arm == arm)
        if rows.size:
            parts.append(rng.choice(rows, size=rows.size, replace=True))
    return np.sort(np.concatenate(parts))


@dataclass
class BootstrapResult:
    betas: np.ndarray
    covariance: np.ndarray
    n_requested: int
    n_failed: int
    failures: list = field(default_factory=list)

    @property
    def unstable(self) -> bool:
        return self.n_failed > 0.2 * self.n_requested

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate"] + [f"beta_{j}" for j in range(self.betas.shape[1])])
            for i, row in enumerate(self.betas):
                w.writerow([i] + [repr(float(v)) for v in row])


def _replicate(dataset: Dataset, config: PipelineConfig, likelihood, seed: int, b: int):
    idx = resample_by_arm(dataset, replicate_rng(seed, b))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SieveWarning)
        try:
            boot = dataset.subset(idx)
            lik_b = likelihood.take(idx) if likelihood is not None else None
            priors = None
            if config.estimator in ("base", "ipw", "aipw"):
                # fitting on the original rows with multiplicities is the same
                # objective as fitting on the duplicated rows
                counts = np.bincount(idx, minlength=dataset.n).astype(float)
                priors = fit_priors(dataset, config.conditioning, config.prior, config.grid,
                                    likelihood=likelihood, weights=counts)
            res = run_pipeline(boot, config, likelihood=lik_b, priors=priors)
        except SieveError as exc:
            return None, f"{type(exc).__name__}: {exc}"
    if not res.fit.ok:
        reasons = [t.error or "separation" for t in res.fit.types if not t.ok]
        return None, "; ".join(reasons)
    return res.fit.beta, None


def _chunk(args):
    dataset, config, likelihood, seed, indices = args
    return [_replicate(dataset, config, likelihood, seed, b) for b in indices]


def bootstrap(dataset: Dataset, config: PipelineConfig, B: int = 300, seed: int = 0,
              n_jobs: int = 1, likelihood=None) -> BootstrapResult:
    """Arm-stratified nonparametric bootstrap of the whole pipeline.

    Replicate ``b`` draws from its own stream keyed by ``(seed, b)``, so the
    result does not depend on ``n_jobs``.  Failed replicates are dropped and
    counted; more than 20% failures raises a :class:`BootstrapUnstable`
    warning.
    """
    if B < 50:
        raise DomainError("need at least 50 bootstrap replicates")
    if likelihood is None and config.estimator != "naive":
        likelihood = endpoint_likelihood(dataset, config.grid)
    if n_jobs == 1:
        outcomes = [_replicate(dataset, config, likelihood, seed, b) for b in range(B)]
    else:
        chunks = np.array_split(np.arange(B), n_jobs)
        with ProcessPoolExecutor(n_jobs) as pool:
            parts = pool.map(_chunk, [(dataset, config, likelihood, seed, c) for c in chunks])
            outcomes = [o for part in parts for o in part]
    betas = [o[0] for o in outcomes if o[0] is not None]
    failures = [(b, o[1]) for b, o in enumerate(outcomes) if o[0] is None]
    n_types = config.thresholds.n_bins
    betas = np.array(betas).reshape(-1, n_types)
    if len(betas) >= 2:
        cov = np.atleast_2d(np.cov(betas, rowvar=False, ddof=1))
        cov = 0.5 * (cov + cov.T)
    else:
        cov = np.full((n_types, n_types), np.nan)
    result = BootstrapResult(betas, cov, B, len(failures), failures)
    if result.unstable:
        warnings.warn(BootstrapUnstable(f"{len(failures)} of {B} bootstrap replicates failed"),
                      stacklevel=2)
    return result


def wald_joint_test(beta, cov):
    """Chi-square test that all type-specific arm effects are zero."""
    beta = np.asarray(beta, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if np.linalg.cond(cov) > 1e12:
        warnings.warn(PseudoInverseWarning("covariance is singular; using pseudo-inverse"),
                      stacklevel=2)
        inv = np.linalg.pinv(cov)
    else:
        inv = np.linalg.inv(cov)
    stat = float(beta @ inv @ beta)
    return stat, float(chi2.sf(stat, df=beta.size))


def sieve_test(beta, cov, lower: int = 0, upper: int = 1):
    """Two-sided z-test that the arm effects of two types are equal."""
    beta = np.asarray(beta, dtype=float)
    cov = np.asarray(cov, dtype=float)
    var = cov[upper, upper] + cov[lower, lower] - 2 * cov[lower, upper]
    if not var > 0:
        raise DegenerateVariance(f"variance of the contrast is {var}")
    z = float((beta[upper] - beta[lower]) / np.sqrt(var))
    return z, float(2 * norm.sf(abs(z)))


def wald_interval(beta: float, se: float, level: float = 0.95):
    """VE interval from a Wald interval on the log hazard ratio."""
    zq = norm.ppf(0.5 + level / 2)
    return 1 - np.exp(beta + zq * se), 1 - np.exp(beta - zq * se)


def ve_intervals(boot: BootstrapResult, beta, level: float = 0.95) -> list:
    """Wald and percentile VE intervals for each type."""
    beta = np.asarray(beta, dtype=float)
    out = []
    alpha = 1 - level
    for j in range(beta.size):
        wl, wu = wald_interval(beta[j], np.sqrt(boot.covariance[j, j]), level)
        ve_reps = 1 - np.exp(boot.betas[:, j])
        if ve_reps.size:
            pl, pu = np.quantile(ve_reps, [alpha / 2, 1 - alpha / 2])
        else:
            pl = pu = np.nan
        out.append({"wald": (float(wl), float(wu)), "percentile": (float(pl), float(pu))})
    return out


@dataclass
class InferenceReport:
    beta: np.ndarray
    ve: np.ndarray
    covariance: np.ndarray
    intervals: list
    joint_stat: float
    joint_p: float
    sieve_z: float
    sieve_p: float
    level: float
    n_boot: int
    n_failed: int
    estimator: str = "base"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "level": self.level,
            "beta": [float(b) for b in self.beta],
            "ve": [float(v) for v in self.ve],
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "intervals": [{"type": j, "wald": list(ci["wald"]), "percentile": list(ci["percentile"])}
                          for j, ci in enumerate(self.intervals)],
            "joint_test": {"statistic": self.joint_stat, "p": self.joint_p},
            "sieve_test": {"z": self.sieve_z, "p": self.sieve_p},
            "bootstrap": {"requested": self.n_boot, "failed": self.n_failed},
            **self.extra,
        }

    def write_json(self, path, timestamp: str | None = None) -> None:
        payload = self.to_dict()
        if timestamp is not None:
            payload["timestamp"] = timestamp
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


def build_report(point: PipelineResult, boot: BootstrapResult, level: float = 0.95,
                 estimator: str = "base") -> InferenceReport:
    beta = point.fit.beta
    joint = sieve = (np.nan, np.nan)
    if np.all(np.isfinite(boot.covariance)) and np.all(np.isfinite(beta)):
        joint = wald_joint_test(beta, boot.covariance)
        if beta.size >= 2:
            try:
                sieve = sieve_test(beta, boot.covariance, 0, beta.size - 1)
            except DegenerateVariance:
                pass
    return InferenceReport(beta=beta, ve=1 - np.exp(beta), covariance=boot.covariance,
                           intervals=ve_intervals(boot, beta, level), joint_stat=joint[0],
                           joint_p=joint[1], sieve_z=sieve[0], sieve_p=sieve[1], level=level,
                           n_boot=boot.n_requested, n_failed=boot.n_failed, estimator=estimator)


def analyze(dataset: Dataset, config: PipelineConfig, B: int = 300, seed: int = 0,
            level: float = 0.95, n_jobs: int = 1):
    """Point estimate plus bootstrap inference; returns (point, boot, report)."""
    likelihood = None
    if config.estimator != "naive":
        likelihood = endpoint_likelihood(dataset, config.grid)
    point = run_pipeline(dataset, config, likelihood=likelihood)
    boot = bootstrap(dataset, config, B, seed, n_jobs, likelihood=likelihood)
    return point, boot, build_report(point, boot, level, config.estimator)
