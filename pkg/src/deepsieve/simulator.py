"""Trial generators with a latent within-host mismatch proportion, and a
study runner comparing the classification-corrected estimator with the
naive-label one.

Failure times are exponential with type-specific rates

    gamma_0 = 0.01 * exp(beta_0 * Z - 0.105 * X)
    gamma_1 = 0.03 * exp(beta_1 * Z - 0.223 * X)

and follow-up ends at t = 5.  Type-0 endpoints draw Q from Beta(0.5, b)
truncated to [0, q0), type-1 endpoints from the same Beta truncated to
[q0, 1]; K ~ Binomial(M, Q) with depth M drawn independently of everything
else.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import betainc, expit

from .coxengine import CoxOptions, fit_competing
from .datamodel import Dataset, ThresholdSpec
from .deconvolve import ConditioningSpec, PriorOptions, endpoint_likelihood
from .errors import ConfigError, ImpossibleTruncation, SieveError
from .inference import bootstrap, sieve_test, wald_interval, wald_joint_test
from .missingness import (MissingnessModel, OutcomeRegression, aipw_weights, fit_missingness,
                          fit_outcome_regression, ipw_weights, logistic_fit)
from .pipeline import PipelineConfig, run_pipeline

SETTINGS = {
    "a": (0.0, 0.0, 5.7),
    "b": (np.log(0.5), np.log(0.5), 5.7),
    "c": (np.log(0.5), np.log(0.95), 3.8),
}
BASE_RATES = (0.01, 0.03)
X_EFFECTS = (-0.105, -0.223)
FOLLOW_UP = 5.0
SHAPE_A = 0.5
# per-arm probability that an endpoint has a shallow sample (depth 1..15)
SHALLOW = {1: None, 2: (0.4, 0.4), 3: (0.2, 0.4)}
ESTIMATOR_NAMES = ("corrected", "uncorrected")


@dataclass(frozen=True)
class MissingSpec:
    """MAR sequencing for endpoints: A = shift * J + N(0, 1) and
    P(R = 1) = expit(r0 + rz * Z + ra * A)."""

    shift: float = 1.5
    r0: float = 0.8
    rz: float = -1.0
    ra: float = 1.0


@dataclass(frozen=True)
class SimConfig:
    study: int = 1
    setting: str = "c"
    n: int = 1000
    seed: int = 0
    reps: int = 200
    boot: int = 150
    estimators: tuple = ESTIMATOR_NAMES
    prior_family: str = "spline"
    df: int = 10
    c0: float = 1.0
    q0: float = 0.01
    level: float = 0.95
    alpha: float = 0.05
    missing: MissingSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.study not in SHALLOW:
            raise ConfigError(f"study must be 1, 2 or 3, got {self.study!r}")
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of a, b, c, got {self.setting!r}")
        if min(self.n, self.reps, self.boot) < 1:
            raise ConfigError("n, reps and boot must be positive")
        if not 0 < self.q0 < 1:
            raise ConfigError("q0 must lie in (0, 1)")
        bad = set(self.estimators) - set(ESTIMATOR_NAMES)
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}")

    @property
    def beta(self) -> tuple:
        return SETTINGS[self.setting][:2]

    @property
    def true_ve(self) -> np.ndarray:
        return 1.0 - np.exp(np.array(self.beta))

    def pipeline(self, estimator: str) -> PipelineConfig:
        return PipelineConfig(
            thresholds=ThresholdSpec.binary(self.q0),
            prior=PriorOptions(self.prior_family, self.df, self.c0),
            conditioning=ConditioningSpec(("arm", "x1")),
            cox=CoxOptions(),
            estimator="base" if estimator == "corrected" else "naive",
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["estimators"] = list(self.estimators)
        return out


def replicate_seed(seed: int, r: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(r), *extra])


def truncated_beta_sample(a: float, b: float, lo: float, hi: float, rng: np.random.Generator,
                          size=None, tol: float = 1e-12):
    """Inverse-CDF draws from Beta(a, b) restricted to [lo, hi)."""
    if not (0 <= lo < hi <= 1) or a <= 0 or b <= 0:
        raise ConfigError("need 0 <= lo < hi <= 1 and a, b > 0")
    f_lo, f_hi = betainc(a, b, lo), betainc(a, b, hi)
    if f_hi - f_lo < 1e-300:
        raise ImpossibleTruncation(f"Beta({a}, {b}) has no mass on [{lo}, {hi})")
    u = rng.uniform(f_lo, f_hi, size=size)
    left = np.full(np.shape(u), float(lo))
    right = np.full(np.shape(u), float(hi))
    while np.max(right - left, initial=0.0) > tol:
        mid = 0.5 * (left + right)
        below = betainc(a, b, mid) < u
        left = np.where(below, mid, left)
        right = np.where(below, right, mid)
    x = np.minimum(0.5 * (left + right), np.nextafter(hi, lo))
    return float(x) if size is None else x


def draw_depth(study: int, arm, rng: np.random.Generator) -> np.ndarray:
    arm = np.asarray(arm)
    if SHALLOW[study] is None:
        return np.full(arm.shape, 2000, dtype=np.int64)
    p_shallow = np.where(arm == 1, SHALLOW[study][1], SHALLOW[study][0])
    shallow = rng.uniform(size=arm.shape) < p_shallow
    return np.where(shallow, rng.integers(1, 16, size=arm.shape),
                    rng.integers(16, 1001, size=arm.shape)).astype(np.int64)


@dataclass
class Replicate:
    """Generated data plus the latent quantities the analysis never sees."""

    dataset: Dataset
    cause: np.ndarray
    q: np.ndarray
    k: np.ndarray
    m: np.ndarray


def gen_replicate(config: SimConfig, r: int) -> Replicate:
    rng = np.random.default_rng(replicate_seed(config.seed, r))
    n = config.n
    z = np.repeat([0, 1], n)
    x = rng.binomial(1, 0.5, size=2 * n)
    b0, b1, shape_b = SETTINGS[config.setting]
    rate0 = BASE_RATES[0] * np.exp(b0 * z + X_EFFECTS[0] * x)
    rate1 = BASE_RATES[1] * np.exp(b1 * z + X_EFFECTS[1] * x)
    t0 = rng.exponential(1 / rate0)
    t1 = rng.exponential(1 / rate1)
    t = np.minimum(np.minimum(t0, t1), FOLLOW_UP)
    event = np.minimum(t0, t1) < FOLLOW_UP
    cause = np.where(event, (t1 < t0).astype(int), -1)

    q = np.full(2 * n, np.nan)
    low, high = cause == 0, cause == 1
    q[low] = truncated_beta_sample(SHAPE_A, shape_b, 0.0, config.q0, rng, low.sum())
    q[high] = truncated_beta_sample(SHAPE_A, shape_b, config.q0, 1.0, rng, high.sum())
    m = draw_depth(config.study, z, rng)
    k = rng.binomial(m, np.nan_to_num(q))
    sequenced = event.copy()
    aux = None
    if config.missing is not None:
        ms = config.missing
        aux = ms.shift * (cause == 1) + rng.normal(size=2 * n)
        sequenced = event & (rng.uniform(size=2 * n) < expit(ms.r0 + ms.rz * z + ms.ra * aux))
    ds = Dataset.from_arrays(arm=z, time=t, event=event, covariates=x[:, None],
                             k=np.where(event, k, -1), m=np.where(event, m, -1),
                             sequenced=sequenced, aux=aux)
    return Replicate(ds, cause, q, np.where(event, k, -1), np.where(event, m, -1))


# ---------------------------------------------------------------------------
# study runner

def _analyze(rep: Replicate, config: SimConfig, r: int) -> list:
    rows = []
    for est_idx, name in enumerate(config.estimators):
        pconf = config.pipeline(name)
        row = {"replicate": r, "estimator": name}
        try:
            lik = endpoint_likelihood(rep.dataset, pconf.grid) if name == "corrected" else None
            point = run_pipeline(rep.dataset, pconf, likelihood=lik)
            if not point.fit.ok:
                raise SieveError("point fit failed")
            seed = int(replicate_seed(config.seed, r, 1 + est_idx).generate_state(1)[0])
            boot = bootstrap(rep.dataset, pconf, config.boot, seed, likelihood=lik) \
                if config.boot >= 50 else None
        except SieveError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        beta = point.fit.beta
        cov = boot.covariance if boot is not None else np.diag(
            [t.covariance()[0, 0] for t in point.fit.types])
        row.update(beta_0=beta[0], beta_1=beta[1], ve_0=1 - np.exp(beta[0]),
                   ve_1=1 - np.exp(beta[1]), se_0=np.sqrt(cov[0, 0]), se_1=np.sqrt(cov[1, 1]),
                   cov_01=cov[0, 1], n_failed=boot.n_failed if boot is not None else 0,
                   events_0=float(point.cause_weights[:, 0].sum()),
                   events_1=float(point.cause_weights[:, 1].sum()))
        for j in (0, 1):
            lo, hi = wald_interval(beta[j], np.sqrt(cov[j, j]), config.level)
            row[f"ci_lo_{j}"], row[f"ci_hi_{j}"] = lo, hi
        try:
            row["sieve_z"], row["sieve_p"] = sieve_test(beta, cov)
            row["joint_w"], row["joint_p"] = wald_joint_test(beta, cov)
        except SieveError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def run_replicate(config: SimConfig, r: int) -> list:
    return _analyze(gen_replicate(config, r), config, r)


FIELDS = ["replicate", "estimator", "beta_0", "beta_1", "ve_0", "ve_1", "se_0", "se_1",
          "cov_01", "ci_lo_0", "ci_hi_0", "ci_lo_1", "ci_hi_1", "sieve_z", "sieve_p",
          "joint_w", "joint_p", "n_failed", "events_0", "events_1", "error"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def _read_rows(path) -> list:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            row = {"replicate": int(raw["replicate"]), "estimator": raw["estimator"]}
            for key in FIELDS[2:-1]:
                if raw.get(key):
                    row[key] = float(raw[key])
            if raw.get("error"):
                row["error"] = raw["error"]
            rows.append(row)
    return rows


@dataclass
class StudyMetrics:
    config: dict
    estimators: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "estimators": self.estimators}

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def summarize(rows: list, config: SimConfig) -> StudyMetrics:
    truth = config.true_ve
    null = config.beta[0] == config.beta[1]
    out = {}
    for name in config.estimators:
        mine = [r for r in rows if r["estimator"] == name]
        ok = [r for r in mine if "error" not in r]
        summary = {"replicates": len(mine), "failed": len(mine) - len(ok)}
        if ok:
            for j in (0, 1):
                ve = np.array([r[f"ve_{j}"] for r in ok])
                lo = np.array([r[f"ci_lo_{j}"] for r in ok])
                hi = np.array([r[f"ci_hi_{j}"] for r in ok])
                summary[f"type_{j}"] = {
                    "true_ve": float(truth[j]),
                    "median_ve": float(np.median(ve)),
                    "mean_ve": float(ve.mean()),
                    "bias": float(ve.mean() - truth[j]),
                    "empirical_sd": float(ve.std(ddof=1)) if len(ve) > 1 else 0.0,
                    "median_ci": [float(np.median(lo)), float(np.median(hi))],
                    "coverage": float(np.mean((lo <= truth[j]) & (truth[j] <= hi))),
                }
            p = np.array([r["sieve_p"] for r in ok])
            rate = float(np.mean(p < config.alpha))
            summary["sieve_rejection"] = rate
            summary["type_I_error" if null else "power"] = rate
            summary["joint_rejection"] = float(np.mean(
                np.array([r["joint_p"] for r in ok]) < config.alpha))
        out[name] = summary
    return StudyMetrics(config.to_dict(), out)


def run_study(config: SimConfig, out_dir=None, n_jobs: int = 1, resume: bool = True,
              progress=None) -> StudyMetrics:
    """Run all replicates and aggregate.

    With ``out_dir`` the per-replicate rows go to ``replicates.csv`` as they
    finish, so an interrupted study resumes where it stopped, and the
    aggregate goes to ``metrics.json``.
    """
    rows, done = [], set()
    csv_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "replicates.csv")
        if resume and os.path.exists(csv_path):
            rows = [r for r in _read_rows(csv_path) if r["replicate"] < config.reps]
            done = {r["replicate"] for r in rows}
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS)
            for row in sorted(rows, key=_row_key(config)):
                w.writerow([_fmt(row.get(k)) for k in FIELDS])
    todo = [r for r in range(config.reps) if r not in done]

    def record(new_rows):
        rows.extend(new_rows)
        if csv_path is not None:
            with open(csv_path, "a", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                for row in new_rows:
                    w.writerow([_fmt(row.get(k)) for k in FIELDS])
        if progress is not None:
            progress(len({row["replicate"] for row in rows}), config.reps)

    if n_jobs == 1:
        for r in todo:
            record(run_replicate(config, r))
    else:
        with ProcessPoolExecutor(n_jobs) as pool:
            for new_rows in pool.map(run_replicate, [config] * len(todo), todo):
                record(new_rows)

    rows.sort(key=_row_key(config))
    if csv_path is not None:
        # rewrite in canonical order so reruns are byte-identical
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS)
            for row in rows:
                w.writerow([_fmt(row.get(k)) for k in FIELDS])
    metrics = summarize(rows, config)
    if out_dir is not None:
        metrics.write_json(os.path.join(out_dir, "metrics.json"))
    return metrics


def _row_key(config):
    order = {name: i for i, name in enumerate(config.estimators)}
    return lambda row: (row["replicate"], order.get(row["estimator"], 99))


# ---------------------------------------------------------------------------
# double robustness under missing sequencing

ROBUSTNESS_ARMS = ("complete", "ipw", "ipw_bad_pi", "aipw", "aipw_bad_m", "aipw_bad_pi")


def robustness_replicate(config: SimConfig, r: int) -> dict:
    """Point estimates of VE under each nuisance (mis)specification.

    ``bad_pi`` replaces the sequencing model with an intercept-only fit and
    ``bad_m`` replaces the outcome regression by uniform noise.
    """
    if config.missing is None:
        raise ConfigError("robustness study needs a missingness spec")
    rep = gen_replicate(config, r)
    ds = rep.dataset
    pconf = config.pipeline("corrected")
    base = run_pipeline(ds, pconf)
    nu = base.cause_weights
    good_pi = fit_missingness(ds, pconf.positivity_floor)
    ev = ds.event
    r_ind = ds.sequenced[ev].astype(float)
    coef, _ = logistic_fit(np.ones((ev.sum(), 1)), r_ind)
    pi = np.ones(ds.n)
    pi[ev] = expit(coef[0])
    bad_pi = MissingnessModel(coef, pi, pconf.positivity_floor, 0)
    good_m = fit_outcome_regression(ds, nu)
    noise_rng = np.random.default_rng(replicate_seed(config.seed, r, 99))
    u = noise_rng.uniform(size=ds.n)
    bad_m = OutcomeRegression(good_m.coef, np.column_stack([1 - u, u]) * ev[:, None])

    # the complete-data reference sees every endpoint's marks
    full = ds.with_marks(rep.k, rep.m, ev)
    weights = {
        "complete": run_pipeline(full, pconf).cause_weights,
        "ipw": ipw_weights(ds, good_pi, nu),
        "ipw_bad_pi": ipw_weights(ds, bad_pi, nu),
        "aipw": aipw_weights(ds, good_pi, good_m, nu),
        "aipw_bad_m": aipw_weights(ds, good_pi, bad_m, nu),
        "aipw_bad_pi": aipw_weights(ds, bad_pi, good_m, nu),
    }
    out = {"replicate": r, "sequenced_frac": float(ds.sequenced[ev].mean())}
    for name, w in weights.items():
        fit = fit_competing(full if name == "complete" else ds, w, pconf.cox)
        out[name] = fit.ve.tolist()
    return out


def run_robustness_study(config: SimConfig, out_dir=None, progress=None) -> dict:
    """Bias of each nuisance (mis)specification over ``config.reps`` replicates."""
    reps = []
    for r in range(config.reps):
        reps.append(robustness_replicate(config, r))
        if progress is not None:
            progress(r + 1, config.reps)
    truth = config.true_ve
    summary = {"config": config.to_dict(), "replicates": len(reps),
               "mean_sequenced_frac": float(np.mean([r["sequenced_frac"] for r in reps]))}
    for name in ROBUSTNESS_ARMS:
        ve = np.array([r[name] for r in reps])
        summary[name] = {
            "mean_ve": ve.mean(axis=0).tolist(),
            "bias": (ve.mean(axis=0) - truth).tolist(),
            "mc_se": (ve.std(axis=0, ddof=1) / np.sqrt(len(ve))).tolist(),
        }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "replicates.json"), "w", encoding="utf-8") as fh:
            json.dump(reps, fh, indent=1)
        with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
