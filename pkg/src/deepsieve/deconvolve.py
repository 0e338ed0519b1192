"""Marginal-likelihood estimation of the mixing distribution of the latent
mismatch proportion, within conditioning cells.

Two families are supported: a conjugate Beta prior, and a log-linear
("g-modeling") prior whose log density is a natural cubic spline,
fitted by penalized marginal maximum likelihood on a discrete grid.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import betainc, betaln, digamma, gammaln, logsumexp

from ._optim import bfgs
from .datamodel import Dataset
from .errors import (BoundaryFit, ConfigError, ConvergenceWarning, DomainError,
                     InsufficientCell, MissingPrior, NoEndpointData,
                     PriorFallbackWarning)

BETA_BOUNDS = (1e-4, 1e4)


@dataclass(frozen=True, eq=False)
class SupportGrid:
    """Interior support points for the mixing distribution.

    Each point owns the cell between the midpoints to its neighbours (the
    outer cells extend to 0 and 1), which is how Beta masses are assigned.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 50:
            raise DomainError("grid needs at least 50 points")
        if pts[0] <= 0 or pts[-1] >= 1 or np.any(np.diff(pts) <= 0):
            raise DomainError("grid must be strictly increasing inside (0, 1)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def midpoints(cls, size: int = 500) -> "SupportGrid":
        return cls((np.arange(1, size + 1) - 0.5) / size)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def edges(self) -> np.ndarray:
        mids = 0.5 * (self.points[1:] + self.points[:-1])
        return np.concatenate([[0.0], mids, [1.0]])


@dataclass
class MixingPrior:
    """Prior masses over a support grid, plus fit diagnostics."""

    grid: SupportGrid
    mass: np.ndarray
    loglik: float
    n_obs: float
    converged: bool

    @property
    def family(self) -> str:
        raise NotImplementedError

    def tail(self, q0: float) -> float:
        return float(self.mass[self.grid.points >= q0].sum())

    def metadata(self) -> dict:
        return {"family": self.family, "loglik": self.loglik, "n_obs": self.n_obs,
                "converged": self.converged}


@dataclass
class BetaPrior(MixingPrior):
    alpha: float = 1.0
    beta: float = 1.0
    grad_norm: float = 0.0
    boundary: bool = False

    @property
    def family(self) -> str:
        return "beta"

    def metadata(self) -> dict:
        out = super().metadata()
        out.update(alpha=self.alpha, beta=self.beta, grad_norm=self.grad_norm,
                   boundary=self.boundary)
        return out


@dataclass
class SplinePrior(MixingPrior):
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    c0: float = 1.0
    df: int = 10
    objective: float = 0.0
    iterations: int = 0

    @property
    def family(self) -> str:
        return "spline"

    def metadata(self) -> dict:
        out = super().metadata()
        out.update(df=self.df, c0=self.c0, gamma=[float(v) for v in self.gamma],
                   objective=self.objective, iterations=self.iterations)
        return out


# ---------------------------------------------------------------------------
# Beta-binomial

def betabinom_logpmf(k, m, alpha, beta):
    """Log Beta-binomial pmf, including the binomial coefficient."""
    k = np.asarray(k, dtype=float)
    m = np.asarray(m, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(~np.isfinite(alpha) | (alpha <= 0) | ~np.isfinite(beta) | (beta <= 0)):
        raise DomainError("alpha and beta must be positive and finite")
    if np.any((k < 0) | (k > m)):
        raise DomainError("need 0 <= k <= m")
    out = (gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
           + betaln(k + alpha, m - k + beta) - betaln(alpha, beta))
    return out if out.ndim else float(out)


def beta_grid_mass(alpha: float, beta: float, grid: SupportGrid) -> np.ndarray:
    cdf = betainc(alpha, beta, grid.edges)
    mass = np.clip(np.diff(cdf), 0.0, None)
    total = mass.sum()
    if total <= 0:
        # all mass beyond float resolution at an edge
        mass = np.zeros(grid.size)
        mass[0 if alpha < beta else -1] = 1.0
        return mass
    return mass / total


def _usable(k, m, weights):
    k = np.asarray(k, dtype=float)
    m = np.asarray(m, dtype=float)
    w = np.ones_like(k) if weights is None else np.asarray(weights, dtype=float)
    keep = (m >= 1) & (w > 0)
    return k[keep], m[keep], w[keep]


def _moment_start(k, m, w):
    p = k / m
    mu = np.clip(np.average(p, weights=w), 0.02, 0.98)
    var = np.average((p - mu) ** 2, weights=w)
    mbar = np.average(m, weights=w)
    binom_var = mu * (1 - mu)
    rho = (var / binom_var - 1.0 / mbar) / (1 - 1.0 / mbar) if mbar > 1 else 0.5
    rho = float(np.clip(rho, 0.01, 0.95))
    total = 1.0 / rho - 1.0
    return np.log([mu * total, (1 - mu) * total])


def fit_beta_prior(k, m, grid: SupportGrid | None = None, weights=None) -> BetaPrior:
    """Marginal MLE of a Beta(alpha, beta) mixing distribution.

    Optimizes over log-parameters; parameters are confined to ``BETA_BOUNDS``
    and a fit that runs into a bound is returned clamped with a
    :class:`BoundaryFit` warning.  ``weights`` are frequency weights.
    """
    grid = grid or SupportGrid.midpoints()
    k, m, w = _usable(k, m, weights)
    if w.sum() < 2:
        raise InsufficientCell("need at least 2 observations with depth >= 1")
    lo, hi = np.log(BETA_BOUNDS)
    const = float(np.sum(w * (gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1))))

    def negll(x):
        xc = np.clip(x, lo, hi)
        a, b = np.exp(xc)
        val = -np.sum(w * (betaln(k + a, m - k + b) - betaln(a, b)))
        dab = digamma(m + a + b) - digamma(a + b)
        da = -np.sum(w * (digamma(k + a) - digamma(a) - dab)) * a
        db = -np.sum(w * (digamma(m - k + b) - digamma(b) - dab)) * b
        inside = (x > lo) & (x < hi)
        return val, np.array([da, db]) * inside

    res = bfgs(negll, _moment_start(k, m, w), gtol=1e-6, maxiter=500)
    x = np.clip(res.x, lo, hi)
    boundary = bool(np.any(res.x <= lo) or np.any(res.x >= hi))
    a, b = (float(v) for v in np.exp(x))
    if boundary:
        warnings.warn(BoundaryFit(f"Beta fit reached parameter bounds (alpha={a:.4g}, beta={b:.4g})"),
                      stacklevel=2)
    elif not res.converged:
        warnings.warn(ConvergenceWarning("Beta prior fit did not converge"), stacklevel=2)
    return BetaPrior(grid=grid, mass=beta_grid_mass(a, b, grid), loglik=-res.fun + const,
                     n_obs=float(w.sum()), converged=res.converged or boundary,
                     alpha=a, beta=b, grad_norm=float(np.max(np.abs(res.grad))),
                     boundary=boundary)


# ---------------------------------------------------------------------------
# Spline (log-linear) prior

_BASIS_CACHE: dict = {}


def natural_spline_basis(x, df: int) -> np.ndarray:
    """Natural cubic spline basis without intercept, ``df`` columns.

    Interior knots sit at quantiles of ``x`` and the boundary knots at its
    range; the basis is linear beyond the boundary knots.
    """
    x = np.asarray(x, dtype=float)
    if df < 2:
        raise DomainError("df must be at least 2")
    lo, hi = float(x.min()), float(x.max())
    interior = np.quantile(x, np.linspace(0, 1, df + 1)[1:-1])
    t = np.concatenate([[lo] * 4, interior, [hi] * 4])
    nb = len(t) - 4
    spl = BSpline(t, np.eye(nb), 3, extrapolate=True)
    B = spl(x)[:, 1:]
    d2 = spl.derivative(2)
    constraint = np.vstack([d2(lo), d2(hi)])[:, 1:]
    qmat, _ = np.linalg.qr(constraint.T, mode="complete")
    return B @ qmat[:, 2:]


def spline_basis(grid: SupportGrid, df: int) -> np.ndarray:
    """Natural spline basis on the grid, columns centred and scaled to unit
    standard deviation over the grid points."""
    key = (grid.points.tobytes(), int(df))
    basis = _BASIS_CACHE.get(key)
    if basis is None:
        raw = natural_spline_basis(grid.points, df)
        raw = raw - raw.mean(axis=0)
        basis = raw / raw.std(axis=0)
        basis.setflags(write=False)
        _BASIS_CACHE[key] = basis
    return basis


def spline_mass(gamma, basis) -> np.ndarray:
    eta = basis @ np.asarray(gamma, dtype=float)
    eta -= eta.max()
    g = np.exp(eta)
    return g / g.sum()


class BinomialLikelihood:
    """Binomial likelihood of each (K, M) pair at each grid point.

    Rows are stored divided by their maximum (``scaled``) with the log of that
    maximum kept in ``offset``, so products with prior masses never underflow.
    """

    def __init__(self, k, m, grid: SupportGrid, scaled=None, offset=None):
        self.k = np.asarray(k, dtype=np.int64)
        self.m = np.asarray(m, dtype=np.int64)
        self.grid = grid
        if scaled is None:
            if np.any((self.k < 0) | (self.k > self.m)):
                raise DomainError("need 0 <= k <= m")
            q = grid.points
            kf = self.k[:, None].astype(float)
            mf = self.m[:, None].astype(float)
            logc = gammaln(mf + 1) - gammaln(kf + 1) - gammaln(mf - kf + 1)
            logl = logc + kf * np.log(q) + (mf - kf) * np.log1p(-q)
            offset = logl.max(axis=1)
            scaled = np.exp(logl - offset[:, None])
        self.scaled = scaled
        self.offset = offset

    def __len__(self):
        return len(self.k)

    def take(self, index) -> "BinomialLikelihood":
        return BinomialLikelihood(self.k[index], self.m[index], self.grid,
                                  self.scaled[index], self.offset[index])


def _spline_objective(gamma, basis, lik: BinomialLikelihood, weights, c0):
    eta = basis @ gamma
    log_g = eta - logsumexp(eta)
    g = np.exp(log_g)
    P = lik.scaled * g
    f = P.sum(axis=1)
    bad = f < 1e-280
    with np.errstate(divide="ignore"):
        log_f = np.log(f)
    if bad.any():
        # prior mass sits where these rows have (numerically) no likelihood:
        # redo them exactly in log space
        kf = lik.k[bad, None].astype(float)
        mf = lik.m[bad, None].astype(float)
        q = lik.grid.points
        logl = (gammaln(mf + 1) - gammaln(kf + 1) - gammaln(mf - kf + 1)
                + kf * np.log(q) + (mf - kf) * np.log1p(-q) - lik.offset[bad, None])
        log_p = logl + log_g
        log_f[bad] = logsumexp(log_p, axis=1)
        P = P.copy()
        P[bad] = np.exp(log_p - log_f[bad, None])
        f = f.copy()
        f[bad] = 1.0
    value = float(weights @ (log_f + lik.offset)) - c0 * float(gamma @ gamma)
    post_total = (weights / f) @ P
    grad = post_total @ basis - weights.sum() * (g @ basis) - 2.0 * c0 * gamma
    return value, grad


def spline_marginal_loglik(gamma, grid: SupportGrid, basis, k, m, c0: float = 1.0,
                           weights=None):
    """Penalized marginal log-likelihood of a spline prior and its gradient.

    Returns ``(value, gradient)`` with
    ``value = sum_i w_i log sum_g f_binom(K_i; M_i, q_g) g_g - c0 * |gamma|^2``.
    """
    gamma = np.asarray(gamma, dtype=float)
    lik = BinomialLikelihood(k, m, grid)
    w = np.ones(len(lik)) if weights is None else np.asarray(weights, dtype=float)
    return _spline_objective(gamma, np.asarray(basis), lik, w, float(c0))


def _fit_spline(lik: BinomialLikelihood, weights, basis, c0, df, gtol=1e-6, maxiter=500):
    keep = (lik.m >= 1) & (weights > 0)
    if weights[keep].sum() < 2:
        raise InsufficientCell("need at least 2 observations with depth >= 1")
    if not keep.all():
        lik, weights = lik.take(keep), weights[keep]

    def neg(gam):
        v, gr = _spline_objective(gam, basis, lik, weights, c0)
        return -v, -gr

    res = bfgs(neg, np.zeros(basis.shape[1]), gtol=gtol, maxiter=maxiter)
    if not res.converged:
        warnings.warn(ConvergenceWarning(
            f"spline prior fit stopped after {res.iterations} iterations "
            f"(gradient norm {np.max(np.abs(res.grad)):.2e})"), stacklevel=3)
    gamma = res.x
    objective = -res.fun
    return SplinePrior(grid=lik.grid, mass=spline_mass(gamma, basis),
                       loglik=objective + c0 * float(gamma @ gamma),
                       n_obs=float(weights.sum()), converged=res.converged, gamma=gamma,
                       c0=float(c0), df=int(df), objective=objective,
                       iterations=res.iterations)


def fit_spline_prior(k, m, grid: SupportGrid | None = None, df: int = 10, c0: float = 1.0,
                     weights=None) -> SplinePrior:
    """Penalized marginal MLE of the spline prior, started at gamma = 0."""
    if c0 < 0:
        raise DomainError("c0 must be nonnegative")
    grid = grid or SupportGrid.midpoints()
    lik = BinomialLikelihood(k, m, grid)
    w = np.ones(len(lik)) if weights is None else np.asarray(weights, dtype=float)
    return _fit_spline(lik, w, spline_basis(grid, df), float(c0), df)


# ---------------------------------------------------------------------------
# conditioning cells

@dataclass(frozen=True)
class ConditioningSpec:
    """Variables whose joint levels define the cells of separate priors.

    Names may be ``arm``, ``stratum``, ``time`` (requires ``time_bins``) or
    any covariate / auxiliary column name.  Covariates must be discrete.
    """

    variables: tuple = ("arm",)
    time_bins: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if "time" in self.variables and not self.time_bins:
            raise ConfigError("conditioning on time requires time_bins")

    def _column(self, dataset: Dataset, name: str) -> np.ndarray:
        if name == "arm":
            return dataset.arm.astype(np.int64)
        if name == "stratum":
            return dataset.stratum
        if name == "time":
            return np.searchsorted(np.asarray(self.time_bins, float), dataset.time, side="right")
        for names, block in ((dataset.covariate_names, dataset.covariates),
                             (dataset.aux_names, dataset.aux)):
            if name in names:
                col = block[:, names.index(name)]
                if np.any(col != np.round(col)):
                    raise ConfigError(f"conditioning variable {name} is not discrete")
                return col.astype(np.int64)
        raise ConfigError(f"unknown conditioning variable {name!r}")

    def cells(self, dataset: Dataset) -> np.ndarray:
        """Cell label for every subject, e.g. ``"arm=1;x1=0"``."""
        if not self.variables:
            return np.full(dataset.n, "all", dtype=object)
        cols = [self._column(dataset, v) for v in self.variables]
        parts = []
        for name, col in zip(self.variables, cols):
            if name == "stratum":
                parts.append([f"stratum={dataset.stratum_labels[c]}" for c in col])
            else:
                parts.append([f"{name}={c}" for c in col])
        return np.array([";".join(t) for t in zip(*parts)], dtype=object)


@dataclass
class PriorSet:
    """Fitted priors per cell; ``pooled`` is fitted only when some cell falls back."""

    priors: dict
    pooled: MixingPrior | None = None
    fallback: tuple = ()

    def for_cell(self, cell: str) -> MixingPrior:
        if cell in self.priors:
            return self.priors[cell]
        if self.pooled is not None:
            return self.pooled
        raise MissingPrior(f"no prior for cell {cell!r}")

    @property
    def grid(self) -> SupportGrid:
        first = next(iter(self.priors.values()), self.pooled)
        return first.grid


@dataclass(frozen=True)
class PriorOptions:
    family: str = "spline"
    df: int = 10
    c0: float = 1.0
    grid_size: int = 500

    def __post_init__(self):
        if self.family not in ("spline", "beta"):
            raise ConfigError(f"unknown prior family {self.family!r}")


def endpoint_likelihood(dataset: Dataset, grid: SupportGrid) -> BinomialLikelihood:
    """Likelihood rows for every subject; rows of subjects without marks are
    placeholders (K = M = 0) and must be masked by the caller."""
    has = dataset.has_marks
    k = np.where(has, dataset.k, 0)
    m = np.where(has, dataset.m, 0)
    return BinomialLikelihood(k, m, grid)


def _fit_one(lik, weights, options: PriorOptions, grid):
    if options.family == "beta":
        return fit_beta_prior(lik.k, lik.m, grid, weights)
    return _fit_spline(lik, weights, spline_basis(grid, options.df), options.c0, options.df)


def fit_priors(dataset: Dataset, conditioning: ConditioningSpec | None = None,
               options: PriorOptions | None = None, grid: SupportGrid | None = None,
               likelihood: BinomialLikelihood | None = None, weights=None) -> PriorSet:
    """Fit one prior per conditioning cell from the sequenced endpoints.

    Cells with fewer than two usable endpoints get the pooled prior and a
    :class:`PriorFallbackWarning`.  ``likelihood`` (rows aligned with the
    subjects) and per-subject frequency ``weights`` let the bootstrap reuse
    one precomputed likelihood matrix.
    """
    conditioning = conditioning or ConditioningSpec()
    options = options or PriorOptions()
    grid = grid or SupportGrid.midpoints(options.grid_size)
    w = np.ones(dataset.n) if weights is None else np.asarray(weights, dtype=float)
    usable = dataset.has_marks & (dataset.m >= 1) & (w > 0)
    if not usable.any():
        raise NoEndpointData("no sequenced endpoints with depth >= 1")
    if likelihood is None:
        idx = np.flatnonzero(usable)
        lik_all = BinomialLikelihood(dataset.k[idx], dataset.m[idx], grid)
        rows = np.full(dataset.n, -1)
        rows[idx] = np.arange(idx.size)
    else:
        lik_all, rows = likelihood, np.arange(dataset.n)

    cells = conditioning.cells(dataset)
    endpoint_cells = sorted(set(cells[dataset.event].tolist()))
    priors, fallback = {}, []
    for cell in endpoint_cells:
        sel = usable & (cells == cell)
        if w[sel].sum() < 2:
            fallback.append(cell)
            continue
        priors[cell] = _fit_one(lik_all.take(rows[sel]), w[sel], options, grid)
    pooled = None
    if fallback:
        for cell in fallback:
            warnings.warn(PriorFallbackWarning(
                f"cell {cell!r} has fewer than 2 sequenced endpoints; using pooled prior"),
                stacklevel=2)
        if w[usable].sum() < 2:
            raise NoEndpointData("fewer than 2 sequenced endpoints overall")
        pooled = _fit_one(lik_all.take(rows[usable]), w[usable], options, grid)
    return PriorSet(priors=priors, pooled=pooled, fallback=tuple(fallback))


def write_prior_dump(prior_set: PriorSet, csv_path, json_path, options: PriorOptions | None = None):
    entries = list(prior_set.priors.items())
    if prior_set.pooled is not None:
        entries.append(("pooled", prior_set.pooled))
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("cell,q,mass\n")
        for cell, prior in entries:
            for q, mass in zip(prior.grid.points, prior.mass):
                fh.write(f"{cell},{q!r},{float(mass)!r}\n")
    meta = {"cells": {cell: prior.metadata() for cell, prior in entries},
            "fallback_cells": list(prior_set.fallback)}
    if options is not None:
        meta["options"] = {"family": options.family, "df": options.df, "c0": options.c0,
                           "grid_size": options.grid_size}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
