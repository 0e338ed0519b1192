"""Posterior of the mismatch proportion per endpoint, and bin probabilities."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .datamodel import Dataset, ThresholdSpec, naive_bins
from .deconvolve import (BinomialLikelihood, ConditioningSpec, MixingPrior, PriorSet,
                         SupportGrid)
from .errors import DomainError, InternalError


@dataclass
class PosteriorQ:
    grid: SupportGrid
    mass: np.ndarray
    id: str | None = None

    def mean(self) -> float:
        return float(self.mass @ self.grid.points)

    def variance(self) -> float:
        mu = self.mean()
        return float(self.mass @ (self.grid.points - mu) ** 2)


def _log_binom(k, m, q):
    return (gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
            + k * np.log(q) + (m - k) * np.log1p(-q))


def posterior(prior: MixingPrior, k: int, m: int, id: str | None = None) -> PosteriorQ:
    """Posterior masses of Q on the prior's grid given K mismatches out of M."""
    if not 0 <= k <= m:
        raise DomainError("need 0 <= k <= m")
    with np.errstate(divide="ignore"):
        logpost = _log_binom(float(k), float(m), prior.grid.points) + np.log(prior.mass)
    top = logpost.max()
    if not np.isfinite(top):
        raise InternalError("posterior has no mass")
    w = np.exp(logpost - top)
    return PosteriorQ(prior.grid, w / w.sum(), id)


def bin_matrix(grid: SupportGrid, thresholds: ThresholdSpec) -> np.ndarray:
    """One-hot (G, l) matrix assigning each grid point to its bin."""
    idx = thresholds.bin_index(grid.points)
    out = np.zeros((grid.size, thresholds.n_bins))
    out[np.arange(grid.size), idx] = 1.0
    return out


def bin_probs(post: PosteriorQ, thresholds: ThresholdSpec) -> np.ndarray:
    nu = post.mass @ bin_matrix(post.grid, thresholds)
    return nu / nu.sum()


@dataclass
class ClassificationTable:
    """Bin probabilities for each sequenced endpoint.

    ``index`` gives the row of each entry in the source dataset.
    """

    index: np.ndarray
    ids: np.ndarray
    cells: np.ndarray
    k: np.ndarray
    m: np.ndarray
    naive_bin: np.ndarray
    nu: np.ndarray
    thresholds: ThresholdSpec

    def __len__(self):
        return len(self.index)

    def weights(self, n: int) -> np.ndarray:
        """(n, l) cause weights with zero rows for everyone not classified."""
        out = np.zeros((n, self.nu.shape[1]))
        out[self.index] = self.nu
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "cell", "K", "M", "naive_bin"]
                       + [f"nu_{j}" for j in range(self.nu.shape[1])])
            for i in range(len(self)):
                w.writerow([self.ids[i], self.cells[i], int(self.k[i]), int(self.m[i]),
                            int(self.naive_bin[i])] + [repr(float(v)) for v in self.nu[i]])


def classify_dataset(dataset: Dataset, priors: PriorSet,
                     conditioning: ConditioningSpec | None,
                     thresholds: ThresholdSpec,
                     likelihood: BinomialLikelihood | None = None) -> ClassificationTable:
    """Posterior bin probabilities for every endpoint with observed marks.

    ``likelihood`` may carry precomputed rows aligned with the subjects.
    """
    conditioning = conditioning or ConditioningSpec()
    idx = np.flatnonzero(dataset.has_marks)
    if idx.size and np.any(dataset.m[idx] < 0):
        raise DomainError("sequenced endpoint without depth")
    cells = conditioning.cells(dataset)[idx]
    grid = priors.grid
    if likelihood is None:
        lik = BinomialLikelihood(dataset.k[idx], dataset.m[idx], grid)
    else:
        lik = likelihood.take(idx)
    onehot = bin_matrix(grid, thresholds)
    nu = np.empty((idx.size, thresholds.n_bins))
    for cell in sorted(set(cells.tolist())):
        rows = np.flatnonzero(cells == cell)
        prior = priors.for_cell(cell)
        post = lik.scaled[rows] * prior.mass
        norm = post.sum(axis=1)
        bad = norm < 1e-250
        if bad.any():
            # likelihood and prior barely overlap: redo those rows in log space
            with np.errstate(divide="ignore"):
                logpost = (_log_binom(lik.k[rows[bad], None].astype(float),
                                      lik.m[rows[bad], None].astype(float), grid.points)
                           + np.log(prior.mass))
            top = logpost.max(axis=1, keepdims=True)
            if not np.all(np.isfinite(top)):
                raise InternalError(f"posterior has no mass in cell {cell!r}")
            post[bad] = np.exp(logpost - top)
            norm[bad] = post[bad].sum(axis=1)
        nu[rows] = (post @ onehot) / norm[:, None]
    nu /= nu.sum(axis=1, keepdims=True)
    k, m = dataset.k[idx], dataset.m[idx]
    return ClassificationTable(index=idx, ids=dataset.ids[idx], cells=cells, k=k, m=m,
                               naive_bin=naive_bins(k, m, thresholds), nu=nu,
                               thresholds=thresholds)
