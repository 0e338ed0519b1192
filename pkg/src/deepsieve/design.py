"""Threshold selection from detection limits, and two-stage mark screening."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
from scipy.special import gammaln

from .datamodel import Dataset, ThresholdSpec, naive_bins
from .errors import DegenerateTable, DomainError, MissingArmData, NoEndpointData


def lod(depth, pod):
    """Smallest mismatch proportion detected with probability ``pod`` at ``depth`` reads."""
    depth = np.asarray(depth, dtype=float)
    pod = np.asarray(pod, dtype=float)
    if np.any(depth < 1) or np.any((pod <= 0) | (pod >= 1)):
        raise DomainError("need depth >= 1 and 0 < pod < 1")
    out = 1.0 - (1.0 - pod) ** (1.0 / depth)
    return out if out.ndim else float(out)


def pod_detect(q, depth):
    """Probability of seeing at least one mismatched read."""
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)) or np.any(np.asarray(depth) < 0):
        raise DomainError("need 0 <= q <= 1 and depth >= 0")
    out = 1.0 - (1.0 - q) ** np.asarray(depth, dtype=float)
    return out if out.ndim else float(out)


def lower_median(values) -> float:
    v = np.sort(np.asarray(values))
    return float(v[(len(v) - 1) // 2])


@dataclass
class LodSpec:
    pod: float
    median_depth: dict
    arm_lod: dict
    q0: float

    @property
    def symmetric(self) -> float:
        return 1.0 - self.q0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["symmetric_q0"] = self.symmetric
        return out


def select_q0(dataset: Dataset, pod: float = 0.8) -> LodSpec:
    """Threshold = the larger of the two arms' LODs at their median depth."""
    has = dataset.has_marks & (dataset.m >= 1)
    medians, lods = {}, {}
    for arm in (0, 1):
        depths = dataset.m[has & (dataset.arm == arm)]
        if depths.size == 0:
            raise MissingArmData(f"no sequenced endpoints in arm {arm}")
        medians[arm] = lower_median(depths)
        lods[arm] = lod(medians[arm], pod)
    return LodSpec(pod=pod, median_depth=medians, arm_lod=lods, q0=max(lods.values()))


def fisher_exact_p(a: int, b: int, c: int, d: int) -> float:
    """Two-sided Fisher exact p-value for the table [[a, b], [c, d]].

    Sums the hypergeometric probabilities of all tables with the observed
    margins that are no more likely than the observed one.  A table with an
    empty margin gets p = 1 and a :class:`DegenerateTable` warning.
    """
    if min(a, b, c, d) < 0:
        raise DomainError("counts must be nonnegative")
    r1, r2, c1 = a + b, c + d, a + c
    n = r1 + r2
    if min(r1, r2, c1, n - c1) == 0:
        warnings.warn(DegenerateTable("table has an empty margin"), stacklevel=2)
        return 1.0
    x = np.arange(max(0, c1 - r2), min(r1, c1) + 1)

    def lchoose(nn, kk):
        return gammaln(nn + 1) - gammaln(kk + 1) - gammaln(nn - kk + 1)

    logp = lchoose(r1, x) + lchoose(r2, c1 - x) - lchoose(n, c1)
    p = np.exp(logp)
    observed = np.exp(lchoose(r1, a) + lchoose(r2, c1 - a) - lchoose(n, c1))
    return float(min(1.0, p[p <= observed * (1 + 1e-7)].sum()))


def fisher_min_count(n_a: int, n_b: int, alpha: float = 0.05) -> int | None:
    """Fewest endpoints of one type, all in one arm, giving Fisher p < alpha.

    Both placements (all in arm A or all in arm B) are tried and the smaller
    count is returned; ``None`` if no count reaches significance.
    """
    best = None
    for here, there in ((n_a, n_b), (n_b, n_a)):
        for c in range(1, here + 1):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateTable)
                p = fisher_exact_p(c, here - c, 0, there)
            if p < alpha:
                best = c if best is None else min(best, c)
                break
    return best


@dataclass
class ScreenRow:
    mark: str
    n_type1: int
    n_type0: int
    fisher_min_count: int | None
    screen1_pass: bool
    reclass_frac: float
    screen2_pass: bool

    @property
    def viable(self) -> bool:
        return self.screen1_pass and self.screen2_pass


@dataclass
class ScreenReport:
    rows: list

    def viable(self) -> list:
        return [r.mark for r in self.rows if r.viable]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mark", "n_type1", "n_type0", "fisher_min_count", "screen1_pass",
                        "reclass_frac", "screen2_pass", "viable"])
            for r in self.rows:
                w.writerow([r.mark, r.n_type1, r.n_type0,
                            "" if r.fisher_min_count is None else r.fisher_min_count,
                            int(r.screen1_pass), repr(r.reclass_frac), int(r.screen2_pass),
                            int(r.viable)])


def screen_mark(dataset: Dataset, q0: float, alpha: float = 0.05, reclass_frac: float = 0.10,
                min_count: int | None = None, modal_cutoff: float = 0.5,
                mark: str = "mark") -> ScreenRow:
    """Screen one mark using naive labels I(K/M >= q0).

    Screen 1 needs at least ``min_count`` endpoints of each naive type; by
    default that count comes from :func:`fisher_min_count` with the observed
    per-arm endpoint totals.  Screen 2 needs at least ``reclass_frac`` of
    endpoints whose label at ``q0`` differs from the label at ``modal_cutoff``.
    """
    has = dataset.has_marks & (dataset.m >= 1)
    if not has.any():
        raise NoEndpointData(f"mark {mark}: no sequenced endpoints")
    k, m = dataset.k[has], dataset.m[has]
    label = naive_bins(k, m, ThresholdSpec.binary(q0))
    modal = naive_bins(k, m, ThresholdSpec.binary(modal_cutoff))
    n1 = int((label == 1).sum())
    n0 = int((label == 0).sum())
    if min_count is None:
        arms = dataset.arm[has]
        min_count = fisher_min_count(int((arms == 1).sum()), int((arms == 0).sum()), alpha)
    s1 = min_count is not None and n1 >= min_count and n0 >= min_count
    frac = float(np.mean(label != modal))
    return ScreenRow(mark=mark, n_type1=n1, n_type0=n0, fisher_min_count=min_count,
                     screen1_pass=bool(s1), reclass_frac=frac,
                     screen2_pass=bool(frac >= reclass_frac))


def screen_marks(marks: Mapping[str, Dataset], q0: float, alpha: float = 0.05,
                 reclass_frac: float = 0.10, min_count: int | None = None) -> ScreenReport:
    return ScreenReport([screen_mark(ds, q0, alpha, reclass_frac, min_count, mark=name)
                         for name, ds in marks.items()])


def write_lod_json(spec: LodSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
