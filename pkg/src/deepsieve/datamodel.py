"""Trial records, CSV ingestion and validation, and mark thresholds.

A :class:`Dataset` is stored column-wise (numpy arrays) because every
downstream step works on whole columns; :attr:`Dataset.records` gives the
row view when one is needed.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DatasetValidationError, EmptySequenceSet, DomainError

REQUIRED_COLUMNS = ("id", "arm", "stratum", "time", "event", "k", "m", "sequenced")
_COVARIATE = re.compile(r"^x(\d+)$")
_AUXILIARY = re.compile(r"^a(\d+)$")
ABSENT = -1


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    arm: int
    covariates: tuple
    stratum: str
    time: float
    event: bool
    k: int | None = None
    m: int | None = None
    sequenced: bool = False
    aux: tuple = ()


def aggregate_sequences(marks: Iterable[int]) -> tuple[int, int]:
    """Collapse per-sequence binary marks into (mismatch count, depth)."""
    arr = np.asarray(list(marks))
    if arr.size == 0:
        raise EmptySequenceSet("no sequences supplied")
    if not np.isin(arr, (0, 1)).all():
        raise DomainError("marks must be 0 or 1")
    return int(arr.sum()), int(arr.size)


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Validated trial data.

    ``stratum`` holds dense codes ``0..L-1``; the original labels are kept in
    ``stratum_labels``.  ``k`` and ``m`` are ``-1`` where absent.
    """

    ids: np.ndarray
    arm: np.ndarray
    covariates: np.ndarray
    stratum: np.ndarray
    time: np.ndarray
    event: np.ndarray
    k: np.ndarray
    m: np.ndarray
    sequenced: np.ndarray
    aux: np.ndarray
    covariate_names: tuple = ()
    aux_names: tuple = ()
    stratum_labels: tuple = ("1",)

    def __post_init__(self):
        n = len(self.time)
        if n == 0:
            raise DatasetValidationError([("-", "dataset is empty")])
        for name in ("ids", "arm", "covariates", "stratum", "time", "event",
                     "k", "m", "sequenced", "aux"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise ValueError(f"column {name} has length {len(arr)}, expected {n}")
            object.__setattr__(self, name, _freeze(arr))

    @classmethod
    def from_arrays(cls, arm, time, event, covariates=None, stratum=None, k=None,
                    m=None, sequenced=None, aux=None, ids=None,
                    covariate_names=None, aux_names=None):
        """Build a dataset from arrays already known to be valid."""
        arm = np.asarray(arm, dtype=np.int8)
        n = len(arm)
        event = np.asarray(event, dtype=bool)
        covariates = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        aux = np.zeros((n, 0)) if aux is None else np.asarray(aux, float)
        if aux.ndim == 1:
            aux = aux[:, None]
        if stratum is None:
            codes, labels = np.zeros(n, dtype=np.int64), ("1",)
        else:
            codes, labels = _relabel(np.asarray(stratum).astype(str))
        k = np.full(n, ABSENT) if k is None else np.asarray(k, dtype=np.int64)
        m = np.full(n, ABSENT) if m is None else np.asarray(m, dtype=np.int64)
        if sequenced is None:
            sequenced = event & (m >= 0)
        sequenced = np.asarray(sequenced, dtype=bool) & event
        k = np.where(sequenced, k, ABSENT)
        m = np.where(sequenced, m, ABSENT)
        if ids is None:
            ids = np.array([str(i + 1) for i in range(n)], dtype=object)
        return cls(
            ids=np.asarray(ids, dtype=object), arm=arm, covariates=covariates,
            stratum=codes, time=np.asarray(time, dtype=float), event=event,
            k=k, m=m, sequenced=sequenced, aux=aux,
            covariate_names=tuple(covariate_names or
                                  (f"x{j + 1}" for j in range(covariates.shape[1]))),
            aux_names=tuple(aux_names or (f"a{j + 1}" for j in range(aux.shape[1]))),
            stratum_labels=labels,
        )

    @property
    def n(self) -> int:
        return len(self.time)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def L(self) -> int:
        return len(self.stratum_labels)

    @property
    def has_marks(self) -> np.ndarray:
        """Endpoints with an observed (K, M) pair."""
        return self.event & self.sequenced

    @property
    def design(self) -> np.ndarray:
        """Cox design matrix W = [Z, X]."""
        return np.column_stack([self.arm.astype(float), self.covariates])

    @property
    def records(self) -> list[SubjectRecord]:
        out = []
        for i in range(self.n):
            seq = bool(self.sequenced[i])
            out.append(SubjectRecord(
                id=str(self.ids[i]), arm=int(self.arm[i]),
                covariates=tuple(float(v) for v in self.covariates[i]),
                stratum=self.stratum_labels[self.stratum[i]],
                time=float(self.time[i]), event=bool(self.event[i]),
                k=int(self.k[i]) if seq else None, m=int(self.m[i]) if seq else None,
                sequenced=seq, aux=tuple(float(v) for v in self.aux[i]),
            ))
        return out

    def subset(self, index) -> "Dataset":
        """Rows selected (possibly with repeats) by an integer index."""
        index = np.asarray(index)
        return Dataset(
            ids=self.ids[index], arm=self.arm[index], covariates=self.covariates[index],
            stratum=self.stratum[index], time=self.time[index], event=self.event[index],
            k=self.k[index], m=self.m[index], sequenced=self.sequenced[index],
            aux=self.aux[index], covariate_names=self.covariate_names,
            aux_names=self.aux_names, stratum_labels=self.stratum_labels,
        )

    def with_marks(self, k, m, sequenced) -> "Dataset":
        return Dataset(
            ids=self.ids, arm=self.arm, covariates=self.covariates, stratum=self.stratum,
            time=self.time, event=self.event, k=np.asarray(k), m=np.asarray(m),
            sequenced=np.asarray(sequenced, bool), aux=self.aux,
            covariate_names=self.covariate_names, aux_names=self.aux_names,
            stratum_labels=self.stratum_labels,
        )


def _label_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def _relabel(labels: np.ndarray):
    uniq = sorted(set(labels.tolist()), key=_label_key)
    lookup = {lab: i for i, lab in enumerate(uniq)}
    return np.array([lookup[v] for v in labels.tolist()], dtype=np.int64), tuple(uniq)


@dataclass(frozen=True)
class ThresholdSpec:
    """Cutpoints ``0 = q_0 < q_1 < ... < q_l = 1`` defining ``l`` mark bins.

    A value equal to an interior cutpoint falls in the bin below it, except
    that the top bin is closed on the left, so for two bins type 1 is
    exactly ``Q >= cutoff``.
    """

    cutpoints: tuple

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cutpoints)
        if len(cuts) < 3:
            raise DomainError("need at least one interior cutpoint")
        if cuts[0] != 0.0 or cuts[-1] != 1.0:
            raise DomainError("cutpoints must start at 0 and end at 1")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise DomainError("cutpoints must be strictly increasing")
        object.__setattr__(self, "cutpoints", cuts)

    @classmethod
    def binary(cls, cutoff: float) -> "ThresholdSpec":
        return cls((0.0, float(cutoff), 1.0))

    @property
    def n_bins(self) -> int:
        return len(self.cutpoints) - 1

    @property
    def cutoff(self) -> float:
        """Lower edge of the top bin (the single cutoff for binary marks)."""
        return self.cutpoints[-2]

    def bin_index(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        interior = np.asarray(self.cutpoints[1:-1])
        idx = np.searchsorted(interior, q, side="left")
        return np.where(q >= self.cutoff, self.n_bins - 1, idx)


def naive_bins(k, m, thresholds: ThresholdSpec) -> np.ndarray:
    """Bin of the empirical proportion K/M; -1 where M is 0 or absent."""
    k = np.asarray(k, dtype=float)
    m = np.asarray(m, dtype=float)
    ok = m > 0
    out = np.full(k.shape, -1, dtype=np.int64)
    out[ok] = thresholds.bin_index(k[ok] / m[ok])
    return out


# ---------------------------------------------------------------------------
# ingestion

def _parse_int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(text)
    return int(value)


def _parse_flag(text):
    if text.strip().lower() in ("1", "true", "yes"):
        return True
    if text.strip().lower() in ("0", "false", "no"):
        return False
    raise ValueError(text)


def validate_dataset(rows: Sequence[Mapping[str, str]],
                     columns: Sequence[str] | None = None) -> Dataset:
    """Check raw CSV rows and build a :class:`Dataset`.

    Every violation is collected before raising, so one call reports all
    bad rows.

    Raises
    ------
    DatasetValidationError
        With one ``(row_id, message)`` entry per violation.
    """
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    missing = [c for c in REQUIRED_COLUMNS if c not in columns]
    if missing:
        raise DatasetValidationError([("header", f"missing column {c}") for c in missing])
    if not rows:
        raise DatasetValidationError([("-", "dataset is empty")])

    xcols = sorted((c for c in columns if _COVARIATE.match(c)),
                   key=lambda c: int(_COVARIATE.match(c).group(1)))
    acols = sorted((c for c in columns if _AUXILIARY.match(c)),
                   key=lambda c: int(_AUXILIARY.match(c).group(1)))

    problems = []
    parsed = []
    seen = set()
    for pos, row in enumerate(rows):
        rid = (row.get("id") or "").strip() or f"#{pos + 1}"
        bad = []
        if rid in seen:
            bad.append("duplicate id")
        seen.add(rid)

        arm_text = (row.get("arm") or "").strip()
        arm = {"0": 0, "1": 1, "placebo": 0, "vaccine": 1}.get(arm_text.lower())
        if arm is None:
            bad.append(f"unknown arm code {arm_text!r}")

        time = None
        try:
            time = float(row["time"])
            if not np.isfinite(time) or time <= 0:
                bad.append("nonpositive time")
        except (TypeError, ValueError):
            bad.append("unparseable time")

        event = None
        try:
            event = _parse_flag(row["event"])
        except (AttributeError, ValueError):
            bad.append("event must be 0 or 1")

        k_text = (row.get("k") or "").strip()
        m_text = (row.get("m") or "").strip()
        seq_text = (row.get("sequenced") or "").strip()
        k = m = None
        try:
            k = _parse_int(k_text) if k_text else None
            m = _parse_int(m_text) if m_text else None
        except ValueError:
            bad.append("k and m must be integers")
        try:
            sequenced = _parse_flag(seq_text) if seq_text else (k is not None and m is not None)
        except ValueError:
            bad.append("sequenced must be 0 or 1")
            sequenced = False

        if event is False:
            if k is not None or m is not None:
                bad.append("marks present for a non-event")
            if sequenced:
                bad.append("sequenced flag set for a non-event")
        elif event and sequenced:
            if k is None or m is None:
                bad.append("missing k/m for a sequenced event")
            elif k < 0 or m < 0:
                bad.append("negative k or m")
            elif k > m:
                bad.append("K exceeds M")
        elif event and not sequenced and (k is not None or m is not None):
            bad.append("marks present for an unsequenced event")

        xs = []
        for c in xcols + acols:
            try:
                v = float(row[c])
                if not np.isfinite(v):
                    raise ValueError
                xs.append(v)
            except (TypeError, ValueError):
                bad.append(f"covariate {c} missing or not numeric")
        stratum = (row.get("stratum") or "").strip()
        if not stratum:
            bad.append("missing stratum")

        if bad:
            problems.extend((rid, msg) for msg in bad)
            continue
        parsed.append((rid, arm, xs[:len(xcols)], stratum, time, event,
                       k if k is not None else ABSENT, m if m is not None else ABSENT,
                       bool(event and sequenced), xs[len(xcols):]))

    if problems:
        raise DatasetValidationError(problems)

    cols = list(zip(*parsed))
    n = len(parsed)
    return Dataset.from_arrays(
        ids=np.array(cols[0], dtype=object), arm=cols[1],
        covariates=np.array(cols[2], dtype=float).reshape(n, len(xcols)),
        stratum=np.array(cols[3]), time=cols[4], event=cols[5], k=cols[6], m=cols[7],
        sequenced=cols[8], aux=np.array(cols[9], dtype=float).reshape(n, len(acols)),
        covariate_names=xcols, aux_names=acols,
    )


def read_marks_csv(path) -> dict[str, tuple[int, int]]:
    """Aggregate a long-format ``id, seq_index, mark`` file into (K, M) per id."""
    marks: dict[str, list[int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for c in ("id", "seq_index", "mark"):
            if c not in (reader.fieldnames or []):
                raise DatasetValidationError([("header", f"missing column {c}")])
        for row in reader:
            marks.setdefault(row["id"].strip(), []).append(int(row["mark"]))
    return {rid: aggregate_sequences(v) for rid, v in marks.items()}


def read_csv(path, marks_path=None) -> Dataset:
    """Load and validate a wide-format subject file.

    When ``marks_path`` is given, per-sequence marks are aggregated and fill
    the ``k``/``m`` columns of matching events.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns = list(reader.fieldnames or [])
        rows = [dict(r) for r in reader]
    if marks_path is not None:
        agg = read_marks_csv(marks_path)
        for c in ("k", "m", "sequenced"):
            if c not in columns:
                columns.append(c)
        for row in rows:
            km = agg.get((row.get("id") or "").strip())
            if km is not None:
                row["k"], row["m"], row["sequenced"] = str(km[0]), str(km[1]), "1"
            else:
                row.setdefault("k", "")
                row.setdefault("m", "")
                row.setdefault("sequenced", "0")
    return validate_dataset(rows, columns)


def write_csv(dataset: Dataset, path) -> None:
    header = list(REQUIRED_COLUMNS) + list(dataset.covariate_names) + list(dataset.aux_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            seq = bool(dataset.sequenced[i])
            w.writerow(
                [dataset.ids[i], int(dataset.arm[i]),
                 dataset.stratum_labels[dataset.stratum[i]], repr(float(dataset.time[i])),
                 int(dataset.event[i]),
                 int(dataset.k[i]) if seq else "", int(dataset.m[i]) if seq else "",
                 int(seq)]
                + [repr(float(v)) for v in dataset.covariates[i]]
                + [repr(float(v)) for v in dataset.aux[i]]
            )
