"""Command-line entry point.

    deepsieve fit --input trial.csv --pod 0.8 --boot 300 --seed 1 --out run/
    deepsieve simulate --study 3 --setting c --reps 50 --boot 100 --seed 7 --out sim/

Settings come from an optional JSON ``--config`` file whose keys are the
long flag names (``c0``, ``boot``, ``estimator`` ...); flags given on the
command line win.  Exit status is 0 on a clean run, 2 when the run finished
with warnings and 1 on failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .coxengine import CoxOptions
from .datamodel import ThresholdSpec, read_csv
from .deconvolve import ConditioningSpec, PriorOptions, endpoint_likelihood, fit_priors, write_prior_dump
from .classify import classify_dataset
from .design import screen_marks, select_q0, write_lod_json
from .errors import ConfigError, DatasetValidationError, SieveError, SieveWarning
from .inference import bootstrap, build_report
from .pipeline import ESTIMATORS, PipelineConfig, run_pipeline
from .simulator import SimConfig, run_study

DEFAULTS = {
    "input": None, "marks": None, "out": ".", "q0": None, "pod": None, "bins": None,
    "prior": "spline", "df": 10, "c0": 1.0, "grid": 500, "condition": ["arm"],
    "time_bins": None, "boot": 300, "seed": None, "estimator": "base", "level": 0.95,
    "floor": 0.01, "jobs": 1, "no_center": False,
    # simulate
    "study": 1, "setting": "c", "n": 1000, "reps": 200,
    # screen
    "alpha": 0.05, "reclass_frac": 0.10, "min_count": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    """Fully resolved settings for one command."""

    mode: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def thresholds(self, q0: float | None = None) -> ThresholdSpec:
        if self.bins:
            cuts = [float(c) for c in str(self.bins).split(",")] if isinstance(self.bins, str) \
                else [float(c) for c in self.bins]
            return ThresholdSpec(tuple([0.0] + cuts + [1.0]))
        q0 = q0 if q0 is not None else self.q0
        if q0 is None:
            raise ConfigError("give --q0, --pod or --bins")
        return ThresholdSpec.binary(q0)

    def pipeline(self, thresholds: ThresholdSpec) -> PipelineConfig:
        return PipelineConfig(
            thresholds=thresholds,
            prior=PriorOptions(self.prior, int(self.df), float(self.c0), int(self.grid)),
            conditioning=ConditioningSpec(tuple(self.condition),
                                          tuple(self.time_bins) if self.time_bins else None),
            cox=CoxOptions(center=not self.no_center),
            estimator=self.estimator,
            positivity_floor=float(self.floor),
        )


def resolve(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None and val is not False:
            values[key] = val
    for key in ("input", "marks"):
        paths = values[key]
        if isinstance(paths, str):
            paths = [paths]
        for path in paths or []:
            if not os.path.exists(path):
                raise ConfigError(f"file not found: {path}")
        values[key] = paths
    return RunConfig(args.command, values)


def _dump(payload: dict, path: Path, timestamp: str | None = None) -> None:
    if timestamp is not None:
        payload = {**payload, "timestamp": timestamp}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plain(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _load(cfg: RunConfig, index: int = 0):
    if not cfg.input:
        raise ConfigError("--input is required")
    marks = cfg.marks[index] if cfg.marks else None
    return read_csv(cfg.input[0], marks) if marks else read_csv(cfg.input[index])


def _threshold(cfg: RunConfig, dataset, out: Path):
    """Thresholds from --bins/--q0, or from --pod via detection limits."""
    if cfg.bins or cfg.q0 is not None:
        return cfg.thresholds(), None
    spec = select_q0(dataset, float(cfg.pod if cfg.pod is not None else 0.8))
    write_lod_json(spec, out / "lod.json")
    return cfg.thresholds(spec.q0), spec


def cmd_fit(cfg: RunConfig, out: Path, stamp: str) -> list:
    if cfg.seed is None:
        raise ConfigError("--seed is required for fit")
    if cfg.estimator not in ESTIMATORS[:3]:
        raise ConfigError(f"estimator must be one of {ESTIMATORS[:3]}")
    ds = _load(cfg)
    thresholds, _ = _threshold(cfg, ds, out)
    pconf = cfg.pipeline(thresholds)
    lik = endpoint_likelihood(ds, pconf.grid)
    point = run_pipeline(ds, pconf, likelihood=lik)
    write_prior_dump(point.priors, out / "priors.csv", out / "priors.json", pconf.prior)
    point.table.write_csv(out / "classification.csv")
    point.fit.write_json(out / "fit.json")
    notes = list(point.warnings)
    if not point.fit.ok:
        notes.append(SieveWarning("point fit did not converge for every type"))
    boot = bootstrap(ds, pconf, int(cfg.boot), int(cfg.seed), int(cfg.jobs), likelihood=lik)
    boot.write_csv(out / "bootstrap.csv")
    report = build_report(point, boot, float(cfg.level), cfg.estimator)
    if point.missingness is not None:
        report.extra["missingness"] = point.missingness.diagnostics()
    report.extra["thresholds"] = list(thresholds.cutpoints)
    report.extra["warnings"] = [f"{type(w).__name__}: {w}" for w in notes]
    report.extra["config"] = {k: v for k, v in cfg.values.items() if k != "out"}
    _dump(report.to_dict(), out / "report.json", stamp)
    return notes


def cmd_simulate(cfg: RunConfig, out: Path, stamp: str) -> list:
    if cfg.seed is None:
        raise ConfigError("--seed is required for simulate")
    sim = SimConfig(study=int(cfg.study), setting=str(cfg.setting), n=int(cfg.n),
                    seed=int(cfg.seed), reps=int(cfg.reps), boot=int(cfg.boot),
                    prior_family=cfg.prior, df=int(cfg.df), c0=float(cfg.c0),
                    q0=float(cfg.q0) if cfg.q0 is not None else 0.01, level=float(cfg.level))
    metrics = run_study(sim, out, n_jobs=int(cfg.jobs), resume=False)
    _dump(metrics.to_dict(), out / "metrics.json", stamp)
    return []


def cmd_threshold(cfg: RunConfig, out: Path, stamp: str) -> list:
    ds = _load(cfg)
    spec = select_q0(ds, float(cfg.pod if cfg.pod is not None else 0.8))
    _dump(spec.to_dict(), out / "lod.json")
    return []


def cmd_screen(cfg: RunConfig, out: Path, stamp: str) -> list:
    count = len(cfg.marks) if cfg.marks else len(cfg.input)
    paths = cfg.marks if cfg.marks else cfg.input
    marks = {Path(p).stem: _load(cfg, i) for i, p in enumerate(paths)}
    if cfg.q0 is not None:
        q0 = float(cfg.q0)
    else:
        q0 = select_q0(next(iter(marks.values())), float(cfg.pod or 0.8)).q0
    report = screen_marks(marks, q0, float(cfg.alpha), float(cfg.reclass_frac),
                          None if cfg.min_count is None else int(cfg.min_count))
    report.write_csv(out / "screen.csv")
    _dump({"q0": q0, "marks": count, "viable": report.viable()}, out / "screen.json")
    return []


def _priors(cfg: RunConfig, out: Path):
    ds = _load(cfg)
    thresholds, _ = _threshold(cfg, ds, out)
    pconf = cfg.pipeline(thresholds)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SieveWarning)
        priors = fit_priors(ds, pconf.conditioning, pconf.prior, pconf.grid)
    write_prior_dump(priors, out / "priors.csv", out / "priors.json", pconf.prior)
    return ds, pconf, priors, [w.message for w in caught if issubclass(w.category, SieveWarning)]


def cmd_deconvolve(cfg: RunConfig, out: Path, stamp: str) -> list:
    return _priors(cfg, out)[3]


def cmd_classify(cfg: RunConfig, out: Path, stamp: str) -> list:
    ds, pconf, priors, notes = _priors(cfg, out)
    table = classify_dataset(ds, priors, pconf.conditioning, pconf.thresholds)
    table.write_csv(out / "classification.csv")
    return notes


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "screen": cmd_screen,
            "threshold": cmd_threshold, "classify": cmd_classify, "deconvolve": cmd_deconvolve}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deepsieve", description="Sieve analysis for deep-sequencing data.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file of settings")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        if name != "simulate":
            p.add_argument("--input", nargs="+", help="subject CSV file(s)")
            p.add_argument("--marks", nargs="+", help="long-format per-sequence mark file(s)")
        thr = p.add_mutually_exclusive_group()
        thr.add_argument("--q0", type=float)
        thr.add_argument("--pod", type=float)
        thr.add_argument("--bins", help="interior cutpoints, comma separated")
        p.add_argument("--prior", choices=["beta", "spline"])
        p.add_argument("--df", type=int)
        p.add_argument("--c0", type=float)
        p.add_argument("--grid", type=int)
        p.add_argument("--condition", nargs="+", help="conditioning variables, e.g. arm x1")
        p.add_argument("--boot", type=int)
        p.add_argument("--level", type=float)
        p.add_argument("--estimator", choices=list(ESTIMATORS[:3]))
        p.add_argument("--floor", type=float, help="positivity floor for IPW/AIPW")
        p.add_argument("--no-center", action="store_true", default=None)
        if name == "simulate":
            p.add_argument("--study", type=int, choices=[1, 2, 3])
            p.add_argument("--setting", choices=["a", "b", "c"])
            p.add_argument("--n", type=int, help="subjects per arm")
            p.add_argument("--reps", type=int)
        if name == "screen":
            p.add_argument("--alpha", type=float)
            p.add_argument("--reclass-frac", type=float)
            p.add_argument("--min-count", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SieveWarning)
            notes = COMMANDS[cfg.mode](cfg, out, stamp)
    except DatasetValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SieveError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    notes = list(notes) + [w.message for w in caught if issubclass(w.category, SieveWarning)]
    for note in notes:
        print(f"warning: {type(note).__name__}: {note}", file=sys.stderr)
    return 2 if notes else 0


if __name__ == "__main__":
    sys.exit(main())
