"""Run the simulation studies the acceptance suite checks and cache their
metrics under results/<name>/.

    python3 scripts/run_acceptance_studies.py            # all studies
    python3 scripts/run_acceptance_studies.py --only study3_c --reps 50

Interrupted runs resume from results/<name>/replicates.csv.
"""
import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from deepsieve.simulator import MissingSpec, SimConfig, run_robustness_study, run_study

ROOT = Path(__file__).resolve().parents[1]
SEED = 20240

STUDIES = {
    "study1_c": SimConfig(study=1, setting="c", seed=SEED),
    "study3_c": SimConfig(study=3, setting="c", seed=SEED),
    "study3_a": SimConfig(study=3, setting="a", seed=SEED),
    "study2_b": SimConfig(study=2, setting="b", seed=SEED),
}
ROBUSTNESS = {"robustness": SimConfig(study=1, setting="c", seed=SEED, missing=MissingSpec())}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", nargs="*", help="subset of study names")
    ap.add_argument("--reps", type=int, help="override replicate count")
    ap.add_argument("--boot", type=int, help="override bootstrap size")
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    names = args.only or list(STUDIES) + list(ROBUSTNESS)
    for name in names:
        config = {**STUDIES, **ROBUSTNESS}[name]
        if args.reps:
            config = replace(config, reps=args.reps)
        if args.boot:
            config = replace(config, boot=args.boot)
        out = Path(args.out) / name
        start = time.time()

        def progress(done, total):
            if done % 10 == 0 or done == total:
                print(f"{name}: {done}/{total} ({time.time() - start:.0f}s)", flush=True)

        if name in ROBUSTNESS:
            run_robustness_study(config, out, progress=progress)
        else:
            run_study(config, out, n_jobs=args.jobs, progress=progress)
        print(f"{name}: done in {time.time() - start:.0f}s -> {out}", flush=True)


if __name__ == "__main__":
    sys.exit(main())
