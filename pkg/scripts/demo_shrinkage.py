"""Show how classification probabilities borrow strength from the fitted prior.

Endpoints are drawn from a two-component mixture of mismatch proportions
(most near 0, a minority near 0.3), with depths from 1 to 2000.  For each
depth the script prints the mean posterior probability of the upper bin
for endpoints whose observed K/M is 0 and for those with K/M above the
threshold, next to the naive 0/1 label.

    python3 scripts/demo_shrinkage.py [--seed 3] [--q0 0.05]
"""
import argparse

import numpy as np

from deepsieve.classify import classify_dataset
from deepsieve.datamodel import Dataset, ThresholdSpec
from deepsieve.deconvolve import ConditioningSpec, PriorOptions, fit_priors

DEPTHS = (1, 2, 5, 15, 100, 2000)


def simulate(rng, n_per_depth=300):
    m = np.repeat(DEPTHS, n_per_depth)
    high = rng.uniform(size=m.size) < 0.3
    q = np.where(high, rng.beta(6, 14, m.size), rng.beta(0.5, 200, m.size))
    k = rng.binomial(m, q)
    n = m.size
    return Dataset.from_arrays(arm=rng.integers(0, 2, n), time=rng.exponential(1, n),
                               event=np.ones(n, bool), k=k, m=m), q


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--q0", type=float, default=0.05)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    ds, q = simulate(rng)
    pooled = ConditioningSpec(())
    priors = fit_priors(ds, pooled, PriorOptions("spline", 10, 1.0))
    prior = priors.for_cell("all")
    spec = ThresholdSpec.binary(args.q0)
    table = classify_dataset(ds, priors, pooled, spec)
    nu = table.nu[:, 1]

    print(f"prior mass above {args.q0}: {prior.tail(args.q0):.3f} "
          f"(true fraction {np.mean(q >= args.q0):.3f})")
    print(f"{'depth':>6} {'nu | K=0':>10} {'nu | K/M>=q0':>13} {'true J=1 | K=0':>15}")
    for d in DEPTHS:
        at = table.m == d
        zero = at & (table.k == 0)
        pos = at & (table.naive_bin == 1)
        truth = np.mean(q[zero] >= args.q0) if zero.any() else np.nan
        print(f"{d:>6} {nu[zero].mean():>10.3f} {nu[pos].mean() if pos.any() else np.nan:>13.3f}"
              f" {truth:>15.3f}")


if __name__ == "__main__":
    main()
