import json

import numpy as np
import pytest
from scipy import stats

from deepsieve.errors import ConfigError, ImpossibleTruncation
from deepsieve.simulator import (BASE_RATES, SETTINGS, X_EFFECTS, MissingSpec, SimConfig,
                                 draw_depth, gen_replicate, robustness_replicate,
                                 run_study, truncated_beta_sample)


@pytest.fixture(scope="module")
def big_a():
    return gen_replicate(SimConfig(study=1, setting="a", n=100_000), 0)


def test_event_probability_by_follow_up(big_a):
    ds = big_a.dataset
    placebo = ds.arm == 0
    # mixture over X of 1 - exp(-5 * (gamma0 + gamma1))
    expected = np.mean([1 - np.exp(-5 * sum(BASE_RATES[j] * np.exp(X_EFFECTS[j] * x)
                                            for j in (0, 1))) for x in (0, 1)])
    assert expected == pytest.approx(0.167, abs=5e-4)
    assert abs(ds.event[placebo].mean() - expected) < 0.005
    assert np.all(ds.time <= 5.0) and np.all(ds.time[~ds.event] == 5.0)


def test_type_split_matches_rates(big_a):
    ds, cause = big_a.dataset, big_a.cause
    x = ds.covariates[:, 0]
    b0, b1, _ = SETTINGS["a"]
    for z in (0, 1):
        for xv in (0, 1):
            cell = ds.event & (ds.arm == z) & (x == xv)
            g0 = BASE_RATES[0] * np.exp(b0 * z + X_EFFECTS[0] * xv)
            g1 = BASE_RATES[1] * np.exp(b1 * z + X_EFFECTS[1] * xv)
            p = g1 / (g0 + g1)
            se = np.sqrt(p * (1 - p) / cell.sum())
            assert abs(np.mean(cause[cell] == 1) - p) < 3 * se


def test_study1_depth_and_marks(big_a):
    ds = big_a.dataset
    assert np.all(ds.m[ds.event] == 2000)
    assert np.all(ds.k[~ds.event] == -1)
    q, cause = big_a.q, big_a.cause
    assert np.all(q[cause == 0] < 0.01) and np.all(q[cause == 1] >= 0.01)


def test_marks_are_binomial_given_depth_and_q():
    rep = gen_replicate(SimConfig(study=2, setting="b", n=20_000), 1)
    ev = rep.dataset.event
    k, m, q = rep.k[ev], rep.m[ev], rep.q[ev]
    # randomized probability integral transform is uniform under Binomial(m, q)
    v = np.random.default_rng(0).uniform(size=k.size)
    u = stats.binom.cdf(k - 1, m, q) + v * stats.binom.pmf(k, m, q)
    counts = np.histogram(u, bins=10, range=(0, 1))[0]
    assert stats.chisquare(counts).pvalue > 0.001


def test_setting_truth():
    assert np.allclose(SimConfig(setting="c").true_ve, [0.5, 0.05])
    assert np.allclose(SimConfig(setting="b").true_ve, [0.5, 0.5])
    assert np.allclose(SimConfig(setting="a").true_ve, [0.0, 0.0])


def test_truncated_beta_full_range_is_beta():
    rng = np.random.default_rng(1)
    x = truncated_beta_sample(0.5, 5.7, 0.0, 1.0, rng, size=10_000)
    assert stats.kstest(x, stats.beta(0.5, 5.7).cdf).pvalue > 0.001


@pytest.mark.parametrize("lo, hi", [(0.0, 0.01), (0.01, 1.0), (0.2, 0.3)])
def test_truncated_beta_support(lo, hi):
    rng = np.random.default_rng(2)
    x = truncated_beta_sample(0.5, 3.8, lo, hi, rng, size=5000)
    assert np.all((x >= lo) & (x < hi))
    dist = stats.beta(0.5, 3.8)
    cdf = lambda v: (dist.cdf(v) - dist.cdf(lo)) / (dist.cdf(hi) - dist.cdf(lo))
    assert stats.kstest(x, cdf).pvalue > 0.001


def test_truncated_beta_symmetric_mean():
    rng = np.random.default_rng(3)
    n = 20_000
    x = truncated_beta_sample(2.0, 2.0, 0.0, 1.0, rng, size=n)
    assert abs(x.mean() - 0.5) < 3 * np.sqrt(1 / 20) / np.sqrt(n)


def test_truncated_beta_impossible():
    with pytest.raises(ImpossibleTruncation):
        truncated_beta_sample(0.5, 5000.0, 0.99, 1.0, np.random.default_rng(0), size=3)


def test_study2_depth_profile():
    rng = np.random.default_rng(4)
    z = np.repeat([0, 1], 20_000)
    m = draw_depth(2, z, rng)
    assert abs(np.mean(m <= 15) - 0.4) < 3 * np.sqrt(0.24 / m.size)
    assert m.min() >= 1 and m.max() <= 1000
    assert set(np.unique(m[m <= 15])) == set(range(1, 16))


def test_study3_depth_profile():
    rng = np.random.default_rng(5)
    z = np.repeat([0, 1], 20_000)
    m = draw_depth(3, z, rng)
    for arm, frac in ((0, 0.2), (1, 0.4)):
        shallow = np.mean(m[z == arm] <= 15)
        assert abs(shallow - frac) < 3 * np.sqrt(frac * (1 - frac) / 20_000)


def test_generator_deterministic():
    config = SimConfig(study=3, setting="c", n=500, seed=11)
    a, b = gen_replicate(config, 7), gen_replicate(config, 7)
    np.testing.assert_array_equal(a.dataset.time, b.dataset.time)
    np.testing.assert_array_equal(a.k, b.k)
    c = gen_replicate(config, 8)
    assert not np.array_equal(a.dataset.time, c.dataset.time)


@pytest.mark.parametrize("kw", [dict(setting="d"), dict(study=4), dict(n=0),
                                dict(q0=1.0), dict(estimators=("fancy",))])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        SimConfig(**kw)


def test_missingness_generator():
    config = SimConfig(n=5000, missing=MissingSpec())
    rep = gen_replicate(config, 0)
    ds = rep.dataset
    ev = ds.event
    assert ds.aux_names == ("a1",)
    # type-1 endpoints have larger auxiliary values and so are sequenced more often
    seq1 = ds.sequenced[ev & (rep.cause == 1)].mean()
    seq0 = ds.sequenced[ev & (rep.cause == 0)].mean()
    assert seq1 > seq0
    assert np.all(ds.k[ev & ~ds.sequenced] == -1)
    assert np.all(rep.k[ev] >= 0)


def test_robustness_replicate_runs():
    out = robustness_replicate(SimConfig(n=400, missing=MissingSpec()), 0)
    assert 0 < out["sequenced_frac"] < 1
    for name in ("complete", "ipw", "aipw", "aipw_bad_m", "aipw_bad_pi", "ipw_bad_pi"):
        assert len(out[name]) == 2


def test_small_study_is_reproducible(tmp_path):
    config = SimConfig(study=1, setting="c", n=300, reps=3, boot=1, seed=5,
                       prior_family="beta")
    first = run_study(config, tmp_path / "a")
    second = run_study(config, tmp_path / "b")
    assert (tmp_path / "a" / "replicates.csv").read_bytes() == \
        (tmp_path / "b" / "replicates.csv").read_bytes()
    assert first.to_dict() == second.to_dict()
    # resuming a finished study leaves the results unchanged
    again = run_study(config, tmp_path / "a")
    assert again.to_dict() == first.to_dict()
    metrics = json.loads((tmp_path / "a" / "metrics.json").read_text())
    for name in ("corrected", "uncorrected"):
        summary = metrics["estimators"][name]
        assert summary["replicates"] == 3
        assert 0 <= summary["power"] <= 1
        assert 0 <= summary["type_0"]["coverage"] <= 1
