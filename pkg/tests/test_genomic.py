import math

import numpy as np
import pytest
from scipy import stats

from pcrpgf import amplicon, genomic, pgf
from pcrpgf.errors import ValidationError
from pcrpgf.genomic import GenomicParams

from oracles import binomial_start_mix, enumerate_counts, genomic_rules, marginal

RATES = {"g": 0.9, "g_d": 0.7, "h": 0.8, "h_d": 0.6, "a": 0.75, "a_d": 0.85}
XI = {"none": (0.0, 0.0, 0.0), "single": (0.15, 0.0, 0.0), "full": (0.15, 0.05, 0.1)}


def _exact(mode, K, rates=RATES):
    xs, xr, xf = XI[mode]
    rules = genomic_rules(mode, xs, xr, xf)
    params = GenomicParams(rates, xs, xr, xf, K=K)
    probs = {k: params.copy_prob(k) for k in rules}
    return enumerate_counts(rules, probs, {"g": 1, "g_d": 1}, K)


def test_rules_follow_copying_semantics():
    for mode, (xs, xr, xf) in XI.items():
        mine = genomic._rules(mode, xs, xr, xf)
        want = genomic_rules(mode, xs, xr, xf)
        assert set(mine) == set(want)
        for k in mine:
            assert sorted(mine[k]) == pytest.approx(sorted(want[k]))


@pytest.mark.parametrize("mode", ["none", "single", "full"])
@pytest.mark.parametrize("K", [1, 2])
def test_marginals_match_enumeration(mode, K):
    xs, xr, xf = XI[mode]
    kinds, dist = _exact(mode, K)
    size = 2**K - K - 1 + 1
    for M, phi in ((1, 1.0), (2, 0.6)):
        params = GenomicParams(RATES, xs, xr, xf, K=K, M=M, phi=phi)
        for order in (0, -1, -2, 1):
            if mode == "none" and order != 0 or mode == "single" and order not in (0, -1):
                continue
            sym = genomic.TAGGED[order]
            want = binomial_start_mix(marginal(kinds, dist, [sym], size), M, phi)
            got = genomic.tagged_dist(params, mode) if order == 0 else genomic.tagged_stutter_dist(params, order, mode)
            np.testing.assert_allclose(got, want[: got.size], atol=1e-12)
            assert abs(want[got.size:].sum()) < 1e-15


def test_three_cycles_without_stutter_match_enumeration():
    kinds, dist = _exact("none", 3)
    want = marginal(kinds, dist, ["a_d"], 5)
    got = genomic.tagged_dist(GenomicParams(RATES, K=3))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_full_efficiency_is_point_mass_at_eulerian_count():
    for K in (3, 7, 10):
        d = genomic.tagged_dist(GenomicParams.uniform(1.0, K=K))
        assert d.argmax() == 2**K - K - 1 and abs(d.max() - 1) < 1e-12


def test_deterministic_counts():
    assert genomic.deterministic_counts(0)["a_d"] == 0
    assert genomic.deterministic_counts(2)["a_d"] == 1
    assert genomic.deterministic_counts(10)["a_d"] == 1013
    table = genomic.deterministic_table(6)
    assert all(row["g"] == 1 and row["g_d"] == 1 for row in table)
    assert [row["a_d"] for row in table] == [2**n - n - 1 for n in range(7)]
    with pytest.raises(ValidationError):
        genomic.deterministic_table(-1)


def test_closed_form_mean():
    for n in (0, 1, 5, 14):
        assert genomic.mean_tagged(GenomicParams.uniform(1.0), n) == pytest.approx(2**n - n - 1, abs=1e-9)
        p = 0.83
        assert genomic.mean_tagged(GenomicParams.uniform(p), n) == pytest.approx((1 + p) ** n - n * p - 1, rel=1e-12,
                                                                                abs=1e-12)
    params = GenomicParams(RATES, K=12)
    assert genomic.mean_tagged(params) == pytest.approx(genomic.moment_matrices(params).mean_target, rel=1e-10)
    # degenerate amplicon rates fall back to the recurrence
    flat = GenomicParams({**RATES, "a": 0.0}, K=6)
    assert genomic.mean_tagged(flat) == pytest.approx(genomic.moment_matrices(flat).mean_target)


def test_moment_matrices_start_at_zero():
    m = genomic.moment_matrices(GenomicParams(RATES), 0, with_stutter=True)
    assert (m.mean_target, m.var_target, m.mean_stutter, m.var_stutter) == (0, 0, 0, 0)


@pytest.mark.parametrize("mode,order", [("none", 0), ("single", -1), ("full", -1), ("full", -2), ("full", 1)])
def test_distribution_moments_match_recurrence(mode, order):
    xs, xr, xf = (0.03, 0.01, 0.02) if mode != "none" else (0.0, 0.0, 0.0)
    params = GenomicParams(RATES, xs, xr if mode == "full" else 0, xf if mode == "full" else 0, K=14)
    ms = genomic.moment_matrices(params, with_stutter=order != 0, mode=mode, order=order if order else -1)
    if order == 0:
        m, v = pgf.moments_of(genomic.tagged_dist(params, mode))
        assert m == pytest.approx(ms.mean_target, rel=1e-6) and v == pytest.approx(ms.var_target, rel=1e-6)
    else:
        m, v = pgf.moments_of(genomic.tagged_stutter_dist(params, order, mode))
        assert m == pytest.approx(ms.mean_stutter, rel=1e-6) and v == pytest.approx(ms.var_stutter, rel=1e-6)


def test_full_rules_reduce_to_single_without_extra_stutter():
    a = GenomicParams(RATES, 0.04, 0.0, 0.0, K=9)
    np.testing.assert_allclose(genomic.tagged_dist(a, "full"), genomic.tagged_dist(a, "single"), atol=1e-13)
    assert abs(genomic.tagged_stutter_dist(a, 1, "full")[0] - 1) < 1e-12
    # a one-back strand may stutter again in the full rules, so only the pooled
    # one- and two-back counts coincide with the single-stutter count
    n = 512
    t = np.exp(-2j * np.pi * np.arange(n) / n)
    pooled = pgf.inverse_dft(genomic.system(a, "full").evaluate({"a_sd": t, "a_rd": t}, 9))
    single = pgf.inverse_dft(genomic.system(a, "single").evaluate({"a_sd": t}, 9))
    np.testing.assert_allclose(pooled, single, atol=1e-13)


def test_zero_stutter_gives_point_mass():
    d = genomic.tagged_stutter_dist(GenomicParams.uniform(0.85, K=8))
    assert abs(d[0] - 1) < 1e-12


def test_half_variance_of_amplicon_model():
    ratio = lambda n, p: (genomic.moment_matrices(GenomicParams.uniform(p, K=n)).var_target
                          / amplicon.moments(p, 0.0, n).var_target)
    assert ratio(20, 0.7) == pytest.approx(0.49997, abs=5e-5)
    assert ratio(24, 0.7) == pytest.approx(0.5, abs=1e-4)
    assert ratio(14, 0.9) == pytest.approx(0.5, abs=0.01)


def test_table_of_stutter_moments():
    ms = genomic.moment_matrices(GenomicParams.uniform(0.85, xi_s=0.03, K=16), with_stutter=True, mode="single")
    assert ms.mean_stutter == pytest.approx(3748.594, abs=0.01)
    assert ms.var_stutter == pytest.approx(2664897, abs=50)


def test_dropout_of_presampled_pairs():
    params = GenomicParams.uniform(0.9, xi_s=0.04, K=16)
    f0 = float(np.real(genomic.system(params, "single").evaluate({"a_d": 0.0}, 16)))
    assert (1 - 0.06 + 0.06 * f0) ** 30 == pytest.approx(0.94**30, abs=1e-12)
    assert 0.94**30 == pytest.approx(0.1562556, abs=1e-7)
    small = GenomicParams.uniform(0.9, xi_s=0.04, K=10, M=30, phi=0.06)
    f0 = float(np.real(genomic.system(small, "single").evaluate({"a_d": 0.0}, 10)))
    assert genomic.tagged_dist(small, "single")[0] == pytest.approx((0.94 + 0.06 * f0) ** 30, abs=1e-12)


def test_simulation_of_full_efficiency_and_no_stutter():
    rng = np.random.default_rng(0)
    for K in (0, 3, 8):
        out = genomic.simulate_genomic(GenomicParams.uniform(1.0, K=K), rng, pairs=1)
        assert out == genomic.deterministic_counts(K)
    out = genomic.simulate_genomic(GenomicParams.uniform(0.8, K=8), rng, "full", pairs=3)
    assert all(v == 0 for k, v in out.items() if k not in genomic.BASE_KINDS)
    assert out["g"] == 3 and out["g_d"] == 3


def test_simulation_matches_enumeration_at_two_cycles():
    kinds, dist = _exact("single", 2)
    params = GenomicParams(RATES, *XI["single"], K=2)
    rng = np.random.default_rng(4)
    n = 20000
    counts: dict = {}
    for _ in range(n):
        d = genomic.simulate_genomic(params, rng, "single", pairs=1)
        key = tuple(d.get(k, 0) for k in kinds)
        counts[key] = counts.get(key, 0) + 1
    states = sorted(dist, key=dist.get, reverse=True)
    common = [s for s in states if dist[s] * n >= 5]
    obs = [counts.get(s, 0) for s in common]
    exp = [dist[s] * n for s in common]
    obs.append(n - sum(obs))
    exp.append(n - sum(exp))
    assert stats.chisquare(obs, np.array(exp) * sum(obs) / sum(exp)).pvalue > 1e-3


def test_simulated_moments_and_covariance():
    params = GenomicParams(RATES, 0.1, 0.0, 0.0, K=6)
    rng = np.random.default_rng(8)
    n = 20000
    t = np.empty(n)
    s = np.empty(n)
    for i in range(n):
        d = genomic.simulate_genomic(params, rng, "single", pairs=1)
        t[i], s[i] = d["a_d"], d["a_sd"]
    ms = genomic.moment_matrices(params, with_stutter=True, mode="single")
    assert abs(t.mean() - ms.mean_target) < 4 * math.sqrt(ms.var_target / n)
    assert abs(s.mean() - ms.mean_stutter) < 4 * math.sqrt(ms.var_stutter / n)
    prod = (t - t.mean()) * (s - s.mean())
    assert abs(prod.mean() - ms.cov) < 4 * prod.std() / math.sqrt(n)
    # a covariance twice as large would be far outside the sampling error
    assert abs(prod.mean() - 2 * ms.cov) > 4 * prod.std() / math.sqrt(n)


def test_validation():
    with pytest.raises(ValidationError):
        GenomicParams.uniform(0.8, xi_s=0.6, xi_r=0.3, xi_f=0.2)
    with pytest.raises(ValidationError):
        GenomicParams({"g": 0.5})
    with pytest.raises(ValidationError):
        genomic.tracked_symbol("single", -2)
    with pytest.raises(ValidationError):
        genomic.system(GenomicParams.uniform(0.8), "double")
    p = GenomicParams.uniform(0.8, overrides={"h_s": 0.5})
    assert p.copy_prob("h_s") == 0.5 and p.copy_prob("h_sd") == 0.8
