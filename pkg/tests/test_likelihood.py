import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

import pcrpgf
from pcrpgf import genomic, pgf
from pcrpgf import likelihood as lk
from pcrpgf.errors import NonPositiveMoments, ValidationError
from pcrpgf.sample import Contributor, FrequencyTable, Kit, KitAllele, KitLocus, NoiseModel, SampleConfig

from oracles import binomial_start_mix, direct_convolve, enumerate_counts, genomic_rules, marginal

RATES = (("g", 0.9), ("g_d", 0.8), ("h", 0.85), ("h_d", 0.75), ("a", 0.8), ("a_d", 0.7))
NOISE = NoiseModel((0.5, 0.3, 0.2))


def _locus(xi=0.0, rate=0.0, name="L1"):
    alleles = tuple(KitAllele(str(n), 100.0 + 4 * n, xi_s=xi) for n in range(8, 14))
    return KitLocus(name, "blue", 4, alleles, copy_prob=RATES, dropin_rate=rate)


def _pair_pmf(K):
    rules = genomic_rules("none")
    probs = dict(RATES)
    kinds, dist = enumerate_counts(rules, probs, {"g": 1, "g_d": 1}, K)
    return marginal(kinds, dist, ["a_d"])


def _compound_poisson(unit, lam, size):
    out = np.zeros(size)
    power = np.array([1.0])
    for m in range(60):
        w = stats.poisson.pmf(m, lam)
        out[: min(power.size, size)] += w * power[:size]
        power = direct_convolve(power, unit)
    return out


def test_genotype_probabilities():
    f = {"a": 0.1, "b": 0.3, "c": 0.6}
    assert lk.genotype_probability(("a", "b"), f) == pytest.approx(2 * 0.1 * 0.3)
    assert lk.genotype_probability(("c", "c"), f) == pytest.approx(0.36)
    th = 0.03
    assert lk.genotype_probability(("c", "c"), f, th) == pytest.approx(0.6 * (th + (1 - th) * 0.6))
    assert lk.genotype_probability(("c", "c"), f, th) > 0.36
    seen = {"a": 2}
    want = (2 * th + (1 - th) * 0.1) / (1 + th) * (3 * th + (1 - th) * 0.1) / (1 + 2 * th)
    assert lk.genotype_probability(("a", "a"), f, th, seen) == pytest.approx(want)


@settings(max_examples=30)
@given(st.floats(0, 0.3), st.dictionaries(st.sampled_from("abcd"), st.integers(0, 3), max_size=3))
def test_genotype_probabilities_sum_to_one(theta, seen):
    f = {"a": 0.1, "b": 0.2, "c": 0.3, "d": 0.4}
    al = sorted(f)
    total = sum(lk.genotype_probability((x, y), f, theta, seen) for i, x in enumerate(al) for y in al[i:])
    assert total == pytest.approx(1.0, abs=1e-12)


def test_mfft_threshold_factor_is_inclusive():
    locus = _locus(0.01)
    keep = lk.mfft_inclusion({"10": 87}, locus, 30)
    assert keep["9"] == {0}
    keep = lk.mfft_inclusion({"10": 90}, locus, 30)
    assert keep["9"] == {0, -1} and keep["8"] == {0, -2} and keep["11"] == {0, 1}


def test_mfft_equals_fft_when_every_source_is_tall():
    locus = _locus(0.02)
    cfg = SampleConfig(K=10, rho=1.0, threshold=5, noise={"blue": NOISE}, stutter_mode="full")
    copies = {"10": 2, "11": 2}
    heights = {"10": 400, "11": 380}
    a = lk.locus_contexts(locus, copies, cfg, "fft", heights=heights)
    b = lk.locus_contexts(locus, copies, cfg, "mfft", heights=heights)
    assert [c.components for c in a] == [c.components for c in b]
    low = lk.locus_contexts(locus, copies, cfg, "mfft", heights={"10": 12, "11": 13})
    assert all(c.offset == 0 for ctx in low for c in ctx.components)


def test_moment_matched_families():
    g = lk.moment_matched_density(4.0, 8.0, "gamma")
    assert g.args["a"] == pytest.approx(2.0) and g.args["scale"] == pytest.approx(2.0)
    for model in ("gamma", "lognormal", "normal"):
        d = lk.moment_matched_density(37.0, 110.0, model)
        assert d.mean() == pytest.approx(37.0) and d.var() == pytest.approx(110.0)
    with pytest.raises(NonPositiveMoments):
        lk.moment_matched_density(0.0, 1.0, "gamma")
    with pytest.raises(NonPositiveMoments):
        lk.moment_matched_density(3.0, 0.0, "normal")


def test_lattice_distribution_is_exact_for_the_factorised_model():
    K = 4
    locus = _locus(0.0, rate=0.5)
    freqs = FrequencyTable({"L1": {"10": 1.0}})
    cfg = SampleConfig(K=K, rho=1.0, threshold=0, psi=0.6, noise={"blue": NOISE}, stutter_mode="none")
    ctx = [c for c in lk.locus_contexts(locus, {"10": 3}, cfg, "fft", freqs) if c.allele == "10"][0]
    pair = _pair_pmf(K)
    counts = direct_convolve(binomial_start_mix(pair, 3, 0.6), _compound_poisson(pair, 0.5, 200))
    want = direct_convolve(counts, NOISE.array)[:128]
    got = lk.allele_height_dist(ctx, "fft", 128)
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert got.sum() == pytest.approx(1.0, abs=1e-12)


def _binned(K, rho, copies):
    counts = genomic.tagged_dist(genomic.GenomicParams(dict(RATES), K=K, M=copies, phi=1.0))
    idx = np.floor(np.arange(counts.size) / rho + 0.5).astype(int)
    out = np.zeros(idx.max() + 1)
    np.add.at(out, idx, counts)
    return out


@pytest.mark.parametrize("K,rho", [(10, 3.0), (12, 10.0), (14, 64.0)])
def test_lattice_binning_matches_nearest_rfu_rounding(K, rho):
    cfg = SampleConfig(K=K, rho=rho, threshold=0, stutter_mode="none")
    ctx = [c for c in lk.locus_contexts(_locus(), {"10": 2}, cfg, "fft") if c.allele == "10"][0]
    want = _binned(K, rho, 2)
    got = lk.allele_height_dist(ctx, "fft", pgf.next_pow2(want.size + 16))
    np.testing.assert_allclose(got[: want.size], want, atol=1e-12 * want.max())


def test_fractional_scale_uses_the_smooth_bin_average():
    # bins alternately hold 50 and 51 whole counts, a relative ripple of about 1/rho
    rho = 50.5
    cfg = SampleConfig(K=14, rho=rho, threshold=0, stutter_mode="none")
    ctx = [c for c in lk.locus_contexts(_locus(), {"10": 2}, cfg, "fft") if c.allele == "10"][0]
    want = _binned(14, rho, 2)
    got = lk.allele_height_dist(ctx, "fft", pgf.next_pow2(want.size + 16))[: want.size]
    assert np.abs(got - want).max() < 1.5 / rho * want.max()
    assert got.sum() == pytest.approx(1.0, abs=1e-9)


def _stutter_ctx(K, rho, copies=3, xi=0.05):
    cfg = SampleConfig(K=K, rho=rho, threshold=0, psi=1.0, pi_f=1.0, stutter_mode="single")
    return [c for c in lk.locus_contexts(_locus(xi), {"10": copies}, cfg, "fft") if c.allele == "9"][0]


def _stutter_binned(ctx, size):
    (c,) = ctx.components
    params = genomic.GenomicParams(p=dict(RATES), xi_s=c.unit.xi_s, K=c.unit.K, M=c.copies, phi=c.phi)
    counts = genomic.tagged_stutter_dist(params, -1)
    idx = np.floor(np.arange(counts.size) / ctx.rho + 0.5).astype(int)
    return np.bincount(idx, weights=counts, minlength=size)[:size]


@pytest.mark.parametrize("K,rho", [(12, 1.0), (12, 3.0), (14, 50.5), (14, 64.0), (14, 1000.0)])
def test_stutter_only_position_is_binned_exactly(K, rho):
    ctx = _stutter_ctx(K, rho)
    assert [c.offset for c in ctx.components] == [-1]
    n = lk.lattice_size(ctx)
    pmf, zero = lk.binned_heights(ctx, n)
    np.testing.assert_allclose(pmf, _stutter_binned(ctx, n), atol=1e-12)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)
    assert zero == pytest.approx(ctx.components[0].zero(), rel=1e-12)


@pytest.mark.parametrize("rho", [64.0, 96.0, 100.0])
def test_sub_bin_lattice_tiles_rfu_bins(monkeypatch, rho):
    # one sub-bin per whole count, so the sub-bin path must be exact too
    monkeypatch.setattr(lk, "EXACT_POINTS", 0)
    monkeypatch.setattr(lk, "FINE", 128)
    assert lk.fine_grid(rho) == (int(rho), True)
    ctx = _stutter_ctx(14, rho)
    n = lk.lattice_size(ctx)
    pmf, _ = lk.binned_heights(ctx, n)
    np.testing.assert_allclose(pmf, _stutter_binned(ctx, n), atol=1e-12)


def test_fine_grid_prefers_divisors_of_the_scale(monkeypatch):
    monkeypatch.setattr(lk, "FINE", 512)
    assert lk.fine_grid(64.0) == (64, True)
    assert lk.fine_grid(800000.0) == (625, True)
    assert lk.fine_grid(1031.0) == (1031, True)
    assert lk.fine_grid(4099.0) == (512, False)
    assert lk.fine_grid(800000.5) == (512, False)


@settings(max_examples=25, deadline=None)
@given(st.integers(8, 14), st.floats(1.0, 3000.0), st.integers(1, 30), st.floats(0.01, 0.2))
def test_stutter_height_pmf_sums_to_one(K, rho, copies, xi):
    ctx = _stutter_ctx(K, rho, copies, xi)
    pmf = lk.allele_height_dist(ctx, "fft")
    assert pmf.sum() == pytest.approx(1.0, abs=1e-8)


def test_dropout_atom_and_empty_position():
    locus = _locus(0.0)
    cfg = SampleConfig(K=28, psi=0.05, threshold=30, noise={"blue": NOISE}, stutter_mode="none")
    ctx = [c for c in lk.locus_contexts(locus, {"10": 4}, cfg, "fft") if c.allele == "10"][0]
    phi = ctx.components[0].phi
    _, zero = lk.lattice_spectrum(ctx, 256)
    assert zero == pytest.approx((1 - phi) ** 4, rel=1e-9)
    empty = [c for c in lk.locus_contexts(locus, {"10": 4}, cfg, "fft") if c.allele == "12"][0]
    assert empty.components == ()
    got = lk.allele_height_dist(empty, "fft", 64)
    np.testing.assert_allclose(got[:3], NOISE.array, atol=1e-14)
    assert lk.peak_loglik(empty, "fft") == pytest.approx(0.0, abs=1e-12)
    assert lk.peak_loglik(empty, "gamma") == pytest.approx(0.0, abs=1e-12)
    mh = lk.mixed_height(ctx, "gamma")
    assert mh.zero == pytest.approx((1 - phi) ** 4, rel=1e-9)


def test_all_positions_mean_increases_with_copies():
    locus = _locus(0.01)
    cfg = SampleConfig(K=28, psi=0.1, noise={"blue": NOISE})
    means = []
    for k in (1, 2, 5, 20):
        ctx = [c for c in lk.locus_contexts(locus, {"10": k}, cfg, "gamma") if c.allele == "10"][0]
        mh = lk.mixed_height(ctx, "gamma")
        means.append((1 - mh.zero) * mh.mean + mh.zero * NOISE.moments()[0])
    assert all(a < b for a, b in zip(means, means[1:]))


def test_moment_and_lattice_models_agree_at_high_template():
    locus = _locus(0.0)
    cfg = SampleConfig(K=28, psi=1.0, threshold=1, stutter_mode="none")
    ctx = [c for c in lk.locus_contexts(locus, {"10": 500}, cfg, "fft") if c.allele == "10"][0]
    mh = lk.mixed_height(ctx, "gamma")
    h = int(round(mh.mean))
    ctx = ctx.with_height(h)
    vals = [lk.peak_loglik(ctx, m) for m in ("normal", "lognormal", "gamma", "fft")]
    assert max(vals) - min(vals) < 0.05


def _kit():
    return Kit((_locus(0.01, 0.01, "L1"), _locus(0.01, 0.01, "L2"), _locus(0.01, 0.01, "L3")))


def _people():
    p1 = Contributor("P1", {"L1": ("9", "11"), "L2": ("10", "10"), "L3": ("8", "13")}, 3)
    p2 = Contributor("P2", {"L1": ("11", "12"), "L2": ("9", "12"), "L3": ("10", "13")}, 1)
    return p1, p2


def _freqs():
    return FrequencyTable({l: {str(n): 10 + 3 * n for n in range(8, 14)} for l in ("L1", "L2", "L3")})


EPG = lk.Epg({"L1": {"9": 140, "11": 190, "12": 55, "10": 31}, "L2": {"10": 260, "9": 40, "12": 44},
              "L3": {"8": 120, "13": 170, "10": 50}})


def test_log_likelihood_is_invariant_to_ordering():
    cfg = SampleConfig(K=28, psi=0.05, threshold=30, noise={"*": NOISE})
    p1, p2 = _people()
    base = lk.profile_loglik(EPG, [p1, p2], _kit(), cfg, "gamma", _freqs()).total
    shuffled = lk.Epg({l: dict(reversed(list(EPG.peaks[l].items()))) for l in reversed(list(EPG.peaks))})
    kit = Kit(tuple(reversed(_kit().loci)))
    assert lk.profile_loglik(shuffled, [p2, p1], kit, cfg, "gamma", _freqs()).total == pytest.approx(base, abs=1e-10)
    threaded = lk.profile_loglik(EPG, [p1, p2], _kit(), cfg, "gamma", _freqs(), threads=3).total
    assert threaded == base


def test_untyped_contributor_sums_over_all_genotypes():
    cfg = SampleConfig(K=28, psi=0.05, threshold=30, noise={"*": NOISE}, theta=0.02)
    p1, _ = _people()
    ev = lk.Evaluator(_kit(), _freqs(), cfg, "gamma")
    u = Contributor("U1", None, 1)
    terms = list(ev._genotype_terms(_kit().loci[0], [p1], [u]))
    assert len(terms) == 6 * 7 // 2
    assert sum(math.exp(lp) for lp, _ in terms) == pytest.approx(1.0, abs=1e-12)
    two = list(ev._genotype_terms(_kit().loci[0], [p1], [u, Contributor("U2", None, 2)]))
    assert len(two) == 21**2
    assert sum(math.exp(lp) for lp, _ in two) == pytest.approx(1.0, abs=1e-12)
    # the untyped total is the prior-weighted mixture of the typed totals
    ll = ev.locus_loglik(_kit().loci[0], EPG.locus("L1"), [p1, u])
    want = []
    for lp, extra in terms:
        g = tuple(a for a, _ in extra)
        typed = Contributor("U1", {"L1": g}, 1)
        want.append(lp + ev.locus_loglik(_kit().loci[0], EPG.locus("L1"), [p1, typed]))
    assert ll == pytest.approx(float(np.logaddexp.reduce(want)), abs=1e-10)
    with pytest.raises(ValidationError):
        list(ev._genotype_terms(_kit().loci[0], [], [Contributor(f"U{i}", None, 1) for i in range(4)]))


def test_default_kit_log_likelihood_is_finite_for_every_model():
    kit, freqs, profiles = pcrpgf.default_kit(), pcrpgf.default_frequencies(), pcrpgf.default_profiles()
    cfg = SampleConfig(psi=0.3, pi_f=0.06, noise=pcrpgf.default_noise())
    people = [profiles["P1"].with_cells(60), profiles["P2"].with_cells(200)]
    peaks = {}
    for l in kit.loci:
        peaks[l.name] = {a: 100 + 20 * i for i, a in enumerate(sorted(set(people[0].genotype[l.name])
                                                                        | set(people[1].genotype[l.name])))}
    epg = lk.Epg(peaks)
    for model in lk.MODELS:
        res = lk.profile_loglik(epg, people, kit, cfg, model, freqs)
        assert math.isfinite(res.total) and set(res.per_locus) == set(kit.names)


def test_model_name_is_checked():
    with pytest.raises(ValidationError):
        lk.Evaluator(_kit(), None, SampleConfig(), "poisson")
    np.testing.assert_array_equal(lk.bin_kernel(8, 1.0), np.ones(5))
