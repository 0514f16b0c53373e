import math

import numpy as np
import pytest

import pcrpgf
from pcrpgf import likelihood as lk
from pcrpgf.sample import Contributor, Kit, KitAllele, KitLocus, SampleConfig, amplicons_to_rfu
from pcrpgf.simulate import simulate_epg, simulate_locus_amplicons


def test_no_cells_no_dropin_no_noise_gives_empty_profile():
    kit = pcrpgf.default_kit().with_dropin_rate(0.0)
    people = [p.with_cells(0) for p in pcrpgf.default_profiles().values()]
    epg = simulate_epg(people, SampleConfig(), kit, np.random.default_rng(0), pcrpgf.default_frequencies())
    assert epg.n_peaks() == 0 and set(epg.peaks) == set(kit.names)


def test_perfect_amplification_is_deterministic():
    locus = KitLocus("L", "blue", 4, (KitAllele("10", 140.0), KitAllele("11", 144.0)),
                     copy_prob=tuple((k, 1.0) for k in ("g", "g_d", "h", "h_d", "a", "a_d")))
    cfg = SampleConfig(K=5, rho=1.0, threshold=1)
    het = Contributor("P", {"L": ("10", "11")}, 3)
    hom = Contributor("Q", {"L": ("11", "11")}, 2)
    totals = simulate_locus_amplicons(locus, [het, hom], cfg, np.random.default_rng(1))
    assert totals == {"10": 3 * 26, "11": 7 * 26}
    epg = simulate_epg([het, hom], cfg, Kit((locus,)), np.random.default_rng(1))
    assert epg.locus("L") == {"10": 78, "11": 182}


def test_same_seed_same_profile():
    kit, profiles = pcrpgf.default_kit(), pcrpgf.default_profiles()
    cfg = SampleConfig(psi=0.3, pi_f=0.06, noise=pcrpgf.default_noise())
    people = [profiles["P1"].with_cells(50), profiles["P2"].with_cells(200)]
    a = simulate_epg(people, cfg, kit, np.random.default_rng(7), pcrpgf.default_frequencies())
    b = simulate_epg(people, cfg, kit, np.random.default_rng(7), pcrpgf.default_frequencies())
    assert a == b
    assert all(h >= cfg.threshold for l in a.peaks.values() for h in l.values())


def test_untyped_contributors_cannot_be_simulated():
    kit = pcrpgf.default_kit()
    with pytest.raises(ValueError):
        simulate_epg([Contributor("U", None, 4)], SampleConfig(), kit, np.random.default_rng(0))


def test_simulated_heights_match_the_model_mean():
    """Per-position mean height over strand-level runs against the lattice distribution."""
    locus = pcrpgf.default_kit().loci[0]
    p1 = pcrpgf.default_profiles()["P1"].with_cells(20)
    cfg = SampleConfig(psi=0.3, pi_f=0.2, stutter_mode="full")
    rng = np.random.default_rng(2024)
    n = 4000
    positions = locus.positions()
    runs = []
    for _ in range(n):
        totals = simulate_locus_amplicons(locus, [p1], cfg, rng)
        runs.append([totals[p] for p in positions])
    runs = np.array(runs)
    heights = amplicons_to_rfu(runs, cfg.rho)
    copies = {}
    for a in p1.genotype[locus.name]:
        copies[a] = copies.get(a, 0) + p1.cells
    ctxs = {c.allele: c for c in lk.locus_contexts(locus, copies, cfg, "fft")}
    a1, a2 = p1.genotype[locus.name]
    checked = 0
    for i, p in enumerate(positions):
        ctx = ctxs[p]
        if not ctx.components:
            assert not heights[:, i].any()
            continue
        pmf = lk.allele_height_dist(ctx, "fft")
        mean = float((np.arange(pmf.size) * pmf).sum())
        se = heights[:, i].std() / math.sqrt(n)
        if mean > 0.5:
            assert abs(heights[:, i].mean() - mean) < 3 * se + 1e-9, p
            checked += 1
    assert checked >= 2
