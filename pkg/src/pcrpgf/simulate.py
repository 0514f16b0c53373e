"""Forward simulation of electropherograms from the sample model.

The simulator draws strand-level PCR histories, so it carries none of the
factorisation shortcuts of the likelihood. Parameters come from the same
kit, frequency table and sample configuration objects.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import genomic
from .likelihood import Epg, dropin_unit, source_unit, unit_system
from .sample import Contributor, FrequencyTable, Kit, SampleConfig, amplicons_to_rfu, dropin_rate, \
    selection_probability, shift_allele

ROUTE = {genomic.TAGGED[o]: o for o in (0, -1, -2, 1)}


def simulate_locus_amplicons(locus, contributors: Sequence[Contributor], cfg: SampleConfig,
                             rng: np.random.Generator, freqs: FrequencyTable | None = None) -> dict[str, int]:
    """Tagged amplicon totals per position of one locus, before scaling and noise."""
    positions = locus.positions()
    totals = {p: 0 for p in positions}
    copies: dict[str, int] = {}
    for c in contributors:
        if c.genotype is None:
            raise ValueError(f"contributor {c.id} needs a genotype to be simulated")
        for a in c.genotype[locus.name]:
            copies[a] = copies.get(a, 0) + c.cells
    for allele, k in sorted(copies.items()):
        phi = selection_probability(cfg, locus.allele(allele).size)
        pairs = int(rng.binomial(k, phi))
        if pairs == 0:
            continue
        sysm = unit_system(source_unit(locus, allele, cfg))
        counts = sysm.simulate(rng, cfg.K, {"g": pairs, "g_d": pairs})
        for kind, n in zip(sysm.kinds, counts):
            if kind in ROUTE and n:
                dest = shift_allele(allele, ROUTE[kind]) if ROUTE[kind] else allele
                if dest is not None:
                    totals[dest] = totals.get(dest, 0) + int(n)
    din = unit_system(dropin_unit(locus, cfg))
    for p in positions:
        lam = dropin_rate(locus, p, freqs) if locus.has(p) else 0.0
        units = int(rng.poisson(lam)) if lam > 0 else 0
        if units:
            start = {r: units for r in din.roots}
            counts = din.simulate(rng, cfg.K, start)
            totals[p] += int(counts[din.index("a_d")])
    return totals


def simulate_epg(contributors: Sequence[Contributor], cfg: SampleConfig, kit: Kit, rng: np.random.Generator,
                 freqs: FrequencyTable | None = None, censor: bool = True) -> Epg:
    """One simulated EPG.

    Per position: amplified products from sampled genome pairs routed to
    their destination alleles, Poisson drop-in, nearest-RFU scaling and an
    independent noise draw. Peaks below the analytic threshold are removed
    when ``censor`` is set.
    """
    peaks: dict[str, dict[str, int]] = {}
    for locus in kit.loci:
        totals = simulate_locus_amplicons(locus, contributors, cfg, rng, freqs)
        noise = cfg.noise_for(locus.dye).array
        out = {}
        for p, n in totals.items():
            h = int(amplicons_to_rfu(n, cfg.rho))
            if noise.size > 1:
                h += int(rng.choice(noise.size, p=noise))
            if h > 0 and (h >= cfg.threshold or not censor):
                out[p] = h
        peaks[locus.name] = out
    return Epg(peaks)
