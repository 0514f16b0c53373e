"""Maximum-likelihood cell counts and degradation, likelihood ratios and QQ diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .likelihood import MOMENT_MODELS, Epg, Evaluator, allele_height_dist, locus_contexts, source_unit, unit_moments
from .sample import Contributor, FrequencyTable, Kit, SampleConfig, selection_probability

#: Geometric degradation grid plus zero, per base pair.
DELTA_GRID = (0.0,) + tuple(float(x) for x in np.geomspace(1e-4, 3e-2, 25))


@dataclass(frozen=True)
class FitOptions:
    fit_delta: bool = True
    delta_grid: tuple[float, ...] = DELTA_GRID
    max_sweeps: int = 50
    max_cells: int = 1_000_000
    init_cells: tuple[int, ...] | None = None


@dataclass
class FitResult:
    """Best point found by the coordinate search and the accepted steps that led there."""

    ll_max: float
    cells: dict[str, int]
    delta_hat: float
    model: str
    trace: list[tuple[tuple[int, ...], float, float]] = field(default_factory=list)
    evaluations: int = 0
    note: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        d["trace"] = [[list(c), dl, ll] for c, dl, ll in self.trace]
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        d = json.loads(text)
        d["trace"] = [(tuple(c), dl, ll) for c, dl, ll in d.get("trace", [])]
        return cls(**d)


def lr_bans(ll_num: float, ll_den: float) -> float:
    """Weight of evidence ``log10 LR`` from two natural-log likelihoods."""
    if not (math.isfinite(ll_num) and math.isfinite(ll_den)):
        raise ValidationError("log-likelihoods must be finite")
    return (ll_num - ll_den) / math.log(10.0)


def expected_rfu_per_cell(contributor: Contributor, kit: Kit, cfg: SampleConfig) -> float:
    """Mean total peak height one cell of the contributor adds across the profile."""
    total = 0.0
    for locus in kit.loci:
        if contributor.genotype is not None:
            alleles = contributor.genotype[locus.name]
        else:
            mid = locus.alleles[len(locus.alleles) // 2].name
            alleles = (mid, mid)
        for a in alleles:
            unit = source_unit(locus, a, cfg)
            m = sum(unit_moments(unit, o)[0] for o in unit.offsets)
            total += selection_probability(cfg, locus.allele(a).size) * m / cfg.rho
    return total


def _initial(epg: Epg, contributors, free, kit, cfg) -> list[int]:
    observed = sum(h for l in epg.peaks.values() for h in l.values() if h >= cfg.threshold)
    fixed = sum(c.cells * expected_rfu_per_cell(c, kit, cfg) for c, f in zip(contributors, free) if not f)
    n_free = sum(free)
    out = []
    for c, f in zip(contributors, free):
        if not f:
            out.append(c.cells)
            continue
        per = expected_rfu_per_cell(c, kit, cfg)
        share = max(observed - fixed, 0.0) / max(n_free, 1)
        out.append(int(round(share / per)) if per > 0 else 0)
    return out


def fit(epg: Epg, contributors: Sequence[Contributor], kit: Kit, cfg: SampleConfig, model: str = "fft",
        freqs: FrequencyTable | None = None, free: Sequence[bool] | None = None,
        options: FitOptions = FitOptions(), threads: int = 1) -> FitResult:
    """Coordinate ascent over integer cell counts and a degradation grid.

    Each free contributor in turn gets an integer line search: steps of
    growing size while the likelihood improves, halving once it does not,
    down to single cells. The degradation rate moves over the grid the
    same way. Sweeps repeat until nothing changes. Only strict
    improvements are accepted, so the trace increases monotonically.
    """
    contributors = list(contributors)
    free = [True] * len(contributors) if free is None else list(free)
    if len(free) != len(contributors):
        raise ValidationError("one free flag per contributor")
    if not any(free) and not options.fit_delta:
        raise ValidationError("nothing to fit")
    grid = tuple(options.delta_grid) if options.fit_delta else (cfg.delta,)
    evaluators: dict[float, Evaluator] = {}
    memo: dict = {}
    count = [0]

    def ll(cells: tuple[int, ...], di: int) -> float:
        key = (cells, di)
        if key not in memo:
            d = grid[di]
            if d not in evaluators:
                evaluators[d] = Evaluator(kit, freqs, cfg.replace(delta=d), model, threads)
            hyp = [c.with_cells(n) for c, n in zip(contributors, cells)]
            memo[key] = evaluators[d].profile_loglik(epg, hyp).total
            count[0] += 1
        return memo[key]

    di = grid.index(cfg.delta) if cfg.delta in grid else 0
    start = list(options.init_cells) if options.init_cells is not None else _initial(epg, contributors, free, kit,
                                                                                      cfg.replace(delta=grid[di]))
    cells = tuple(min(max(int(c), 0), options.max_cells) for c in start)
    best = ll(cells, di)
    trace = [(cells, grid[di], best)]
    order = sorted((i for i in range(len(cells)) if free[i]), key=lambda i: (-cells[i], i))

    def line_search(get, put, lo: int, hi: int):
        nonlocal best
        x = get()
        step = max(1, x // 8)
        moved = False
        while step >= 1:
            improved = False
            for cand in (x + step, x - step):
                if cand < lo or cand > hi:
                    continue
                v = put(cand, probe=True)
                if v > best:
                    best = v
                    x = cand
                    put(cand, probe=False)
                    improved = moved = True
                    break
            step = step * 2 if improved else step // 2
        return moved

    for _ in range(options.max_sweeps):
        changed = False
        for i in order:
            def get(i=i):
                return cells[i]

            def put(v, probe, i=i):
                nonlocal cells
                cand = cells[:i] + (v,) + cells[i + 1:]
                val = ll(cand, di)
                if not probe:
                    cells = cand
                    trace.append((cells, grid[di], val))
                return val

            changed |= line_search(get, put, 0, options.max_cells)
        if len(grid) > 1:
            def dget():
                return di

            def dput(v, probe):
                nonlocal di
                val = ll(cells, v)
                if not probe:
                    di = v
                    trace.append((cells, grid[di], val))
                return val

            changed |= line_search(dget, dput, 0, len(grid) - 1)
        if not changed:
            break
    note = "likelihood flat around the start; no improving step" if len(trace) == 1 else ""
    return FitResult(best, {c.id: n for c, n in zip(contributors, cells)}, grid[di], model, trace, count[0], note)


def conditional_cdf(ctx, model: str) -> float:
    """Mid-p ``P(H < h | H >= T)`` of the observed height at a position."""
    h, T = ctx.height, ctx.threshold
    if model in MOMENT_MODELS:
        mh = allele_height_dist(ctx.with_height(None), model)
        lt, eq = mh.cdf_parts(h)
        below = mh.below(T)
    else:
        pmf = allele_height_dist(ctx, model)
        lt, eq = float(pmf[:h].sum()), float(pmf[h]) if h < pmf.size else 0.0
        below = float(pmf[:T].sum())
    if below >= 1.0:
        return float("nan")
    return min(max((lt + 0.5 * eq - below) / (1.0 - below), 0.0), 1.0)


def qq_diagnostic(epg: Epg, contributors: Sequence[Contributor], kit: Kit, cfg: SampleConfig, model: str = "fft",
                  freqs: FrequencyTable | None = None) -> list[tuple[float, float]]:
    """Sorted conditional CDF values of all observed peaks against uniform plotting positions.

    Other peaks enter only through the set of positions kept by the mFFT
    rule; under the factorised model the positions are otherwise
    independent. All contributors must be typed.
    """
    if any(not c.known for c in contributors):
        raise ValidationError("QQ diagnostics need typed contributors (fix genotypes first)")
    values = []
    for locus in kit.loci:
        heights = epg.locus(locus.name)
        copies: dict[str, int] = {}
        for c in contributors:
            for a in c.genotype[locus.name]:
                copies[a] = copies.get(a, 0) + c.cells
        for ctx in locus_contexts(locus, copies, cfg, model, freqs, heights):
            if ctx.height is not None:
                u = conditional_cdf(ctx, model)
                if math.isfinite(u):
                    values.append(u)
    values.sort()
    n = len(values)
    return [((i + 0.5) / n, v) for i, v in enumerate(values)]
