"""Peak-height likelihoods under the factorised per-allele model.

Every allele position receives tagged amplicons from up to four kinds of
source: its own genomes (offset 0), genomes one repeat higher that stutter
back (-1), two repeats higher (-2) and one repeat lower that stutter
forward (+1). Each source with ``k`` genome copies selected with
probability ``phi`` contributes an independent factor ``(1 - phi + phi
G(t))^k``, where ``G`` is the tagged-product generating function of one
genome pair at that offset. Drop-in and baseline noise complete the
height distribution of the position.

Backends:

* ``fft``: exact distribution of the factorised model on the RFU lattice.
* ``fft-single``: as ``fft`` with only offsets 0 and -1.
* ``mfft``: as ``fft``, keeping a stutter source only when the source
  position shows a peak of at least three times the analytic threshold.
* ``normal``, ``lognormal``, ``gamma``: the exact atom at zero amplicons
  plus a moment-matched continuous density for the rest.

Amplicon counts are turned into heights by nearest-RFU binning, which on
the lattice is a multiplication of the spectrum by the transform of the
bin window. This is exact when the count distribution is smooth on the
scale of one RFU, which holds whenever a target or drop-in product is
present. Stutter products alone are not: they come from many small
families born late in the PCR. That part of the distribution is binned
exactly from its pmf on whole counts when the span is small, and otherwise
on a lattice ``FINE`` or more times finer whose cells tile the RFU bins,
then summed back to RFU. The atom at zero amplicons is kept out of the
binning so that it stays on height 0 exactly.
"""

from __future__ import annotations

import itertools
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy import special, stats

from . import genomic, pgf
from .errors import NonPositiveMoments, UnknownAllele, ValidationError
from .sample import (SEX_ALLELES, Contributor, FrequencyTable, Kit, KitLocus, NoiseModel, SampleConfig,
                     dropin_rate, selection_probability, shift_allele)

MODELS = ("normal", "lognormal", "gamma", "fft", "mfft", "fft-single")
MOMENT_MODELS = ("normal", "lognormal", "gamma")
OFFSETS = {"none": (0,), "single": (0, -1), "full": (0, -1, -2, 1)}
MFFT_FACTOR = 3.0
MAX_UNTYPED = 3
#: Lattice probabilities below this are treated as numerical floor; the
#: moment-matched Gamma density is used there instead.
TAIL_FLOOR = 1e-12
#: Sub-bins per RFU for the stutter-only part of a height distribution.
FINE = 512
EXACT_POINTS = 1 << 19


# ----------------------------------------------------------------------
# per-unit generating functions


@dataclass(frozen=True)
class Unit:
    """The PCR process of one starting unit (genome pair or drop-in amplicon pair)."""

    copy_prob: tuple[tuple[str, float], ...]
    xi_s: float
    xi_r: float
    xi_f: float
    K: int
    mode: str
    roots: tuple[str, ...] = ("g", "g_d")

    def params(self) -> genomic.GenomicParams:
        return genomic.GenomicParams(p=dict(self.copy_prob), xi_s=self.xi_s, xi_r=self.xi_r, xi_f=self.xi_f, K=self.K)

    @property
    def offsets(self) -> tuple[int, ...]:
        return OFFSETS[self.mode]


def source_unit(locus: KitLocus, allele: str, cfg: SampleConfig) -> Unit:
    a = locus.allele(allele)
    mode = cfg.stutter_mode if a.stutters else "none"
    if mode == "single":
        return Unit(locus.copy_prob, a.xi_s, 0.0, 0.0, cfg.K, mode)
    return Unit(locus.copy_prob, a.xi_s, a.xi_r, a.xi_f, cfg.K, mode)


def dropin_unit(locus: KitLocus, cfg: SampleConfig) -> Unit:
    roots = ("g", "g_d") if cfg.dropin_model == "genomic" else ("a", "a_d")
    return Unit(locus.copy_prob, 0.0, 0.0, 0.0, cfg.K, "none", roots)


@lru_cache(maxsize=256)
def unit_system(unit: Unit):
    return genomic.system(unit.params(), unit.mode, roots=unit.roots)


@lru_cache(maxsize=1024)
def unit_zero(unit: Unit, offset: int) -> float:
    """Probability that one unit leaves no tagged amplicon at the offset."""
    sym = genomic.TAGGED[offset]
    return float(np.real(unit_system(unit).evaluate({sym: 0.0}, unit.K)))


@lru_cache(maxsize=1024)
def unit_moments(unit: Unit, offset: int) -> tuple[float, float]:
    """Mean and variance of tagged amplicons at the offset from one unit."""
    sym = genomic.TAGGED[offset]
    m, _, v, _, _ = unit_system(unit).moments(sym, None, unit.K)
    return m, v


class _SpectrumCache:
    """Unit generating functions on RFU lattices, shared across lattice sizes.

    The lattice of size ``n`` is every ``k``-th point of the lattice of size
    ``k n``, so only the largest lattice computed so far is stored.
    """

    def __init__(self):
        self._store: dict = {}
        self._lock = threading.Lock()

    def get(self, unit: Unit, offset: int, n: int, rho: float) -> np.ndarray:
        key = (unit, offset, rho)
        with self._lock:
            hit = self._store.get(key)
        if hit is not None and hit[0] % n == 0:
            return hit[1][:: hit[0] // n][: n // 2 + 1]
        j = np.arange(n // 2 + 1)
        t = np.exp(-2j * np.pi * j / (n * rho))
        vals = unit_system(unit).evaluate({genomic.TAGGED[offset]: t}, unit.K)
        with self._lock:
            if len(self._store) > 512:
                self._store.clear()
            if hit is None or n > hit[0]:
                self._store[key] = (n, vals)
        return vals

    def clear(self):
        with self._lock:
            self._store.clear()


SPECTRA = _SpectrumCache()


def bin_kernel(n: int, rho: float) -> np.ndarray:
    """Transform of the nearest-RFU bin window at lattice frequencies ``2 pi j / n``.

    For integer ``rho`` this is the exact average of ``exp(-i w u / rho)``
    over the ``rho`` counts ``u`` of one bin; otherwise the continuous
    window ``sinc``.
    """
    w = 2 * np.pi * np.arange(n // 2 + 1) / n
    if rho == 1:
        return np.ones_like(w, dtype=complex)
    if float(rho).is_integer():
        r = int(rho)
        # counts rho*h - r//2 .. rho*h + (r-1)//2 round to height h
        return _box(w / r, -((r - 1) // 2), r)
    return np.sinc(w / (2 * np.pi)).astype(complex)


def _box(theta: np.ndarray, lo: int, r: int) -> np.ndarray:
    """Average of ``exp(-i theta u)`` over the integers ``u = lo .. lo + r - 1``."""
    theta = np.asarray(theta, dtype=float)
    half = np.sin(theta / 2)
    ratio = np.ones_like(theta)
    far = np.abs(half) >= 1e-15
    ratio[far] = np.sin(r * theta[far] / 2) / (r * half[far])
    return np.exp(-1j * theta * (lo + (r - 1) / 2)) * ratio


def fine_grid(rho: float, fine: int | None = None) -> tuple[int, bool]:
    """Sub-bins per RFU and whether every sub-bin holds the same whole number of counts."""
    fine = FINE if fine is None else fine
    if float(rho).is_integer():
        r = int(rho)
        if r <= fine:
            return r, True
        for m in range(fine, 8 * fine + 1):
            if r % m == 0:
                return m, True
    return fine, False


# ----------------------------------------------------------------------
# contexts


@dataclass(frozen=True)
class Component:
    """Tagged product landing on a position from ``copies`` genomes of a source allele."""

    source: str
    offset: int
    copies: int
    phi: float
    unit: Unit

    def zero(self) -> float:
        return (1.0 - self.phi + self.phi * unit_zero(self.unit, self.offset)) ** self.copies

    def moments(self) -> tuple[float, float]:
        m1, v1 = unit_moments(self.unit, self.offset)
        k, f = self.copies, self.phi
        return k * f * m1, k * f * v1 + k * f * (1 - f) * m1 * m1


@dataclass(frozen=True)
class AlleleContext:
    """Everything that shapes the peak height at one allele position."""

    locus: str
    allele: str
    components: tuple[Component, ...]
    dropin_rate: float
    dropin: Unit | None
    noise: NoiseModel
    rho: float
    threshold: int
    height: int | None = None

    def with_height(self, height: int | None) -> "AlleleContext":
        return AlleleContext(self.locus, self.allele, self.components, self.dropin_rate, self.dropin, self.noise,
                             self.rho, self.threshold, height)


def mfft_inclusion(peaks: Mapping[str, int], locus: KitLocus, threshold: float,
                   factor: float = MFFT_FACTOR) -> dict[str, set[int]]:
    """Offsets kept per position by the modified FFT model.

    Noise, drop-in and offset 0 are always kept. A stutter offset at
    position ``a`` is kept when its source position holds a peak of at
    least ``factor`` times the threshold (inclusive).
    """
    out = {}
    for pos in locus.positions(extra=peaks.keys()):
        keep = {0}
        for o in (-1, -2, 1):
            src = shift_allele(pos, -o)
            if src is not None and peaks.get(src, 0) >= factor * threshold:
                keep.add(o)
        out[pos] = keep
    return out


def locus_contexts(locus: KitLocus, copies: Mapping[str, int], cfg: SampleConfig, model: str,
                   freqs: FrequencyTable | None = None, heights: Mapping[str, int] | None = None,
                   ) -> list[AlleleContext]:
    """Allele contexts for every position of a locus given per-allele genome copies.

    ``heights`` holds the observed peaks; positions without a peak at or
    above the threshold are treated as below threshold.
    """
    if model not in MODELS:
        raise ValidationError(f"model must be one of {MODELS}")
    heights = dict(heights or {})
    observed = {a: h for a, h in heights.items() if h >= cfg.threshold}
    noise = cfg.noise_for(locus.dye)
    keep = mfft_inclusion(observed, locus, cfg.threshold) if model == "mfft" else None
    din = dropin_unit(locus, cfg)
    out = []
    for pos in locus.positions(extra=observed.keys()):
        comps = []
        for o in (0, -1, -2, 1):
            if model == "fft-single" and o not in (0, -1):
                continue
            if keep is not None and o not in keep[pos]:
                continue
            src = shift_allele(pos, -o) if o else pos
            if src is None or not locus.has(src):
                continue
            k = int(copies.get(src, 0))
            if k == 0:
                continue
            unit = source_unit(locus, src, cfg)
            if o not in unit.offsets:
                continue
            phi = selection_probability(cfg, locus.allele(src).size)
            if phi == 0:
                continue
            comps.append(Component(src, o, k, phi, unit))
        lam = dropin_rate(locus, pos, freqs) if locus.has(pos) else 0.0
        out.append(AlleleContext(locus.name, pos, tuple(comps), lam, din if lam > 0 else None, noise, cfg.rho,
                                 int(cfg.threshold), observed.get(pos)))
    return out


# ----------------------------------------------------------------------
# height distributions


@dataclass(frozen=True)
class MixedHeight:
    """Atom at zero amplicons plus a continuous positive part, both shifted by noise.

    ``zero`` is the probability of no amplicons at all; the positive part
    has the given height mean and variance (noise included).
    """

    zero: float
    mean: float
    var: float
    model: str
    noise: NoiseModel

    def _dist(self):
        return moment_matched_density(self.mean, self.var, self.model)

    def logpmf(self, h: int) -> float:
        noise = self.noise.array
        parts = []
        if self.zero > 0 and 0 <= h < noise.size and noise[h] > 0:
            parts.append(math.log(self.zero) + math.log(noise[h]))
        if self.zero < 1:
            parts.append(math.log1p(-self.zero) + float(self._dist().logpdf(h)))
        return float(special.logsumexp(parts)) if parts else -math.inf

    def below(self, T: int) -> float:
        noise = self.noise.array
        p = self.zero * float(noise[: max(T, 0)].sum())
        if self.zero < 1:
            p += (1 - self.zero) * float(self._dist().cdf(T - 0.5))
        return p

    def cdf_parts(self, h: int) -> tuple[float, float]:
        """``P(H < h)`` and ``P(H = h)`` with the density standing in for the bin mass."""
        noise = self.noise.array
        lt = self.zero * float(noise[: max(h, 0)].sum())
        eq = self.zero * (float(noise[h]) if 0 <= h < noise.size else 0.0)
        if self.zero < 1:
            d = self._dist()
            lt += (1 - self.zero) * float(d.cdf(h - 0.5))
            eq += (1 - self.zero) * float(d.cdf(h + 0.5) - d.cdf(h - 0.5))
        return lt, eq


class _Density:
    """A scipy family with fixed parameters, called without building frozen objects."""

    __slots__ = ("family", "args")

    def __init__(self, family, **args):
        self.family, self.args = family, args

    def logpdf(self, x):
        return self.family.logpdf(x, **self.args)

    def pdf(self, x):
        return self.family.pdf(x, **self.args)

    def cdf(self, x):
        return self.family.cdf(x, **self.args)

    def mean(self):
        return self.family.mean(**self.args)

    def var(self):
        return self.family.var(**self.args)


def moment_matched_density(mean: float, var: float, model: str) -> _Density:
    """Continuous density with the given mean and variance.

    Normal takes any mean; Lognormal and Gamma need both moments positive.
    """
    if model == "normal":
        if not var > 0:
            raise NonPositiveMoments("normal density needs a positive variance")
        return _Density(stats.norm, loc=mean, scale=math.sqrt(var))
    if not (mean > 0 and var > 0):
        raise NonPositiveMoments(f"{model} density needs positive mean and variance, got {mean}, {var}")
    if model == "gamma":
        return _Density(stats.gamma, a=mean * mean / var, scale=var / mean)
    if model == "lognormal":
        s2 = math.log1p(var / (mean * mean))
        return _Density(stats.lognorm, s=math.sqrt(s2), scale=mean * math.exp(-s2 / 2))
    raise ValidationError(f"no moment-matched family {model!r}")


def _totals(ctx: AlleleContext) -> tuple[float, float, float]:
    """Zero probability, mean and variance of total amplicons at a position."""
    zero, mean, var = 1.0, 0.0, 0.0
    for c in ctx.components:
        zero *= c.zero()
        m, v = c.moments()
        mean += m
        var += v
    if ctx.dropin_rate > 0:
        z1 = unit_zero(ctx.dropin, 0)
        m1, v1 = unit_moments(ctx.dropin, 0)
        zero *= math.exp(-ctx.dropin_rate * (1 - z1))
        mean += ctx.dropin_rate * m1
        var += ctx.dropin_rate * (v1 + m1 * m1)
    return zero, mean, var


def mixed_height(ctx: AlleleContext, model: str) -> MixedHeight:
    """Moment-model height distribution: exact zero atom, moment-matched positive part."""
    zero, mean, var = _totals(ctx)
    nm, nv = ctx.noise.moments()
    if zero >= 1.0:
        return MixedHeight(1.0, nm, nv, model, ctx.noise)
    pos_mean = mean / (1 - zero)
    pos_var = max((var + mean * mean) / (1 - zero) - pos_mean * pos_mean, 0.0)
    scale = ctx.rho
    hv = pos_var / scale**2 + nv
    if hv <= 0:
        hv = 1e-12
    return MixedHeight(zero, pos_mean / scale + nm, hv, model, ctx.noise)


def lattice_size(ctx: AlleleContext, extra: int = 0, components: Sequence[Component] | None = None,
                 dropin: bool = True) -> int:
    """Power-of-two RFU lattice covering the height distribution and the observation.

    ``components`` and ``dropin`` restrict the span to part of the context.
    """
    comps = ctx.components if components is None else components
    mean = var = chunk = 0.0
    for c in comps:
        m, v = c.moments()
        mean, var = mean + m, var + v
        m1, v1 = unit_moments(c.unit, c.offset)
        chunk = max(chunk, m1 + 12 * math.sqrt(v1))
    if dropin and ctx.dropin_rate > 0:
        m1, v1 = unit_moments(ctx.dropin, 0)
        lam = ctx.dropin_rate
        mean, var = mean + lam * m1, var + lam * (v1 + m1 * m1)
        chunk = max(chunk, (lam + 12 * math.sqrt(lam) + 2) * (m1 + 12 * math.sqrt(v1)))
    hi = (mean + 12 * math.sqrt(var) + 2 * chunk) / ctx.rho
    hi = max(hi, ctx.height or 0, ctx.threshold, extra) + ctx.noise.width + 16
    return pgf.next_pow2(int(math.ceil(hi)) + 1)


def _product(parts, n: int, rho: float) -> tuple[np.ndarray, float]:
    """Half-spectrum on the lattice ``(n, rho)`` of a sum of independent parts, and its zero atom."""
    total = np.ones(n // 2 + 1, dtype=complex)
    zero = 1.0
    for unit, offset, k, phi in parts:
        g = SPECTRA.get(unit, offset, n, rho)
        if k is None:
            # Poisson number of units with mean phi
            total *= np.exp(phi * (g - 1.0))
            zero *= math.exp(-phi * (1 - unit_zero(unit, 0)))
        else:
            total *= (1.0 - phi + phi * g) ** k
            zero *= (1.0 - phi + phi * unit_zero(unit, offset)) ** k
    return total, zero


def _parts(ctx: AlleleContext, comps, dropin: bool):
    out = [(c.unit, c.offset, c.copies, c.phi) for c in comps]
    if dropin and ctx.dropin_rate > 0:
        out.append((ctx.dropin, 0, None, ctx.dropin_rate))
    return out


def _count_binned(parts, n: int, rho: float) -> np.ndarray:
    """RFU pmf of a sum of parts on ``0..n-1`` from its pmf on whole counts."""
    size = pgf.next_pow2(int(math.ceil(n * rho)) + 1)
    total, zero = _product(parts, size, 1.0)
    counts = np.fft.irfft(total, size)
    idx = np.floor(np.arange(size) / rho + 0.5).astype(np.int64)
    out = np.bincount(idx, weights=counts, minlength=n)[:n]
    out.setflags(write=False)
    return out


def _fine_binned(parts, n: int, rho: float) -> np.ndarray:
    """Binned RFU pmf of a sum of parts on ``0..n-1``, via sub-bins of ``rho / m`` counts.

    Small spans are binned exactly from whole counts. Results are cached
    and read-only.
    """
    return _fine_binned_cached(tuple(parts), n, rho, FINE, EXACT_POINTS)


@lru_cache(maxsize=4096)
def _fine_binned_cached(parts, n: int, rho: float, fine: int, exact_points: int) -> np.ndarray:
    if n * rho <= exact_points:
        return _count_binned(parts, n, rho)
    m, whole = fine_grid(rho, fine)
    b = rho / m
    nf = n * m
    total, zero = _product(parts, nf, b)
    theta = 2 * np.pi * np.arange(nf // 2 + 1) / (nf * b)
    if whole:
        # sub-bin i holds the counts b*i - rho//2 .. b*i - rho//2 + b - 1
        r, half = int(round(b)), int(rho) // 2
        spec = (total - zero) * _box(theta, 0, r) * np.exp(-1j * theta * (half - r + 1))
        at0 = half // r
    else:
        # sub-bin i covers [b*i - rho/2, b*i - rho/2 + b)
        spec = (total - zero) * np.sinc(theta * b / (2 * np.pi)) * np.exp(-1j * theta * (rho - b) / 2)
        at0 = int(math.floor(rho / 2 / b))
    fine = np.fft.irfft(spec, nf)
    fine[at0] += zero
    out = fine.reshape(n, m).sum(axis=1)
    out.setflags(write=False)
    return out


def binned_heights(ctx: AlleleContext, n: int) -> tuple[np.ndarray, float]:
    """Pmf of the nearest-RFU amplicon height on ``0..n-1``, before noise, and its zero atom.

    Stutter components alone are binned on the fine lattice. Whenever a
    target or drop-in product is present the total is smooth on the RFU
    scale and the RFU lattice is used.
    """
    rough = [c for c in ctx.components if c.offset != 0]
    smooth = [c for c in ctx.components if c.offset == 0]
    s_total, s_zero = _product(_parts(ctx, smooth, True), n, ctx.rho)
    if not rough:
        spec = s_zero + (s_total - s_zero) * bin_kernel(n, ctx.rho)
        return np.fft.irfft(spec, n), s_zero
    r_total, r_zero = _product(_parts(ctx, rough, False), n, ctx.rho)
    out = np.fft.irfft((s_total - s_zero) * r_total * bin_kernel(n, ctx.rho), n)
    if s_zero > 0:
        nr = min(n, lattice_size(ctx.with_height(None), components=rough, dropin=False))
        out[:nr] += s_zero * _fine_binned(_parts(ctx, rough, False), nr, ctx.rho)
    return out, s_zero * r_zero


def lattice_spectrum(ctx: AlleleContext, n: int) -> tuple[np.ndarray, float]:
    """Half-spectrum of the binned amplicon height at a position, before noise, and its zero atom."""
    pmf, zero = binned_heights(ctx, n)
    return np.fft.rfft(pmf), zero


def allele_height_dist(ctx: AlleleContext, model: str = "fft", n: int | None = None):
    """Height distribution at a position.

    Lattice backends return a pmf over RFU ``0..n-1``; moment backends
    return a :class:`MixedHeight`.
    """
    if model in MOMENT_MODELS:
        return mixed_height(ctx, model)
    n = lattice_size(ctx) if n is None else n
    pmf, _ = binned_heights(ctx, n)
    if ctx.noise.width > 1:
        noise = np.zeros(n)
        w = min(ctx.noise.width, n)
        noise[:w] = ctx.noise.array[:w]
        pmf = np.fft.irfft(np.fft.rfft(pmf) * np.fft.rfft(noise), n)
    return np.where(pmf < 0, 0.0, pmf)


def allele_component_dist(comp: Component, cfg: SampleConfig, model: str = "fft", n: int | None = None):
    """Distribution of one component alone: an RFU pmf (lattice) or ``(zero, mean, var)`` in amplicons."""
    if model in MOMENT_MODELS:
        m, v = comp.moments()
        return comp.zero(), m, v
    ctx = AlleleContext("", comp.source, (comp,), 0.0, None, NoiseModel(), cfg.rho, 0, None)
    return allele_height_dist(ctx, "fft", n)


# ----------------------------------------------------------------------
# log-likelihoods


def peak_loglik(ctx: AlleleContext, model: str) -> float:
    """Log-probability of the observation at one position.

    An observed peak contributes its RFU bin mass (density times one RFU
    for moment models); a position below threshold contributes the mass
    strictly below the threshold, the zero atom included.
    """
    if model in MOMENT_MODELS:
        mh = mixed_height(ctx, model)
        if ctx.height is None:
            p = mh.below(ctx.threshold)
            return math.log(p) if p > 0 else -math.inf
        return mh.logpmf(ctx.height)
    pmf = allele_height_dist(ctx, model)
    if ctx.height is None:
        p = float(pmf[: ctx.threshold].sum())
        if p > TAIL_FLOOR or ctx.threshold == 0:
            return math.log(p) if p > 0 else -math.inf
        return _fallback(ctx)
    p = float(pmf[ctx.height])
    if p > TAIL_FLOOR:
        return math.log(p)
    return _fallback(ctx)


def _fallback(ctx: AlleleContext) -> float:
    mh = mixed_height(ctx, "gamma")
    if ctx.height is None:
        p = mh.below(ctx.threshold)
        return math.log(p) if p > 0 else -math.inf
    return mh.logpmf(ctx.height)


def genotype_probability(genotype: Sequence[str], freqs: Mapping[str, float], theta: float = 0.0,
                         seen: Mapping[str, int] | None = None) -> float:
    """Probability of an unordered genotype under the Balding-Nichols sampling formula.

    Alleles are drawn one after the other; with ``n`` alleles already seen,
    ``m`` of them of type ``a``, the next is ``a`` with probability
    ``(m theta + (1 - theta) p_a) / (1 + (n - 1) theta)``. ``seen`` holds
    alleles observed before this genotype. Heterozygotes count both orders.
    """
    if not 0.0 <= theta < 1.0:
        raise ValidationError("theta must lie in [0, 1)")
    counts = dict(seen or {})
    n = sum(counts.values())
    prob = 1.0
    for a in genotype:
        if a not in freqs:
            raise UnknownAllele(f"allele {a} missing from frequency table")
        m = counts.get(a, 0)
        prob *= (m * theta + (1 - theta) * freqs[a]) / (1 + (n - 1) * theta)
        counts[a] = m + 1
        n += 1
    if genotype[0] != genotype[1]:
        prob *= 2.0
    return prob


@dataclass(frozen=True)
class Epg:
    """Observed peaks: ``peaks[locus][allele] = height``."""

    peaks: Mapping[str, Mapping[str, int]]

    def locus(self, name: str) -> dict[str, int]:
        return dict(self.peaks.get(name, {}))

    def n_peaks(self, threshold: int = 0) -> int:
        return sum(1 for l in self.peaks.values() for h in l.values() if h >= threshold)


@dataclass
class LogLikResult:
    total: float
    per_locus: dict[str, float] = field(default_factory=dict)


class Evaluator:
    """Profile log-likelihoods with memoised position terms.

    One instance serves many hypotheses over the same kit, frequencies and
    model, which is the pattern of cell-count fitting.
    """

    def __init__(self, kit: Kit, freqs: FrequencyTable | None, cfg: SampleConfig, model: str = "fft",
                 threads: int = 1):
        if model not in MODELS:
            raise ValidationError(f"model must be one of {MODELS}")
        self.kit, self.freqs, self.cfg, self.model = kit, freqs, cfg, model
        self.threads = max(1, int(threads))
        self._memo: dict = {}

    def position_loglik(self, ctx: AlleleContext) -> float:
        v = self._memo.get(ctx)
        if v is None:
            v = peak_loglik(ctx, self.model)
            if len(self._memo) > 200000:
                self._memo.clear()
            self._memo[ctx] = v
        return v

    def _copies(self, locus: str, contributors: Sequence[Contributor], extra=()) -> dict[str, int]:
        k: dict[str, int] = {}
        for c in contributors:
            if c.genotype is None or c.cells == 0:
                continue
            for a in c.genotype[locus]:
                k[a] = k.get(a, 0) + c.cells
        for a, cells in extra:
            k[a] = k.get(a, 0) + cells
        return k

    def _genotype_terms(self, locus: KitLocus, known: Sequence[Contributor], untyped: Sequence[Contributor]):
        """Yield ``(log prior, extra copies)`` over untyped genotype combinations."""
        if not untyped:
            yield 0.0, ()
            return
        if len(untyped) > MAX_UNTYPED:
            raise ValidationError(f"at most {MAX_UNTYPED} untyped contributors are enumerated")
        if locus.is_sex and (self.freqs is None or locus.name not in self.freqs.freqs):
            options = [(("X", "X"), 0.5), (("X", "Y"), 0.5)]
            for combo in itertools.product(options, repeat=len(untyped)):
                lp = sum(math.log(p) for _, p in combo)
                extra = tuple((a, u.cells) for (g, _), u in zip(combo, untyped) for a in g)
                yield lp, extra
            return
        if self.freqs is None:
            raise ValidationError("untyped contributors need a frequency table")
        table = self.freqs.freqs.get(locus.name)
        if table is None:
            raise ValidationError(f"locus {locus.name} missing from frequency table")
        alleles = [a for a in self.freqs.alleles(locus.name) if locus.has(a)]
        pairs = [(a, b) for i, a in enumerate(alleles) for b in alleles[i:]]
        seen: dict[str, int] = {}
        for c in known:
            for a in c.genotype[locus.name]:
                seen[a] = seen.get(a, 0) + 1
        for combo in itertools.product(pairs, repeat=len(untyped)):
            s = dict(seen)
            lp = 0.0
            for g in combo:
                lp += math.log(genotype_probability(g, table, self.cfg.theta, s))
                for a in g:
                    s[a] = s.get(a, 0) + 1
            extra = tuple((a, u.cells) for g, u in zip(combo, untyped) for a in g)
            yield lp, extra

    def locus_loglik(self, locus: KitLocus, heights: Mapping[str, int], contributors: Sequence[Contributor]) -> float:
        known = [c for c in contributors if c.known]
        untyped = [c for c in contributors if not c.known]
        for c in known:
            if locus.name not in c.genotype:
                raise ValidationError(f"contributor {c.id} has no genotype at {locus.name}")
            for a in c.genotype[locus.name]:
                if not locus.has(a):
                    raise UnknownAllele(f"allele {a} of {c.id} not in kit locus {locus.name}")
        terms = []
        for lp, extra in self._genotype_terms(locus, known, untyped):
            copies = self._copies(locus.name, known, extra)
            ctxs = locus_contexts(locus, copies, self.cfg, self.model, self.freqs, heights)
            terms.append(lp + sum(self.position_loglik(c) for c in ctxs))
        return float(special.logsumexp(terms)) if terms else 0.0

    def profile_loglik(self, epg: Epg, contributors: Sequence[Contributor]) -> LogLikResult:
        for name in epg.peaks:
            self.kit.locus(name)
        res = LogLikResult(0.0)

        def one(locus):
            return self.locus_loglik(locus, epg.locus(locus.name), contributors)

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                values = list(pool.map(one, self.kit.loci))
        else:
            values = [one(l) for l in self.kit.loci]
        # summed in kit order so the total does not depend on scheduling
        for locus, v in zip(self.kit.loci, values):
            res.per_locus[locus.name] = v
        res.total = float(sum(values))
        return res


def profile_loglik(epg: Epg, contributors: Sequence[Contributor], kit: Kit, cfg: SampleConfig, model: str = "fft",
                   freqs: FrequencyTable | None = None, threads: int = 1) -> LogLikResult:
    """Log-likelihood of an EPG: sum over loci of the genotype-averaged position products."""
    return Evaluator(kit, freqs, cfg, model, threads).profile_loglik(epg, contributors)
