"""Forensic sample model: kit loci, contributors, extraction, drop-in, RFU scale and noise.

Each allele copy in the sample is one genome pair. A pair reaches the PCR
tube with probability ``psi * pi_f * exp(-delta * size)``: extraction,
aliquot fraction and survival of degradation over the amplified length.
The PCR product count of tagged amplicons is converted to a peak height
by dividing by ``rho`` (amplicons per RFU) and adding baseline noise.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import genomic, pgf
from .errors import MissingNoiseModel, ParseError, UnknownAllele, ValidationError

STUTTER_OFFSETS = (-2, -1, 1)
_ALLELE_RE = re.compile(r"^(\d+)(?:\.(\d))?$")
SEX_ALLELES = ("X", "Y")


# ----------------------------------------------------------------------
# allele designations


def parse_allele(text: str) -> str:
    """Canonical allele designation; repeat numbers with an optional one-digit variant, or X/Y."""
    t = str(text).strip()
    if t.upper() in SEX_ALLELES:
        return t.upper()
    m = _ALLELE_RE.match(t)
    if not m:
        raise ParseError(f"malformed allele designation {text!r}")
    whole = str(int(m.group(1)))
    return whole if m.group(2) in (None, "0") else f"{whole}.{m.group(2)}"


def shift_allele(allele: str, offset: int) -> str | None:
    """Designation ``offset`` whole repeats away, keeping any partial-repeat variant.

    ``9.3`` shifted by -1 is ``8.3``. Sex alleles and shifts below zero
    repeats return None.
    """
    if allele in SEX_ALLELES:
        return None
    whole, _, frac = allele.partition(".")
    n = int(whole) + offset
    if n < 0:
        return None
    return f"{n}.{frac}" if frac else str(n)


def allele_sort_key(allele: str):
    if allele in SEX_ALLELES:
        return (-1, allele)
    return (0, float(allele))


# ----------------------------------------------------------------------
# kit


@dataclass(frozen=True)
class KitAllele:
    """One allele of a kit locus with its amplicon size and stutter probabilities."""

    name: str
    size: float
    xi_s: float = 0.0
    xi_r: float = 0.0
    xi_f: float = 0.0

    def __post_init__(self):
        if not self.size > 0:
            raise ValidationError(f"allele {self.name}: base-pair size must be positive")
        for v in (self.xi_s, self.xi_r, self.xi_f):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"allele {self.name}: stutter probabilities must lie in [0, 1]")
        if self.xi_s + self.xi_r + self.xi_f > 1.0 + 1e-12:
            raise ValidationError(f"allele {self.name}: stutter probabilities sum above 1")

    @property
    def stutters(self) -> bool:
        return self.xi_s + self.xi_r + self.xi_f > 0


@dataclass(frozen=True)
class KitLocus:
    """A kit locus: dye lane, repeat length, strand copy probabilities and alleles.

    ``copy_prob`` holds the six base strand copy probabilities. Sex-typing
    loci never stutter. ``dropin_rate`` is the locus-wide rate shared out
    over alleles in proportion to their population frequency.
    """

    name: str
    dye: str
    repeat: int
    alleles: tuple[KitAllele, ...]
    copy_prob: tuple[tuple[str, float], ...] = tuple((k, 0.85) for k in genomic.BASE_KINDS)
    dropin_rate: float = 0.0

    def __post_init__(self):
        if self.repeat <= 0:
            raise ValidationError(f"locus {self.name}: repeat length must be positive")
        if self.dropin_rate < 0:
            raise ValidationError(f"locus {self.name}: drop-in rate must be non-negative")
        names = [a.name for a in self.alleles]
        if len(set(names)) != len(names):
            raise ValidationError(f"locus {self.name}: duplicate allele")
        probs = dict(self.copy_prob)
        for k in genomic.BASE_KINDS:
            if k not in probs or not 0.0 <= probs[k] <= 1.0:
                raise ValidationError(f"locus {self.name}: copy probability for {k} missing or outside [0, 1]")
        if self.is_sex and any(a.stutters for a in self.alleles):
            raise ValidationError(f"locus {self.name}: sex-typing alleles do not stutter")
        object.__setattr__(self, "_by_name", {a.name: a for a in self.alleles})

    @property
    def is_sex(self) -> bool:
        return all(a.name in SEX_ALLELES for a in self.alleles)

    def allele(self, name: str) -> KitAllele:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownAllele(f"allele {name} not in kit locus {self.name}") from None

    def has(self, name: str) -> bool:
        return name in self._by_name

    def size_of(self, name: str) -> float:
        """Base-pair size of an allele, extrapolated by whole repeats for off-kit positions."""
        if self.has(name):
            return self.allele(name).size
        ref = min(self.alleles, key=lambda a: abs(float(a.name) - float(name)) if a.name not in SEX_ALLELES else 1e9)
        return ref.size + (float(name) - float(ref.name)) * self.repeat

    def positions(self, extra=()) -> tuple[str, ...]:
        """Every allele position at which product can appear: kit alleles, their stutter targets and ``extra``."""
        out = {a.name for a in self.alleles}
        for a in self.alleles:
            if a.stutters:
                for o in STUTTER_OFFSETS:
                    s = shift_allele(a.name, o)
                    if s is not None:
                        out.add(s)
        out.update(extra)
        return tuple(sorted(out, key=allele_sort_key))

    def pcr_params(self, allele: str, K: int) -> genomic.GenomicParams:
        a = self.allele(allele)
        return genomic.GenomicParams(p=dict(self.copy_prob), xi_s=a.xi_s, xi_r=a.xi_r, xi_f=a.xi_f, K=K)


@dataclass(frozen=True)
class Kit:
    loci: tuple[KitLocus, ...]

    def __post_init__(self):
        names = [l.name for l in self.loci]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate locus in kit")

    def locus(self, name: str) -> KitLocus:
        for l in self.loci:
            if l.name == name:
                return l
        raise ValidationError(f"locus {name} not in kit")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.loci)

    def with_dropin_rate(self, rate: float) -> "Kit":
        """Same kit with every locus-wide drop-in rate set to ``rate``."""
        return Kit(tuple(replace(l, dropin_rate=rate) for l in self.loci))

    def with_stutter(self, xi_s: float, xi_r: float = 0.0, xi_f: float = 0.0) -> "Kit":
        """Same kit with uniform stutter probabilities on every allele of the repeat loci."""
        loci = []
        for l in self.loci:
            if l.is_sex:
                loci.append(l)
                continue
            alleles = tuple(replace(a, xi_s=xi_s, xi_r=xi_r, xi_f=xi_f) for a in l.alleles)
            loci.append(replace(l, alleles=alleles))
        return Kit(tuple(loci))


# ----------------------------------------------------------------------
# frequencies


@dataclass(frozen=True)
class FrequencyTable:
    """Population allele counts per locus with the minimum-count adjustment.

    ``raw`` keeps the input values (counts or frequencies). ``freqs`` are
    the adjusted frequencies used for genotype probabilities: every count
    is raised to at least ``min_count`` and the locus renormalised. When
    the input already holds frequencies, they are only renormalised.
    ``relative`` holds the unadjusted frequencies used to share out drop-in.
    """

    raw: Mapping[str, Mapping[str, float]]
    min_count: float = 5.0
    freqs: Mapping[str, Mapping[str, float]] = field(init=False)
    relative: Mapping[str, Mapping[str, float]] = field(init=False)

    def __post_init__(self):
        adj, rel = {}, {}
        for locus, table in self.raw.items():
            vals = {a: float(v) for a, v in table.items()}
            if any(v < 0 for v in vals.values()):
                raise ValidationError(f"locus {locus}: negative allele count")
            total = sum(vals.values())
            if total <= 0:
                raise ValidationError(f"locus {locus}: allele counts sum to zero")
            rel[locus] = {a: v / total for a, v in vals.items()}
            counts = all(v >= 1 or v == 0 for v in vals.values()) and total > 1.5
            if counts:
                raised = {a: max(v, self.min_count) for a, v in vals.items()}
            else:
                raised = dict(vals)
            t2 = sum(raised.values())
            adj[locus] = {a: v / t2 for a, v in raised.items()}
        object.__setattr__(self, "freqs", adj)
        object.__setattr__(self, "relative", rel)

    def freq(self, locus: str, allele: str) -> float:
        try:
            return self.freqs[locus][allele]
        except KeyError:
            raise UnknownAllele(f"allele {allele} at {locus} missing from frequency table") from None

    def alleles(self, locus: str) -> tuple[str, ...]:
        if locus not in self.freqs:
            raise ValidationError(f"locus {locus} missing from frequency table")
        return tuple(sorted(self.freqs[locus], key=allele_sort_key))


# ----------------------------------------------------------------------
# contributors and sample configuration


@dataclass(frozen=True)
class Contributor:
    """A person in the sample: a genotype per locus (None when untyped) and a cell count."""

    id: str
    genotype: Mapping[str, tuple[str, str]] | None
    cells: int = 0
    population: str = "default"

    def __post_init__(self):
        if int(self.cells) != self.cells or self.cells < 0:
            raise ValidationError(f"contributor {self.id}: cells must be a non-negative integer")
        if self.genotype is not None:
            for locus, g in self.genotype.items():
                if len(g) != 2:
                    raise ValidationError(f"contributor {self.id}: genotype at {locus} must have two alleles")

    @property
    def known(self) -> bool:
        return self.genotype is not None

    def with_cells(self, cells: int) -> "Contributor":
        return Contributor(self.id, self.genotype, int(cells), self.population)

    def copies(self, locus: str, allele: str) -> int:
        """Allele copies per cell, in 0..2."""
        if self.genotype is None:
            raise ValidationError(f"contributor {self.id} is untyped")
        return sum(1 for a in self.genotype[locus] if a == allele)


@dataclass(frozen=True)
class NoiseModel:
    """Baseline noise peak height pmf over integer RFU ``0..len(pmf)-1``."""

    pmf: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        v = np.asarray(self.pmf, dtype=float)
        if v.size == 0 or np.any(v < 0):
            raise ValidationError("noise pmf must be non-empty and non-negative")
        if abs(v.sum() - 1.0) > 1e-9:
            raise ValidationError(f"noise pmf sums to {v.sum()}, not 1")

    @classmethod
    def from_values(cls, probs, cutoff: int | None = None) -> "NoiseModel":
        """Build from raw bin weights, truncating above ``cutoff`` RFU and renormalising."""
        v = np.asarray(probs, dtype=float)
        if cutoff is not None:
            v = v[: cutoff + 1]
        total = v.sum()
        if total <= 0:
            raise ValidationError("noise pmf has no mass")
        # already normalised input is kept bit-exact so files round-trip
        if abs(total - 1.0) > 1e-12:
            v = v / total
        return cls(tuple(float(x) for x in v))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.pmf, dtype=float)

    @property
    def width(self) -> int:
        return len(self.pmf)

    def moments(self) -> tuple[float, float]:
        return pgf.moments_of(self.array)


@dataclass(frozen=True)
class SampleConfig:
    """Sample processing and detection settings shared by likelihood and simulation."""

    psi: float = 1.0
    pi_f: float = 1.0
    delta: float = 0.0
    K: int = 28
    rho: float = 800000.0
    threshold: int = 30
    noise: Mapping[str, NoiseModel] = field(default_factory=dict)
    dropin_model: str = "genomic"
    theta: float = 0.02
    stutter_mode: str = "full"

    def __post_init__(self):
        for name in ("psi", "pi_f"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if self.delta < 0:
            raise ValidationError("degradation rate must be non-negative")
        if not self.rho > 0:
            raise ValidationError("rho must be positive")
        if self.threshold < 0 or int(self.threshold) != self.threshold:
            raise ValidationError("analytic threshold must be a non-negative integer")
        if self.dropin_model not in ("genomic", "amplicon"):
            raise ValidationError("drop-in model must be 'genomic' or 'amplicon'")
        if not 0.0 <= self.theta < 1.0:
            raise ValidationError("theta must lie in [0, 1)")
        if self.stutter_mode not in genomic.MODES:
            raise ValidationError(f"stutter mode must be one of {genomic.MODES}")

    def replace(self, **kw) -> "SampleConfig":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(kw)
        return SampleConfig(**data)

    @property
    def phi(self) -> float:
        """Selection probability of an undegraded pair."""
        return self.psi * self.pi_f

    def noise_for(self, dye: str) -> NoiseModel:
        if dye in self.noise:
            return self.noise[dye]
        if "*" in self.noise:
            return self.noise["*"]
        if not self.noise:
            return NoiseModel()
        raise MissingNoiseModel(f"no baseline noise model for dye {dye}")


# ----------------------------------------------------------------------
# operations


def selection_probability(cfg: SampleConfig, size: float) -> float:
    """Probability that one genome pair of an allele of ``size`` base pairs is amplified."""
    if not size > 0:
        raise ValidationError("base-pair size must be positive")
    return cfg.psi * cfg.pi_f * math.exp(-cfg.delta * size)


def extraction_pgf_variant(variant: str, pi_e: float, lam: float = 1.0, lam_d: float | None = None):
    """Generating function ``E(t_g, t_gd)`` of the strands of one extracted genome pair.

    ``none``: the pair is extracted intact with probability ``pi_e``.
    ``joint_break``: the pair also survives a break with probability ``lam``.
    ``independent_breaks``: each strand of an extracted pair survives on its
    own, with probabilities ``lam`` and ``lam_d``.
    """
    lam_d = lam if lam_d is None else lam_d
    for v in (pi_e, lam, lam_d):
        if not 0.0 <= v <= 1.0:
            raise ValidationError("extraction probabilities must lie in [0, 1]")
    if variant == "none":
        return lambda tg, tgd: 1.0 - pi_e + pi_e * tg * tgd
    if variant == "joint_break":
        return lambda tg, tgd: 1.0 - pi_e * lam + pi_e * lam * tg * tgd
    if variant == "independent_breaks":
        return lambda tg, tgd: 1.0 - pi_e + pi_e * (1.0 - lam + lam * tg) * (1.0 - lam_d + lam_d * tgd)
    raise ValidationError(f"unknown extraction variant {variant!r}")


def dropin_rate(locus: KitLocus, allele: str, freqs: FrequencyTable | None) -> float:
    """Allele drop-in rate: locus rate times the unadjusted relative allele frequency."""
    if locus.dropin_rate == 0 or freqs is None:
        return 0.0
    return locus.dropin_rate * freqs.relative.get(locus.name, {}).get(allele, 0.0)


def dropin_system(locus: KitLocus, cfg: SampleConfig):
    """Branching system of one drop-in unit: a genome pair or an amplicon pair, without stutter."""
    params = genomic.GenomicParams(p=dict(locus.copy_prob), K=cfg.K)
    roots = ("g", "g_d") if cfg.dropin_model == "genomic" else ("a", "a_d")
    return genomic.system(params, "none", roots=roots)


def dropin_dist(locus: KitLocus, allele: str, cfg: SampleConfig, freqs: FrequencyTable | None = None,
                rate: float | None = None, budget: int | None = None) -> np.ndarray:
    """Tagged-amplicon distribution contributed by Poisson drop-in at one allele.

    Drop-in units amplify without producing stutter.
    """
    lam = dropin_rate(locus, allele, freqs) if rate is None else rate
    if lam < 0:
        raise ValidationError("drop-in rate must be non-negative")
    if lam == 0:
        return np.array([1.0])
    sysm = dropin_system(locus, cfg)
    unit = 2**cfg.K if cfg.dropin_model == "amplicon" else max(2**cfg.K - cfg.K - 1, 1)
    n = pgf.poisson_length(lam, unit)
    pgf.check_budget(n, 10, budget, hint="drop-in distributions at forensic K are handled on the RFU lattice")
    t = np.exp(-2j * np.pi * np.arange(n) / n)
    spec = pgf.poisson_mix(sysm.evaluate({"a_d": t}, cfg.K), lam)
    return pgf.inverse_dft(spec)


def rfu_to_amplicon_range(r: int, rho: float) -> tuple[int, int]:
    """Half-open range ``[lo, hi)`` of amplicon counts shown as ``r`` RFU.

    Counts in ``[rho (r - 1/2), rho (r + 1/2))`` round to ``r``; height 0
    starts at count 0.
    """
    if r < 0 or not rho > 0:
        raise ValidationError("need r >= 0 and rho > 0")
    lo = 0 if r == 0 else math.ceil(rho * (r - 0.5))
    hi = math.ceil(rho * (r + 0.5))
    return lo, hi


def amplicons_to_rfu(count, rho: float):
    """Nearest RFU bin of an amplicon count, consistent with :func:`rfu_to_amplicon_range`."""
    return np.floor(np.asarray(count, dtype=float) / rho + 0.5).astype(np.int64)


def noise_pgf(dye: str, cfg: SampleConfig) -> np.ndarray:
    """Noise pmf re-indexed from RFU bins ``j`` to amplicon counts ``round(j rho)``."""
    noise = cfg.noise_for(dye).array
    idx = np.rint(np.arange(noise.size) * cfg.rho).astype(np.int64)
    out = np.zeros(int(idx[-1]) + 1)
    np.add.at(out, idx, noise)
    return out
