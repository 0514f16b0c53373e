"""Genomic-strand PCR model with optional backward, double and forward stutter.

Strand kinds: the genomic pair ``g``/``g_d``, half strands ``h``/``h_d``
and amplicons ``a``/``a_d``; a ``_d`` suffix marks the dye-tagged strand
of a complementary pair. Stutter products carry an extra letter: ``s`` one
repeat shorter, ``r`` two repeats shorter, ``f`` one repeat longer. Only
tagged amplicons are seen by the capillary, so the observable of each
allele position is the count of ``a_d``, ``a_sd``, ``a_rd`` or ``a_fd``.

Three rule sets are provided:

* ``none``: six kinds, no stutter.
* ``single``: ten kinds, one-repeat backward stutter; stutter products do
  not stutter again.
* ``full``: eighteen kinds with backward, double backward and forward
  stutter, where stutter products may move one position further.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import pgf
from .amplicon import MomentSet
from .branching import BranchingSystem
from .errors import ValidationError

MODES = ("none", "single", "full")

BASE_KINDS = ("g", "g_d", "h", "h_d", "a", "a_d")
SINGLE_KINDS = BASE_KINDS + ("h_s", "h_sd", "a_s", "a_sd")
FULL_KINDS = BASE_KINDS + ("h_s", "h_sd", "h_r", "h_rd", "h_f", "h_fd", "a_s", "a_sd", "a_r", "a_rd", "a_f", "a_fd")

#: Tagged observable symbol per stutter offset, in repeat units.
TAGGED = {0: "a_d", -1: "a_sd", -2: "a_rd", 1: "a_fd"}


def _base_kind(kind: str) -> str:
    """Unstuttered kind whose copy probability a stutter kind shares by default."""
    head, _, tail = kind.partition("_")
    if tail in ("", "d"):
        return kind
    return head + ("_d" if tail.endswith("d") else "")


@dataclass(frozen=True)
class GenomicParams:
    """Copy probabilities per strand kind, stutter probabilities and sampling.

    ``p`` maps the six base kinds to copy probabilities; stutter kinds share
    the probability of their base kind unless ``overrides`` names them.
    """

    p: Mapping[str, float]
    xi_s: float = 0.0
    xi_r: float = 0.0
    xi_f: float = 0.0
    K: int = 28
    M: int = 1
    phi: float = 1.0
    overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for k in BASE_KINDS:
            if k not in self.p:
                raise ValidationError(f"missing copy probability for {k}")
        for k, v in list(self.p.items()) + list(self.overrides.items()):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"copy probability for {k} must lie in [0, 1], got {v}")
        for name in ("xi_s", "xi_r", "xi_f", "phi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if self.xi_s + self.xi_r + self.xi_f > 1.0 + 1e-12:
            raise ValidationError("stutter probabilities must sum to at most 1")
        if int(self.K) != self.K or self.K < 0 or int(self.M) != self.M or self.M < 0:
            raise ValidationError("K and M must be non-negative integers")

    @classmethod
    def uniform(cls, p: float, **kw) -> "GenomicParams":
        """All strand kinds share copy probability ``p``."""
        return cls(p={k: p for k in BASE_KINDS}, **kw)

    def copy_prob(self, kind: str) -> float:
        if kind in self.overrides:
            return float(self.overrides[kind])
        return float(self.p[_base_kind(kind)])

    def replace(self, **kw) -> "GenomicParams":
        data = dict(p=dict(self.p), xi_s=self.xi_s, xi_r=self.xi_r, xi_f=self.xi_f, K=self.K, M=self.M,
                    phi=self.phi, overrides=dict(self.overrides))
        data.update(kw)
        return GenomicParams(**data)


def _rules(mode: str, xs: float, xr: float, xf: float) -> dict:
    if mode == "none":
        return {"g": [("h_d", 1.0)], "g_d": [("h", 1.0)], "h": [("a_d", 1.0)], "h_d": [("a", 1.0)],
                "a": [("a_d", 1.0)], "a_d": [("a", 1.0)]}
    if mode == "single":
        x = xs
        return {
            "g": [("h_d", 1 - x), ("h_sd", x)],
            "g_d": [("h", 1 - x), ("h_s", x)],
            "h": [("a_d", 1 - x), ("a_sd", x)],
            "h_d": [("a", 1 - x), ("a_s", x)],
            "a": [("a_d", 1 - x), ("a_sd", x)],
            "a_d": [("a", 1 - x), ("a_s", x)],
            "h_s": [("a_sd", 1.0)],
            "h_sd": [("a_s", 1.0)],
            "a_s": [("a_sd", 1.0)],
            "a_sd": [("a_s", 1.0)],
        }
    if mode == "full":
        keep = 1 - xr - xs - xf
        return {
            "g": [("h_d", keep), ("h_rd", xr), ("h_sd", xs), ("h_fd", xf)],
            "g_d": [("h", keep), ("h_r", xr), ("h_s", xs), ("h_f", xf)],
            "h": [("a_d", keep), ("a_rd", xr), ("a_sd", xs), ("a_fd", xf)],
            "h_d": [("a", keep), ("a_r", xr), ("a_s", xs), ("a_f", xf)],
            "h_r": [("a_rd", 1 - xf), ("a_sd", xf)],
            "h_rd": [("a_r", 1 - xf), ("a_s", xf)],
            "h_s": [("a_sd", 1 - xs - xf), ("a_rd", xs), ("a_d", xf)],
            "h_sd": [("a_s", 1 - xf), ("a", xf)],
            "h_f": [("a_fd", 1 - xs), ("a_d", xs)],
            "h_fd": [("a_f", 1 - xs), ("a", xs)],
            "a": [("a_d", 1 - xs - xf), ("a_sd", xs), ("a_fd", xf)],
            "a_d": [("a", 1 - xs - xf), ("a_s", xs), ("a_f", xf)],
            "a_s": [("a_sd", 1 - xs - xf), ("a_rd", xs), ("a_d", xf)],
            "a_sd": [("a_s", 1 - xs - xf), ("a_r", xs), ("a", xf)],
            # forward copy of a double-stutter amplicon lands one repeat up
            "a_r": [("a_rd", 1 - xf), ("a_sd", xf)],
            "a_rd": [("a_r", 1 - xf), ("a_s", xf)],
            "a_f": [("a_fd", 1 - xs), ("a_d", xs)],
            "a_fd": [("a_f", 1 - xs), ("a", xs)],
        }
    raise ValidationError(f"stutter mode must be one of {MODES}, got {mode!r}")


def system(params: GenomicParams, mode: str = "none", roots: tuple[str, ...] = ("g", "g_d")) -> BranchingSystem:
    """Branching rules of one genome pair under the chosen stutter mode.

    ``roots`` sets the starting strands; ``("a", "a_d")`` starts from one
    amplicon pair instead of a genome pair.
    """
    if mode == "none":
        xs = xr = xf = 0.0
    elif mode == "single":
        xs, xr, xf = params.xi_s, 0.0, 0.0
    else:
        xs, xr, xf = params.xi_s, params.xi_r, params.xi_f
    rules = _rules(mode, xs, xr, xf)
    probs = {k: params.copy_prob(k) for k in rules}
    return BranchingSystem.build(rules, probs, roots=roots)


def tracked_symbol(mode: str, order: int) -> str:
    if order not in TAGGED:
        raise ValidationError(f"stutter order must be one of -2, -1, 0, +1, got {order}")
    if mode == "none" and order != 0:
        raise ValidationError("stutter products need stutter mode 'single' or 'full'")
    if mode == "single" and order not in (0, -1):
        raise ValidationError("single-stutter mode only tracks offsets 0 and -1")
    return TAGGED[order]


# ----------------------------------------------------------------------
# deterministic amplification


def deterministic_table(n: int, mode: str = "none") -> list[dict[str, int]]:
    """Per-kind strand counts after each of cycles 0..n when every copy succeeds.

    Exact integer arithmetic; stutter probabilities are taken as zero.
    """
    if n < 0:
        raise ValidationError("cycle count must be non-negative")
    rules = _rules(mode, 0.0, 0.0, 0.0)
    kinds = list(rules)
    counts = {k: 0 for k in kinds}
    counts["g"] = counts["g_d"] = 1
    table = [dict(counts)]
    for _ in range(n):
        new = dict(counts)
        for k in kinds:
            c = counts[k]
            if c:
                for child, w in rules[k]:
                    if w == 1.0:
                        new[child] += c
        counts = new
        table.append(dict(counts))
    return table


def deterministic_counts(n: int) -> dict[str, int]:
    """Strand counts after n fully efficient cycles; ``a_d`` equals ``2^n - n - 1``."""
    return deterministic_table(n)[-1]


# ----------------------------------------------------------------------
# distributions


def _roots(n: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(n) / n)


def _support(params: GenomicParams) -> int:
    return params.M * max(2**params.K - params.K - 1, 0)


def _marginal(params: GenomicParams, mode: str, symbol: str, budget: int | None) -> np.ndarray:
    top = _support(params)
    if params.M == 0 or top == 0:
        return np.array([1.0])
    n = pgf.next_pow2(top + 1)
    sysm = system(params, mode)
    pgf.check_budget(n, len(sysm.kinds) + 3, budget, hint="use contour.point_prob for single probabilities at large K")
    spec = sysm.evaluate({symbol: _roots(n)}, params.K)
    spec = pgf.binomial_mix(spec, params.phi, params.M)
    return pgf.inverse_dft(spec)[: top + 1]


def tagged_dist(params: GenomicParams, stutter_mode: str = "none", budget: int | None = None) -> np.ndarray:
    """Distribution of tagged target amplicons from ``M`` genome pairs, indexed by count."""
    return _marginal(params, stutter_mode, TAGGED[0], budget)


def tagged_stutter_dist(params: GenomicParams, order: int = -1, stutter_mode: str | None = None,
                        budget: int | None = None) -> np.ndarray:
    """Distribution of tagged stutter amplicons at the given offset.

    Offset -1 defaults to the single-stutter rules; the other offsets need
    the full rule set.
    """
    mode = stutter_mode or ("single" if order == -1 else "full")
    return _marginal(params, mode, tracked_symbol(mode, order), budget)


# ----------------------------------------------------------------------
# moments


def mean_tagged(params: GenomicParams, n: int | None = None) -> float:
    """Closed-form mean of tagged amplicons from one genome pair without stutter."""
    n = params.K if n is None else n
    pg, pgd, ph, phd = params.p["g"], params.p["g_d"], params.p["h"], params.p["h_d"]
    pa, pad = params.p["a"], params.p["a_d"]
    if pa <= 0 or pad <= 0:
        return moment_matrices(params, n, False).mean_target
    r = np.sqrt(pa * pad)
    up, down = (1 + r) ** n, (1 - r) ** n
    g_line = pg * phd / (pa * pad) * (np.sqrt(pa / pad) * (up - down) / 2 - n * pa)
    gd_line = pgd * ph / (pa * pad) * ((up + down) / 2 - 1)
    return float(g_line + gd_line)


def moment_matrices(params: GenomicParams, n: int | None = None, with_stutter: bool = False,
                    mode: str | None = None, order: int = -1) -> MomentSet:
    """Means, variances and covariance of tagged target and stutter counts for one pair.

    Iterates the first- and second-derivative recurrences of the branching
    system; with ``with_stutter`` false the stutter entries are zero.
    """
    n = params.K if n is None else n
    if not with_stutter:
        m, _, v, _, _ = system(params, mode or "none").moments(TAGGED[0], None, n)
        return MomentSet(m, 0.0, v, 0.0, 0.0)
    mode = mode or ("single" if order == -1 else "full")
    mt, ms, vt, vs, cov = system(params, mode).moments(TAGGED[0], tracked_symbol(mode, order), n)
    return MomentSet(mt, ms, vt, vs, cov)


# ----------------------------------------------------------------------
# simulation


def simulate_genomic(params: GenomicParams, rng: np.random.Generator, stutter_mode: str = "none",
                     pairs: int | None = None) -> dict[str, int]:
    """One Monte Carlo draw of final strand counts per kind.

    ``pairs`` genome pairs are amplified together (default: a Binomial(M,
    phi) draw); the branching process is additive, so one run from the
    pooled start equals the sum of independent per-pair runs.
    """
    sysm = system(params, stutter_mode)
    if pairs is None:
        pairs = int(rng.binomial(params.M, params.phi))
    counts = sysm.simulate(rng, params.K, {"g": pairs, "g_d": pairs})
    return {k: int(c) for k, c in zip(sysm.kinds, counts)}
