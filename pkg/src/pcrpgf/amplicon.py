"""Amplicon-level PCR model: every amplicon copies itself with probability p.

A copy is a stutter product with conditional probability ``xi``; stutter
amplicons then copy themselves with probability ``p`` and never revert.
Before amplification each of the ``M`` starting amplicons is kept
independently with probability ``phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from . import pgf
from .branching import BranchingSystem
from .errors import OutOfRange, ValidationError

TARGET, STUTTER = "T", "S"

#: Conditional stutter probability used when none is given.
DEFAULT_XI = 0.004


@dataclass(frozen=True)
class AmpliconParams:
    p: float = 0.8
    xi: float = 0.0
    K: int = 28
    M: int = 1
    phi: float = 1.0

    def __post_init__(self):
        for name in ("p", "xi", "phi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if int(self.K) != self.K or self.K < 0:
            raise ValidationError(f"K must be a non-negative integer, got {self.K}")
        if int(self.M) != self.M or self.M < 0:
            raise ValidationError(f"M must be a non-negative integer, got {self.M}")

    @property
    def p_stutter(self) -> float:
        return self.p * self.xi

    @property
    def p_target(self) -> float:
        return self.p * (1.0 - self.xi)

    @property
    def support(self) -> int:
        """Largest possible final count of either product: ``M 2^K``."""
        return self.M * 2**self.K


@dataclass(frozen=True)
class MomentSet:
    """Means, variances and covariance of target and stutter counts."""

    mean_target: float
    mean_stutter: float
    var_target: float
    var_stutter: float
    cov: float

    @property
    def correlation(self) -> float:
        d = math.sqrt(self.var_target * self.var_stutter)
        return self.cov / d if d > 0 else float("nan")


def system(p: float, xi: float) -> BranchingSystem:
    """Target/stutter branching rules for the amplicon model."""
    return BranchingSystem.build(
        {TARGET: [(TARGET, 1.0 - xi), (STUTTER, xi)], STUTTER: [(STUTTER, 1.0)]},
        {TARGET: p, STUTTER: p},
        roots=(TARGET,),
    )


# ----------------------------------------------------------------------
# simulation


def simulate_counts(params: AmpliconParams, rng: np.random.Generator) -> int:
    """One draw of the final amplicon count (target copies only)."""
    n = int(rng.binomial(params.M, params.phi))
    pt = params.p_target
    for _ in range(params.K):
        if n:
            n += int(rng.binomial(n, pt))
    return n


def simulate_counts_many(params: AmpliconParams, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorised version of :func:`simulate_counts` returning ``size`` draws."""
    n = rng.binomial(params.M, params.phi, size=size).astype(np.int64)
    pt = params.p_target
    for _ in range(params.K):
        n = n + rng.binomial(n, pt)
    return n


def simulate_with_stutter(params: AmpliconParams, rng: np.random.Generator) -> tuple[int, int]:
    """One draw of (target, stutter) counts.

    Each cycle the existing targets produce ``J ~ Binom(n, p)`` new strands,
    of which ``Binom(J, 1 - xi)`` are exact copies, and the existing stutter
    amplicons produce ``Binom(m, p)`` copies of themselves.
    """
    n = int(rng.binomial(params.M, params.phi))
    m = 0
    p, xi = params.p, params.xi
    for _ in range(params.K):
        j = int(rng.binomial(n, p)) if n else 0
        jt = int(rng.binomial(j, 1.0 - xi)) if j else 0
        js = int(rng.binomial(m, p)) if m else 0
        n += jt
        m += (j - jt) + js
    return n, m


def simulate_with_stutter_many(params: AmpliconParams, rng: np.random.Generator, size: int):
    """Vectorised version of :func:`simulate_with_stutter`."""
    n = rng.binomial(params.M, params.phi, size=size).astype(np.int64)
    m = np.zeros(size, dtype=np.int64)
    p, xi = params.p, params.xi
    for _ in range(params.K):
        j = rng.binomial(n, p)
        jt = rng.binomial(j, 1.0 - xi)
        js = rng.binomial(m, p)
        n = n + jt
        m = m + (j - jt) + js
    return n, m


# ----------------------------------------------------------------------
# exact distributions


def _grid(params: AmpliconParams, budget: int | None, arrays: int = 4) -> int:
    n = pgf.next_pow2(max(params.support, 1))
    pgf.check_budget(n, arrays, budget, hint="use contour.point_prob for single probabilities at large K")
    return n


def _roots(n: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(n) / n)


def _top_mass(params: AmpliconParams) -> float:
    """Probability that every selected strand copies exactly each cycle, hitting ``M 2^K`` targets."""
    copies = 2**params.K - 1
    with np.errstate(under="ignore"):
        per = params.phi * params.p_target**copies if params.p_target > 0 or copies == 0 else 0.0
    return float(per**params.M) if params.M else 1.0


def _unwrap_target(probs: np.ndarray, params: AmpliconParams, n: int) -> np.ndarray:
    """Trim a length-``n`` periodic vector to support ``0..M 2^K``.

    When ``n`` equals ``M 2^K`` the top count aliases onto index 0; its
    exact mass is known in closed form and moved back.
    """
    top = params.support
    out = np.zeros(top + 1)
    if n > top:
        out[:] = probs[: top + 1]
    else:
        out[:top] = probs[:top]
        mass = _top_mass(params)
        out[0] = max(out[0] - mass, 0.0)
        out[top] = mass
    return out


def target_spectrum(p: float, xi: float, K: int, n: int) -> np.ndarray:
    """Generating function of one amplicon's target copies at the n-th roots of unity."""
    return system(p, xi).evaluate({TARGET: _roots(n)}, K)


def target_dist(params: AmpliconParams, budget: int | None = None) -> np.ndarray:
    """Exact distribution of the final target count, indexed ``0..M 2^K``."""
    if params.M == 0:
        return np.array([1.0])
    n = _grid(params, budget)
    spec = target_spectrum(params.p, params.xi, params.K, n)
    spec = pgf.binomial_mix(spec, params.phi, params.M)
    return _unwrap_target(pgf.inverse_dft(spec), params, n)


def stutter_marginal(params: AmpliconParams, budget: int | None = None) -> np.ndarray:
    """Exact distribution of the final stutter count, indexed ``0..M 2^K``."""
    if params.M == 0:
        return np.array([1.0])
    n = _grid(params, budget)
    spec = system(params.p, params.xi).evaluate({STUTTER: _roots(n)}, params.K)
    spec = pgf.binomial_mix(spec, params.phi, params.M)
    probs = pgf.inverse_dft(spec)
    out = np.zeros(params.support + 1)
    m = min(n, params.support + 1)
    out[:m] = probs[:m]
    return out


def joint_target_stutter(params: AmpliconParams, budget: int | None = None) -> np.ndarray:
    """Joint pmf ``P(target = i, stutter = j)`` on ``(M 2^K + 1)^2`` cells."""
    if params.M == 0:
        return np.ones((1, 1))
    n = pgf.next_pow2(params.support)
    pgf.check_budget(n * n, 3, budget, hint="joint tables are only practical for small K")
    w = _roots(n)
    spec = system(params.p, params.xi).evaluate({TARGET: w[:, None], STUTTER: w[None, :]}, params.K)
    spec = pgf.binomial_mix(spec, params.phi, params.M)
    probs = pgf.inverse_dft_2d(spec)
    top = params.support
    out = np.zeros((top + 1, top + 1))
    if n > top:
        out[: top + 1, : min(n, top + 1)] = probs[: top + 1, : top + 1]
    else:
        out[:top, :top] = probs[:top, :top]
        mass = _top_mass(params)
        out[0, 0] = max(out[0, 0] - mass, 0.0)
        out[top, 0] = mass
    return out


# ----------------------------------------------------------------------
# moments


def moments(p: float, xi: float, n: int) -> MomentSet:
    """Closed-form moments of target and stutter counts from one amplicon after n cycles."""
    if n < 0:
        raise ValidationError("cycle count must be non-negative")
    a = 1.0 + p
    b = 1.0 + p * (1.0 - xi)
    pt = p * (1.0 - xi)
    an, bn = a**n, b**n
    mean_t = bn
    mean_s = an - bn
    var_t = (1.0 - pt) / b * bn * (bn - 1.0)
    if n == 0 or xi == 0.0:
        # no stutter copies at all; the general form only cancels to zero in rounding
        es2 = 0.0
        cov = 0.0
    else:
        bn1 = b ** (n - 1)
        es2 = (
            2.0 * (an * an - bn) / a
            - (4.0 - 2.0 * xi) * bn1 * (an - 1.0)
            + 2.0 * bn1 * (bn - 1.0)
            - (1.0 - p) / a * (an - bn)
        )
        cov = bn1 * ((1.0 - pt) * (an - bn) - xi * (an - 1.0))
    var_s = max(es2 - mean_s * mean_s, 0.0)
    return MomentSet(mean_t, mean_s, max(var_t, 0.0), var_s, cov)


def moments_by_recursion(p: float, xi: float, n: int) -> MomentSet:
    """Moments obtained by iterating the derivative recurrences numerically."""
    mt, ms, vt, vs, cov = system(p, xi).moments(TARGET, STUTTER, n)
    return MomentSet(mt, ms, vt, vs, cov)


@dataclass(frozen=True)
class Binomial:
    """Binomial(M, phi) selection of starting amplicons."""

    M: int
    phi: float


@dataclass(frozen=True)
class Poisson:
    """Poisson(lam) number of starting amplicons."""

    lam: float


def sampled_moments(ms: MomentSet, sampling: Binomial | Poisson) -> MomentSet:
    """Moments after a random number of independent starting amplicons."""
    et, es = ms.mean_target, ms.mean_stutter
    if isinstance(sampling, Binomial):
        nq, q = sampling.M * sampling.phi, sampling.phi
        return MomentSet(
            nq * et,
            nq * es,
            nq * (ms.var_target + (1.0 - q) * et * et),
            nq * (ms.var_stutter + (1.0 - q) * es * es),
            nq * (ms.cov + (1.0 - q) * et * es),
        )
    if isinstance(sampling, Poisson):
        lam = sampling.lam
        return MomentSet(
            lam * et,
            lam * es,
            lam * (ms.var_target + et * et),
            lam * (ms.var_stutter + es * es),
            lam * (ms.cov + et * es),
        )
    raise ValidationError(f"unknown sampling scheme {sampling!r}")


def dropout_curve(
    p: float,
    K: int,
    phi: float,
    threshold: int,
    cells: Iterable[int],
    zygosity: str = "het",
    budget: int | None = None,
) -> list[float]:
    """Probability that an allele stays below ``threshold`` amplicons, per cell count.

    Heterozygous alleles start from one amplicon per cell, homozygous ones
    from two. A threshold of 0 means complete dropout (no amplicons at all);
    otherwise dropout means fewer than ``threshold`` amplicons.
    """
    if zygosity not in ("het", "hom"):
        raise ValidationError("zygosity must be 'het' or 'hom'")
    cells = [int(c) for c in cells]
    copies = [c * (2 if zygosity == "hom" else 1) for c in cells]
    top = max(copies + [1]) * 2**K
    if threshold > top:
        raise ValidationError("threshold must not exceed the largest possible count")
    n = pgf.next_pow2(top + 1)
    pgf.check_budget(n, 4, budget)
    base = target_spectrum(p, 0.0, K, n)
    cut = max(int(threshold), 1)
    out = []
    for m in copies:
        probs = pgf.inverse_dft(pgf.binomial_mix(base, phi, m))
        out.append(float(min(probs[:cut].sum(), 1.0)))
    return out


def stutter_ratio(xi: float, p: float, k: int) -> float:
    """Expected stutter-to-target ratio ``((1+p)/(1+p(1-xi)))^k - 1``."""
    ms = moments(p, xi, k)
    return ms.mean_stutter / ms.mean_target


def xi_from_lus(a: float, b: float, lus: float, p: float, k: int, clamp: bool = True) -> float:
    """Conditional stutter probability matching a linear stutter-ratio model ``a + b LUS``.

    A negative predicted ratio maps to zero when ``clamp`` is set and raises
    OutOfRange otherwise.
    """
    sr = a + b * lus
    if sr < 0:
        if clamp:
            return 0.0
        raise OutOfRange(f"stutter ratio {sr} is negative")
    if sr == 0:
        return 0.0
    hi = 1.0 - 1e-15
    if stutter_ratio(hi, p, k) < sr:
        raise OutOfRange(f"no stutter probability in [0, 1) gives ratio {sr}")
    return float(brentq(lambda x: stutter_ratio(x, p, k) - sr, 0.0, hi, xtol=1e-14, rtol=1e-14, maxiter=500))


def delta_xi_per_lus(b: float, p: float, k: int) -> float:
    """Linearised change in stutter probability per unit of LUS: ``b (1+p)/(k p)``."""
    return b * (1.0 + p) / (k * p)
