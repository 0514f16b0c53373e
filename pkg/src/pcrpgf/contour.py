"""Single probabilities from truncated sums over the unit-circle contour.

A coefficient of a generating function with support below ``N`` is

    F[n] = (1/N) sum_{j=0}^{N-1} F(w^j) w^{-jn},    w = exp(-2 pi i / N).

For PCR generating functions ``|F(w^j)|`` decays quickly away from ``j = 0``
(the iterates contract towards the origin), so the sum over ``|j| <= L``
with ``L`` far below ``N/2`` already carries almost all of the value. Only
``j >= 1`` is evaluated: the coefficients are real, so the ``-j`` term is
the conjugate of the ``+j`` term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import amplicon, genomic
from .branching import BranchingSystem
from .errors import NegativeProbability, NotConverged, ValidationError

DEFAULT_L = 512
MAX_L = 2**20
MAX_L_2D = 2**11
RTOL = 1e-9
ATOL = 1e-14
NEG_FLAG = 1e-9
SAFETY = 0.1


@dataclass(frozen=True)
class ContourSpec:
    """Which generating function to evaluate and how far to sum.

    ``system`` is iterated for ``cycles`` cycles with the ``symbols`` kinds
    tracked. ``unit_support`` bounds the tracked count from a single
    starting unit; the modulus defaults to one more than the support of
    ``M`` units, so there is no aliasing. ``L`` fixes the truncation;
    ``None`` doubles from :data:`DEFAULT_L` until the value settles.
    """

    system: BranchingSystem
    symbols: tuple[str, ...]
    cycles: int
    unit_support: int
    L: int | None = None
    N: int | None = None

    def __post_init__(self):
        if not 1 <= len(self.symbols) <= 2:
            raise ValidationError("a contour tracks one or two symbols")
        if self.L is not None and self.L < 1:
            raise ValidationError("truncation L must be at least 1")

    @classmethod
    def amplicon(cls, p: float, xi: float, K: int, track: str = "target", **kw) -> "ContourSpec":
        symbols = {"target": ("T",), "stutter": ("S",), "both": ("T", "S")}[track]
        return cls(amplicon.system(p, xi), symbols, K, 2**K, **kw)

    @classmethod
    def genomic(cls, params: "genomic.GenomicParams", mode: str = "none", orders=(0,), **kw) -> "ContourSpec":
        symbols = tuple(genomic.tracked_symbol(mode, o) for o in orders)
        support = max(2**params.K - params.K - 1, 1)
        return cls(genomic.system(params, mode), symbols, params.K, support, **kw)

    def modulus(self, M: int = 1) -> int:
        return self.N if self.N is not None else max(M, 1) * self.unit_support + 1

    def values(self, j: np.ndarray, N: int) -> np.ndarray:
        """Generating function of one unit at ``exp(-2 pi i j / N)``."""
        t = np.exp(-2j * np.pi * np.asarray(j, dtype=float) / N)
        return self.system.evaluate({self.symbols[0]: t}, self.cycles)

    def values_2d(self, j1: np.ndarray, j2: np.ndarray, N1: int, N2: int) -> np.ndarray:
        t1 = np.exp(-2j * np.pi * np.asarray(j1, dtype=float) / N1)[:, None]
        t2 = np.exp(-2j * np.pi * np.asarray(j2, dtype=float) / N2)[None, :]
        t1, t2 = np.broadcast_arrays(t1, t2)
        return self.system.evaluate({self.symbols[0]: t1, self.symbols[1]: t2}, self.cycles)


@dataclass(frozen=True)
class ContourResult:
    """A contour estimate with its truncation and the change at the last doubling."""

    value: float
    L: int
    change: float
    exact: bool

    def __float__(self):
        return self.value


def _phase(k, N: int) -> np.ndarray:
    """``exp(2 pi i k / N)`` for integer ``k``, reduced mod ``N`` first so large products keep full accuracy."""
    k = np.mod(np.asarray(k, dtype=np.int64), N)
    return np.exp(2j * np.pi * k / N)


def _point_kernel(n: int, j: np.ndarray, N: int) -> np.ndarray:
    return _phase(np.asarray(j, dtype=np.int64) * n, N)


def _below_kernel(n: int, j: np.ndarray, N: int) -> np.ndarray:
    # sum_{m=0}^{n} t^{-m} at t = exp(-2 pi i j/N)
    j = np.asarray(j, dtype=np.int64)
    return (1.0 - _phase(j * (n + 1), N)) / (1.0 - _phase(j, N))


class _Accumulator:
    """Running symmetric contour sum with incremental extension in ``j``."""

    def __init__(self, spec, N, kernel, transform, zero_term):
        self.spec, self.N, self.kernel, self.transform = spec, N, kernel, transform
        self.total = zero_term
        self.L = 0
        self.full = (N - 1) // 2

    def extend(self, L: int) -> float:
        L = min(L, self.full)
        if L > self.L:
            j = np.arange(self.L + 1, L + 1)
            terms = self.transform(self.spec.values(j, self.N)) * self.kernel(j, self.N)
            self.total += 2.0 * float(np.sum(terms.real))
            self.L = L
        return self.total / self.N


def _nyquist(spec, N, kernel, transform) -> float:
    # the unpaired j = N/2 term of an even modulus
    j = np.array([N // 2])
    return float((transform(spec.values(j, N)) * kernel(j, N)).real[0])


def _converge(spec: ContourSpec, N: int, kernel, transform, zero_term: float, rtol: float, atol: float) -> ContourResult:
    acc = _Accumulator(spec, N, kernel, transform, zero_term)
    extra = _nyquist(spec, N, kernel, transform) / N if N % 2 == 0 else 0.0
    if spec.L is not None:
        if spec.L >= N / 2 - 1:
            v = acc.extend(acc.full) + extra
            return ContourResult(v, acc.L, 0.0, True)
        v = acc.extend(spec.L)
        return ContourResult(v, spec.L, float("nan"), False)
    L = DEFAULT_L
    prev = acc.extend(L)
    while True:
        if acc.L >= acc.full:
            return ContourResult(prev + extra, acc.L, 0.0, True)
        nxt = acc.extend(2 * L)
        change = abs(nxt - prev)
        L *= 2
        # the remaining truncation error is of the order of the last change
        if change <= SAFETY * (rtol * abs(nxt) + atol):
            return ContourResult(nxt, acc.L, change, False)
        if L >= MAX_L:
            raise NotConverged(f"contour sum still moving by {change:.3g} at L={L}")
        prev = nxt


def _check(result: ContourResult, report: bool):
    if result.value < -NEG_FLAG:
        raise NegativeProbability(f"contour estimate {result.value:.3g} is negative beyond tolerance; increase L")
    if result.value < 0:
        result = ContourResult(0.0, result.L, result.change, result.exact)
    return result if report else result.value


def point_prob(spec: ContourSpec, n: int, M: int = 1, rtol: float = RTOL, atol: float = ATOL, report: bool = False):
    """``P(X = n)`` for the sum of ``M`` independent units."""
    N = spec.modulus(M)
    if not 0 <= n < N:
        raise ValidationError(f"count {n} outside 0..{N - 1}")
    res = _converge(spec, N, lambda j, N: _point_kernel(n, j, N), lambda f: f**M, 1.0, rtol, atol)
    return _check(res, report)


def point_prob_presampled(spec: ContourSpec, n: int, M: int, phi: float, rtol: float = RTOL, atol: float = ATOL,
                          report: bool = False):
    """``P(X = n)`` when each of ``M`` units is amplified with probability ``phi``.

    The constant ``(1 - phi)^M`` is placed at ``n = 0`` exactly and removed
    from every contour term, so the truncated terms only carry the part of
    the generating function that decays.
    """
    if not 0.0 <= phi <= 1.0 or M < 0:
        raise ValidationError("need 0 <= phi <= 1 and M >= 0")
    N = spec.modulus(M)
    if not 0 <= n < N:
        raise ValidationError(f"count {n} outside 0..{N - 1}")
    base = (1.0 - phi) ** M
    res = _converge(spec, N, lambda j, N: _point_kernel(n, j, N), lambda f: (1 - phi + phi * f) ** M - base,
                    1.0 - base, rtol, atol)
    if n == 0:
        res = ContourResult(res.value + base, res.L, res.change, res.exact)
    return _check(res, report)


def cumulative_below(spec: ContourSpec, n: int, M: int = 1, phi: float = 1.0, rtol: float = RTOL, atol: float = ATOL,
                     report: bool = False):
    """``P(X <= n)`` through the geometric kernel ``sum_{m<=n} t^{-m}``.

    The ``t = 1`` term of the kernel is its limit ``n + 1``.
    """
    N = spec.modulus(M)
    if not 0 <= n < N:
        raise ValidationError(f"count {n} outside 0..{N - 1}")
    base = (1.0 - phi) ** M
    res = _converge(spec, N, lambda j, N: _below_kernel(n, j, N), lambda f: (1 - phi + phi * f) ** M - base,
                    (n + 1) * (1.0 - base), rtol, atol)
    res = ContourResult(res.value + base, res.L, res.change, res.exact)
    return _check(res, report)


def point_probs(spec: ContourSpec, ns, M: int = 1, phi: float = 1.0, L: int | None = None) -> np.ndarray:
    """Many point probabilities at one fixed truncation, sharing the contour values."""
    N = spec.modulus(M)
    L = spec.L if L is None else L
    L = DEFAULT_L if L is None else L
    L = min(L, (N - 1) // 2)
    ns = np.asarray(ns, dtype=np.int64)
    base = (1.0 - phi) ** M
    j = np.arange(1, L + 1, dtype=np.int64)
    f = (1 - phi + phi * spec.values(j, N)) ** M - base
    total = np.full(ns.shape, 1.0 - base)
    flat, acc = ns.reshape(-1), total.reshape(-1)
    # blocks of at most 2^22 phase terms
    for start in range(0, len(j), 4096):
        js, fs = j[start:start + 4096], f[start:start + 4096]
        for row in range(0, flat.size, 1024):
            phase = _phase(np.outer(flat[row:row + 1024], js), N)
            acc[row:row + 1024] += 2.0 * (phase @ fs).real
    if N % 2 == 0 and L >= N // 2 - 1:
        fn = (1 - phi + phi * spec.values(np.array([N // 2]), N)) ** M - base
        total += (fn[0] * _phase(ns * (N // 2), N)).real
    out = total / N
    out[ns == 0] += base
    return out


def bivariate_point(spec: ContourSpec, n_target: int, n_stutter: int, M: int = 1, phi: float = 1.0,
                    L: int | tuple[int, int] | None = None, rtol: float = RTOL, atol: float = ATOL,
                    report: bool = False):
    """Joint ``P(first = n_target, second = n_stutter)`` by a truncated double sum.

    Both axes use the modulus of the spec. With ``L`` given, the sum runs
    over ``|j1| <= L1, |j2| <= L2``; otherwise ``L`` doubles from 64 until
    the value settles.
    """
    if len(spec.symbols) != 2:
        raise ValidationError("bivariate_point needs a spec tracking two symbols")
    N = spec.modulus(M)
    for v in (n_target, n_stutter):
        if not 0 <= v < N:
            raise ValidationError(f"count {v} outside 0..{N - 1}")
    base = (1.0 - phi) ** M
    full = (N - 1) // 2

    def at(l1: int, l2: int) -> float:
        j1 = np.arange(-l1, l1 + 1)
        j2 = np.arange(-l2, l2 + 1)
        f = (1 - phi + phi * spec.values_2d(j1, j2, N, N)) ** M - base
        k1 = _phase(j1 * n_target, N)[:, None]
        k2 = _phase(j2 * n_stutter, N)[None, :]
        v = float((f * k1 * k2).real.sum()) / N**2
        return v + (base if n_target == 0 and n_stutter == 0 else 0.0)

    fixed = L if L is not None else spec.L
    if fixed is not None:
        l1, l2 = (fixed, fixed) if np.isscalar(fixed) else fixed
        l1, l2 = min(l1, full), min(l2, full)
        exact = l1 == full and l2 == full
        res = ContourResult(at(l1, l2), max(l1, l2), 0.0 if exact else float("nan"), exact)
        return _check(res, report)
    l = min(64, full)
    prev = at(l, l)
    while True:
        if l >= full:
            return _check(ContourResult(prev, l, 0.0, True), report)
        l2 = min(2 * l, full)
        nxt = at(l2, l2)
        change = abs(nxt - prev)
        l = l2
        if change <= SAFETY * (rtol * abs(nxt) + atol):
            return _check(ContourResult(nxt, l, change, l >= full), report)
        if l >= MAX_L_2D:
            raise NotConverged(f"bivariate contour sum still moving by {change:.3g} at L={l}")
        prev = nxt
