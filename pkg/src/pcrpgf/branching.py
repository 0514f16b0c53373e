"""Generic multi-type binary-splitting branching systems.

Every PCR model in this package has the same shape. A strand of kind ``k``
is copied in a cycle with probability ``p_k``. When it is copied it stays
and gains exactly one new strand of kind ``c`` with conditional probability
``w[k][c]``. The generating function of the descendants of one strand
therefore obeys

    F_k <- F_k * (1 - p_k + p_k * sum_c w[k][c] * F_c)

with all right-hand sides read from the previous cycle. All evaluation
paths (dense spectra, contour points, moments, simulation) use the rules
held by a single :class:`BranchingSystem`, so they cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class BranchingSystem:
    """Copy probabilities and offspring rules for a set of strand kinds.

    ``rules[k]`` lists ``(child_kind, weight)`` pairs whose weights sum to 1
    (or to less than 1 when some products are not tracked at all; the
    missing weight then behaves like a product of an untracked kind).
    ``roots`` are the kinds present at cycle zero for one starting unit.
    """

    kinds: tuple[str, ...]
    copy_prob: tuple[float, ...]
    rules: tuple[tuple[tuple[int, float], ...], ...]
    roots: tuple[str, ...]
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.kinds)})
        for k, p in zip(self.kinds, self.copy_prob):
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"copy probability for {k} must lie in [0, 1], got {p}")
        for k, rule in zip(self.kinds, self.rules):
            if any(w < -1e-15 for _, w in rule):
                raise ValidationError(f"negative offspring weight for {k}")
            total = sum(w for _, w in rule)
            if total > 1.0 + 1e-12:
                raise ValidationError(f"offspring weights for {k} sum to {total} > 1")
        for r in self.roots:
            if r not in self._index:
                raise ValidationError(f"unknown root kind {r}")

    @classmethod
    def build(cls, spec: Mapping[str, Sequence[tuple[str, float]]], copy_prob: Mapping[str, float], roots: Sequence[str]):
        """Construct from name-keyed rules; zero-weight children are dropped."""
        kinds = tuple(spec)
        index = {k: i for i, k in enumerate(kinds)}
        rules = []
        for k in kinds:
            merged: dict[int, float] = {}
            for child, w in spec[k]:
                if child not in index:
                    raise ValidationError(f"rule for {k} names unknown kind {child}")
                if w != 0.0:
                    merged[index[child]] = merged.get(index[child], 0.0) + float(w)
            rules.append(tuple(sorted(merged.items())))
        probs = tuple(float(copy_prob[k]) for k in kinds)
        return cls(kinds, probs, tuple(rules), tuple(roots))

    def index(self, kind: str) -> int:
        try:
            return self._index[kind]
        except KeyError:
            raise ValidationError(f"unknown strand kind {kind}") from None

    # ------------------------------------------------------------------
    # generating-function evaluation

    def step(self, values: list) -> list:
        """One PCR cycle applied to per-kind generating function values."""
        out = []
        for i, rule in enumerate(self.rules):
            p = self.copy_prob[i]
            f = values[i]
            if p == 0.0 or not rule:
                if p == 0.0:
                    out.append(f)
                else:
                    out.append(f * ((1.0 - p) + p * (1.0 - sum(w for _, w in rule))))
                continue
            acc = None
            wsum = 0.0
            for c, w in rule:
                term = w * values[c]
                acc = term if acc is None else acc + term
                wsum += w
            if wsum < 1.0:
                acc = acc + (1.0 - wsum)
            out.append(f * ((1.0 - p) + p * acc))
        return out

    def initial(self, symbols: Mapping[str, object]) -> list:
        """Cycle-zero values: the symbol for tracked kinds, 1 for the rest."""
        for k in symbols:
            self.index(k)
        return [symbols.get(k, 1.0) for k in self.kinds]

    def iterate(self, symbols: Mapping[str, object], cycles: int) -> list:
        """Per-kind generating functions after ``cycles`` cycles."""
        if cycles < 0:
            raise ValidationError("cycle count must be non-negative")
        values = self.initial(symbols)
        for _ in range(cycles):
            values = self.step(values)
        return values

    def evaluate(self, symbols: Mapping[str, object], cycles: int):
        """Generating function of tracked products from one starting unit.

        The result is the product of the root kinds' generating functions,
        since the roots of one unit amplify independently.
        """
        values = self.iterate(symbols, cycles)
        out = None
        for r in self.roots:
            v = values[self._index[r]]
            out = v if out is None else out * v
        shape = np.broadcast_shapes(*(np.shape(s) for s in symbols.values())) if symbols else ()
        if np.shape(out) != shape:
            # tracked kinds unreachable from the roots leave a constant
            out = np.broadcast_to(np.asarray(out, dtype=complex), shape).copy()
        return out

    # ------------------------------------------------------------------
    # moments

    def derivative_moments(self, u: str, v: str, cycles: int):
        """First and mixed second derivatives at the all-ones point, per kind.

        Returns ``(du, dv, duv)`` arrays indexed by kind, where ``du[k]`` is
        the expected number of tracked ``u`` products descending from one
        ``k`` strand and ``duv[k]`` is the mixed second derivative (the
        factorial moment ``E[U(U-1)]`` when ``u == v``).
        """
        n = len(self.kinds)
        iu, iv = self.index(u), self.index(v)
        du = np.zeros(n)
        dv = np.zeros(n)
        du[iu] = 1.0
        dv[iv] = 1.0
        duv = np.zeros(n)
        p = np.asarray(self.copy_prob)
        mat = self.mean_matrix()
        for _ in range(cycles):
            su = mat @ du
            sv = mat @ dv
            duv = duv + mat @ duv + du * sv + dv * su
            du = du + su
            dv = dv + sv
        return du, dv, duv

    def mean_matrix(self) -> np.ndarray:
        """Matrix ``A`` with ``A[k, c] = p_k w[k][c]``; means evolve as ``(I + A)``."""
        n = len(self.kinds)
        mat = np.zeros((n, n))
        for i, rule in enumerate(self.rules):
            for c, w in rule:
                mat[i, c] += self.copy_prob[i] * w
        return mat

    def moments(self, u: str, v: str | None, cycles: int) -> tuple[float, float, float, float, float]:
        """Mean of ``u``, mean of ``v``, variances and covariance for one unit.

        The roots are independent, so means and (co)variances add over them.
        """
        v = u if v is None else v
        uu = self.derivative_moments(u, u, cycles)
        vv = self.derivative_moments(v, v, cycles)
        uv = self.derivative_moments(u, v, cycles)
        roots = [self._index[r] for r in self.roots]
        mean_u = sum(uu[0][r] for r in roots)
        mean_v = sum(vv[0][r] for r in roots)
        var_u = sum(uu[2][r] + uu[0][r] - uu[0][r] ** 2 for r in roots)
        var_v = sum(vv[2][r] + vv[0][r] - vv[0][r] ** 2 for r in roots)
        if u == v:
            cov = var_u
        else:
            cov = sum(uv[2][r] - uv[0][r] * uv[1][r] for r in roots)
        return float(mean_u), float(mean_v), float(var_u), float(var_v), float(cov)

    # ------------------------------------------------------------------
    # simulation

    def simulate(self, rng: np.random.Generator, cycles: int, start: Mapping[str, int] | None = None) -> np.ndarray:
        """Strand counts per kind after ``cycles`` cycles of Monte Carlo.

        Each cycle draws the number of copied strands of every kind as a
        binomial and splits them multinomially over the offspring rule.
        Products with untracked weight are discarded.
        """
        n = len(self.kinds)
        counts = np.zeros(n, dtype=np.int64)
        start = {r: 1 for r in self.roots} if start is None else start
        for k, c in start.items():
            counts[self.index(k)] += int(c)
        for _ in range(cycles):
            new = counts.copy()
            for i, rule in enumerate(self.rules):
                c = counts[i]
                if c == 0 or not rule:
                    continue
                copied = rng.binomial(c, self.copy_prob[i])
                if copied == 0:
                    continue
                weights = [w for _, w in rule]
                rest = 1.0 - sum(weights)
                if len(rule) == 1 and rest <= 0:
                    new[rule[0][0]] += copied
                    continue
                probs = np.array(weights + [max(rest, 0.0)])
                probs = probs / probs.sum()
                split = rng.multinomial(copied, probs)
                for (child, _), m in zip(rule, split[:-1]):
                    new[child] += m
            counts = new
        return counts
