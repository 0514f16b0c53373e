"""Probability vectors, discrete Fourier transforms and spectral compositions.

A probability vector ``probs`` stores ``P(X = n)`` at index ``n``. Its
spectrum holds the generating function evaluated at the roots of unity
``exp(-2*pi*i*j/N)``, which is exactly ``numpy.fft.fft`` of the vector.
Generating-function recursions are iterated pointwise on spectra.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ImaginaryResidue, MemoryBudgetExceeded, ValidationError

#: Entries above ``-NEG_TOL`` after an inverse transform count as rounding dust.
NEG_TOL = 1e-12
#: Maximum tolerated imaginary residue per entry of an inverse transform.
IMAG_TOL = 1e-9
#: Total drift in mass that triggers renormalisation.
MASS_TOL = 1e-9
#: Default memory budget for dense transforms, in bytes.
DEFAULT_MEMORY_BUDGET = 4 * 2**30


def next_pow2(n: int) -> int:
    """Smallest power of two that is at least ``n`` (and at least 1)."""
    n = int(n)
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def check_budget(n_points: int, n_arrays: int = 4, budget: int | None = None, hint: str = "") -> None:
    """Raise MemoryBudgetExceeded if ``n_arrays`` complex vectors of ``n_points`` do not fit."""
    budget = DEFAULT_MEMORY_BUDGET if budget is None else budget
    need = 16 * int(n_points) * int(n_arrays)
    if need > budget:
        msg = f"dense transform of {n_points} points needs ~{need / 2**30:.2f} GiB (budget {budget / 2**30:.2f} GiB)"
        if hint:
            msg += f"; {hint}"
        raise MemoryBudgetExceeded(msg)


def forward_dft(probs) -> np.ndarray:
    """Spectrum of a coefficient sequence: ``X_k = sum_j x_j exp(-2 pi i j k / N)``."""
    v = np.asarray(probs)
    if v.ndim == 0 or v.size == 0:
        raise ValidationError("forward_dft needs a non-empty vector")
    return np.fft.fft(v, axis=-1)


def inverse_dft(values, imag_tol: float = IMAG_TOL, clean: bool = True) -> np.ndarray:
    """Inverse transform of a spectrum, returning the real coefficient vector.

    Raises ImaginaryResidue when any entry keeps an imaginary part larger than
    ``imag_tol``; that only happens for spectra that are not generating
    functions of real sequences. With ``clean`` the result passes through
    :func:`clean_probs`.
    """
    s = np.asarray(values)
    if s.size == 0:
        raise ValidationError("inverse_dft needs a non-empty spectrum")
    x = np.fft.ifft(s, axis=-1)
    resid = float(np.max(np.abs(x.imag))) if x.size else 0.0
    if resid > imag_tol:
        raise ImaginaryResidue(f"imaginary residue {resid:.3g} exceeds {imag_tol:.1g}")
    out = np.ascontiguousarray(x.real)
    return clean_probs(out) if clean else out


def inverse_dft_2d(values, imag_tol: float = IMAG_TOL, clean: bool = True) -> np.ndarray:
    """Two-dimensional counterpart of :func:`inverse_dft`."""
    x = np.fft.ifft2(np.asarray(values))
    resid = float(np.max(np.abs(x.imag)))
    if resid > imag_tol:
        raise ImaginaryResidue(f"imaginary residue {resid:.3g} exceeds {imag_tol:.1g}")
    out = np.ascontiguousarray(x.real)
    return clean_probs(out) if clean else out


def clean_probs(v: np.ndarray, neg_tol: float = NEG_TOL) -> np.ndarray:
    """Clamp rounding dust below zero and renormalise if the total mass drifted.

    Entries in ``[-neg_tol, 0)`` become zero. Larger negative values are also
    set to zero, since downstream code takes logarithms; callers wanting to
    detect them should inspect the raw transform instead.
    """
    v = np.where(v < 0.0, 0.0, v)
    total = float(v.sum())
    if total > 0 and abs(total - 1.0) > MASS_TOL and abs(total - 1.0) < 1e-3:
        v = v / total
    return v


def unit_impulse(n: int, length: int) -> np.ndarray:
    """Probability vector with all mass at count ``n``."""
    v = np.zeros(length)
    v[n] = 1.0
    return v


def convolve(a, b) -> np.ndarray:
    """Distribution of the sum of independent counts, by zero-padded DFTs.

    The result has length ``len(a) + len(b) - 1`` and is exact up to
    floating-point rounding.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValidationError("convolve needs non-empty inputs")
    out_len = a.size + b.size - 1
    n = next_pow2(out_len)
    fa = np.fft.rfft(a, n)
    fb = np.fft.rfft(b, n)
    c = np.fft.irfft(fa * fb, n)[:out_len]
    return np.where(c < 0.0, 0.0, c)


def binomial_mix(values, phi: float, m: int) -> np.ndarray:
    """Spectrum of a sum over Binomial(m, phi) selected copies: ``(1 - phi + phi s)^m``."""
    if not 0.0 <= phi <= 1.0:
        raise ValidationError(f"phi must lie in [0, 1], got {phi}")
    if m < 0:
        raise ValidationError(f"copy count must be non-negative, got {m}")
    s = np.asarray(values, dtype=complex)
    if m == 0:
        return np.ones_like(s)
    return (1.0 - phi + phi * s) ** int(m)


def poisson_mix(values, lam: float) -> np.ndarray:
    """Spectrum of a Poisson(lam) number of copies: ``exp(lam (s - 1))``."""
    if lam < 0:
        raise ValidationError(f"Poisson rate must be non-negative, got {lam}")
    s = np.asarray(values, dtype=complex)
    return np.exp(lam * (s - 1.0))


def poisson_length(lam: float, per_copy_support: int) -> int:
    """Vector length covering a Poisson(lam) compound to 1e-12 tail mass.

    Uses ``lam + 12 sqrt(lam)`` copies (plus a small floor) times the
    support of one copy, rounded up to a power of two.
    """
    copies = lam + 12.0 * math.sqrt(lam) + 8.0
    return next_pow2(int(math.ceil(copies * max(1, per_copy_support))) + 1)


def moments_of(probs) -> tuple[float, float]:
    """Mean and variance of a probability vector indexed by count."""
    p = np.asarray(probs, dtype=float)
    n = np.arange(p.size, dtype=float)
    total = p.sum()
    mean = float(np.dot(n, p) / total)
    var = float(np.dot((n - mean) ** 2, p) / total)
    return mean, var
