"""Power-law pressure ``p(r) = m/(m-1) r^(m-1)`` and its bounded C³ cutoff.

The cutoff ``p_λ`` is constant ``p(λ)`` below ``λ``, equal to ``p`` on
``[2λ, 1/λ]`` and constant ``p(2/λ)`` above ``2/λ``. On the two gaps it is a
degree-7 polynomial matching value and three derivatives at both ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_AUDIT_SAMPLES = 4001


def _check_m(m: float) -> None:
    if m <= 1:
        raise ValueError(f"pressure exponent must exceed 1, got m={m}")


def _check_nonneg(r) -> np.ndarray:
    arr = np.asarray(r, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("density argument must be nonnegative")
    return arr


def _ret(out: np.ndarray, like):
    return float(out) if np.ndim(like) == 0 else out


def _power(r: np.ndarray, m: float) -> np.ndarray:
    return m / (m - 1.0) * r ** (m - 1.0)


def _power_prime(r: np.ndarray, m: float) -> np.ndarray:
    return m * r ** (m - 2.0)


def p_eval(r, m: float):
    _check_m(m)
    arr = _check_nonneg(r)
    return _ret(_power(arr, m), r)


def p_prime(r, m: float):
    _check_m(m)
    arr = _check_nonneg(r)
    return _ret(_power_prime(arr, m), r)


def _p_derivs(r: float, m: float) -> list[float]:
    """``p`` and its first three derivatives at ``r > 0``."""
    return [
        m / (m - 1.0) * r ** (m - 1.0),
        m * r ** (m - 2.0),
        m * (m - 2.0) * r ** (m - 3.0),
        m * (m - 2.0) * (m - 3.0) * r ** (m - 4.0),
    ]


def hermite7(left: list[float], right: list[float], width: float) -> np.ndarray:
    """Coefficients (ascending, in ``t = (r-a)/width``) of the degree-7 C³ match."""
    rows = []
    rhs = []
    for t0, derivs in ((0.0, left), (1.0, right)):
        for j in range(4):
            row = np.zeros(8)
            for k in range(j, 8):
                row[k] = math.perm(k, j) * t0 ** (k - j)
            rows.append(row)
            rhs.append(derivs[j] * width**j)
    return np.linalg.solve(np.array(rows), np.array(rhs))


def _horner(coef: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.full_like(t, coef[-1])
    for c in coef[-2::-1]:
        out = out * t + c
    return out


def _horner_prime(coef: np.ndarray, t: np.ndarray) -> np.ndarray:
    dcoef = coef[1:] * np.arange(1, len(coef))
    return _horner(dcoef, t)


@dataclass(frozen=True)
class PressureLaw:
    """``p_λ`` for exponent ``m``; ``lam=0`` gives the plain power law."""

    m: float
    lam: float = 0.0
    left: np.ndarray = field(init=False, repr=False, compare=False)
    right: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_m(self.m)
        lam = self.lam
        if lam < 0:
            raise ValueError("cutoff parameter must be nonnegative")
        if lam == 0:
            object.__setattr__(self, "left", np.zeros(8))
            object.__setattr__(self, "right", np.zeros(8))
            return
        if 2 * lam >= 1 / lam:
            raise ValueError(f"2λ ≥ 1/λ for λ={lam}; the identity band is empty")
        m = self.m
        plateau_lo = [_p_derivs(lam, m)[0], 0.0, 0.0, 0.0]
        plateau_hi = [_p_derivs(2 / lam, m)[0], 0.0, 0.0, 0.0]
        object.__setattr__(self, "left", hermite7(plateau_lo, _p_derivs(2 * lam, m), lam))
        object.__setattr__(self, "right", hermite7(_p_derivs(1 / lam, m), plateau_hi, 1 / lam))
        bad = self.monotonicity_violation()
        if bad is not None:
            raise ValueError(f"cutoff blend for m={m}, λ={lam} is not monotone near r={bad:g}")

    @property
    def breakpoints(self) -> tuple[float, float, float, float]:
        lam = self.lam
        return lam, 2 * lam, 1 / lam, 2 / lam

    def monotonicity_violation(self) -> float | None:
        """First sampled point where a blend decreases, else ``None``."""
        t = np.linspace(0.0, 1.0, _AUDIT_SAMPLES)
        a, b, c, e = self.breakpoints
        for coef, start, width in ((self.left, a, b - a), (self.right, c, e - c)):
            slope = _horner_prime(coef, t)
            scale = np.abs(slope).max()
            neg = np.nonzero(slope < -1e-12 * scale)[0]
            if neg.size:
                return float(start + width * t[neg[0]])
        return None

    def value(self, r):
        arr = _check_nonneg(r)
        if self.lam == 0:
            return _ret(_power(arr, self.m), r)
        a, b, c, e = self.breakpoints
        out = np.empty_like(arr)
        lo = arr <= a
        blend_lo = (arr > a) & (arr < b)
        mid = (arr >= b) & (arr <= c)
        blend_hi = (arr > c) & (arr < e)
        hi = arr >= e
        out[lo] = _power(np.float64(a), self.m)
        out[blend_lo] = _horner(self.left, (arr[blend_lo] - a) / (b - a))
        out[mid] = _power(arr[mid], self.m)
        out[blend_hi] = _horner(self.right, (arr[blend_hi] - c) / (e - c))
        out[hi] = _power(np.float64(e), self.m)
        return _ret(out, r)

    def prime(self, r):
        arr = _check_nonneg(r)
        if self.lam == 0:
            return _ret(_power_prime(arr, self.m), r)
        a, b, c, e = self.breakpoints
        out = np.zeros_like(arr)
        blend_lo = (arr > a) & (arr < b)
        mid = (arr >= b) & (arr <= c)
        blend_hi = (arr > c) & (arr < e)
        out[blend_lo] = _horner_prime(self.left, (arr[blend_lo] - a) / (b - a)) / (b - a)
        out[mid] = _power_prime(arr[mid], self.m)
        out[blend_hi] = _horner_prime(self.right, (arr[blend_hi] - c) / (e - c)) / (e - c)
        return _ret(out, r)

    def piece_derivatives(self, r0: float) -> tuple[list[float], list[float]]:
        """Value and derivatives 1..3 of the pieces meeting at a breakpoint.

        Returns ``(from_left, from_right)`` evaluated exactly at ``r0``.
        """
        a, b, c, e = self.breakpoints
        const_lo = [_p_derivs(a, self.m)[0], 0.0, 0.0, 0.0]
        const_hi = [_p_derivs(e, self.m)[0], 0.0, 0.0, 0.0]

        def poly(coef, start, width, t0):
            out = []
            cf = coef.copy()
            for j in range(4):
                out.append(float(_horner(cf, np.array([t0]))[0]) / width**j)
                cf = cf[1:] * np.arange(1, len(cf))
            return out

        table = {
            a: (const_lo, poly(self.left, a, b - a, 0.0)),
            b: (poly(self.left, a, b - a, 1.0), _p_derivs(b, self.m)),
            c: (_p_derivs(c, self.m), poly(self.right, c, e - c, 0.0)),
            e: (poly(self.right, c, e - c, 1.0), const_hi),
        }
        return table[r0]


def p_lambda_eval(r, law: PressureLaw):
    return law.value(r)


def p_lambda_prime(r, law: PressureLaw):
    return law.prime(r)
