"""Truncated Taylor series arithmetic.

A series is a plain numpy 1-D array of coefficients ``a[k]`` representing
``sum a[k] * u**k``, truncated at a fixed order chosen by the caller.  All
operations return arrays of the requested length, zero-padding as needed.
These are used to carry exact derivative data: every coefficient comes from
closed-form differentiation of analytic expressions, never from finite
differences.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ser",
    "ser_mul",
    "ser_inv",
    "ser_div",
    "ser_deriv",
    "ser_compose2",
    "sin_series",
    "cos_series",
    "exp_series",
    "power_series",
]


def ser(values, n: int) -> np.ndarray:
    """Coerce ``values`` to a series of length ``n`` (pad or truncate)."""
    a = np.asarray(values)
    out = np.zeros(n, dtype=np.result_type(a.dtype, float))
    m = min(n, a.shape[0])
    out[:m] = a[:m]
    return out


def ser_mul(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    """Cauchy product truncated at order ``n - 1``."""
    return np.convolve(a[:n], b[:n])[:n]


def ser_inv(a: np.ndarray, n: int) -> np.ndarray:
    """Reciprocal series of ``a`` with ``a[0] != 0``."""
    if a[0] == 0:
        raise ZeroDivisionError("series has zero constant term")
    out = np.zeros(n, dtype=np.result_type(a.dtype, float))
    out[0] = 1.0 / a[0]
    for k in range(1, n):
        acc = 0.0
        for j in range(1, min(k, a.shape[0] - 1) + 1):
            acc = acc + a[j] * out[k - j]
        out[k] = -acc / a[0]
    return out


def ser_div(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    return ser_mul(ser(a, n), ser_inv(ser(b, n), n), n)


def ser_deriv(a: np.ndarray) -> np.ndarray:
    """Derivative series d/du."""
    if a.shape[0] <= 1:
        return np.zeros(1, dtype=a.dtype)
    k = np.arange(1, a.shape[0])
    return a[1:] * k


_FACT = np.array([math.factorial(k) for k in range(64)], dtype=float)


def sin_series(x0: float, n: int) -> np.ndarray:
    """Taylor coefficients of sin at ``x0``: sin(x0 + u)."""
    k = np.arange(n)
    return np.sin(x0 + k * np.pi / 2.0) / _FACT[:n]


def cos_series(x0: float, n: int) -> np.ndarray:
    k = np.arange(n)
    return np.cos(x0 + k * np.pi / 2.0) / _FACT[:n]


def exp_series(x0: float, n: int) -> np.ndarray:
    return np.exp(x0) / _FACT[:n]


def power_series(a: np.ndarray, p: float, n: int) -> np.ndarray:
    """Series of ``a ** p`` for ``a[0] > 0`` (real exponent).

    Uses the ODE (a^p)' a = p a^p a', i.e. the standard recurrence for
    composition with a power function.
    """
    a = ser(a, n)
    if not (np.real(a[0]) > 0 or a[0] != 0):
        raise ZeroDivisionError("power_series needs nonzero constant term")
    out = np.zeros(n, dtype=np.result_type(a.dtype, float))
    out[0] = a[0] ** p
    for k in range(1, n):
        acc = 0.0
        for j in range(1, k + 1):
            acc = acc + ((p + 1) * j / k - 1.0) * a[j] * out[k - j]
        out[k] = acc / a[0]
    return out


def ser_compose2(jet: np.ndarray, u: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    """Compose a bivariate jet with two univariate series.

    ``jet[i, j]`` holds the partial derivative ``d^{i+j} f / dx1^i dx2^j`` at
    the expansion point (not divided by factorials).  ``u`` and ``v`` are
    series with zero constant term giving the increments ``x1 - x1_0`` and
    ``x2 - x2_0`` as functions of the series variable.  Returns the series of
    ``f(x1_0 + u, x2_0 + v)``.
    """
    p = jet.shape[0] - 1
    dtype = np.result_type(jet.dtype, u.dtype, v.dtype, float)
    upow = [None] * (p + 1)
    vpow = [None] * (p + 1)
    upow[0] = ser([1.0], n).astype(dtype)
    vpow[0] = ser([1.0], n).astype(dtype)
    for i in range(1, p + 1):
        upow[i] = ser_mul(upow[i - 1], ser(u, n), n)
        vpow[i] = ser_mul(vpow[i - 1], ser(v, n), n)
    out = np.zeros(n, dtype=dtype)
    for i in range(p + 1):
        for j in range(p + 1 - i):
            c = jet[i, j]
            if c == 0:
                continue
            term = ser_mul(upow[i], vpow[j], n)
            out = out + (c / (math.factorial(i) * math.factorial(j))) * term
    return out
