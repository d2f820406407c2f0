"""Decay-model regression shared by the residual sweeps and the FBI scans.

Two models on log-magnitudes over an h grid:

    exponential:  log r = c0 - c1 / h
    power law:    log r = c0 + p log h

Least squares on the transformed data; the winner is the higher R^2 with a
tie margin, below which the comparison is declared inconclusive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = ["DecayFit", "fit_decay_models"]


@dataclass
class DecayFit:
    exp_c0: float
    exp_c1: float
    exp_r2: float
    pow_c0: float
    pow_p: float
    pow_r2: float
    selected: str  # "exponential" | "power" | "tie"
    margin: float

    def as_dict(self):
        return {
            "exponential": {"c0": self.exp_c0, "c1": self.exp_c1, "r2": self.exp_r2},
            "power": {"c0": self.pow_c0, "p": self.pow_p, "r2": self.pow_r2},
            "selected": self.selected,
        }


def _lsq_line(x, y):
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-30 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def fit_decay_models(h_grid, values, margin: float = 0.02) -> DecayFit:
    """Fit both decay models to positive magnitudes over the h grid."""
    h = np.asarray(h_grid, dtype=float)
    r = np.asarray(values, dtype=float)
    if h.shape != r.shape or h.ndim != 1:
        raise ValidationError("h grid and values must be 1-d arrays of equal length")
    if len(h) < 4:
        raise ValidationError("need at least 4 h points")
    if h.max() / h.min() < 8.0 - 1e-12:
        raise ValidationError("h grid must span a factor of at least 8")
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise ValidationError("values must be positive and finite for the log fits")
    y = np.log(r)
    c0e, slope_e, r2e = _lsq_line(-1.0 / h, y)
    c0p, p, r2p = _lsq_line(np.log(h), y)
    if r2e >= r2p + margin:
        selected = "exponential"
    elif r2p >= r2e + margin:
        selected = "power"
    else:
        selected = "tie"
    return DecayFit(
        exp_c0=c0e, exp_c1=slope_e, exp_r2=r2e,
        pow_c0=c0p, pow_p=p, pow_r2=r2p,
        selected=selected, margin=margin,
    )
