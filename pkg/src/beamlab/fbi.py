"""FBI transform, decay fitting, and analytic-singularity classification.

The transform of u at a phase-space point alpha = (alpha_x, alpha_xi) is

    Tu(alpha; h) = int e^{i phi(x, alpha)/h} a(x) chi(x - alpha_x) conj(u(x)) dx

with the standard phase phi = alpha_xi . (x - alpha_x) + (i/2)|x - alpha_x|^2.
Exponential decay of |Tu| in 1/h over an h grid is the detector for the
point being outside the analytic wave front set; a power-law win flags a
singularity.  A supplied phase carrying a gradient scale t0 and a real
offset f(alpha) is first normalized, then evaluated at h/t0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ResolutionError, ValidationError
from .fitting import DecayFit, fit_decay_models
from .quasimode import Cutoff

__all__ = [
    "FBIQuery",
    "transform",
    "decay_fit",
    "classify",
    "ScanEntry",
    "WavefrontReport",
    "scan",
]

ZERO_FLOOR = 1e-300


@dataclass(frozen=True)
class FBIQuery:
    """One phase-space query: center, direction, cutoff, and phase choice.

    ``phase`` is "standard" or a tuple (phi, t0, f_alpha) with phi(x, alpha)
    vectorized over x rows; the normalization of the remark on rescaled
    phases is applied automatically.
    """

    alpha_x: np.ndarray
    alpha_xi: np.ndarray
    cutoff_radius: float = 0.5
    phase: object = "standard"
    amplitude: object = None  # callable a(x) or None for 1
    gl_order: int = 12

    def __post_init__(self):
        ax = np.atleast_1d(np.asarray(self.alpha_x, dtype=float))
        xi = np.atleast_1d(np.asarray(self.alpha_xi, dtype=float))
        object.__setattr__(self, "alpha_x", ax)
        object.__setattr__(self, "alpha_xi", xi)
        if ax.shape != xi.shape:
            raise ValidationError("alpha_x and alpha_xi must have the same dimension")
        if abs(np.linalg.norm(xi) - 1.0) > 1e-10:
            raise ValidationError("alpha_xi must be a unit vector")
        if self.cutoff_radius <= 0:
            raise ValidationError("cutoff radius must be positive")

    @property
    def dim(self):
        return len(self.alpha_x)


def _standard_phase(q: FBIQuery, x):
    d = x - q.alpha_x[None, :]
    return d @ q.alpha_xi + 0.5j * np.sum(d * d, axis=1)


def _panel_nodes(lo, hi, n_panels, gl_order):
    gx, gw = np.polynomial.legendre.leggauss(gl_order)
    edges = np.linspace(lo, hi, n_panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    rad = 0.5 * (edges[1] - edges[0])
    nodes = (mid[:, None] + rad * gx[None, :]).ravel()
    weights = np.tile(rad * gw, n_panels)
    return nodes, weights


def transform(u, q: FBIQuery, h: float, spacing: float | None = None) -> complex:
    """Quadrature value of the FBI integral at one h.

    ``u`` is a callable on (n, dim) arrays (or scalars mapped over rows).
    The tensor Gauss-Legendre grid resolves both the h-oscillation and the
    sqrt(h) Gaussian factor; an explicitly coarser ``spacing`` errors.
    """
    if h <= 0:
        raise ValidationError("h must be positive")
    phase = q.phase
    h_eff = h
    f_alpha = 0.0
    phi_fn = None
    if phase != "standard":
        phi_fn, t0, f_alpha = phase
        if t0 <= 0:
            raise ValidationError("supplied phase needs t0 > 0")
        h_eff = h / t0
    xi_scale = max(float(np.abs(q.alpha_xi).max()), 1e-6)
    s_req = min(2.0 * math.pi * h_eff / (10.0 * xi_scale), math.sqrt(h_eff) / 4.0)
    if spacing is not None and spacing > s_req * (1 + 1e-9):
        raise ResolutionError(f"grid under-resolved: need spacing <= {s_req:.3e}")
    R = q.cutoff_radius
    n_panels = max(2, int(math.ceil(2.0 * R / (q.gl_order * s_req))))
    nodes, weights = _panel_nodes(-R, R, n_panels, q.gl_order)

    if q.dim == 1:
        X = q.alpha_x[0] + nodes[:, None]
        W = weights
    elif q.dim == 2:
        g1, g2 = np.meshgrid(nodes, nodes, indexing="ij")
        X = np.column_stack([g1.ravel() + q.alpha_x[0], g2.ravel() + q.alpha_x[1]])
        W = np.outer(weights, weights).ravel()
    else:
        raise ValidationError("transform supports dimensions 1 and 2")

    if phi_fn is None:
        phi = _standard_phase(q, X)
    else:
        phi = (np.asarray(phi_fn(X)) - f_alpha) / (q.phase[1])
    amp = 1.0 if q.amplitude is None else np.asarray(q.amplitude(X))
    cut = Cutoff(2.0 * R)
    r = np.linalg.norm(X - q.alpha_x[None, :], axis=1)
    chi = cut.value(r)
    uv = np.conj(np.asarray(u(X)))
    vals = np.exp(1j * phi / h_eff) * amp * chi * uv
    return complex(np.sum(vals * W))


def decay_fit(h_grid, values, margin: float = 0.02):
    """Fit both decay models to |values|; exact zeros short-circuit.

    Returns (DecayFit | None, zero_flag).
    """
    mags = np.abs(np.asarray(values, dtype=complex))
    if np.all(mags <= ZERO_FLOOR):
        return None, True
    mags = np.maximum(mags, ZERO_FLOOR)
    return fit_decay_models(h_grid, mags, margin=margin), False


def classify(fit: DecayFit | None, zero: bool, c_min: float, r2_min: float = 0.9) -> str:
    """analytic_decay / singular / inconclusive per the fixed decision rule."""
    if zero:
        return "analytic_decay"
    if fit.selected == "exponential":
        if fit.exp_c1 >= c_min and fit.exp_r2 >= r2_min:
            return "analytic_decay"
        return "inconclusive"
    if fit.selected == "power":
        return "singular"
    return "inconclusive"


@dataclass
class ScanEntry:
    alpha_x: np.ndarray
    alpha_xi: np.ndarray
    values: np.ndarray
    fit: DecayFit | None
    zero: bool
    classification: str
    stable_under_cutoff: bool | None = None

    def row(self):
        f = self.fit
        return {
            "alpha_x": self.alpha_x.tolist(),
            "alpha_xi": self.alpha_xi.tolist(),
            "c1": f.exp_c1 if f else math.inf,
            "p": f.pow_p if f else math.inf,
            "r2_exp": f.exp_r2 if f else 1.0,
            "r2_pow": f.pow_r2 if f else 1.0,
            "class": self.classification,
        }


@dataclass
class WavefrontReport:
    h_grid: np.ndarray
    entries: list
    c_min: float
    r2_min: float

    def classifications(self):
        return [e.classification for e in self.entries]


def scan(
    u,
    alphas,
    h_grid,
    query_template: FBIQuery | None = None,
    c_min: float | None = None,
    r2_min: float = 0.9,
    margin: float = 0.02,
    subsample_stride: int = 10,
    alt_radius_factor: float = 1.5,
    parallel_map=map,
) -> WavefrontReport:
    """Classify a grid of phase-space points by FBI decay.

    Every ``subsample_stride``-th point is re-run with the cutoff radius
    scaled by ``alt_radius_factor``; a classification flip there downgrades
    the entry to inconclusive (the criterion is cutoff-independent, so a
    flip signals an unconverged fit).
    """
    h_grid = np.asarray(h_grid, dtype=float)
    if c_min is None:
        c_min = 0.1 / float(h_grid.max())

    def run(item):
        i, (ax, xi) = item
        base = query_template if query_template is not None else FBIQuery(ax, xi)
        q = replace(base, alpha_x=np.asarray(ax, float), alpha_xi=np.asarray(xi, float))
        vals = np.array([transform(u, q, float(h)) for h in h_grid])
        fit, zero = decay_fit(h_grid, vals, margin=margin)
        cls = classify(fit, zero, c_min=c_min, r2_min=r2_min)
        stable = None
        if i % subsample_stride == 0:
            q2 = replace(q, cutoff_radius=q.cutoff_radius * alt_radius_factor)
            vals2 = np.array([transform(u, q2, float(h)) for h in h_grid])
            fit2, zero2 = decay_fit(h_grid, vals2, margin=margin)
            cls2 = classify(fit2, zero2, c_min=c_min, r2_min=r2_min)
            stable = cls2 == cls
            if not stable:
                cls = "inconclusive"
        return ScanEntry(
            alpha_x=np.asarray(ax, float), alpha_xi=np.asarray(xi, float),
            values=vals, fit=fit, zero=zero, classification=cls,
            stable_under_cutoff=stable,
        )

    entries = list(parallel_map(run, list(enumerate(alphas))))
    return WavefrontReport(h_grid=h_grid, entries=entries, c_min=c_min, r2_min=r2_min)
