"""Analytic co-metrics on coordinate charts with exact derivative jets.

Every built-in surface carries its inverse metric G(x) = (g^{jk}(x)) in
closed form together with all partial derivatives up to a configured order.
Derivatives are produced by Taylor-series arithmetic on the closed forms, so
they are exact up to roundoff; finite differences appear only in tests as an
independent oracle.

Charts are rectangles with optional per-axis periodicity.  The chart is
defined on an extension of the closed rectangle by ``margin`` on every
non-periodic side, which houses geodesic overshoot past the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartDomainError, ConstructionError
from .series import cos_series, ser, ser_inv, ser_mul, sin_series

__all__ = [
    "SurfaceSpec",
    "MetricChart",
    "build_surface",
    "cometric_jet",
    "christoffel",
    "SURFACE_NAMES",
]

SURFACE_NAMES = ("flat_cylinder", "sphere_patch", "surface_of_revolution", "perturbed_flat")

_EYE2 = np.eye(2)
_EYE2.setflags(write=False)
_ZERO_D1 = np.zeros((2, 2, 2))
_ZERO_D1.setflags(write=False)


@dataclass(frozen=True)
class SurfaceSpec:
    """Named surface with numeric parameters.

    Parameters by name:
      flat_cylinder:          a (height)
      sphere_patch:           caps (colatitude of removed polar caps)
      surface_of_revolution:  profile "r0,A,w" meaning r(s) = r0 + A*cos(w*s),
                              a (length of the s-interval)
      perturbed_flat:         a, amplitude, bump (angular frequency)
    """

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in SURFACE_NAMES:
            raise ConstructionError(f"unknown surface name {self.name!r}")


class MetricChart:
    """Co-metric on a chart rectangle with exact jets up to ``jet_order``.

    Subclasses implement :meth:`_entry_jet` giving, for one co-metric entry,
    the table of partials d^i_{x1} d^j_{x2} G_{ab}（i + j <= order).
    """

    dim = 2

    def __init__(self, lo, hi, periodic, margin, jet_order, name=""):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.periodic = tuple(bool(p) for p in periodic)
        if margin <= 0:
            raise ConstructionError("margin must be positive")
        self.margin = float(margin)
        if jet_order < 2:
            raise ConstructionError("jet_order must be at least 2")
        self.jet_order = int(jet_order)
        self.name = name

    # -- geometry of the rectangle ------------------------------------

    @property
    def is_flat(self) -> bool:
        return False

    def periods(self):
        return tuple(self.hi[i] - self.lo[i] if self.periodic[i] else None for i in range(2))

    def wrap(self, x):
        """Canonical representative with periodic axes folded into [lo, hi)."""
        x = np.array(x, dtype=float)
        for i in range(2):
            if self.periodic[i]:
                p = self.hi[i] - self.lo[i]
                x[..., i] = self.lo[i] + np.mod(x[..., i] - self.lo[i], p)
        return x

    def delta(self, a, b):
        """Minimal difference a - b, folding periodic axes to (-p/2, p/2]."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        d = np.array(d)
        for i in range(2):
            if self.periodic[i]:
                p = self.hi[i] - self.lo[i]
                d[..., i] = d[..., i] - p * np.round(d[..., i] / p)
        return d

    def distance_flatish(self, a, b):
        """Euclidean length of :meth:`delta` (used for candidate screening)."""
        return np.linalg.norm(self.delta(a, b), axis=-1)

    def in_domain(self, x, extended=True):
        pad = self.margin if extended else 0.0
        x = np.asarray(x, dtype=float)
        ok = True
        for i in range(2):
            if self.periodic[i]:
                continue
            ok = ok and (self.lo[i] - pad <= x[..., i] <= self.hi[i] + pad)
        return bool(ok)

    def faces(self):
        """Boundary faces as (axis, side, value); side is -1 for lo, +1 for hi."""
        out = []
        for i in range(2):
            if not self.periodic[i]:
                out.append((i, -1, self.lo[i]))
                out.append((i, +1, self.hi[i]))
        return out

    def sample_interior(self, rng, n=1, pad_frac=0.1):
        """Uniform random interior points, kept ``pad_frac`` away from faces."""
        pts = np.empty((n, 2))
        for i in range(2):
            lo, hi = self.lo[i], self.hi[i]
            if not self.periodic[i]:
                pad = pad_frac * (hi - lo)
                lo, hi = lo + pad, hi - pad
            pts[:, i] = rng.uniform(lo, hi, size=n)
        return pts

    # -- metric data ----------------------------------------------------

    def _entry_jet(self, a, b, x, order):
        raise NotImplementedError

    def _check_point(self, x):
        if not self.in_domain(x, extended=True):
            raise ChartDomainError(f"point {x} outside extended domain of {self.name}")

    def cometric_jets(self, x, order):
        """All partials of G up to ``order``: array (order+1, order+1, 2, 2)."""
        self._check_point(x)
        if order > self.jet_order:
            raise ChartDomainError(
                f"jet order {order} exceeds configured jet_order {self.jet_order}"
            )
        out = np.zeros((order + 1, order + 1, 2, 2))
        for a in range(2):
            for b in range(a, 2):
                tab = self._entry_jet(a, b, x, order)
                out[:, :, a, b] = tab
                if b != a:
                    out[:, :, b, a] = tab
        return out

    def cometric(self, x):
        self._check_point(x)
        return self.cometric_jets(x, 0)[0, 0]

    def cometric_d1(self, x):
        """(G, dG) with dG[c] = d G / d x_c; the tracer hot path."""
        j = self.cometric_jets(x, 1)
        return j[0, 0], np.stack([j[1, 0], j[0, 1]])

    def metric(self, x):
        return np.linalg.inv(self.cometric(x))

    def sqrt_det_metric(self, x):
        return 1.0 / math.sqrt(np.linalg.det(self.cometric(x)))

    def christoffel(self, x):
        return christoffel(self, x)

    def norm(self, x, xi):
        """|xi|_g for a covector xi."""
        G = self.cometric(x)
        return math.sqrt(float(xi @ G @ xi))

    def unit_covector(self, x, xi):
        return np.asarray(xi, dtype=float) / self.norm(x, xi)

    def raise_index(self, x, xi):
        """Covector -> vector via G."""
        return self.cometric(x) @ np.asarray(xi, dtype=float)

    def lower_index(self, x, v):
        return self.metric(x) @ np.asarray(v, dtype=float)


class FlatCylinderChart(MetricChart):
    """S^1 x [0, a] with the flat metric; x1 is the angle, x2 the height."""

    def __init__(self, a, margin, jet_order):
        if a <= 0:
            raise ConstructionError("flat_cylinder needs a > 0")
        super().__init__(
            lo=(0.0, 0.0), hi=(2 * np.pi, a), periodic=(True, False),
            margin=margin, jet_order=jet_order, name=f"flat_cylinder(a={a})",
        )
        self.a = float(a)

    @property
    def is_flat(self):
        return True

    def in_domain(self, x, extended=True):
        # flat closed form is valid on the whole plane
        if extended:
            return True
        return super().in_domain(x, extended=False)

    def _entry_jet(self, a, b, x, order):
        tab = np.zeros((order + 1, order + 1))
        if a == b:
            tab[0, 0] = 1.0
        return tab

    def cometric_d1(self, x):
        return _EYE2, _ZERO_D1

    def cometric(self, x):
        return _EYE2


class SpherePatchChart(MetricChart):
    """Unit-sphere band theta in [caps, pi - caps]; x1 = theta, x2 = phi.

    Co-metric diag(1, csc^2 theta).
    """

    def __init__(self, caps, margin, jet_order):
        if not 0 < caps < np.pi / 2:
            raise ConstructionError("sphere_patch needs 0 < caps < pi/2")
        if margin >= caps:
            raise ConstructionError("sphere_patch margin must stay off the poles")
        super().__init__(
            lo=(caps, 0.0), hi=(np.pi - caps, 2 * np.pi), periodic=(False, True),
            margin=margin, jet_order=jet_order, name=f"sphere_patch(caps={caps})",
        )
        self.caps = float(caps)

    def _entry_jet(self, a, b, x, order):
        tab = np.zeros((order + 1, order + 1))
        if a == 0 and b == 0:
            tab[0, 0] = 1.0
        elif a == 1 and b == 1:
            n = order + 1
            s = sin_series(x[0], n)
            csc2 = ser_inv(ser_mul(s, s, n), n)
            fact = 1.0
            for i in range(n):
                tab[i, 0] = csc2[i] * fact
                fact *= i + 1
        return tab

    def cometric_d1(self, x):
        self._check_point(x)
        st, ct = math.sin(x[0]), math.cos(x[0])
        G = np.array([[1.0, 0.0], [0.0, 1.0 / st**2]])
        dG = np.zeros((2, 2, 2))
        dG[0, 1, 1] = -2.0 * ct / st**3
        return G, dG

    def cometric(self, x):
        self._check_point(x)
        return np.array([[1.0, 0.0], [0.0, 1.0 / math.sin(x[0]) ** 2]])


class SurfaceOfRevolutionChart(MetricChart):
    """Profile r(s) = r0 + A cos(w s); ds^2 + r(s)^2 dtheta^2.

    x1 = s in [0, a], x2 = theta periodic; co-metric diag(1, 1/r^2).
    """

    def __init__(self, r0, A, w, a, margin, jet_order):
        if a <= 0:
            raise ConstructionError("surface_of_revolution needs a > 0")
        if r0 - abs(A) <= 0:
            raise ConstructionError(
                "surface_of_revolution profile must keep r(s) > 0 (need r0 > |A|)"
            )
        super().__init__(
            lo=(0.0, 0.0), hi=(a, 2 * np.pi), periodic=(False, True),
            margin=margin, jet_order=jet_order,
            name=f"surface_of_revolution(r0={r0},A={A},w={w},a={a})",
        )
        self.r0, self.A, self.w, self.a = float(r0), float(A), float(w), float(a)

    def profile_series(self, s, n):
        c = cos_series(self.w * s, n)
        r = ser(c * self.w ** np.arange(n) * self.A, n)
        r[0] += self.r0
        return r

    def _entry_jet(self, a, b, x, order):
        tab = np.zeros((order + 1, order + 1))
        if a == 0 and b == 0:
            tab[0, 0] = 1.0
        elif a == 1 and b == 1:
            n = order + 1
            r = self.profile_series(x[0], n)
            inv_r2 = ser_inv(ser_mul(r, r, n), n)
            fact = 1.0
            for i in range(n):
                tab[i, 0] = inv_r2[i] * fact
                fact *= i + 1
        return tab

    def cometric_d1(self, x):
        self._check_point(x)
        r = self.r0 + self.A * math.cos(self.w * x[0])
        rp = -self.A * self.w * math.sin(self.w * x[0])
        G = np.array([[1.0, 0.0], [0.0, 1.0 / r**2]])
        dG = np.zeros((2, 2, 2))
        dG[0, 1, 1] = -2.0 * rp / r**3
        return G, dG

    def cometric(self, x):
        self._check_point(x)
        r = self.r0 + self.A * math.cos(self.w * x[0])
        return np.array([[1.0, 0.0], [0.0, 1.0 / r**2]])


class PerturbedFlatChart(MetricChart):
    """Flat cylinder with a conformal ripple.

    G(x) = (1 + amplitude * sin(bump * x1) * sin(pi x2 / a)) * Id.
    """

    def __init__(self, a, amplitude, bump, margin, jet_order):
        if a <= 0:
            raise ConstructionError("perturbed_flat needs a > 0")
        if not abs(amplitude) < 1:
            raise ConstructionError(
                "perturbed_flat amplitude must satisfy |amplitude| < 1 "
                "(co-metric positivity)"
            )
        if bump != int(bump) or bump < 1:
            raise ConstructionError("perturbed_flat bump must be a positive integer")
        super().__init__(
            lo=(0.0, 0.0), hi=(2 * np.pi, a), periodic=(True, False),
            margin=margin, jet_order=jet_order,
            name=f"perturbed_flat(a={a},amplitude={amplitude},bump={bump})",
        )
        self.a = float(a)
        self.amplitude = float(amplitude)
        self.bump = int(bump)

    def _entry_jet(self, a, b, x, order):
        tab = np.zeros((order + 1, order + 1))
        if a != b:
            return tab
        k, wa = float(self.bump), np.pi / self.a
        for i in range(order + 1):
            pi_d = k**i * math.sin(k * x[0] + i * np.pi / 2)
            for j in range(order + 1 - i):
                qj_d = wa**j * math.sin(wa * x[1] + j * np.pi / 2)
                tab[i, j] = self.amplitude * pi_d * qj_d
        tab[0, 0] += 1.0
        return tab

    def cometric_d1(self, x):
        k, wa, amp = float(self.bump), np.pi / self.a, self.amplitude
        f = 1.0 + amp * math.sin(k * x[0]) * math.sin(wa * x[1])
        f1 = amp * k * math.cos(k * x[0]) * math.sin(wa * x[1])
        f2 = amp * wa * math.sin(k * x[0]) * math.cos(wa * x[1])
        G = np.array([[f, 0.0], [0.0, f]])
        dG = np.zeros((2, 2, 2))
        dG[0, 0, 0] = dG[0, 1, 1] = f1
        dG[1, 0, 0] = dG[1, 1, 1] = f2
        return G, dG

    def cometric(self, x):
        k, wa = float(self.bump), np.pi / self.a
        f = 1.0 + self.amplitude * math.sin(k * x[0]) * math.sin(wa * x[1])
        return np.array([[f, 0.0], [0.0, f]])


def _default_margin(lo, hi, periodic):
    sides = [hi[i] - lo[i] for i in range(2) if not periodic[i]]
    if not sides:
        sides = [hi[i] - lo[i] for i in range(2)]
    return 0.1 * min(sides)


def build_surface(spec: SurfaceSpec, jet_order: int = 8, margin: float | None = None) -> MetricChart:
    """Build a chart from a surface spec with exact closed-form jets."""
    p = dict(spec.params)
    if spec.name == "flat_cylinder":
        a = float(p.get("a", 1.0))
        m = margin if margin is not None else 0.1 * a
        return FlatCylinderChart(a=a, margin=m, jet_order=jet_order)
    if spec.name == "sphere_patch":
        caps = float(p.get("caps", 0.6))
        m = margin if margin is not None else min(0.1 * (np.pi - 2 * caps), 0.9 * caps)
        return SpherePatchChart(caps=caps, margin=m, jet_order=jet_order)
    if spec.name == "surface_of_revolution":
        prof = p.get("profile", "1.0,0.2,1.0")
        if isinstance(prof, str):
            r0, A, w = (float(t) for t in prof.split(","))
        else:
            r0, A, w = (float(t) for t in prof)
        a = float(p.get("a", 2.0))
        m = margin if margin is not None else 0.1 * a
        return SurfaceOfRevolutionChart(r0=r0, A=A, w=w, a=a, margin=m, jet_order=jet_order)
    if spec.name == "perturbed_flat":
        a = float(p.get("a", 1.0))
        amp = float(p.get("amplitude", 0.1))
        bump = int(p.get("bump", 1))
        m = margin if margin is not None else 0.1 * a
        return PerturbedFlatChart(a=a, amplitude=amp, bump=bump, margin=m, jet_order=jet_order)
    raise ConstructionError(f"unknown surface name {spec.name!r}")


def cometric_jet(chart: MetricChart, x, order: int) -> np.ndarray:
    """G and its partials up to ``order`` at x; index [i, j] is d^i_1 d^j_2 G."""
    return chart.cometric_jets(np.asarray(x, dtype=float), order)


def christoffel(chart: MetricChart, x) -> np.ndarray:
    """Christoffel symbols Gamma[i, j, k] = Gamma^i_{jk} from the metric jets."""
    x = np.asarray(x, dtype=float)
    jets = chart.cometric_jets(x, 1)
    G = jets[0, 0]
    dG = np.stack([jets[1, 0], jets[0, 1]])  # dG[c] = d_c G
    g = np.linalg.inv(G)
    dg = np.empty_like(dG)
    for c in range(2):
        dg[c] = -g @ dG[c] @ g
    gamma = np.empty((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                acc = 0.0
                for l in range(2):
                    acc += G[i, l] * (dg[j][l, k] + dg[k][l, j] - dg[l][j, k])
                gamma[i, j, k] = 0.5 * acc
    return gamma
