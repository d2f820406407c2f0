"""Fermi coordinate frames along geodesics.

A frame carries the parallel-transported unit normal e1(t) along a traced
path, the interval cover splitting the time axis at self-intersections (each
crossing time belongs to exactly one interval), and the transverse validity
radius.  Fermi coordinates (t, y) are defined by inverting

    (t, y) |-> exp_{gamma(t)}( y e1(t) ).

In these coordinates the metric is diag(E(t,y)^2, 1) with E(t,0) = 1 and
dE/dy(t,0) = 0, and the Jacobi equation d^2E/dy^2 = -K E turns transverse
Taylor data of the Gauss curvature K along the transverse geodesic into
exact transverse jets of the co-metric: G^11 = 1/E^2.  Curvature jets come
from composing the chart's closed-form metric jets with the Taylor series of
the transverse geodesic, so no finite differencing enters anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartDomainError, ConstructionError, NumericalError
from .geodesic import GeodesicPath
from .manifold import MetricChart
from .series import ser, ser_compose2, ser_inv, ser_mul

__all__ = [
    "FermiFrame",
    "build_frame",
    "to_fermi",
    "from_fermi",
    "FermiMetricJets",
    "fermi_metric_jets",
    "gauss_curvature",
]


def normal_covector(chart: MetricChart, x, v):
    """Unit covector nu with <nu, v> = 0, oriented left of the velocity v."""
    nu = np.array([-v[1], v[0]])
    return nu / chart.norm(x, nu)


def gauss_curvature(chart: MetricChart, x) -> float:
    """Gauss curvature from second-order metric jets (closed form)."""
    s = _curvature_series(chart, np.asarray(x, dtype=float), e1=None, n=1)
    return float(s[0])


def _metric_partials_series(chart, x0, u, v, n, dmax=2):
    """Series along a curve of the lower metric g and its chart partials.

    Returns dict: key (d1, d2) with d1 + d2 <= dmax maps to array (2, 2, n)
    of series coefficients of d^{(d1,d2)} g_{ab} (x(y)).  u, v are series of
    x1(y) - x1(0), x2(y) - x2(0).
    """
    P = n - 1 + dmax
    cj = chart.cometric_jets(x0, P)

    def compose_entry(d1, d2, a, b):
        depth = P - d1 - d2
        jet = cj[d1 : d1 + depth + 1, d2 : d2 + depth + 1, a, b]
        return ser_compose2(jet, u, v, n)

    Gser = {}
    for d1 in range(dmax + 1):
        for d2 in range(dmax + 1 - d1):
            m = np.empty((2, 2, n))
            for a in range(2):
                for b in range(2):
                    m[a, b] = compose_entry(d1, d2, a, b)
            Gser[(d1, d2)] = m

    def minv(M):
        det = ser_mul(M[0, 0], M[1, 1], n) - ser_mul(M[0, 1], M[1, 0], n)
        idet = ser_inv(det, n)
        out = np.empty_like(M)
        out[0, 0] = ser_mul(M[1, 1], idet, n)
        out[1, 1] = ser_mul(M[0, 0], idet, n)
        out[0, 1] = -ser_mul(M[0, 1], idet, n)
        out[1, 0] = -ser_mul(M[1, 0], idet, n)
        return out

    def mmul(A, B):
        out = np.zeros_like(A)
        for a in range(2):
            for b in range(2):
                for c in range(2):
                    out[a, b] += ser_mul(A[a, c], B[c, b], n)
        return out

    g = minv(Gser[(0, 0)])
    out = {(0, 0): g}
    e = (1, 0), (0, 1)
    for c in range(2):
        out[e[c]] = -mmul(mmul(g, Gser[e[c]]), g)
    if dmax >= 2:
        for d1 in range(3):
            d2 = 2 - d1
            key = (d1, d2)
            ca, cb = ((1, 0), (d1 - 1, d2)) if d1 > 0 else ((0, 1), (d1, d2 - 1))
            # d_c d_d g = -(d_c g)(d_d G) g - g (d_c d_d G) g - g (d_d G)(d_c g)
            t1 = mmul(mmul(out[ca], Gser[cb]), g)
            t2 = mmul(mmul(g, Gser[key]), g)
            t3 = mmul(mmul(g, Gser[cb]), out[ca])
            out[key] = -(t1 + t2 + t3)
    return out, Gser


def _christoffel_series(gser, Gser_inv, n):
    """Christoffel series Gamma[i][j][k] from metric partial series."""
    g1 = gser[(1, 0)]
    g2 = gser[(0, 1)]
    dg = (g1, g2)
    Ginv = Gser_inv  # co-metric series (2, 2, n)
    gamma = [[[None] * 2 for _ in range(2)] for _ in range(2)]
    for i in range(2):
        for j in range(2):
            for k in range(2):
                acc = np.zeros(n)
                for l in range(2):
                    term = dg[j][l, k] + dg[k][l, j] - dg[l][j, k]
                    acc = acc + ser_mul(Ginv[i, l], term, n)
                gamma[i][j][k] = 0.5 * acc
    return gamma


def _christoffel_partial_series(gser, Gser, c, n):
    """Series of d_c Gamma^i_{jk} along the curve."""
    key_c = (1, 0) if c == 0 else (0, 1)
    G0 = Gser[(0, 0)]
    g = gser[(0, 0)]
    # d_c G^{il} = -G (d_c g) G ... but G is the co-metric: d_c G given directly
    dG_c = Gser[key_c]
    dg = (gser[(1, 0)], gser[(0, 1)])

    def d2g(cc, d):
        d1 = (1 if cc == 0 else 0) + (1 if d == 0 else 0)
        d2_ = (1 if cc == 1 else 0) + (1 if d == 1 else 0)
        return gser[(d1, d2_)]

    out = [[[None] * 2 for _ in range(2)] for _ in range(2)]
    for i in range(2):
        for j in range(2):
            for k in range(2):
                acc = np.zeros(n)
                for l in range(2):
                    term = dg[j][l, k] + dg[k][l, j] - dg[l][j, k]
                    dterm = d2g(c, j)[l, k] + d2g(c, k)[l, j] - d2g(c, l)[j, k]
                    acc = acc + ser_mul(dG_c[i, l], term, n) + ser_mul(G0[i, l], dterm, n)
                out[i][j][k] = 0.5 * acc
    return out


def _curvature_series(chart, x0, e1, n):
    """Taylor coefficients of K(exp_{x0}(y e1)) in y, length n.

    With e1 None the expansion point is static (n must be 1).
    """
    if e1 is None:
        u = ser([0.0], 1)
        v = ser([0.0], 1)
        xser = None
    else:
        # transverse unit-speed geodesic series x(y): x'' = -Gamma(x', x')
        Q = n + 1  # curve order needed
        xser = np.zeros((2, Q + 1))
        xser[:, 0] = 0.0
        xser[0, 1], xser[1, 1] = e1[0], e1[1]
        for m in range(0, Q - 1):
            nn = m + 1
            gser_m, Gser_m = _metric_partials_series(chart, x0, xser[0, :nn], xser[1, :nn], nn, dmax=1)
            gamma = _christoffel_series(gser_m, Gser_m[(0, 0)], nn)
            xd = np.zeros((2, nn))
            for i in range(2):
                xd[i, : nn - 1] = (np.arange(1, nn) * xser[i, 1:nn])[: nn - 1]
            rhs = np.zeros((2, nn))
            for i in range(2):
                acc = np.zeros(nn)
                for j in range(2):
                    for k in range(2):
                        acc = acc + ser_mul(gamma[i][j][k], ser_mul(xd[j], xd[k], nn), nn)
                rhs[i] = -acc
            for i in range(2):
                xser[i, m + 2] = rhs[i, m] / ((m + 2) * (m + 1))
        u = ser(np.concatenate([[0.0], xser[0, 1:n]]), n)
        v = ser(np.concatenate([[0.0], xser[1, 1:n]]), n)

    gser, Gser = _metric_partials_series(chart, x0, u, v, n, dmax=2)
    gamma = _christoffel_series(gser, Gser[(0, 0)], n)
    dgamma0 = _christoffel_partial_series(gser, Gser, 0, n)
    dgamma1 = _christoffel_partial_series(gser, Gser, 1, n)
    # R^1_{212} = d_1 Gamma^1_{22} - d_2 Gamma^1_{21} + sum_m (G^1_{1m} G^m_{22} - G^1_{2m} G^m_{21})
    r = dgamma0[0][2 - 1][2 - 1] - dgamma1[0][1][0]
    for m in range(2):
        r = r + ser_mul(gamma[0][0][m], gamma[m][1][1], n) - ser_mul(
            gamma[0][1][m], gamma[m][0][1], n
        )
    g = gser[(0, 0)]
    # R_{1212} = g_{1m} R^m_{212}; in 2D, R^2_{212}-terms enter through g_{12}
    r2 = dgamma0[1][1][1] - dgamma1[1][0][1]
    for m in range(2):
        r2 = r2 + ser_mul(gamma[1][0][m], gamma[m][1][1], n) - ser_mul(
            gamma[1][1][m], gamma[m][0][1], n
        )
    R1212 = ser_mul(g[0, 0], r, n) + ser_mul(g[0, 1], r2, n)
    det = ser_mul(g[0, 0], g[1, 1], n) - ser_mul(g[0, 1], g[1, 0], n)
    return ser_mul(R1212, ser_inv(det, n), n)


@dataclass
class FermiFrame:
    """Parallel-transported orthonormal frame and interval cover for a path."""

    chart: MetricChart
    path: GeodesicPath
    e1s: np.ndarray
    e1dots: np.ndarray
    radius: float
    cover: list  # list of (lo, hi) time intervals
    crossing_times: list = field(default_factory=list)

    def e1(self, t):
        i, u = self.path._locate(t)
        return self.path._hermite(self.e1s[i], self.e1s[i + 1], self.e1dots[i], self.e1dots[i + 1], u)

    def x(self, t):
        return self.path.x(t)

    def v(self, t):
        return self.path.v(t)

    def interval_of(self, t):
        for j, (lo, hi) in enumerate(self.cover):
            if lo <= t <= hi:
                return j
        return None

    def orthonormality_error(self):
        errs = []
        for x, xi, e1 in zip(self.path.xs, self.path.xis, self.e1s):
            g = self.chart.metric(x)
            v = self.path.chart.cometric(x) @ xi
            errs.append(
                max(
                    abs(v @ g @ v - 1.0),
                    abs(e1 @ g @ e1 - 1.0),
                    abs(v @ g @ e1),
                )
            )
        return max(errs)

    def to_json_dict(self):
        return {
            "ts": self.path.ts.tolist(),
            "xs": self.path.xs.tolist(),
            "e1s": self.e1s.tolist(),
            "radius": self.radius,
            "cover": [list(iv) for iv in self.cover],
        }


def _build_cover(path, crossing_times):
    t_lo, t_hi = float(path.ts[0]), float(path.ts[-1])
    if not crossing_times:
        return [(t_lo, t_hi)]
    taus = sorted(crossing_times)
    bounds = [t_lo]
    for a, b in zip(taus[:-1], taus[1:]):
        bounds.append(0.5 * (a + b))
    bounds.append(t_hi)
    gaps = np.diff(np.array([t_lo] + taus + [t_hi]))
    w = 0.2 * float(gaps.min())
    cover = []
    for k in range(len(taus)):
        lo = bounds[k] if k == 0 else bounds[k] - w
        hi = bounds[k + 1] if k == len(taus) - 1 else bounds[k + 1] + w
        cover.append((lo, hi))
    return cover


def _branch_separation(path, chart, crossing_times, min_sep, screen=0.45):
    """Minimal distance between path points on distinct branches.

    Pairs where both times sit close to a common crossing are excluded:
    branches merge there by definition.
    """
    from .geodesic import _circle_embed

    ts, xs = path.ts, path.xs
    emb = _circle_embed(chart, xs)
    from scipy.spatial import cKDTree

    tree = cKDTree(emb)
    pairs = tree.query_pairs(r=screen, output_type="ndarray")
    if len(pairs) == 0:
        return math.inf
    dt = np.abs(ts[pairs[:, 0]] - ts[pairs[:, 1]])
    pairs = pairs[dt >= min_sep]
    best = math.inf
    for i, j in pairs:
        near_cross = any(
            min(abs(ts[i] - tc), abs(ts[j] - tc)) < 3 * min_sep for tc in crossing_times
        )
        if near_cross:
            continue
        d = float(np.linalg.norm(chart.delta(xs[i], xs[j])))
        # same-branch pairs look like d ~ |dt|; a distinct branch comes much
        # closer in space than in time
        if d > 0.5 * abs(ts[i] - ts[j]):
            continue
        best = min(best, d)
    return best


def build_frame(chart: MetricChart, path: GeodesicPath, radius: float | None = None) -> FermiFrame:
    """Parallel transport of the initial normal along the path.

    The start frame is the oriented unit normal at the first sample; the
    transport ODE de1/dt = -Gamma(v, e1) runs on the path grid.  The cover
    splits the time axis so each self-intersection time lies in exactly one
    interval.  ``radius`` defaults to min(0.1, half the branch separation)
    and is validated against the first focal distance estimated from the
    curvature along the path.
    """
    ts, xs = path.ts, path.xs
    n = len(ts)

    x0 = xs[0]
    v0 = path.vs[0]
    nu = normal_covector(chart, x0, v0)
    e1 = chart.raise_index(x0, nu)

    e1s = np.empty((n, 2))
    e1s[0] = e1

    def edot(t, e):
        x = path.x(t)
        gam = chart.christoffel(x)
        v = path.v(t)
        return -np.einsum("ijk,j,k->i", gam, v, e)

    if chart.is_flat:
        for i in range(1, n):
            e1s[i] = e1
        e1dots = np.zeros((n, 2))
    else:
        h = path.step
        e = e1.copy()
        for i in range(1, n):
            t = ts[i - 1]
            k1 = edot(t, e)
            k2 = edot(t + h / 2, e + h / 2 * k1)
            k3 = edot(t + h / 2, e + h / 2 * k2)
            k4 = edot(t + h, e + h * k3)
            e = e + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            e1s[i] = e
        e1dots = np.array([edot(t, e1s[i]) for i, t in enumerate(ts)])

    crossing_times = sorted({round(float(w), 12) for t, s, _ in path.self_intersections for w in (t, s)})
    cover = _build_cover(path, crossing_times)

    min_sep = 10 * path.step
    if path.status == "ok":
        screen = 0.45 if radius is None else max(0.45, 2.2 * radius)
        sep = _branch_separation(path, chart, crossing_times, min_sep, screen=screen)
    else:
        # closed/trapped geodesics revisit themselves exactly; the tube is
        # only used for flow data there, not as an injective chart
        sep = math.inf
    if radius is None:
        radius = min(0.1, 0.5 * sep)
    # focal bound: E(y) = 1 - K y^2/2 + ... degenerates near y = sqrt(2/K)
    if not chart.is_flat:
        ks = [abs(gauss_curvature(chart, x)) for x in xs[:: max(1, n // 60)]]
        kmax = max(ks)
        if kmax > 0:
            safe = 0.7 * math.sqrt(2.0 / kmax)
            if radius > safe:
                raise ConstructionError(
                    f"radius {radius} exceeds focal estimate; max safe radius {safe:.4f}"
                )
    if radius > 0.5 * sep:
        raise ConstructionError(
            f"radius {radius} exceeds half the branch separation {sep:.4f}"
        )

    frame = FermiFrame(
        chart=chart, path=path, e1s=e1s, e1dots=e1dots, radius=float(radius),
        cover=cover, crossing_times=crossing_times,
    )
    err = frame.orthonormality_error()
    if err > 1e-8:
        raise NumericalError(f"frame orthonormality drifted to {err:.2e}")
    return frame


def _transverse_trace(chart, x0, e1, y, n_steps=None):
    """Unit-speed geodesic from x0 with initial velocity e1, arclength y.

    Returns (endpoint, endpoint velocity * sign(y)).
    """
    if y == 0.0:
        return np.array(x0, dtype=float), np.array(e1, dtype=float)
    sgn = 1.0 if y > 0 else -1.0
    L = abs(y)
    if n_steps is None:
        n_steps = max(2, int(math.ceil(L / 0.02)))
    h = L / n_steps
    x = np.array(x0, dtype=float)
    w = sgn * np.array(e1, dtype=float)

    def acc(x, w):
        gam = chart.christoffel(x)
        return -np.einsum("ijk,j,k->i", gam, w, w)

    for _ in range(n_steps):
        k1x, k1w = w, acc(x, w)
        k2x, k2w = w + h / 2 * k1w, acc(x + h / 2 * k1x, w + h / 2 * k1w)
        k3x, k3w = w + h / 2 * k2w, acc(x + h / 2 * k2x, w + h / 2 * k2w)
        k4x, k4w = w + h * k3w, acc(x + h * k3x, w + h * k3w)
        x = x + (h / 6) * (k1x + 2 * k2x + 2 * k3x + k4x)
        w = w + (h / 6) * (k1w + 2 * k2w + 2 * k3w + k4w)
    return x, sgn * w


def from_fermi(frame: FermiFrame, t: float, y: float):
    """Forward Fermi map exp_{gamma(t)}(y e1(t)) in chart coordinates."""
    if frame.chart.is_flat:
        return frame.x(t) + y * frame.e1(t)
    x, _ = _transverse_trace(frame.chart, frame.x(t), frame.e1(t), y)
    return x


def to_fermi(frame: FermiFrame, p, hint_interval: int | None = None, max_iter: int = 50):
    """Invert the Fermi map near the hinted cover interval.

    Returns (t, y) with |y| < radius, or None when p lies outside the tube.
    Newton iteration on F(t, y) = p with the thin-tube Jacobian
    [E(t,y) v(t), sigma'(y)]; the flat case is closed-form.
    """
    chart = frame.chart
    path = frame.path
    p = np.asarray(p, dtype=float)
    if hint_interval is None:
        intervals = range(len(frame.cover))
    else:
        intervals = [hint_interval]
    results = []
    for j in intervals:
        lo, hi = frame.cover[j]
        sel = (path.ts >= lo) & (path.ts <= hi)
        idx = np.where(sel)[0]
        d = np.linalg.norm(chart.delta(p[None, :], path.xs[idx]), axis=-1)
        k = idx[int(np.argmin(d))]
        if d.min() > frame.radius * 1.5:
            continue
        t = float(path.ts[k])
        x_k, v_k = path.xs[k], path.vs[k]
        dp = chart.delta(p, x_k)
        g = chart.metric(x_k)
        t = t + float(dp @ g @ v_k)
        y = float(dp @ g @ frame.e1(t if lo <= t <= hi else path.ts[k]))
        if chart.is_flat:
            # closed form: p = x(t0) + (t - t0) v + y e1 with constant v, e1;
            # wound tubes need every period shift that lands in the interval
            x0, v0, e0 = path.xs[0], path.vs[0], frame.e1s[0]
            t0 = float(path.ts[0])
            dp0 = chart.delta(p, x0)
            A = np.column_stack([v0, e0])
            span = path.ts[-1] - path.ts[0]
            shifts = [np.zeros(2)]
            for ax in range(2):
                if not chart.periodic[ax]:
                    continue
                per = chart.hi[ax] - chart.lo[ax]
                m_max = int(math.ceil(span * abs(v0[ax]) / per)) + 1
                for m in range(-m_max, m_max + 1):
                    if m != 0:
                        sh = np.zeros(2)
                        sh[ax] = m * per
                        shifts.append(sh)
            for sh in shifts:
                sol = np.linalg.solve(A, dp0 + sh)
                t, y = t0 + float(sol[0]), float(sol[1])
                if lo <= t <= hi and abs(y) < frame.radius:
                    results.append((j, t, y))
            continue
        ok = False
        for _ in range(max_iter):
            Ft, vy = _transverse_trace(chart, path.x(t), frame.e1(t), y)
            r = chart.delta(Ft, p)
            if np.abs(r).max() < 1e-12:
                ok = True
                break
            J = np.column_stack([path.v(t), vy])  # thin-tube Jacobian, E ~ 1
            try:
                stp = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                break
            stp = np.clip(stp, -0.5, 0.5)
            t += float(stp[0])
            y += float(stp[1])
            t = float(np.clip(t, path.ts[0], path.ts[-1]))
            if abs(y) > 2 * frame.radius:
                break
        if not ok:
            Ft, _ = _transverse_trace(chart, path.x(t), frame.e1(t), y)
            if np.abs(chart.delta(Ft, p)).max() > 1e-10:
                if d.min() < 0.9 * frame.radius:
                    raise NumericalError(
                        f"Fermi inversion did not converge at p={p} (interval {j})"
                    )
                continue
        if lo <= t <= hi and abs(y) < frame.radius:
            results.append((j, t, y))
    if not results:
        return None
    j, t, y = min(results, key=lambda r: abs(r[2]))
    return t, y


@dataclass
class FermiMetricJets:
    """Transverse jets of the Fermi-coordinate metric at fixed t.

    g (lower) = diag(E^2, 1); co-metric = diag(G11, 1) with G11 = 1/E^2.
    Coefficient k of each array multiplies y^k.
    """

    t: float
    order: int
    E: np.ndarray
    G11: np.ndarray

    @property
    def curvature(self) -> float:
        # E = 1 - K y^2 / 2 + ...
        return -2.0 * float(self.E[2]) if self.order >= 2 else 0.0


def fermi_metric_jets(frame: FermiFrame, t: float, order: int) -> FermiMetricJets:
    """Transverse Taylor data of the co-metric in Fermi coordinates at time t.

    E solves the Jacobi recursion E'' = -K E with E(0) = 1, E'(0) = 0 where
    K is the curvature series along the transverse geodesic.  The Fermi
    normalization (identity at y = 0, vanishing first jet) is structural;
    frame orthonormality is asserted instead, to 1e-6.
    """
    n = order + 1
    chart = frame.chart
    if chart.is_flat:
        E = np.zeros(n)
        E[0] = 1.0
        G11 = np.zeros(n)
        G11[0] = 1.0
        return FermiMetricJets(t=t, order=order, E=E, G11=G11)
    x = frame.x(t)
    e1 = frame.e1(t)
    v = frame.v(t)
    g = chart.metric(x)
    err = max(abs(v @ g @ v - 1.0), abs(e1 @ g @ e1 - 1.0), abs(v @ g @ e1))
    if err > 1e-6:
        raise NumericalError(f"frame not orthonormal at t={t}: err {err:.2e}")
    if order > chart.jet_order - 1:
        raise ChartDomainError(
            f"fermi jets to order {order} need chart jet_order >= {order + 1}"
        )
    kser = _curvature_series(chart, x, e1, max(n - 2, 1))
    E = np.zeros(n)
    E[0] = 1.0
    for m in range(0, n - 2):
        acc = 0.0
        for q in range(0, min(m, len(kser) - 1) + 1):
            acc += kser[q] * E[m - q]
        E[m + 2] = -acc / ((m + 2) * (m + 1))
    G11 = ser_inv(ser_mul(E, E, n), n)
    return FermiMetricJets(t=t, order=order, E=E, G11=G11)
