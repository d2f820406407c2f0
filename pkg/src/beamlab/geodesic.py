"""Unit-speed geodesics via the Hamiltonian system on the cotangent bundle.

The generator is p(x, xi) = G(x) xi . xi - 1, integrated as

    dx/dt  =  (1/2) dp/dxi  =  G(x) xi
    dxi/dt = -(1/2) dp/dx

with a fixed-step RK4 stepper and per-step renormalization of |xi|_g = 1.
Paths are traced forward and backward from t = 0 until they exit the chart
rectangle, then overshoot by eps into the extension.  Boundary crossing
times are refined by bisection on the face coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, NumericalError, ValidationError
from .manifold import MetricChart

__all__ = [
    "UnitCovector",
    "GeodesicPath",
    "trace",
    "nontangential",
    "nontangential_report",
    "self_intersections",
    "xray",
]


@dataclass(frozen=True)
class UnitCovector:
    """Phase-space point (x, xi) with |xi|_g = 1."""

    x: np.ndarray
    xi: np.ndarray

    @classmethod
    def make(cls, chart: MetricChart, x, xi, normalize: bool = True):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        n = chart.norm(x, xi)
        if normalize:
            if n == 0:
                raise ConstructionError("zero covector")
            xi = xi / n
        elif abs(n - 1.0) > 1e-10:
            raise ConstructionError(f"|xi|_g = {n} is not 1")
        return cls(x=x, xi=xi)


def _rhs(chart, x, xi):
    G, dG = chart.cometric_d1(x)
    v = G @ xi
    xidot = -0.5 * np.array([xi @ dG[0] @ xi, xi @ dG[1] @ xi])
    return v, xidot


def _rk4_step(chart, x, xi, h, renorm=True):
    k1x, k1p = _rhs(chart, x, xi)
    k2x, k2p = _rhs(chart, x + 0.5 * h * k1x, xi + 0.5 * h * k1p)
    k3x, k3p = _rhs(chart, x + 0.5 * h * k2x, xi + 0.5 * h * k2p)
    k4x, k4p = _rhs(chart, x + h * k3x, xi + h * k3p)
    xn = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    pn = xi + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
    if renorm:
        pn = pn / chart.norm(xn, pn)
    return xn, pn


@dataclass
class GeodesicPath:
    """Sampled unit-speed geodesic with boundary-exit data.

    Samples sit on the uniform grid t_k = k * step (unwrapped chart
    coordinates; periodic axes are never folded during integration).
    ``t_entry = -T1`` and ``t_exit = T2`` are the refined boundary-crossing
    times; they are None on a trapped side.
    """

    chart: MetricChart
    step: float
    ts: np.ndarray
    xs: np.ndarray
    xis: np.ndarray
    vs: np.ndarray
    vdots: np.ndarray
    xidots: np.ndarray
    t_entry: float | None
    t_exit: float | None
    entry_state: tuple | None
    exit_state: tuple | None
    eps: float
    status: str  # "ok", "trapped"
    nontangential: bool = False
    nontangential_reason: str = ""
    self_intersections: list = field(default_factory=list)

    @property
    def samples(self):
        return list(zip(self.ts, self.xs, self.xis))

    @property
    def T1(self):
        return -self.t_entry if self.t_entry is not None else None

    @property
    def T2(self):
        return self.t_exit

    @property
    def length(self):
        if self.status != "ok":
            return self.ts[-1] - self.ts[0]
        return self.t_exit - self.t_entry

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(self.ts, t, side="right") - 1, 0, len(self.ts) - 2)
        u = (t - self.ts[i]) / self.step
        return i, u

    def _hermite(self, ya, yb, da, db, u):
        h00 = (1 + 2 * u) * (1 - u) ** 2
        h10 = u * (1 - u) ** 2
        h01 = u**2 * (3 - 2 * u)
        h11 = u**2 * (u - 1)
        s = self.step
        return (
            h00[..., None] * ya + h10[..., None] * s * da
            + h01[..., None] * yb + h11[..., None] * s * db
        )

    def x(self, t):
        """Cubic-Hermite interpolated position (unwrapped)."""
        i, u = self._locate(t)
        return self._hermite(self.xs[i], self.xs[i + 1], self.vs[i], self.vs[i + 1], u)

    def v(self, t):
        i, u = self._locate(t)
        return self._hermite(self.vs[i], self.vs[i + 1], self.vdots[i], self.vdots[i + 1], u)

    def xi(self, t):
        i, u = self._locate(t)
        return self._hermite(self.xis[i], self.xis[i + 1], self.xidots[i], self.xidots[i + 1], u)

    def state_at_zero(self):
        k = int(np.searchsorted(self.ts, 0.0))
        return self.xs[k], self.xis[k]

    def energy_drift(self):
        errs = [abs(self.chart.norm(x, xi) - 1.0) for x, xi in zip(self.xs, self.xis)]
        return max(errs)


def _face_overshoot(chart, x, xi, axis, face_value, step, eps, max_sub=60):
    """Bisection for the crossing time of x[axis] = face_value within one step."""
    side = 1.0 if x[axis] < face_value else -1.0

    def coord(dt):
        xn, _ = _rk4_step(chart, x, xi, dt)
        return side * (xn[axis] - face_value)

    lo_t, hi_t = 0.0, step
    f_hi = coord(hi_t)
    if f_hi < 0:
        return None
    for _ in range(max_sub):
        mid = 0.5 * (lo_t + hi_t)
        if coord(mid) < 0:
            lo_t = mid
        else:
            hi_t = mid
        if hi_t - lo_t < 1e-14:
            break
    t_cross = 0.5 * (lo_t + hi_t)
    x_c, xi_c = _rk4_step(chart, x, xi, t_cross)
    return t_cross, x_c, xi_c


def _march(chart, x0, xi0, step, eps, max_length, tol):
    """March in +t from (x0, xi0); return samples, crossing data, status."""
    xs, xis = [x0], [xi0]
    x, xi = x0.copy(), xi0.copy()
    n_max = int(math.ceil(max_length / step))
    cross = None
    faces = chart.faces()
    k_stop = None
    for k in range(1, n_max + 1):
        xn, xin = _rk4_step(chart, x, xi, step)
        if cross is None:
            for axis, side, value in faces:
                inside_before = (x[axis] - value) * side < 0
                outside_after = (xn[axis] - value) * side >= 0
                if inside_before and outside_after:
                    ref = _face_overshoot(chart, x, xi, axis, value, step, eps)
                    if ref is not None:
                        dt, x_c, xi_c = ref
                        cross = ((k - 1) * step + dt, x_c, xi_c, axis)
                        k_stop = k - 1 + int(math.ceil((dt + eps) / step))
                    break
        xs.append(xn)
        xis.append(xin)
        x, xi = xn, xin
        if k_stop is not None and k >= k_stop:
            return xs, xis, cross, "ok"
    if cross is not None:
        return xs, xis, cross, "ok"
    return xs, xis, None, "trapped"


def trace(
    chart: MetricChart,
    start: UnitCovector,
    step: float = 1e-2,
    tol: float = 1e-10,
    eps: float | None = None,
    max_length: float = 40.0,
    tangency_threshold: float = 1e-3,
    intersection_tol: float | None = None,
) -> GeodesicPath:
    """Trace the geodesic through ``start`` forward and backward.

    The path is integrated until it exits the chart rectangle on each side
    (plus an overshoot of ``eps`` into the extension) or reaches
    ``max_length``, in which case it is flagged trapped.
    """
    if step <= 0 or tol <= 0:
        raise ValidationError("step and tol must be positive")
    if eps is None:
        eps = 0.5 * chart.margin
    x0 = np.asarray(start.x, dtype=float)
    if not chart.in_domain(x0, extended=False):
        raise ValidationError(f"start point {x0} is not in the chart interior")
    xi0 = chart.unit_covector(x0, np.asarray(start.xi, dtype=float))

    xs_f, xis_f, cross_f, stat_f = _march(chart, x0, xi0, step, eps, max_length, tol)
    xs_b, xis_b, cross_b, stat_b = _march(chart, x0, -xi0, step, eps, max_length, tol)

    n_b = len(xs_b)
    ts = np.arange(-(n_b - 1), len(xs_f)) * step
    xs = np.array(xs_b[::-1] + xs_f[1:])
    xis = np.array([-p for p in xis_b[::-1]] + xis_f[1:])

    vs = np.empty_like(xs)
    xidots = np.empty_like(xs)
    vdots = np.empty_like(xs)
    for i in range(len(ts)):
        G, dG = chart.cometric_d1(xs[i])
        v = G @ xis[i]
        xd = -0.5 * np.array([xis[i] @ dG[0] @ xis[i], xis[i] @ dG[1] @ xis[i]])
        vs[i] = v
        xidots[i] = xd
        vdots[i] = np.tensordot(dG, v, axes=(0, 0)) @ xis[i] + G @ xd

    t_exit = exit_state = None
    if cross_f is not None:
        t_exit = cross_f[0]
        exit_state = (cross_f[0], cross_f[1], cross_f[2], cross_f[3])
    t_entry = entry_state = None
    if cross_b is not None:
        t_entry = -cross_b[0]
        entry_state = (-cross_b[0], cross_b[1], -cross_b[2], cross_b[3])

    status = "ok" if (stat_f == "ok" and stat_b == "ok") else "trapped"
    path = GeodesicPath(
        chart=chart, step=step, ts=ts, xs=xs, xis=xis, vs=vs, vdots=vdots,
        xidots=xidots, t_entry=t_entry, t_exit=t_exit, entry_state=entry_state,
        exit_state=exit_state, eps=eps, status=status,
    )
    if intersection_tol is None:
        intersection_tol = max(5 * step, 1e-6)
    # closed/trapped geodesics revisit themselves continuously; listing their
    # self-intersections is meaningless, so only finite segments get the scan
    if status == "ok":
        path.self_intersections = self_intersections(path, intersection_tol)
    ok, reason = nontangential_report(path, chart, tangency_threshold)
    path.nontangential = ok
    path.nontangential_reason = reason
    return path


def nontangential_report(path: GeodesicPath, chart: MetricChart, threshold: float = 1e-3):
    """Nontangentiality with a reason string (empty when satisfied)."""
    if path.status == "trapped":
        return False, "trapped"
    for state, label in [(path.entry_state, "entry"), (path.exit_state, "exit")]:
        t, x, xi, axis = state
        G = chart.cometric(x)
        v = G @ xi
        if abs(v[axis]) <= threshold:
            return False, f"grazing at {label}: |v_normal| = {abs(v[axis]):.2e}"
    t_lo = path.t_entry + 1e-9
    t_hi = path.t_exit - 1e-9
    sel = (path.ts > t_lo) & (path.ts < t_hi)
    for x in path.xs[sel]:
        for axis, side, value in chart.faces():
            if (x[axis] - value) * side >= 0:
                return False, f"interior sample outside face x[{axis}]={value}"
    return True, ""


def nontangential(path: GeodesicPath, chart: MetricChart, threshold: float = 1e-3) -> bool:
    return nontangential_report(path, chart, threshold)[0]


def _refine_pair(path_a, path_b, t, s, iters=25):
    """Gauss-Newton refinement of a near-intersection pair (t on a, s on b)."""
    chart = path_a.chart
    lo_a, hi_a = path_a.ts[0], path_a.ts[-1]
    lo_b, hi_b = path_b.ts[0], path_b.ts[-1]
    clamp = 2 * max(path_a.step, path_b.step)
    for _ in range(iters):
        xt = path_a.x(t)
        xs_ = path_b.x(s)
        vt = path_a.v(t)
        vs_ = path_b.v(s)
        d = chart.delta(xt, xs_)
        g = np.array([2 * d @ vt, -2 * d @ vs_])
        H = 2 * np.array([[vt @ vt, -vt @ vs_], [-vt @ vs_, vs_ @ vs_]])
        try:
            stp = np.linalg.solve(H + 1e-12 * np.eye(2), -g)
        except np.linalg.LinAlgError:
            break
        stp = np.clip(stp, -clamp, clamp)
        t = float(np.clip(t + stp[0], lo_a, hi_a))
        s = float(np.clip(s + stp[1], lo_b, hi_b))
        if np.abs(stp).max() < 1e-13:
            break
    dist = float(np.linalg.norm(chart.delta(path_a.x(t), path_b.x(s))))
    return t, s, dist, chart.wrap(path_a.x(t))


def self_intersections(path: GeodesicPath, tol: float, min_separation: float | None = None):
    """All (t, s, point) with t < s, dist(x(t), x(s)) <= tol, |t - s| bounded below.

    Candidates are screened on the sample grid (periodic axes embedded on
    circles so a KD-tree applies), then refined by Gauss-Newton on the
    Hermite interpolant.
    """
    from scipy.spatial import cKDTree

    if tol <= 0:
        raise ValidationError("tol must be positive")
    if min_separation is None:
        min_separation = 10 * path.step
    chart = path.chart
    ts, xs = _clip_to_span(path)
    pts = _circle_embed(chart, xs)
    screen = tol + 2.5 * path.step
    pairs = cKDTree(pts).query_pairs(r=screen, output_type="ndarray")
    if len(pairs) == 0:
        return []
    dt = np.abs(ts[pairs[:, 0]] - ts[pairs[:, 1]])
    pairs = pairs[dt >= min_separation - 1e-12]

    # cluster candidate pairs so each crossing region is refined once
    clusters = {}
    for i, j in pairs:
        t, s = float(min(ts[i], ts[j])), float(max(ts[i], ts[j]))
        key = (round(t / min_separation), round(s / min_separation))
        if key not in clusters:
            clusters[key] = (t, s)
    found = []
    for t, s in clusters.values():
        t, s, dist, point = _refine_pair(path, path, t, s)
        if dist > tol or s - t < min_separation:
            continue
        if any(abs(t - a) < min_separation and abs(s - b) < min_separation for a, b, _ in found):
            continue
        found.append((t, s, point))
    found.sort()
    return found


def _circle_embed(chart, xs):
    """Embed chart samples in Euclidean space respecting periodic axes."""
    cols = []
    for i in range(2):
        if chart.periodic[i]:
            p = chart.hi[i] - chart.lo[i]
            r = p / (2 * np.pi)
            ang = 2 * np.pi * (xs[:, i] - chart.lo[i]) / p
            cols += [r * np.cos(ang), r * np.sin(ang)]
        else:
            cols.append(xs[:, i])
    return np.column_stack(cols)


def _clip_to_span(path):
    if path.t_entry is not None and path.t_exit is not None:
        sel = (path.ts >= path.t_entry - 1e-12) & (path.ts <= path.t_exit + 1e-12)
    else:
        sel = np.ones(len(path.ts), dtype=bool)
    return path.ts[sel], path.xs[sel]


def cross_intersections(path1: GeodesicPath, path2: GeodesicPath, tol: float):
    """All (t, s, point) with dist(x1(t), x2(s)) <= tol over the two spans."""
    from scipy.spatial import cKDTree

    if tol <= 0:
        raise ValidationError("tol must be positive")
    chart = path1.chart
    ts1, xs1 = _clip_to_span(path1)
    ts2, xs2 = _clip_to_span(path2)
    tree = cKDTree(_circle_embed(chart, xs2))
    screen = tol + 2.5 * max(path1.step, path2.step)
    neighbor_lists = tree.query_ball_point(_circle_embed(chart, xs1), r=screen)

    cell = 10 * max(path1.step, path2.step)
    clusters = {}
    for i, neigh in enumerate(neighbor_lists):
        for j in neigh:
            key = (round(ts1[i] / cell), round(ts2[j] / cell))
            if key not in clusters:
                clusters[key] = (float(ts1[i]), float(ts2[j]))
    found = []
    for t, s in clusters.values():
        t, s, dist, point = _refine_pair(path1, path2, t, s)
        if dist > tol:
            continue
        if any(abs(t - a) < cell and abs(s - b) < cell for a, b, _ in found):
            continue
        found.append((t, s, point))
    found.sort()
    return found


def xray(chart: MetricChart, f, path: GeodesicPath, return_error: bool = False):
    """Integral of f along the geodesic over [-T1, T2].

    Composite Simpson on the native sample grid plus Gauss-Legendre end
    cells using the refined boundary states.  ``f`` receives wrapped chart
    points.
    """
    from scipy.integrate import simpson

    if path.status != "ok":
        raise ValidationError("xray needs a non-trapped path")
    a, b = path.t_entry, path.t_exit
    k_lo = int(np.searchsorted(path.ts, a, side="left"))
    k_hi = int(np.searchsorted(path.ts, b, side="right")) - 1

    def f_at(tq):
        return np.array([f(chart.wrap(p)) for p in np.atleast_2d(path.x(tq))])

    ts_grid = path.ts[k_lo : k_hi + 1]
    vals = f_at(ts_grid)
    total = simpson(vals, dx=path.step)
    total_coarse = np.trapezoid(vals, dx=path.step)

    gl_x, gl_w = np.polynomial.legendre.leggauss(6)
    for lo, hi in [(a, path.ts[k_lo]), (path.ts[k_hi], b)]:
        if hi - lo < 1e-15:
            continue
        tq = 0.5 * (hi - lo) * gl_x + 0.5 * (hi + lo)
        piece = 0.5 * (hi - lo) * float(gl_w @ f_at(tq))
        total += piece
        total_coarse += piece
    err = abs(total - total_coarse)
    if return_error:
        return float(total), float(err)
    return float(total)
