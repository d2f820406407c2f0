"""Global quasimode assembly, norms, and residual sweeps.

A beam bundles a Fermi frame with phase and amplitude data; the quasimode is

    v = h^{-(d-1)/4} sum_j chi_j(t) e^{i s phi(t, y)} A(t, y; h) chi(y/delta'),

with s = 1/h + i lam, A the truncated amplitude sum and chi_j a smooth
partition of unity over the frame's interval cover.  Since one set of phase
and amplitude coefficient functions runs along the whole path, adjacent
intervals carry identical data on overlaps and the gluing is exact; the
partition only matters near self-intersections, where distinct branches add.

The conjugated operator is applied analytically through the jets (or the
flat closed forms): e^{-is phi} P e^{is phi} (A chi) expands into metric,
phase, amplitude, and cutoff derivatives, never grid differencing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .beam_amplitude import AmplitudeJet, FlatAmplitude, flat_amplitudes, symbol_constant, transport, truncation
from .beam_phase import CoefficientTable, FlatPhase, PhaseJet, exact_flat_phase, phase_jet
from .errors import ConstructionError, NumericalError, ResolutionError, ValidationError
from .fermi import FermiFrame, build_frame, from_fermi, to_fermi
from .fitting import DecayFit, fit_decay_models
from .geodesic import UnitCovector, trace
from .manifold import MetricChart

__all__ = [
    "BeamParams",
    "Beam",
    "build_beam",
    "Quasimode",
    "assemble",
    "QuadratureSpec",
    "l2_norm",
    "residual_norm",
    "ResidualReport",
    "residual_sweep",
    "family_assemble",
    "smooth_step",
    "Cutoff",
    "partition_of_unity",
]


# -- smooth bump machinery -------------------------------------------------

def _expm(u):
    out = np.zeros_like(u, dtype=float)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smooth_step(u, deriv: int = 0):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1; derivatives up to 2."""
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    f = _expm(u)
    g = _expm(1.0 - u)
    den = f + g
    inside = (u > 0) & (u < 1)
    s = np.where(u >= 1, 1.0, 0.0)
    s[inside] = f[inside] / den[inside]
    if deriv == 0:
        out = s
    else:
        fp = np.zeros_like(u)
        gp = np.zeros_like(u)
        fp[inside] = f[inside] / u[inside] ** 2
        gp[inside] = -g[inside] / (1.0 - u[inside]) ** 2
        sp = np.zeros_like(u)
        sp[inside] = (fp[inside] * g[inside] - f[inside] * gp[inside]) / den[inside] ** 2
        if deriv == 1:
            out = sp
        elif deriv == 2:
            fpp = np.zeros_like(u)
            gpp = np.zeros_like(u)
            ui = u[inside]
            fpp[inside] = f[inside] * (1.0 - 2.0 * ui) / ui**4
            gpp[inside] = g[inside] * (1.0 - 2.0 * (1.0 - ui)) / (1.0 - ui) ** 4
            num = fp * g - f * gp
            nump = fpp * g - f * gpp
            spp = np.zeros_like(u)
            spp[inside] = (
                nump[inside] / den[inside] ** 2
                - 2.0 * num[inside] * (fp[inside] + gp[inside]) / den[inside] ** 3
            )
            out = spp
        else:
            raise ValidationError("smooth_step supports derivatives up to 2")
    return out[0] if scalar else out


@dataclass(frozen=True)
class Cutoff:
    """Transverse cutoff chi(y/delta'): 1 for |y| <= delta'/4, 0 beyond delta'/2."""

    delta_prime: float

    def value(self, y):
        u = np.abs(np.asarray(y, dtype=float)) / self.delta_prime
        return smooth_step((0.5 - u) * 4.0)

    def d1(self, y):
        y = np.asarray(y, dtype=float)
        u = np.abs(y) / self.delta_prime
        return smooth_step((0.5 - u) * 4.0, deriv=1) * (-4.0 / self.delta_prime) * np.sign(y)

    def d2(self, y):
        u = np.abs(np.asarray(y, dtype=float)) / self.delta_prime
        return smooth_step((0.5 - u) * 4.0, deriv=2) * (16.0 / self.delta_prime**2)


def partition_of_unity(cover):
    """Smooth chi_j(t) with sum 1 everywhere, chi_j supported in cover[j]."""
    n = len(cover)
    if n == 1:
        return [lambda t: np.ones_like(np.asarray(t, dtype=float))]
    rises = []
    for j in range(1, n):
        lo = cover[j][0]
        hi = cover[j - 1][1]
        if hi <= lo:
            raise ConstructionError("cover intervals must overlap")
        c, w = 0.5 * (lo + hi), 0.4 * (hi - lo)
        rises.append((c - w, 2 * w))

    def rise(j):
        a, width = rises[j]
        return lambda t: smooth_step((np.asarray(t, dtype=float) - a) / width)

    chis = []
    for j in range(n):
        if j == 0:
            r = rise(0)
            chis.append(lambda t, r=r: 1.0 - r(t))
        elif j == n - 1:
            r = rise(n - 2)
            chis.append(lambda t, r=r: r(t))
        else:
            r1, r2 = rise(j - 1), rise(j)
            chis.append(lambda t, r1=r1, r2=r2: r1(t) - r2(t))
    return chis


# -- beams ------------------------------------------------------------------

@dataclass
class BeamParams:
    """Recipe for one beam.

    mode "jets" solves the eikonal/transport hierarchies to orders (K, K_a);
    mode "exact_flat" uses the complex-source closed forms (flat charts only)
    with source parameter b.  delta_prime is the cutoff parameter: the
    transverse cutoff lives on |y| <= delta_prime / 2.
    """

    mode: str = "jets"
    m0_transverse: complex = 1j
    b: float = 1.0
    K: int = 4
    K_a: int = 3
    N: int = 3
    delta_prime: float = 0.2
    lam: float = 0.0
    psi_init: np.ndarray | None = None
    step: float = 2e-3

    def __post_init__(self):
        if self.mode not in ("jets", "exact_flat"):
            raise ValidationError(f"unknown beam mode {self.mode!r}")
        if self.delta_prime <= 0:
            raise ValidationError("delta_prime must be positive")
        if self.mode == "exact_flat" and self.delta_prime / 2.0 >= self.b:
            raise ValidationError(
                "exact_flat needs delta_prime/2 < b (branch point of the flat phase)"
            )


@dataclass
class Beam:
    chart: MetricChart
    frame: FermiFrame
    phase: object  # PhaseJet | FlatPhase
    amp: object  # AmplitudeJet | FlatAmplitude
    params: BeamParams
    _C_cache: float | None = None

    @property
    def is_flat(self):
        return isinstance(self.phase, FlatPhase)

    def symbol_constant(self):
        if self._C_cache is None:
            self._C_cache = symbol_constant(
                self.amp, tube_radius=self.params.delta_prime / 2.0
            )
        return self._C_cache


def build_beam(chart: MetricChart, start: UnitCovector, params: BeamParams,
               path=None, max_length: float = 40.0) -> Beam:
    """Trace, frame, and solve the phase/amplitude data for one beam."""
    if path is None:
        path = trace(chart, start, step=params.step, max_length=max_length)
    frame = build_frame(chart, path, radius=params.delta_prime)
    if params.mode == "exact_flat":
        if not chart.is_flat:
            raise ValidationError("exact_flat mode needs a flat chart")
        fp = exact_flat_phase(params.b)
        amp = flat_amplitudes(fp, params.lam, params.N)
        return Beam(chart=chart, frame=frame, phase=fp, amp=amp, params=params)
    M0 = np.array([[0.0, 0.0], [0.0, params.m0_transverse]], dtype=complex)
    coeffs = CoefficientTable(frame, order=max(params.K, params.K_a + 2))
    pj = phase_jet(frame, M0, params.K, coeffs=coeffs, psi_init=params.psi_init)
    amp = transport(pj, params.lam, params.N, params.K_a)
    return Beam(chart=chart, frame=frame, phase=pj, amp=amp, params=params)


# -- quasimode --------------------------------------------------------------

@dataclass
class Quasimode:
    beam: Beam
    h: float
    lam: float
    N_used: int
    delta_prime: float
    cutoff: Cutoff
    partition: list
    C_used: float | None = None

    @property
    def s(self):
        return 1.0 / self.h + 1j * self.lam

    @property
    def norm_prefactor(self):
        d = self.beam.chart.dim
        return self.h ** (-(d - 1) / 4.0)

    # -- pointwise Fermi-coordinate fields --------------------------------

    def _amp_sum(self, t, y, dt=0, dy=0):
        amp = self.beam.amp
        out = np.zeros(np.broadcast(np.asarray(t), np.asarray(y)).shape, dtype=complex)
        hk = 1.0
        for k in range(self.N_used + 1):
            out = out + hk * amp.a(k, t, y, dt=dt, dy=dy)
            hk *= self.h
        return out

    def v_fermi(self, t, y, with_cutoff=True):
        """Raw single-branch value at Fermi coordinates (t, y).

        With the cutoff on, points beyond its support return exactly zero
        without touching the phase (whose closed flat form has branch
        points past the tube).
        """
        phase = self.beam.phase
        if not with_cutoff:
            return (
                self.norm_prefactor
                * np.exp(1j * self.s * phase.phi(t, y))
                * self._amp_sum(t, y)
            )
        t_b, y_b = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
        chi = self.cutoff.value(y_b)
        out = np.zeros(t_b.shape, dtype=complex)
        m = chi > 0
        if np.any(m):
            out[m] = (
                self.norm_prefactor
                * np.exp(1j * self.s * phase.phi(t_b[m], y_b[m]))
                * self._amp_sum(t_b[m], y_b[m])
                * chi[m]
            )
        return out if out.shape else out[()]

    def v_chart(self, points, total=True):
        """Quasimode value at chart points: finite sum over covering intervals."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts), dtype=complex)
        frame = self.beam.frame
        for i, p in enumerate(pts):
            acc = 0.0 + 0.0j
            for j in range(len(frame.cover)):
                tf = to_fermi(frame, p, hint_interval=j)
                if tf is None:
                    continue
                t, y = tf
                chi_j = float(self.partition[j](t))
                if chi_j == 0.0:
                    continue
                acc += chi_j * complex(self.v_fermi(t, y))
            out[i] = acc
        return out if total else out

    # -- conjugated-operator bracket --------------------------------------

    def _metric_fields(self, T, Y):
        """E, G11, E_y/E, dt(E G11)/E at broadcastable (t, y), plus eikonal defect."""
        beam = self.beam
        phase = beam.phase
        shape = np.broadcast(np.asarray(T), np.asarray(Y)).shape
        if beam.is_flat:
            one = np.ones(shape)
            zero = np.zeros_like(one)
            return {"E": one, "G11": one, "EyE": zero, "DtEG": zero, "eik": zero}
        coeffs = phase.coeffs
        n = coeffs.order + 1
        Tb = np.broadcast_to(np.asarray(T, dtype=float), shape)
        Yb = np.broadcast_to(np.asarray(Y, dtype=float), shape)
        tf = Tb.ravel()
        yf = Yb.ravel()
        pow_y = yf[None, :] ** np.arange(n)[:, None]  # (n, npts)

        if coeffs.flat:
            Ec = np.zeros((n, tf.size))
            Ec[0] = 1.0
            Gc, Ec_d, Gc_d = Ec.copy(), np.zeros_like(Ec), np.zeros_like(Ec)
        else:
            Ec = np.array([s(tf) for s in coeffs._E[:n]])
            Gc = np.array([s(tf) for s in coeffs._G11[:n]])
            Ec_d = np.array([s(tf, nu=1) for s in coeffs._E[:n]])
            Gc_d = np.array([s(tf, nu=1) for s in coeffs._G11[:n]])
        E = np.einsum("mp,mp->p", Ec, pow_y)
        G11 = np.einsum("mp,mp->p", Gc, pow_y)
        Edot = np.einsum("mp,mp->p", Ec_d, pow_y)
        Gdot = np.einsum("mp,mp->p", Gc_d, pow_y)
        Ey = np.einsum("mp,mp->p", Ec[1:] * np.arange(1, n)[:, None], pow_y[: n - 1])
        E = E.reshape(shape)
        G11 = G11.reshape(shape)
        Edot = Edot.reshape(shape)
        Gdot = Gdot.reshape(shape)
        Ey = Ey.reshape(shape)
        eik = G11 * phase.phi_t(Tb, Yb) ** 2 + phase.phi_y(Tb, Yb) ** 2 - 1.0
        return {
            "E": E,
            "G11": G11,
            "EyE": Ey / E,
            "DtEG": (Edot * G11 + E * Gdot) / E,
            "eik": eik,
        }

    def bracket(self, T, Y):
        """B(t, y; h) with P v = prefactor * e^{is phi} * B on the tube."""
        phase = self.beam.phase
        h, lam = self.h, self.lam
        mf = self._metric_fields(T, Y)
        A = self._amp_sum(T, Y)
        At = self._amp_sum(T, Y, dt=1)
        Ay = self._amp_sum(T, Y, dy=1)
        Att = self._amp_sum(T, Y, dt=2)
        Ayy = self._amp_sum(T, Y, dy=2)
        chi = self.cutoff.value(Y)
        chi1 = self.cutoff.d1(Y)
        chi2 = self.cutoff.d2(Y)
        phit = phase.phi_t(T, Y)
        phiy = phase.phi_y(T, Y)
        phitt = phase.phi_tt(T, Y)
        phiyy = phase.phi_yy(T, Y)

        lap_A = mf["G11"] * Att + Ayy + mf["DtEG"] * At + mf["EyE"] * Ay
        lap_chi_part = chi2 + mf["EyE"] * chi1
        lap_total = chi * lap_A + 2.0 * Ay * chi1 + A * lap_chi_part
        l0_A = 2.0 * (mf["G11"] * phit * At + phiy * Ay)
        l0_total = chi * l0_A + 2.0 * phiy * A * chi1
        lap_phi = mf["G11"] * phitt + phiyy + mf["DtEG"] * phit + mf["EyE"] * phiy
        il = 1.0 + 1j * lam * h
        return (
            -(h**2) * lap_total
            - 1j * h * il * (l0_total + lap_phi * A * chi)
            + il**2 * mf["eik"] * A * chi
        )

    def overlap_agreement(self, n_check: int = 5) -> float:
        """Worst value mismatch across adjacent-interval charts (paper (iv))."""
        frame = self.beam.frame
        worst = 0.0
        for j in range(len(frame.cover) - 1):
            lo = frame.cover[j + 1][0]
            hi = frame.cover[j][1]
            for t in np.linspace(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), n_check):
                y = 0.3 * frame.radius
                p = from_fermi(frame, float(t), y)
                ta, ya = to_fermi(frame, p, hint_interval=j)
                tb, yb = to_fermi(frame, p, hint_interval=j + 1)
                va = complex(self.v_fermi(ta, ya))
                vb = complex(self.v_fermi(tb, yb))
                worst = max(worst, abs(va - vb))
        return worst


def assemble(
    chart: MetricChart,
    beam: Beam,
    delta_prime: float | None,
    h: float,
    lam: float | None = None,
    use_Nh: bool = False,
    N_fixed: int | None = None,
    C: float | None = None,
) -> Quasimode:
    """Assemble the global quasimode at semiclassical parameter h."""
    if delta_prime is None:
        delta_prime = beam.params.delta_prime
    if delta_prime > beam.frame.radius + 1e-12:
        raise ValidationError("delta_prime exceeds the frame radius")
    if lam is None:
        lam = beam.params.lam
    if abs(lam - beam.params.lam) > 0:
        raise ValidationError("lam must match the amplitude data of the beam")
    n_avail = beam.amp.N
    if use_Nh:
        if C is None:
            C = beam.symbol_constant()
        N_used = truncation(h, C, n_max=n_avail)
    else:
        N_used = n_avail if N_fixed is None else min(N_fixed, n_avail)
    qm = Quasimode(
        beam=beam, h=h, lam=lam, N_used=N_used, delta_prime=delta_prime,
        cutoff=Cutoff(delta_prime), partition=partition_of_unity(beam.frame.cover),
        C_used=C,
    )
    if len(beam.frame.cover) > 1:
        mismatch = qm.overlap_agreement()
        scale = qm.norm_prefactor
        if mismatch > 1e-8 * max(scale, 1.0):
            raise NumericalError(
                f"overlap mismatch {mismatch:.2e}: phase/amplitude gluing failed"
            )
    return qm


# -- quadrature -------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """Tensor grid on the tube; spacings default to the resolution bound."""

    dt: float | None = None
    dy: float | None = None
    t_range: tuple | None = None

    def grids(self, qm: Quasimode):
        h = qm.h
        dt_max = h / 4.0
        dy_max = math.sqrt(h) / 4.0
        dt = dt_max if self.dt is None else self.dt
        dy = dy_max if self.dy is None else self.dy
        if dt > dt_max * (1 + 1e-9) or dy > dy_max * (1 + 1e-9):
            raise ResolutionError(
                f"grid under-resolved: need dt <= {dt_max:.3e}, dy <= {dy_max:.3e}"
            )
        path = qm.beam.frame.path
        t_lo, t_hi = (path.ts[0], path.ts[-1]) if self.t_range is None else self.t_range
        nt = int(math.ceil((t_hi - t_lo) / dt)) + 1
        if nt % 2 == 0:
            nt += 1  # odd count for Simpson
        ts = np.linspace(t_lo, t_hi, nt)
        half = qm.delta_prime / 2.0
        ny = int(math.ceil(2 * half / dy)) + 1
        ys = np.linspace(-half, half, ny)
        return ts, ys


def _column_limits(qm, ts, half):
    """Per-column transverse limits [ylo(t), yhi(t)] of the tube inside X.

    Flat charts cut the tube by straight lines, solved exactly; curved
    charts bisect the boundary crossing along the transverse geodesic.
    Columns entirely outside X get ylo > yhi.
    """
    chart = qm.beam.chart
    frame = qm.beam.frame
    free_axes = [i for i in range(2) if not chart.periodic[i]]
    nt = len(ts)
    ylo = np.full(nt, -half)
    yhi = np.full(nt, half)
    if not free_axes:
        return ylo, yhi
    if chart.is_flat:
        x0, v0, e0 = frame.path.xs[0], frame.path.vs[0], frame.e1s[0]
        t0 = frame.path.ts[0]
        for ax in free_axes:
            c = x0[ax] + (ts - t0) * v0[ax]
            e = e0[ax]
            if abs(e) < 1e-14:
                bad = (c < chart.lo[ax]) | (c > chart.hi[ax])
                ylo[bad], yhi[bad] = half, -half
                continue
            b1 = (chart.lo[ax] - c) / e
            b2 = (chart.hi[ax] - c) / e
            lo_ax, hi_ax = np.minimum(b1, b2), np.maximum(b1, b2)
            ylo = np.maximum(ylo, lo_ax)
            yhi = np.minimum(yhi, hi_ax)
        return ylo, yhi

    from .fermi import _transverse_trace

    def inside(p):
        ok = True
        for ax in free_axes:
            ok = ok and chart.lo[ax] <= p[ax] <= chart.hi[ax]
        return ok

    for i, t in enumerate(ts):
        t = float(t)
        x_axis = frame.x(t)
        if not inside(x_axis):
            ylo[i], yhi[i] = half, -half
            continue
        # march outward to find the first exit on each side
        for direction in (+1, -1):
            steps = np.linspace(0.0, direction * half, 9)
            prev_y, prev_in = 0.0, True
            found = None
            for yq in steps[1:]:
                ok = inside(from_fermi(frame, t, float(yq)))
                if not ok:
                    a, b = prev_y, float(yq)
                    for _ in range(40):
                        mid = 0.5 * (a + b)
                        if inside(from_fermi(frame, t, mid)):
                            a = mid
                        else:
                            b = mid
                        if abs(b - a) < 1e-10:
                            break
                    found = 0.5 * (a + b)
                    break
                prev_y = float(yq)
            if found is not None:
                if direction > 0:
                    yhi[i] = min(yhi[i], found)
                else:
                    ylo[i] = max(ylo[i], found)
    return ylo, yhi


def _tube_integral(qm, ts, ys, field, restrict=True):
    """Simpson in t of per-column trapezoids with exact transverse limits.

    ``field(T, Y)`` returns the density including any volume factor; it is
    evaluated on the tensor grid plus the per-column cut points.
    """
    from scipy.integrate import simpson

    half = float(ys[-1])
    if restrict:
        ylo, yhi = _column_limits(qm, ts, half)
    else:
        ylo = np.full(len(ts), -half)
        yhi = np.full(len(ts), half)
    half_span = float(ys[-1])
    full = (ylo <= -half_span + 1e-15) & (yhi >= half_span - 1e-15)
    cut = (~full) & (ylo < yhi)
    inner = np.zeros(len(ts))
    if np.any(full):
        T, Y = np.meshgrid(ts[full], ys, indexing="ij")
        vals = field(T, Y)
        inner[full] = np.real(np.trapezoid(vals, ys, axis=1))
    if np.any(cut):
        # clipped columns: Gauss-Legendre over the exact limits, spectrally
        # accurate for the smooth integrand inside X
        n_gl = max(24, len(ys) // 2)
        gx, gw = np.polynomial.legendre.leggauss(n_gl)
        ic = np.where(cut)[0]
        mid = 0.5 * (ylo[ic] + yhi[ic])
        rad = 0.5 * (yhi[ic] - ylo[ic])
        Yg = mid[:, None] + rad[:, None] * gx[None, :]
        Tg = np.broadcast_to(ts[ic][:, None], Yg.shape)
        vals = field(Tg, Yg)
        inner[ic] = rad * np.real(vals @ gw)
    return float(simpson(inner, ts))


def _branch_cross_terms(qm, ts, ys, conj_pair=False):
    """Cross contributions 2 Re(chi_j chi_k v_j conj(v_k)) near crossings."""
    frame = qm.beam.frame
    if not frame.crossing_times:
        return 0.0
    total = 0.0
    chart = qm.beam.chart
    for (tc, sc, point) in frame.path.self_intersections:
        j = frame.interval_of(tc)
        k = frame.interval_of(sc)
        if j is None or k is None or j == k:
            continue
        sel = np.abs(ts - tc) < 2.5 * qm.delta_prime
        if not np.any(sel):
            continue
        T, Y = np.meshgrid(ts[sel], ys, indexing="ij")
        vj = qm.v_fermi(T, Y) * qm.partition[j](T)
        vk = np.zeros_like(vj)
        for a in range(T.shape[0]):
            for b in range(T.shape[1]):
                p = from_fermi(frame, float(T[a, b]), float(Y[a, b]))
                tf = to_fermi(frame, p, hint_interval=k)
                if tf is None:
                    continue
                t2, y2 = tf
                vk[a, b] = qm.v_fermi(t2, y2) * float(qm.partition[k](t2))
        mf = qm._metric_fields(T, Y)
        integ = 2.0 * np.real(vj * np.conj(vk)) * mf["E"]
        ylo, yhi = _column_limits(qm, ts[sel], float(ys[-1]))
        mask = (Y >= ylo[:, None]) & (Y <= yhi[:, None])
        inner = np.trapezoid(np.where(mask, integ, 0.0), ys, axis=1)
        total += float(np.trapezoid(inner, ts[sel]))
    return total


def l2_norm(qm: Quasimode, quad: QuadratureSpec | None = None, restrict=True) -> float:
    """L2 norm of the quasimode over the chart rectangle."""
    if quad is None:
        quad = QuadratureSpec()
    ts, ys = quad.grids(qm)

    def field(T, Y):
        return np.abs(qm.v_fermi(T, Y)) ** 2 * qm._metric_fields(T, Y)["E"]

    val = _tube_integral(qm, ts, ys, field, restrict=restrict)
    val += _branch_cross_terms(qm, ts, ys)
    return math.sqrt(max(val, 0.0))


def residual_norm(qm: Quasimode, quad: QuadratureSpec | None = None, restrict=True) -> float:
    """L2 norm of (-h^2 lap_g - (h s)^2) v over the chart rectangle."""
    if quad is None:
        quad = QuadratureSpec()
    ts, ys = quad.grids(qm)
    phase = qm.beam.phase

    def field(T, Y):
        mf = qm._metric_fields(T, Y)
        env = np.exp(-2.0 * (phase.phi(T, Y).imag / qm.h + qm.lam * phase.phi(T, Y).real))
        dens = qm.norm_prefactor**2 * np.abs(qm.bracket(T, Y)) ** 2 * env * mf["E"]
        if not np.all(np.isfinite(dens)):
            raise NumericalError("non-finite residual integrand")
        return dens

    return math.sqrt(max(_tube_integral(qm, ts, ys, field, restrict=restrict), 0.0))


@dataclass
class ResidualReport:
    h_grid: np.ndarray
    residual_norms: np.ndarray
    v_norms: np.ndarray
    N_used: list
    fit: DecayFit
    mode: str

    def as_dict(self):
        d = self.fit.as_dict()
        d.update(
            {
                "h": self.h_grid.tolist(),
                "residual": self.residual_norms.tolist(),
                "v_norm": self.v_norms.tolist(),
                "N_used": self.N_used,
                "mode": self.mode,
            }
        )
        return d


def residual_sweep(
    beam: Beam,
    chart: MetricChart,
    h_grid,
    mode: str = "exact_flat",
    delta_prime: float | None = None,
    quad: QuadratureSpec | None = None,
    N_fixed: int | None = None,
    parallel_map=map,
) -> ResidualReport:
    """Measure residual and norm across descending h and fit both models.

    Modes: exact_flat (flat closed forms with N(h) truncation), scaled_NK
    (jet beams with N(h) truncation), fixed_N_K (jet beams at fixed N).
    """
    h_grid = np.asarray(h_grid, dtype=float)
    if np.any(np.diff(h_grid) >= 0):
        raise ValidationError("h grid must be strictly decreasing")
    if mode not in ("exact_flat", "scaled_NK", "fixed_N_K"):
        raise ValidationError(f"unknown residual mode {mode!r}")
    if mode == "exact_flat" and not beam.is_flat:
        raise ValidationError("exact_flat mode needs an exact_flat beam")
    use_Nh = mode in ("exact_flat", "scaled_NK")
    C = beam.symbol_constant() if use_Nh else None

    def run(h):
        qm = assemble(
            chart, beam, delta_prime, float(h),
            use_Nh=use_Nh, N_fixed=N_fixed, C=C,
        )
        q = quad if quad is not None else QuadratureSpec()
        return residual_norm(qm, q), l2_norm(qm, q), qm.N_used

    rows = list(parallel_map(run, list(h_grid)))
    res = np.array([r[0] for r in rows])
    vns = np.array([r[1] for r in rows])
    fit = fit_decay_models(h_grid, res)
    return ResidualReport(
        h_grid=h_grid, residual_norms=res, v_norms=vns,
        N_used=[r[2] for r in rows], fit=fit, mode=mode,
    )


def family_assemble(
    chart: MetricChart,
    starts,
    params: BeamParams,
    h: float,
    quad: QuadratureSpec | None = None,
    parallel_map=map,
):
    """Quasimodes for a family of geodesic starts sharing one recipe.

    Returns (list of (start, Quasimode), uniformity dict with the sup/inf
    residual ratio as the uniformity surrogate); failures propagate with
    their start attached.
    """

    def run(start):
        beam = build_beam(chart, start, params)
        qm = assemble(chart, beam, params.delta_prime, h)
        q = quad if quad is not None else QuadratureSpec()
        return start, qm, residual_norm(qm, q)

    out = []
    errors = []
    for start in starts:
        try:
            out.append(run(start))
        except (ValidationError, ConstructionError, NumericalError) as exc:
            errors.append((start, str(exc)))
    if errors:
        raise NumericalError(f"family assembly failed for {len(errors)} starts: {errors[0]}")
    res = np.array([r[2] for r in out])
    report = {
        "max_residual": float(res.max()),
        "min_residual": float(res.min()),
        "ratio": float(res.max() / res.min()) if res.min() > 0 else math.inf,
    }
    return [(s, q) for s, q, _ in out], report
