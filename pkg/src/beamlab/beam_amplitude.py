"""Amplitude coefficients a_0..a_N of the beam, as transverse jets.

The hierarchy comes from expanding the conjugated operator in powers of h:

    (L0 + lap_g(phi)) a_0 = 0
    (L0 + lap_g(phi)) a_k = -Q a_{k-1},   Q = i(-lap_g + lam L0 + lam lap_g(phi))

with L0 = 2 <d phi, d . >_g.  In Fermi coordinates all operator coefficients
are transverse series with spline-interpolated time dependence, and the
y^m coefficient of each equation is an ODE in t that is triangular in m.
The time derivatives of a_{k-1} that Q needs come from the stored splines of
the already-solved predecessor, which keeps every order a plain RK4 sweep.

Growth of sup|a_k| across k is summarized by the classical-analytic-symbol
constant C with sup|a_k| <= C^{k+1} k^k, and the h-dependent truncation
order is N(h) = floor(1/(h e C)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .beam_phase import FlatPhase, PhaseJet, Spline
from .errors import ConstructionError, ValidationError
from .series import ser_inv, ser_mul

__all__ = [
    "AmplitudeJet",
    "transport",
    "FlatAmplitude",
    "flat_amplitudes",
    "symbol_constant",
    "truncation",
]


def _ydiff(a):
    """Series of d/dy applied to a transverse series (same length, shifted)."""
    out = np.zeros_like(a)
    out[:-1] = a[1:] * np.arange(1, len(a))
    return out


class _OperatorTable:
    """Transverse operator series cached at the RK4 stage times."""

    def __init__(self, phase: PhaseJet, n: int, tstages):
        self.n = n
        self.t_index = {round(float(t), 12): i for i, t in enumerate(tstages)}
        coeffs = phase.coeffs
        m = len(tstages)
        self.S = np.empty((m, n), dtype=complex)
        self.SP = np.empty((m, n), dtype=complex)
        self.W = np.empty((m, n), dtype=complex)
        self.F = np.empty((m, n), dtype=complex)
        self.DtES_over_E = np.empty((m, n), dtype=complex)
        self.Ey_over_E = np.empty((m, n), dtype=complex)
        for i, t in enumerate(tstages):
            t = float(t)
            S = coeffs.g11_series(t).astype(complex)[:n]
            Sd = coeffs.g11_series(t, nu=1).astype(complex)[:n]
            E = coeffs.e_series(t).astype(complex)[:n]
            Ed = coeffs.e_series(t, nu=1).astype(complex)[:n]
            c = phase.c_series(t)[: max(n + 1, 3)]
            cd = phase.c_series(t, nu=1)[: max(n + 1, 3)]
            cdd = phase.c_series(t, nu=2)[: max(n + 1, 3)]
            P = np.zeros(n, dtype=complex)
            P[0] = 1.0
            Ptt = np.zeros(n, dtype=complex)
            W = np.zeros(n, dtype=complex)
            Wy = np.zeros(n, dtype=complex)
            for mm in range(2, len(c)):
                if mm < n:
                    P[mm] = cd[mm]
                    Ptt[mm] = cdd[mm]
                if mm - 1 < n:
                    W[mm - 1] = mm * c[mm]
                if mm - 2 < n:
                    Wy[mm - 2] = mm * (mm - 1) * c[mm]
            Einv = ser_inv(E, n)
            self.S[i] = S
            self.SP[i] = ser_mul(S, P, n)
            self.W[i] = W
            self.DtES_over_E[i] = ser_mul(ser_mul(Ed, S, n) + ser_mul(E, Sd, n), Einv, n)
            self.Ey_over_E[i] = ser_mul(_ydiff(E), Einv, n)
            # lap_g phi = S phi_tt + (dt(ES)/E) phi_t + phi_yy + (E_y/E) phi_y
            self.F[i] = (
                ser_mul(S, Ptt, n)
                + ser_mul(self.DtES_over_E[i], P, n)
                + Wy
                + ser_mul(self.Ey_over_E[i], W, n)
            )

    def at(self, t):
        return self.t_index[round(float(t), 12)]

    def laplacian(self, i, U, Ut, Utt):
        n = self.n
        return (
            ser_mul(self.S[i], Utt, n)
            + ser_mul(self.DtES_over_E[i], Ut, n)
            + _ydiff(_ydiff(U))
            + ser_mul(self.Ey_over_E[i], _ydiff(U), n)
        )

    def l0(self, i, U, Ut):
        n = self.n
        return 2.0 * (ser_mul(self.SP[i], Ut, n) + ser_mul(self.W[i], _ydiff(U), n))


def _transport_rhs(ops, i, U, R):
    """Solve (L0 + F) a = R for da/dt, triangular in the jet order."""
    n = ops.n
    Uy = _ydiff(U)
    base = ser_mul(ops.F[i], U, n) + 2.0 * ser_mul(ops.W[i], Uy, n) - R
    Ut = np.zeros(n, dtype=complex)
    SP = ops.SP[i]
    for m in range(n):
        acc = base[m]
        for q in range(1, m + 1):
            acc = acc + 2.0 * SP[q] * Ut[m - q]
        Ut[m] = -acc / (2.0 * SP[0])
    return Ut


@dataclass
class AmplitudeJet:
    """Transverse jets of a_0..a_N along the path, with growth metadata."""

    phase: PhaseJet
    N: int
    K_a: int
    lam: float
    ts: np.ndarray
    nodes: np.ndarray  # (N+1, n_t, K_a+1) values
    rhs_nodes: np.ndarray
    _spl: list = field(default_factory=list, repr=False)
    _rhs_spl: list = field(default_factory=list, repr=False)
    _C: float | None = None

    def jet(self, k, t, nu=0):
        """Transverse series of a_k(t, .) or its nu'th time derivative."""
        if nu == 0:
            return np.array([s(t) for s in self._spl[k]])
        if nu == 1:
            return np.array([s(t) for s in self._rhs_spl[k]])
        return np.array([s(t, nu=nu - 1) for s in self._rhs_spl[k]])

    def a(self, k, t, y, dt=0, dy=0):
        """Pointwise a_k and derivatives; t, y broadcastable arrays."""
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        val = np.zeros(np.broadcast(t, y).shape, dtype=complex)
        for m in range(self.K_a + 1):
            if dy == 0:
                base = y**m
            elif m >= dy:
                fac = 1.0
                for q in range(dy):
                    fac *= m - q
                base = fac * y ** (m - dy)
            else:
                continue
            if dt == 0:
                cm = self._spl[k][m](t)
            elif dt == 1:
                cm = self._rhs_spl[k][m](t)
            else:
                cm = self._rhs_spl[k][m](t, nu=dt - 1)
            val = val + cm * base
        return val

    def axis_values(self, k):
        return self.nodes[k, :, 0]

    def min_axis_amplitude(self):
        return float(np.abs(self.nodes[0, :, 0]).min())

    def sup_norms(self, tube_radius, n_y=21):
        """sup |a_k| over the tube |y| <= tube_radius, per k."""
        ys = np.linspace(-tube_radius, tube_radius, n_y)
        sups = np.empty(self.N + 1)
        for k in range(self.N + 1):
            pows = ys[None, :, None] ** np.arange(self.K_a + 1)[None, None, :]
            vals = np.einsum("tm,tym->ty", self.nodes[k], np.broadcast_to(
                pows, (self.nodes.shape[1], n_y, self.K_a + 1)))
            sups[k] = np.abs(vals).max()
        return sups

    def symbol_constant(self, tube_radius):
        if self._C is None:
            self._C = symbol_constant(self, tube_radius)
        return self._C


def transport(phase: PhaseJet, lam: float, N: int, K_a: int, init=None) -> AmplitudeJet:
    """Solve the transport hierarchy along the whole path.

    Initial data sits at t_start = the first path sample: a_0 jet given by
    ``init`` (default the constant 1), a_k = 0 for k >= 1.  Each order k is
    one RK4 sweep; Q a_{k-1} uses the stored splines of the previous order,
    including their time derivatives.
    """
    if N < 0 or K_a < 0:
        raise ValidationError("N and K_a must be nonnegative")
    if phase.order is not None and K_a > phase.order - 1:
        raise ValidationError(
            f"jet-order starvation: K_a = {K_a} needs phase order >= {K_a + 1} "
            f"(have {phase.order})"
        )
    if phase.coeffs.order < K_a + 2:
        from .beam_phase import CoefficientTable
        from .errors import ChartDomainError

        try:
            phase.coeffs = CoefficientTable(phase.frame, order=K_a + 2)
        except ChartDomainError as exc:
            raise ValidationError(
                f"jet-order starvation: K_a = {K_a} needs metric coefficients to "
                f"order >= {K_a + 2} and phase order >= {K_a + 1}: {exc}"
            ) from exc
    n = K_a + 1
    ts = phase.ts
    n_t = len(ts)
    h = float(ts[1] - ts[0])
    tstages = np.empty(2 * n_t - 1)
    tstages[0::2] = ts
    tstages[1::2] = ts[:-1] + h / 2.0
    ops = _OperatorTable(phase, n, tstages)

    a0 = np.zeros(n, dtype=complex)
    if init is None:
        a0[0] = 1.0
    else:
        init = np.asarray(init, dtype=complex)
        a0[: len(init)] = init

    nodes = np.zeros((N + 1, n_t, n), dtype=complex)
    rhs_nodes = np.zeros((N + 1, n_t, n), dtype=complex)
    spl, rhs_spl = [], []

    for k in range(N + 1):
        if k == 0:
            R_stage = np.zeros((len(tstages), n), dtype=complex)
        else:
            R_stage = np.empty((len(tstages), n), dtype=complex)
            prev_val = np.array([[s(t) for s in spl[k - 1]] for t in tstages])
            prev_t = np.array([[s(t) for s in rhs_spl[k - 1]] for t in tstages])
            prev_tt = np.array([[s(t, nu=1) for s in rhs_spl[k - 1]] for t in tstages])
            for i in range(len(tstages)):
                lap = ops.laplacian(i, prev_val[i], prev_t[i], prev_tt[i])
                l0a = ops.l0(i, prev_val[i], prev_t[i])
                fa = ser_mul(ops.F[i], prev_val[i], n)
                # R = -Q a_{k-1} = i (lap - lam L0 - lam F) a_{k-1}
                R_stage[i] = 1j * (lap - lam * l0a - lam * fa)

        u = a0.copy() if k == 0 else np.zeros(n, dtype=complex)
        nodes[k, 0] = u
        for i in range(n_t - 1):
            i0, im, i1 = 2 * i, 2 * i + 1, 2 * i + 2
            k1 = _transport_rhs(ops, i0, u, R_stage[i0])
            k2 = _transport_rhs(ops, im, u + h / 2 * k1, R_stage[im])
            k3 = _transport_rhs(ops, im, u + h / 2 * k2, R_stage[im])
            k4 = _transport_rhs(ops, i1, u + h * k3, R_stage[i1])
            u = u + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            nodes[k, i + 1] = u
        for i in range(n_t):
            rhs_nodes[k, i] = _transport_rhs(ops, 2 * i, nodes[k, i], R_stage[2 * i])
        spl.append([Spline(ts, nodes[k, :, m]) for m in range(n)])
        rhs_spl.append([Spline(ts, rhs_nodes[k, :, m]) for m in range(n)])

    return AmplitudeJet(
        phase=phase, N=N, K_a=K_a, lam=lam, ts=ts, nodes=nodes,
        rhs_nodes=rhs_nodes, _spl=spl, _rhs_spl=rhs_spl,
    )


@dataclass
class FlatAmplitude:
    """Closed-form hierarchy solutions on a flat chart.

    a_k(t, y) = sum_j c[k][j] w^{sigma_k + j}, sigma_k = -1/2 - k, with w the
    complex source distance of the exact flat phase.  The table follows from
    matching powers of w in (L0 + lap phi) a_k = -Q a_{k-1}; the would-be
    resonant top power carries a vanishing source, so no log terms appear.
    """

    flat_phase: FlatPhase
    lam: float
    N: int
    K_a: int | None = None  # exact in y
    coef: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        b = self.flat_phase.b
        N = self.N
        c = np.zeros((N + 1, N + 1), dtype=complex)
        c[0, 0] = np.sqrt(-1j * b)
        for k in range(1, N + 1):
            sig_prev = -0.5 - (k - 1)
            for j in range(k):
                c[k, j] = 1j * (sig_prev + j) ** 2 * c[k - 1, j] / (2.0 * (j - k))
                if j >= 1:
                    c[k, j] += -1j * self.lam * c[k - 1, j - 1]
        self.coef = c

    @property
    def phase(self):
        return self.flat_phase

    def a(self, k, t, y, dt=0, dy=0):
        """Pointwise a_k and first/second derivatives via the chain rule."""
        fp = self.flat_phase
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        w = fp._w(t, y)
        tb = t - 1j * fp.b
        if dt == 0 and dy == 0:
            return self._sum(k, w, 0)
        if (dt, dy) == (1, 0):
            return self._sum(k, w, 1) * (tb / w)
        if (dt, dy) == (0, 1):
            return self._sum(k, w, 1) * (y / w)
        if (dt, dy) == (2, 0):
            return self._sum(k, w, 2) * (tb / w) ** 2 + self._sum(k, w, 1) * (y**2 / w**3)
        if (dt, dy) == (0, 2):
            return self._sum(k, w, 2) * (y / w) ** 2 + self._sum(k, w, 1) * (tb**2 / w**3)
        if (dt, dy) == (1, 1):
            return self._sum(k, w, 2) * (tb * y / w**2) - self._sum(k, w, 1) * (tb * y / w**3)
        raise ValidationError(f"unsupported derivative order ({dt}, {dy})")

    def _sum(self, k, w, deriv):
        """sum_j c[k][j] d^deriv/dw^deriv w^{sigma_k + j}."""
        sig = -0.5 - k
        out = np.zeros(np.shape(w), dtype=complex)
        for j in range(0, k + 1):
            cc = self.coef[k, j]
            if cc == 0:
                continue
            tau = sig + j
            fac = 1.0
            for q in range(deriv):
                fac *= tau - q
            out = out + cc * fac * w ** (tau - deriv)
        return out

    def defect(self, t, y):
        """(lam (L0 + lap phi) - lap) a_N, the h^{N+2} residual density."""
        fp = self.flat_phase
        w = fp._w(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
        sig = -0.5 - self.N
        out = np.zeros(np.shape(w), dtype=complex)
        for j in range(0, self.N + 1):
            cc = self.coef[self.N, j]
            if cc == 0:
                continue
            tau = sig + j
            out = out + cc * (self.lam * (2 * tau + 1) * w ** (tau - 1) - tau**2 * w ** (tau - 2))
        return out

    def sup_norms(self, tube_radius, t_range=(-2.0, 2.0), n_t=81, n_y=21):
        ys = np.linspace(-tube_radius, tube_radius, n_y)
        ts = np.linspace(t_range[0], t_range[1], n_t)
        T, Y = np.meshgrid(ts, ys, indexing="ij")
        sups = np.empty(self.N + 1)
        for k in range(self.N + 1):
            sups[k] = np.abs(self.a(k, T, Y)).max()
        return sups


def flat_amplitudes(flat_phase: FlatPhase, lam: float, N: int) -> FlatAmplitude:
    return FlatAmplitude(flat_phase=flat_phase, lam=lam, N=N)


def symbol_constant(amp, tube_radius, t_range=None, c_min=1e-2) -> float:
    """Smallest C >= c_min with sup|a_k| <= C^{k+1} k^k for all computed k.

    C = max_k (sup|a_k| / k^k)^{1/(k+1)}, with k^k read as 1 at k = 0.
    """
    if amp.N < 3:
        raise ValidationError("symbol_constant needs N >= 3")
    if isinstance(amp, FlatAmplitude):
        sups = amp.sup_norms(tube_radius, **({"t_range": t_range} if t_range else {}))
    else:
        sups = amp.sup_norms(tube_radius)
    best = c_min
    for k, s in enumerate(sups):
        kk = 1.0 if k == 0 else float(k) ** k
        best = max(best, (s / kk) ** (1.0 / (k + 1)))
    return float(best)


def truncation(h: float, C: float, n_max: int = 60) -> int:
    """Truncation order N(h) = floor(1 / (h e C)), clamped to [0, n_max]."""
    if h <= 0 or C <= 0:
        raise ValidationError("h and C must be positive")
    return int(min(max(math.floor(1.0 / (h * math.e * C)), 0), n_max))


def hierarchy_residuals(amp: AmplitudeJet, ts_query):
    """sup of jet coefficients of (L0 + F) a_{m-1} + Q a_{m-2} per h power.

    Substituting the computed jets into the conjugated operator, the
    coefficient of h^m (1 <= m <= N+1) is -i times this combination; all
    must vanish up to integration and spline error.  Returns an array of
    sup-norms indexed by m - 1.
    """
    n = amp.K_a + 1
    ops = _OperatorTable(amp.phase, n, np.asarray(ts_query, dtype=float))
    out = np.zeros(amp.N + 1)
    for i, t in enumerate(np.asarray(ts_query, dtype=float)):
        for m in range(1, amp.N + 2):
            k = m - 1
            U = amp.jet(k, t)
            Ut = amp.jet(k, t, nu=1)
            expr = ops.l0(i, U, Ut) + ser_mul(ops.F[i], U, n)
            if k >= 1:
                V = amp.jet(k - 1, t)
                Vt = amp.jet(k - 1, t, nu=1)
                Vtt = amp.jet(k - 1, t, nu=2)
                lap = ops.laplacian(i, V, Vt, Vtt)
                l0v = ops.l0(i, V, Vt)
                fv = ser_mul(ops.F[i], V, n)
                expr = expr + 1j * (-lap + amp.lam * l0v + amp.lam * fv)
            out[m - 1] = max(out[m - 1], float(np.abs(expr).max()))
    return out
