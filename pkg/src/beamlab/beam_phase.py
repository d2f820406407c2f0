"""Complex beam phase along a geodesic.

In Fermi coordinates the phase is purely transverse,

    phi(t, y) = t + sum_{m=2}^{K} c_m(t) y^m,

with the order-2 coefficient driven by the Hessian flow: propagating the
Lagrangian frame Y = (A; B) under the linearization of the Hamilton system
along the ray gives M(t) = B A^{-1}, and positivity of Im M restricted
transversally survives the flow for any start with Im M0 transversally
positive.  Higher coefficients solve the linear ODE hierarchy obtained by
expanding |d phi|_g^2 = 1 in powers of y; the triangular structure makes
each order explicit once the lower ones are known.

On flat charts the eikonal equation has the exact complex-source solution
phi = sqrt((t - ib)^2 + y^2) + ib, provided here as the closed-form route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import ChartDomainError, ConstructionError, NumericalError
from .fermi import FermiFrame, fermi_metric_jets
from .series import ser_mul

__all__ = [
    "CoefficientTable",
    "HessianFlowResult",
    "hessian_flow",
    "PhaseJet",
    "phase_jet",
    "FlatPhase",
    "exact_flat_phase",
    "chart_hessian",
    "eikonal_residual",
]


class Spline:
    """Quintic spline through uniformly sampled (possibly complex) data."""

    def __init__(self, ts, ys, k=5):
        ys = np.asarray(ys)
        k = min(k, len(ts) - 1)
        if np.iscomplexobj(ys):
            self._re = make_interp_spline(ts, ys.real, k=k)
            self._im = make_interp_spline(ts, ys.imag, k=k)
        else:
            self._re = make_interp_spline(ts, ys, k=k)
            self._im = None

    def __call__(self, t, nu=0):
        val = self._re(t, nu=nu)
        if self._im is not None:
            val = val + 1j * self._im(t, nu=nu)
        return val


class CoefficientTable:
    """Fermi-metric coefficient functions sampled along the path and splined.

    Carries series coefficients of E(t, .) and G11(t, .) up to ``order`` as
    functions of t, with time derivatives from the splines.
    """

    def __init__(self, frame: FermiFrame, order: int, stride: int | None = None):
        self.frame = frame
        self.order = order
        path = frame.path
        if frame.chart.is_flat:
            self.flat = True
            self.ts = path.ts[:: max(1, len(path.ts) // 8)]
            return
        self.flat = False
        if stride is None:
            stride = max(1, int(round(1e-2 / path.step)))
        idx = np.arange(0, len(path.ts), stride)
        if idx[-1] != len(path.ts) - 1:
            idx = np.append(idx, len(path.ts) - 1)
        self.ts = path.ts[idx]
        n = order + 1
        E = np.empty((len(self.ts), n))
        G11 = np.empty((len(self.ts), n))
        for i, t in enumerate(self.ts):
            jets = fermi_metric_jets(frame, float(t), order)
            E[i] = jets.E
            G11[i] = jets.G11
        self._E = [Spline(self.ts, E[:, m]) for m in range(n)]
        self._G11 = [Spline(self.ts, G11[:, m]) for m in range(n)]

    def g11_series(self, t, nu=0):
        n = self.order + 1
        if self.flat:
            out = np.zeros(n)
            if nu == 0:
                out[0] = 1.0
            return out
        return np.array([s(t, nu=nu) for s in self._G11])

    def e_series(self, t, nu=0):
        n = self.order + 1
        if self.flat:
            out = np.zeros(n)
            if nu == 0:
                out[0] = 1.0
            return out
        return np.array([s(t, nu=nu) for s in self._E])

    def curvature(self, t):
        return float(self.g11_series(t)[2]) if self.order >= 2 else 0.0


def _check_m0(M0):
    M0 = np.asarray(M0, dtype=complex)
    if M0.shape != (2, 2):
        raise ConstructionError("M0 must be a 2x2 complex matrix in Fermi coordinates")
    if np.abs(M0 - M0.T).max() > 1e-12:
        raise ConstructionError("M0 must be symmetric")
    if np.abs(M0[0, :].imag).max() > 1e-12:
        raise ConstructionError("row/column of M0 along the ray must be real")
    if M0[1, 1].imag <= 0:
        raise ConstructionError("Im M0 transverse block must be positive")
    return M0


@dataclass
class HessianFlowResult:
    ts: np.ndarray
    A: np.ndarray  # (n, 2, 2)
    B: np.ndarray
    M: np.ndarray
    max_cond: float

    def min_transverse_im(self):
        return float(np.min(self.M[:, 1, 1].imag))


def _flow_rhs(coeffs, t, A, B):
    K = coeffs.curvature(t)
    R = np.array([[0.0, 0.0], [0.0, K]])
    return B, -R @ A


def _integrate_hessian(coeffs, ts, A0, B0):
    """RK4 sweep of the Lagrangian frame from t = 0 over the sample grid."""
    n = len(ts)
    A = np.empty((n, 2, 2), dtype=complex)
    B = np.empty((n, 2, 2), dtype=complex)
    k0 = int(np.searchsorted(ts, 0.0))
    A[k0], B[k0] = A0, B0

    def sweep(direction):
        rng = range(k0 + 1, n) if direction > 0 else range(k0 - 1, -1, -1)
        a, b = A0.copy(), B0.copy()
        prev_t = ts[k0]
        for i in rng:
            h = ts[i] - prev_t
            k1a, k1b = _flow_rhs(coeffs, prev_t, a, b)
            k2a, k2b = _flow_rhs(coeffs, prev_t + h / 2, a + h / 2 * k1a, b + h / 2 * k1b)
            k3a, k3b = _flow_rhs(coeffs, prev_t + h / 2, a + h / 2 * k2a, b + h / 2 * k2b)
            k4a, k4b = _flow_rhs(coeffs, prev_t + h, a + h * k3a, b + h * k3b)
            a = a + (h / 6) * (k1a + 2 * k2a + 2 * k3a + k4a)
            b = b + (h / 6) * (k1b + 2 * k2b + 2 * k3b + k4b)
            A[i], B[i] = a, b
            prev_t = ts[i]

    sweep(+1)
    sweep(-1)
    return A, B


def hessian_flow(frame: FermiFrame, M0, coeffs: CoefficientTable | None = None) -> HessianFlowResult:
    """Propagate Y = (A; B) from (I, M0) and return M(t) = B A^{-1} per sample.

    The linearized Hamilton system on the ray reduces in Fermi coordinates to
    dA/dt = B, dB/dt = -R A with R the curvature block, the Jacobi form of
    the flow.  A(t) staying invertible reflects the transversality of the
    propagated Lagrangian plane to the fiber; near-singular A aborts.
    """
    M0 = _check_m0(M0)
    if coeffs is None:
        coeffs = CoefficientTable(frame, order=2)
    ts = frame.path.ts
    A, B = _integrate_hessian(coeffs, ts, np.eye(2, dtype=complex), M0)
    conds = np.array([np.linalg.cond(A[i]) for i in range(len(ts))])
    if conds.max() > 1e12:
        raise NumericalError(
            f"A(t) numerically singular (cond {conds.max():.2e}); "
            "transversality of the propagated plane failed"
        )
    M = np.array([B[i] @ np.linalg.inv(A[i]) for i in range(len(ts))])
    return HessianFlowResult(ts=ts, A=A, B=B, M=M, max_cond=float(conds.max()))


def _phase_rhs(coeffs, t, c, K):
    """Time derivatives of c_2..c_K from the eikonal expansion at order K.

    Solves the triangular system: the y^m coefficient of S P^2 + W^2 - 1
    vanishes, with S the co-metric series, P = phi_t, W = phi_y.
    """
    n = K + 1
    S = coeffs.g11_series(t).astype(complex)[:n]
    W = np.zeros(n, dtype=complex)
    for m in range(2, K + 1):
        if m - 1 < n:
            W[m - 1] = m * c[m - 2]
    P = np.zeros(n, dtype=complex)
    P[0] = 1.0
    dc = np.zeros(K - 1, dtype=complex)
    W2 = ser_mul(W, W, n)
    for m in range(2, K + 1):
        F = ser_mul(S, ser_mul(P, P, n), n) + W2
        dcm = -0.5 * F[m]
        dc[m - 2] = dcm
        P[m] = dcm
    return dc


@dataclass
class PhaseJet:
    """Transverse phase jets c_2..c_K along the path, with Hessian frames."""

    frame: FermiFrame
    order: int
    M0: np.ndarray
    coeffs: CoefficientTable
    ts: np.ndarray
    c_nodes: np.ndarray  # (n, K-1)
    dc_nodes: np.ndarray
    hessian: HessianFlowResult
    _c_spl: list = field(default_factory=list, repr=False)
    _dc_spl: list = field(default_factory=list, repr=False)

    def c(self, t, m, nu=0):
        """Coefficient c_m(t) (m >= 2); nu'th time derivative."""
        if nu == 0:
            return self._c_spl[m - 2](t)
        if nu == 1:
            return self._dc_spl[m - 2](t)
        return self._dc_spl[m - 2](t, nu=nu - 1)

    def c_series(self, t, nu=0):
        """Array [c_0, c_1, c_2(t), ..., c_K(t)] (c_0 = c_1 = 0)."""
        out = np.zeros(self.order + 1, dtype=complex)
        for m in range(2, self.order + 1):
            out[m] = self.c(t, m, nu=nu)
        return out

    # -- pointwise evaluation (t, y arrays broadcastable) ---------------

    def _poly(self, t, y, nu_t=0, dy=0):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        val = np.zeros(np.broadcast(t, y).shape, dtype=complex)
        for m in range(2, self.order + 1):
            cm = self.c(t, m, nu=nu_t)
            if dy == 0:
                val = val + cm * y**m
            elif dy == 1 and m >= 1:
                val = val + m * cm * y ** (m - 1)
            elif dy == 2 and m >= 2:
                val = val + m * (m - 1) * cm * y ** (m - 2)
        return val

    def phi(self, t, y):
        return np.asarray(t, dtype=complex) + self._poly(t, y)

    def phi_t(self, t, y):
        return 1.0 + self._poly(t, y, nu_t=1)

    def phi_y(self, t, y):
        return self._poly(t, y, dy=1)

    def phi_tt(self, t, y):
        return self._poly(t, y, nu_t=2)

    def phi_ty(self, t, y):
        return self._poly(t, y, nu_t=1, dy=1)

    def phi_yy(self, t, y):
        return self._poly(t, y, dy=2)

    def M_transverse(self, t):
        return 2.0 * self.c(t, 2)

    def min_im_transverse(self):
        return float(np.min(self.c_nodes[:, 0].imag) * 2.0)


def phase_jet(
    frame: FermiFrame,
    M0,
    K: int,
    coeffs: CoefficientTable | None = None,
    psi_init=None,
) -> PhaseJet:
    """Solve the eikonal hierarchy to transverse order K along the path.

    Order-2 data comes from the same flow as :func:`hessian_flow` (the two
    are cross-checked); orders 3..K integrate their linear ODEs with initial
    jets at t = 0 given by ``psi_init`` (coefficients of y^3..y^K of the
    start section psi, default zero, i.e. psi(y) = (M0_yy/2) y^2).
    """
    if K < 2:
        raise ConstructionError("phase order K must be >= 2")
    M0 = _check_m0(M0)
    if coeffs is None:
        coeffs = CoefficientTable(frame, order=max(K, 2))
    if coeffs.order < K:
        raise ChartDomainError(
            f"phase order {K} needs metric coefficients to order {K}; "
            f"table has {coeffs.order}"
        )
    ts = frame.path.ts
    n = len(ts)
    k0 = int(np.searchsorted(ts, 0.0))

    c0 = np.zeros(K - 1, dtype=complex)
    c0[0] = M0[1, 1] / 2.0
    if psi_init is not None:
        psi_init = np.asarray(psi_init, dtype=complex)
        if psi_init.shape[0] != max(K - 2, 0):
            raise ConstructionError("psi_init must hold coefficients of y^3..y^K")
        c0[1:] = psi_init

    c_nodes = np.empty((n, K - 1), dtype=complex)
    c_nodes[k0] = c0

    def sweep(direction):
        rng = range(k0 + 1, n) if direction > 0 else range(k0 - 1, -1, -1)
        c = c0.copy()
        prev_t = ts[k0]
        for i in rng:
            h = ts[i] - prev_t
            k1 = _phase_rhs(coeffs, prev_t, c, K)
            k2 = _phase_rhs(coeffs, prev_t + h / 2, c + h / 2 * k1, K)
            k3 = _phase_rhs(coeffs, prev_t + h / 2, c + h / 2 * k2, K)
            k4 = _phase_rhs(coeffs, prev_t + h, c + h * k3, K)
            c = c + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            c_nodes[i] = c
            prev_t = ts[i]

    sweep(+1)
    sweep(-1)
    dc_nodes = np.array([_phase_rhs(coeffs, ts[i], c_nodes[i], K) for i in range(n)])

    hess = hessian_flow(frame, M0, coeffs=coeffs)
    if np.min(c_nodes[:, 0].imag) <= 0:
        raise NumericalError("transverse Im Hessian lost positivity along the beam")

    pj = PhaseJet(
        frame=frame, order=K, M0=M0, coeffs=coeffs, ts=ts,
        c_nodes=c_nodes, dc_nodes=dc_nodes, hessian=hess,
    )
    pj._c_spl = [Spline(ts, c_nodes[:, m]) for m in range(K - 1)]
    pj._dc_spl = [Spline(ts, dc_nodes[:, m]) for m in range(K - 1)]

    agree = np.abs(hess.M[:, 1, 1] - 2.0 * c_nodes[:, 0]).max()
    if agree > 1e-9:
        raise NumericalError(
            f"hessian_flow and phase_jet order-2 coefficients disagree: {agree:.2e}"
        )
    return pj


@dataclass
class FlatPhase:
    """Exact complex-source eikonal solution on a flat Fermi chart.

    phi(t, y) = sqrt((t - ib)^2 + y^2) + ib with the branch continuous along
    y = 0, solving G phi' . phi' = 1 exactly for |y| < b.
    """

    b: float

    def __post_init__(self):
        if self.b <= 0:
            raise ConstructionError("b must be positive")

    @property
    def order(self):
        return None  # exact in y

    def _w(self, t, y, check=True):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if check and np.any(np.abs(y) >= self.b):
            raise ChartDomainError(f"|y| >= b = {self.b}: branch-point proximity")
        # assign Im z = -2 b t directly so its signed zero survives at t = 0,
        # pinning the branch w(0, y) = -i sqrt(b^2 - y^2)
        shape = np.broadcast(t, y).shape
        z = np.empty(shape, dtype=complex)
        z.real = t * t - self.b * self.b + y * y
        z.imag = -2.0 * self.b * t
        w = np.sqrt(z)
        w = np.where(np.signbit(t), -w, w)
        return w if shape else w[()]

    def phi(self, t, y):
        return self._w(t, y) + 1j * self.b

    def phi_t(self, t, y):
        w = self._w(t, y)
        return (np.asarray(t) - 1j * self.b) / w

    def phi_y(self, t, y):
        return np.asarray(y) / self._w(t, y)

    def phi_tt(self, t, y):
        w = self._w(t, y)
        return np.asarray(y) ** 2 / w**3

    def phi_ty(self, t, y):
        w = self._w(t, y)
        return -np.asarray(y) * (np.asarray(t) - 1j * self.b) / w**3

    def phi_yy(self, t, y):
        w = self._w(t, y)
        return (np.asarray(t) - 1j * self.b) ** 2 / w**3

    def M_transverse(self, t):
        return 1.0 / (np.asarray(t) - 1j * self.b)

    def c_series(self, t, nu=0):
        raise NotImplementedError("FlatPhase is exact; use the pointwise interface")


def exact_flat_phase(b: float) -> FlatPhase:
    return FlatPhase(b=b)


def chart_hessian(frame: FermiFrame, t: float, m_perp: complex):
    """Chart-coordinate Hessian of the phase at gamma(t).

    Converts the Fermi Hessian diag(0, m_perp) through the second-order jet
    of the Fermi map: Hess_chart = E^{-T} (M_fermi - S) E^{-1} with
    E = [v, e1] and S(u, w) = <xi, D^2 exp (u, w)>.
    """
    chart = frame.chart
    x = frame.x(t)
    v = frame.v(t)
    e1 = frame.e1(t)
    xi = frame.path.xi(t)
    gam = chart.christoffel(x)
    S = np.empty((2, 2))
    pairs = [(v, v), (v, e1), (e1, e1)]
    vals = [-(xi @ np.einsum("ijk,j,k->i", gam, a, b)) for a, b in pairs]
    S[0, 0], S[0, 1], S[1, 1] = vals
    S[1, 0] = S[0, 1]
    E = np.column_stack([v, e1])
    Einv = np.linalg.inv(E)
    Mf = np.array([[0.0, 0.0], [0.0, m_perp]], dtype=complex)
    return Einv.T @ (Mf - S) @ Einv


def eikonal_residual(phase, frame: FermiFrame, t, y, order_boost: int = 4):
    """Pointwise eikonal defect G11(t,y) phi_t^2 + phi_y^2 - 1.

    The metric factor is evaluated to higher order than the phase so the
    measured residual reflects the phase truncation, not a shared cutoff.
    """
    K = phase.order if phase.order is not None else 2
    jets = fermi_metric_jets(frame, float(t), K + order_boost)
    y = np.asarray(y, dtype=float)
    G11 = np.polynomial.polynomial.polyval(y, jets.G11)
    res = G11 * phase.phi_t(t, y) ** 2 + phase.phi_y(t, y) ** 2 - 1.0
    return res
