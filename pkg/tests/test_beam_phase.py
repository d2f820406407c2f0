import math

import numpy as np
import pytest
from scipy.special import binom

from beamlab.beam_phase import (
    CoefficientTable,
    FlatPhase,
    chart_hessian,
    eikonal_residual,
    exact_flat_phase,
    hessian_flow,
    phase_jet,
)
from beamlab.errors import ChartDomainError, ConstructionError
from beamlab.fermi import build_frame, to_fermi
from beamlab.geodesic import UnitCovector, trace
from beamlab.manifold import SurfaceSpec, build_surface

CYL = build_surface(SurfaceSpec("flat_cylinder", {"a": 1.0}), jet_order=10)
SPH = build_surface(SurfaceSpec("sphere_patch", {"caps": 0.6}), jet_order=12)

M0_DEFAULT = np.array([[0.0, 0.0], [0.0, 1j]])


def flat_frame(ang=0.9, step=2e-3, radius=0.12):
    start = UnitCovector.make(CYL, [0.3, 0.5], [np.cos(ang), np.sin(ang)])
    return build_frame(CYL, trace(CYL, start, step=step), radius=radius)


def sphere_frame(tilted=True, step=4e-3, radius=0.1):
    if tilted:
        start = UnitCovector.make(SPH, [np.pi / 2, 0.5], [-np.sin(1.2), np.cos(1.2)])
        path = trace(SPH, start, step=step)
    else:
        start = UnitCovector.make(SPH, [np.pi / 2, 0.5], [0.0, 1.0])
        path = trace(SPH, start, step=step, max_length=7.5)
    return build_frame(SPH, path, radius=radius)


def test_hessian_flow_flat_closed_form():
    frame = flat_frame()
    res = hessian_flow(frame, M0_DEFAULT)
    t = res.ts
    expect = (t + 1j) / (1 + t**2)
    assert np.abs(res.M[:, 1, 1] - expect).max() < 1e-10
    assert np.abs(res.M[:, 0, :]).max() < 1e-12
    assert res.min_transverse_im() > 0


def test_hessian_flow_initial_condition():
    frame = flat_frame()
    M0 = np.array([[0.0, 0.0], [0.0, 0.3 + 0.7j]])
    res = hessian_flow(frame, M0)
    k0 = int(np.searchsorted(res.ts, 0.0))
    assert np.abs(res.M[k0] - M0).max() < 1e-13


def test_hessian_flow_sphere_equator_through_conjugate_point():
    frame = sphere_frame(tilted=False)
    assert frame.path.ts[-1] > np.pi  # runs past the conjugate point at t = pi
    res = hessian_flow(frame, M0_DEFAULT)
    # K = 1 along the equator: A_perp = e^{it}, so M stays exactly i
    assert np.abs(res.M[:, 1, 1] - 1j).max() < 1e-8
    assert res.min_transverse_im() > 0.99


def test_hessian_flow_rejects_bad_m0():
    frame = flat_frame()
    with pytest.raises(ConstructionError):
        hessian_flow(frame, np.array([[0.0, 0.0], [0.0, -1j]]))
    with pytest.raises(ConstructionError):
        hessian_flow(frame, np.array([[1j, 0.0], [0.0, 1j]]))
    with pytest.raises(ConstructionError):
        hessian_flow(frame, np.array([[0.0, 0.5], [0.0, 1j]]))


def flat_psi_init(b, K):
    # Taylor coefficients of sqrt((t-ib)^2 + y^2) + ib at t = 0 in y^3..y^K
    w0 = -1j * b
    out = []
    for m in range(3, K + 1):
        out.append(binom(0.5, m // 2) * w0 ** (1 - m) if m % 2 == 0 else 0.0)
    return np.array(out, dtype=complex)


def test_phase_jet_matches_exact_flat_phase():
    b = 1.0
    K = 8
    frame = flat_frame()
    pj = phase_jet(frame, M0_DEFAULT, K, psi_init=flat_psi_init(b, K))
    fp = exact_flat_phase(b)
    rng = np.random.default_rng(11)
    t_lo, t_hi = frame.path.ts[0] + 0.02, frame.path.ts[-1] - 0.02
    ts = rng.uniform(t_lo, t_hi, 40)
    ys = rng.uniform(-0.2 * b, 0.2 * b, 40)
    # clip to the frame tube where the jet phase is meaningful
    ys = np.clip(ys, -0.95 * frame.radius, 0.95 * frame.radius)
    assert np.abs(pj.phi(ts, ys) - fp.phi(ts, ys)).max() < 1e-8
    # coefficient functions match the closed-form Taylor coefficients
    for m in range(2, K + 1):
        if m % 2 == 1:
            assert np.abs(pj.c(ts, m)).max() < 1e-9
        else:
            w0 = ts - 1j * b
            expect = binom(0.5, m // 2) * w0 ** (1 - m)
            assert np.abs(pj.c(ts, m) - expect).max() < 1e-9


def generic_psi(K, cubic=0.3):
    """Start section with a real cubic term: breaks the round sphere's parity."""
    psi = np.zeros(max(K - 2, 0), dtype=complex)
    if K >= 3:
        psi[0] = cubic
    return psi


def test_phase_jet_eikonal_residual_orders():
    frame = sphere_frame()
    for K in (3, 4):
        pj = phase_jet(frame, M0_DEFAULT, K, psi_init=generic_psi(K))
        rng = np.random.default_rng(13)
        ts = rng.uniform(frame.path.ts[0] + 0.05, frame.path.ts[-1] - 0.05, 30)
        # residual of the jet-truncated eikonal with the jet-truncated metric
        # vanishes at sample points by construction
        for t in ts[:5]:
            S = pj.coeffs.g11_series(float(t)).astype(complex)[: K + 1]
            P = np.zeros(K + 1, dtype=complex)
            P[0] = 1.0
            W = np.zeros(K + 1, dtype=complex)
            for m in range(2, K + 1):
                P[m] = pj.c(float(t), m, nu=1)
                W[m - 1] = m * pj.c(float(t), m)
            F = np.convolve(S, np.convolve(P, P)[: K + 1])[: K + 1] + np.convolve(W, W)[: K + 1]
            F[0] -= 1.0
            assert np.abs(F).max() < 1e-8
        # pointwise residual against the higher-order metric is O(y^{K+1})
        r1 = np.abs(eikonal_residual(pj, frame, 0.3, 0.05))
        r2 = np.abs(eikonal_residual(pj, frame, 0.3, 0.1))
        slope = np.log(r2 / r1) / np.log(2.0)
        assert abs(slope - (K + 1)) < 0.6


def test_phase_jet_sphere_parity_gains_one_order():
    # with the default quadratic start section, the round sphere's symmetry
    # kills every odd jet, so the residual for even K scales one order better
    frame = sphere_frame()
    K = 2
    pj = phase_jet(frame, M0_DEFAULT, K)
    r1 = np.abs(eikonal_residual(pj, frame, 0.3, 0.05))
    r2 = np.abs(eikonal_residual(pj, frame, 0.3, 0.1))
    slope = np.log(r2 / r1) / np.log(2.0)
    assert abs(slope - (K + 2)) < 0.4


def test_phase_jet_im_phi_positive_on_tube():
    frame = sphere_frame()
    pj = phase_jet(frame, M0_DEFAULT, 4)
    rng = np.random.default_rng(17)
    ts = rng.uniform(frame.path.ts[0] + 0.05, frame.path.ts[-1] - 0.05, 1000)
    ys = rng.uniform(-frame.radius, frame.radius, 1000)
    im_m = pj.M_transverse(ts).imag
    c = 0.9 * im_m.min() / 2.0
    assert np.all(pj.phi(ts, ys).imag >= c * ys**2 - 1e-12)


def test_flat_phase_properties():
    fp = exact_flat_phase(0.7)
    t = np.linspace(-2, 2, 41)
    assert np.abs(fp.phi(t, np.zeros_like(t)) - t).max() < 1e-14
    assert np.abs(fp.phi_y(t, np.zeros_like(t))).max() < 1e-14
    rng = np.random.default_rng(19)
    ts = rng.uniform(-3, 3, 10_000)
    ys = rng.uniform(-0.35, 0.35, 10_000)  # |y| < 0.5 b
    res = fp.phi_t(ts, ys) ** 2 + fp.phi_y(ts, ys) ** 2 - 1.0
    assert np.abs(res).max() < 1e-12
    m = fp.M_transverse(ts)
    b = 0.7
    assert np.abs(m - 1.0 / (ts - 1j * b)).max() < 1e-14
    assert np.all(m.imag > 0)
    with pytest.raises(ChartDomainError):
        fp.phi(0.0, 0.7)


def test_flat_phase_matches_hessian_flow():
    b = 1.0
    frame = flat_frame()
    res = hessian_flow(frame, np.array([[0.0, 0.0], [0.0, 1j / b]]))
    fp = exact_flat_phase(b)
    assert np.abs(res.M[:, 1, 1] - fp.M_transverse(res.ts)).max() < 1e-10


def test_flat_phase_second_derivatives_consistent():
    fp = exact_flat_phase(1.3)
    h = 1e-4
    for (t, y) in [(0.4, 0.2), (-1.1, -0.5), (0.0, 0.3)]:
        ftt = (fp.phi(t + h, y) - 2 * fp.phi(t, y) + fp.phi(t - h, y)) / h**2
        fyy = (fp.phi(t, y + h) - 2 * fp.phi(t, y) + fp.phi(t, y - h)) / h**2
        fty = (
            fp.phi(t + h, y + h) - fp.phi(t + h, y - h) - fp.phi(t - h, y + h) + fp.phi(t - h, y - h)
        ) / (4 * h**2)
        assert abs(fp.phi_tt(t, y) - ftt) < 1e-7
        assert abs(fp.phi_yy(t, y) - fyy) < 1e-7
        assert abs(fp.phi_ty(t, y) - fty) < 1e-7


def test_chart_hessian_fd_oracle():
    frame = sphere_frame()
    pj = phase_jet(frame, M0_DEFAULT, 4)
    t0 = 0.25
    m_perp = pj.M_transverse(t0)
    H = chart_hessian(frame, t0, m_perp)
    assert np.abs(H - H.T).max() < 1e-12

    def phi_chart(p):
        t, y = to_fermi(frame, p)
        return complex(pj.phi(t, y))

    x0 = frame.x(t0)
    h = 2e-4
    H_fd = np.empty((2, 2), dtype=complex)
    e = np.eye(2)
    for i in range(2):
        for j in range(2):
            if i == j:
                H_fd[i, i] = (
                    phi_chart(x0 + h * e[i]) - 2 * phi_chart(x0) + phi_chart(x0 - h * e[i])
                ) / h**2
            else:
                H_fd[i, j] = (
                    phi_chart(x0 + h * e[i] + h * e[j])
                    - phi_chart(x0 + h * e[i] - h * e[j])
                    - phi_chart(x0 - h * e[i] + h * e[j])
                    + phi_chart(x0 - h * e[i] - h * e[j])
                ) / (4 * h**2)
    assert np.abs(H - H_fd).max() < 5e-5
    # Im part is PSD of rank one with kernel along the velocity
    w = np.linalg.eigvalsh(H.imag)
    assert w[0] > -1e-12 and w[1] > 0
    v = frame.v(t0)
    assert abs(v @ H.imag @ v) < 1e-12
