import math

import numpy as np
import pytest

from beamlab.beam_amplitude import flat_amplitudes
from beamlab.errors import ResolutionError, ValidationError
from beamlab.geodesic import UnitCovector, trace
from beamlab.manifold import SurfaceSpec, build_surface
from beamlab.quasimode import (
    BeamParams,
    Beam,
    QuadratureSpec,
    assemble,
    build_beam,
    family_assemble,
    l2_norm,
    partition_of_unity,
    residual_norm,
    residual_sweep,
    smooth_step,
    Cutoff,
)

CYL = build_surface(SurfaceSpec("flat_cylinder", {"a": 1.0}), jet_order=10)

FLAT_PARAMS = BeamParams(
    mode="exact_flat", b=2.2, delta_prime=3.0, N=40, lam=0.0, step=2e-3
)


def flat_qm(h=0.125, lam=0.0, b=2.2, delta_prime=3.0, N=40):
    params = BeamParams(mode="exact_flat", b=b, delta_prime=delta_prime, N=N, lam=lam, step=2e-3)
    start = UnitCovector.make(CYL, [1.0, 0.5], [np.cos(1.05), np.sin(1.05)])
    beam = build_beam(CYL, start, params)
    return assemble(CYL, beam, params.delta_prime, h, use_Nh=True)


def test_smooth_step_and_cutoff_shapes():
    assert smooth_step(-1.0) == 0.0 and smooth_step(2.0) == 1.0
    u = np.linspace(-0.5, 1.5, 201)
    s = smooth_step(u)
    assert np.all(np.diff(s) >= -1e-15)
    cut = Cutoff(1.0)
    y = np.linspace(-0.6, 0.6, 241)
    v = cut.value(y)
    assert np.all(v[np.abs(y) <= 0.25] == 1.0)
    assert np.all(v[np.abs(y) >= 0.5] == 0.0)
    # derivative consistency by finite differences
    h = 1e-6
    mid = (np.abs(y) > 0.26) & (np.abs(y) < 0.49)
    fd = (cut.value(y[mid] + h) - cut.value(y[mid] - h)) / (2 * h)
    assert np.abs(fd - cut.d1(y[mid])).max() < 1e-6


def test_partition_sums_to_one():
    cover = [(-1.0, 0.2), (-0.2, 1.4), (1.0, 2.5)]
    chis = partition_of_unity(cover)
    t = np.linspace(-1.0, 2.5, 301)
    total = sum(chi(t) for chi in chis)
    assert np.abs(total - 1.0).max() < 1e-12
    for j, chi in enumerate(chis):
        vals = chi(t)
        outside = (t < cover[j][0]) | (t > cover[j][1])
        assert np.abs(vals[outside]).max() < 1e-15


def test_axis_evaluation_formula():
    qm = flat_qm(h=0.125)
    frame = qm.beam.frame
    ts = np.linspace(-0.3, 0.3, 7)
    for t in ts:
        p = frame.path.x(float(t))
        v = qm.v_chart([p])[0]
        a = complex(qm._amp_sum(float(t), 0.0))
        expect = qm.norm_prefactor * np.exp(1j * qm.s * t) * a
        assert abs(v - expect) < 1e-9 * abs(expect)
    # with lam: |e^{ist}| = e^{-lam t}
    qml = flat_qm(h=0.125, lam=0.8)
    t = 0.25
    p = qml.beam.frame.path.x(t)
    v = qml.v_chart([p])[0]
    a = complex(qml._amp_sum(t, 0.0))
    assert abs(abs(v) - qml.norm_prefactor * math.exp(-0.8 * t) * abs(a)) < 1e-9


def test_transverse_gaussian_decay():
    qm = flat_qm(h=1.0 / 16)
    t = 0.1
    im_m = qm.beam.phase.M_transverse(t).imag
    for y in (0.2, 0.4, 0.6):
        ratio = abs(complex(qm.v_fermi(t, y, with_cutoff=False))) / abs(
            complex(qm.v_fermi(t, 0.0))
        )
        bound = math.exp(-0.8 * im_m * y**2 / (2 * qm.h))
        assert ratio <= bound


def test_cutoff_plateau_and_support():
    qm = flat_qm()
    t = 0.0
    dp = qm.delta_prime
    assert qm.v_fermi(t, dp / 2 + 1e-6) == 0.0
    inside = complex(qm.v_fermi(t, dp / 8.0))
    raw = complex(qm.v_fermi(t, dp / 8.0, with_cutoff=False))
    assert inside == raw


def test_l2_norm_laplace_oracle():
    # exact flat beam: |a0|^2 / sqrt(Im M) is constant, so
    # ||v||^2 ~ sqrt(pi b) * (time length inside X) for small h
    h = 1.0 / 64
    qm = flat_qm(h=h)
    val = l2_norm(qm)
    path = qm.beam.frame.path
    expect = math.sqrt(math.pi * qm.beam.params.b) * (path.t_exit - path.t_entry)
    assert abs(val**2 - expect) / expect < 0.02


def test_l2_norm_stability_and_resolution():
    for h in (1.0 / 8, 1.0 / 32):
        qm = flat_qm(h=h)
        v = l2_norm(qm)
        assert 1.0 / 3 < v < 3.0
    qm = flat_qm(h=1.0 / 16)
    with pytest.raises(ResolutionError):
        l2_norm(qm, QuadratureSpec(dt=0.1))
    v1 = l2_norm(qm)
    v2 = l2_norm(qm, QuadratureSpec(dt=qm.h / 8.0, dy=math.sqrt(qm.h) / 8.0))
    assert abs(v1 - v2) / v2 < 1e-4


def test_residual_linearity():
    qm = flat_qm(h=1.0 / 16)
    r1 = residual_norm(qm)
    scaled = flat_qm(h=1.0 / 16)
    scaled.beam.amp.coef = 2.0 * scaled.beam.amp.coef
    r2 = residual_norm(scaled)
    assert r2 == pytest.approx(2.0 * r1, rel=1e-12)


def test_residual_sweep_exact_flat_class():
    start = UnitCovector.make(CYL, [1.0, 0.5], [np.cos(1.05), np.sin(1.05)])
    beam = build_beam(CYL, start, FLAT_PARAMS)
    hs = [1.0 / 8, 1.0 / 12, 1.0 / 16, 1.0 / 24, 1.0 / 32, 1.0 / 64]
    rep = residual_sweep(beam, CYL, hs, mode="exact_flat")
    assert np.all(np.diff(rep.residual_norms) < 0)
    assert rep.fit.exp_c1 > 0
    assert rep.fit.exp_r2 > 0.95
    assert rep.fit.selected == "exponential"
    assert np.all((rep.v_norms > 1 / 3) & (rep.v_norms < 3))
    # N(h) is nonincreasing in h (descending grid -> nondecreasing list)
    assert all(a <= b for a, b in zip(rep.N_used, rep.N_used[1:]))


def test_pv_jet_route_matches_finite_differences():
    # evaluate in the cutoff transition region where P v carries the chi
    # derivative terms and is not cancellation-dominated
    h = 0.4
    qm = flat_qm(h=h)
    frame = qm.beam.frame
    t0, y0 = 0.12, 1.0
    p0 = frame.path.x(t0) + y0 * frame.e1s[0]

    def v_at(p):
        return qm.v_chart([p])[0]

    def lap_fd(step):
        e = np.eye(2)
        acc = 0.0
        for ax in range(2):
            acc += (v_at(p0 + step * e[ax]) - 2 * v_at(p0) + v_at(p0 - step * e[ax])) / step**2
        return acc

    lap = (4.0 * lap_fd(1e-3) - lap_fd(2e-3)) / 3.0  # Richardson
    pv_fd = -(h**2) * lap - (h * qm.s) ** 2 * v_at(p0)
    tt, yy = np.array([t0]), np.array([y0])
    T, Y = np.meshgrid(tt, yy, indexing="ij")
    pv_jet = (
        qm.norm_prefactor
        * np.exp(1j * qm.s * qm.beam.phase.phi(T, Y))
        * qm.bracket(T, Y)
    )[0, 0]
    assert abs(pv_jet - pv_fd) / abs(pv_fd) < 1e-4


def test_cutoff_tail_term_within_class_bound():
    # the chi-derivative terms alone stay under e^{-delta'^2 c/(16 h)} at desk h
    for h in (1.0 / 8, 1.0 / 16):
        qm = flat_qm(h=h)
        quad = QuadratureSpec()
        ts, ys = quad.grids(qm)
        phase = qm.beam.phase

        def field(T, Y, qm=qm, h=h):
            A = qm._amp_sum(T, Y)
            Ay = qm._amp_sum(T, Y, dy=1)
            chi1 = qm.cutoff.d1(Y)
            chi2 = qm.cutoff.d2(Y)
            il = 1.0 + 1j * qm.lam * h
            b_comm = (
                -(h**2) * (2.0 * Ay * chi1 + A * chi2)
                - 1j * h * il * 2.0 * qm.beam.phase.phi_y(T, Y) * A * chi1
            )
            env = np.exp(
                -2.0 * (qm.beam.phase.phi(T, Y).imag / h + qm.lam * qm.beam.phase.phi(T, Y).real)
            )
            return qm.norm_prefactor**2 * np.abs(b_comm) ** 2 * env

        from beamlab.quasimode import _tube_integral

        tail = math.sqrt(_tube_integral(qm, ts, ys, field))
        ms = qm.beam.phase.M_transverse(np.linspace(ts[0], ts[-1], 64))
        c = float(ms.imag.min())
        bound = math.exp(-qm.delta_prime**2 * c / (16.0 * h))
        assert tail <= bound


def test_family_assemble_singleton_and_uniformity():
    start = UnitCovector.make(CYL, [1.0, 0.5], [np.cos(1.05), np.sin(1.05)])
    single, rep1 = family_assemble(CYL, [start], FLAT_PARAMS, h=1.0 / 16)
    assert len(single) == 1 and rep1["ratio"] == 1.0
    starts = []
    for dx in (-0.05, 0.0, 0.05):
        for da in (-0.05, 0.0, 0.05):
            starts.append(
                UnitCovector.make(
                    CYL, [1.0 + dx, 0.5], [np.cos(1.05 + da), np.sin(1.05 + da)]
                )
            )
    fam, rep = family_assemble(CYL, starts, FLAT_PARAMS, h=1.0 / 16)
    assert len(fam) == 9
    assert rep["ratio"] <= 10.0


def test_disjoint_tubes_product_vanishes():
    params = BeamParams(mode="exact_flat", b=0.5, delta_prime=0.5, N=6, step=2e-3)
    s1 = UnitCovector.make(CYL, [0.5, 0.5], [np.cos(1.05), np.sin(1.05)])
    s2 = UnitCovector.make(CYL, [3.5, 0.5], [np.cos(1.05), np.sin(1.05)])
    q1 = assemble(CYL, build_beam(CYL, s1, params), 0.5, 1.0 / 16)
    q2 = assemble(CYL, build_beam(CYL, s2, params), 0.5, 1.0 / 16)
    pts = np.column_stack([np.linspace(0, 2 * np.pi, 40, endpoint=False), np.full(40, 0.5)])
    prod = q1.v_chart(pts) * q2.v_chart(pts)
    assert np.abs(prod).max() < 1e-12


def test_neck_beam_overlap_gluing():
    chart = build_surface(
        SurfaceSpec("surface_of_revolution", {"profile": "1.0,0.45,3.141592653589793", "a": 2.0}),
        jet_order=8,
    )
    s0, L = 0.15, 0.55005
    r = 1 + 0.45 * np.cos(np.pi * s0)
    start = UnitCovector.make(
        chart, [s0, 0.0], np.array([np.sqrt(1 - L**2 / r**2), L]), normalize=False
    )
    params = BeamParams(mode="jets", K=4, K_a=2, N=1, delta_prime=0.02, step=2e-3)
    beam = build_beam(chart, start, params, max_length=25.0)
    assert len(beam.frame.cover) == 2
    qm = assemble(chart, beam, params.delta_prime, h=1.0 / 8)
    assert qm.overlap_agreement() < 1e-8
    # the quasimode near the crossing point is the sum of both branch beams
    tc, sc, point = beam.frame.path.self_intersections[0]
    v_total = qm.v_chart([point])[0]
    contributions = []
    for j in (0, 1):
        from beamlab.fermi import to_fermi

        t, y = to_fermi(beam.frame, point, hint_interval=j)
        contributions.append(float(qm.partition[j](t)) * complex(qm.v_fermi(t, y)))
    assert abs(v_total - sum(contributions)) < 1e-10 * abs(v_total)
