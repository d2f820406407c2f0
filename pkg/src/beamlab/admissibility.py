"""Admissible pairs of geodesics.

A phase-space point (x0, xi0) is generated by an admissible pair when two
nontangential unit-speed geodesics leave the same point x0 with covector sum
t0 * xi0, 0 < t0 < 2, and meet each other (and themselves) nowhere else.
This module constructs candidate direction pairs, verifies pairs against
those conditions, and extends a verified pair to a phase-space neighborhood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, ValidationError
from .geodesic import GeodesicPath, UnitCovector, cross_intersections, trace
from .manifold import MetricChart

__all__ = [
    "OmegaPairBase",
    "omega_pair",
    "cylinder_rotation",
    "rotated_directions",
    "appendix_constraint",
    "AdmissibilityReport",
    "AdmissiblePair",
    "check_admissible",
    "build_pair",
    "phase_space_grid",
    "family",
]


@dataclass(frozen=True)
class OmegaPairBase:
    """Base data (x0, xi0, zeta1, zeta2) for the direction-pair construction.

    Requires |zeta_j|_g = 1 at x0 and zeta1 + zeta2 = t0 * xi0 with
    0 < t0 < 2.
    """

    chart: MetricChart
    x0: np.ndarray
    xi0: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray

    def __post_init__(self):
        G = self.chart.cometric(self.x0)
        for z in (self.zeta1, self.zeta2):
            if abs(z @ G @ z - 1.0) > 1e-10:
                raise ConstructionError("zeta_1, zeta_2 must be unit covectors at x0")
        if abs(self.xi0 @ G @ self.xi0 - 1.0) > 1e-10:
            raise ConstructionError("xi0 must be a unit covector at x0")
        c = float(self.zeta1 @ G @ self.xi0)
        if not 0.0 < c < 1.0:
            raise ConstructionError(f"zeta1 . xi0 = {c} must lie in (0, 1)")
        if np.abs(self.zeta1 + self.zeta2 - 2.0 * c * self.xi0).max() > 1e-10:
            raise ConstructionError("zeta1 + zeta2 must equal t0 * xi0")

    @property
    def c(self) -> float:
        G = self.chart.cometric(self.x0)
        return float(self.zeta1 @ G @ self.xi0)

    @property
    def t0(self) -> float:
        return 2.0 * self.c


def omega_pair(chart: MetricChart, base: OmegaPairBase, query: UnitCovector):
    """Direction pair (omega1, omega2) at the query point with sum t0 * xi.

    omega1 = (zeta(x) + alpha xi) / sqrt(1 + alpha^2 + 2 alpha u), where
    zeta(x) renormalizes zeta1 at x, u = G(x) zeta(x) . xi, and alpha is the
    quadratic root continuous with alpha = 0 at the base point (selected by
    the sign of the alpha-derivative there).  omega2 = t0 * xi - omega1.
    Both are unit covectors and the sum identity is exact by construction.
    """
    c = base.c
    x, xi = np.asarray(query.x, dtype=float), np.asarray(query.xi, dtype=float)
    G = chart.cometric(x)
    zeta_x = base.zeta1 / math.sqrt(float(base.zeta1 @ G @ base.zeta1))
    u = float(zeta_x @ G @ xi)
    if abs(u) >= 1.0 - 1e-12:
        raise ValidationError(
            "outside validity neighborhood: query direction parallel to zeta(x)"
        )
    disc = 1.0 - u * u
    # root of (1-c^2) a^2 + 2u(1-c^2) a + (u^2 - c^2) = 0 continuous with 0
    alpha = -u + c * math.sqrt(disc / (1.0 - c * c))
    omega1 = (zeta_x + alpha * xi) / math.sqrt(1.0 + alpha * alpha + 2.0 * alpha * u)
    omega2 = base.t0 * xi - omega1
    return omega1, omega2


def rotated_directions(xi0, alpha):
    """Appendix-style rotated unit directions e^{+i alpha} xi0, e^{-i alpha} xi0."""
    c, s = math.cos(alpha), math.sin(alpha)
    xi0 = np.asarray(xi0, dtype=float)
    xi1 = np.array([c * xi0[0] - s * xi0[1], s * xi0[0] + c * xi0[1]])
    xi2 = np.array([c * xi0[0] + s * xi0[1], -s * xi0[0] + c * xi0[1]])
    return xi1, xi2


def appendix_constraint(xi0, alpha, a):
    """Winding bound a |sin(2 alpha)| / |xi02^2 - sin^2 alpha| (must be < 2 pi)."""
    denom = abs(xi0[1] ** 2 - math.sin(alpha) ** 2)
    if denom == 0.0:
        return math.inf
    return a * abs(math.sin(2 * alpha)) / denom


def _rotation_valid(xi0, alpha, a, tangency=1e-3):
    xi1, xi2 = rotated_directions(xi0, alpha)
    if abs(xi1[1]) <= tangency or abs(xi2[1]) <= tangency:
        return False
    if not 0.0 < math.cos(alpha) < 1.0:
        return False
    return appendix_constraint(xi0, alpha, a) < 2 * math.pi


def cylinder_rotation(xi0, a, alpha0=0.5, beta0=0.1, tangency=1e-3):
    """Rotation angle for an admissible pair on the flat cylinder S^1 x [0, a].

    For |xi02| away from zero this is a decreasing search over small alpha;
    near-horizontal xi0 takes alpha = pi/2 - beta with beta small, which
    rotates both directions to near-vertical (a small alpha would satisfy
    the winding bound too, but leaves geodesics of length ~ a/|xi02|).
    Returns (alpha, t0) with t0 = 2 cos(alpha) in (0, 2).
    """
    xi0 = np.asarray(xi0, dtype=float)
    if abs(np.linalg.norm(xi0) - 1.0) > 1e-10:
        raise ValidationError("xi0 must be a unit vector")
    if a <= 0:
        raise ValidationError("a must be positive")
    if abs(xi0[1]) >= 0.5:
        alpha = alpha0
        for _ in range(60):
            if _rotation_valid(xi0, alpha, a, tangency):
                return alpha, 2.0 * math.cos(alpha)
            alpha *= 0.5
    beta = beta0
    for _ in range(60):
        alpha = math.pi / 2 - beta
        if _rotation_valid(xi0, alpha, a, tangency):
            return alpha, 2.0 * math.cos(alpha)
        beta *= 0.5
    raise ConstructionError("no valid rotation angle found")  # pragma: no cover


@dataclass
class AdmissibilityReport:
    base_coincidence_err: float
    sum_direction_err: float
    t0: float
    self_intersection_violations: list = field(default_factory=list)
    cross_intersection_violations: list = field(default_factory=list)
    passed: bool = False
    reason: str = ""


@dataclass
class AdmissiblePair:
    alpha: UnitCovector
    gamma1: GeodesicPath
    gamma2: GeodesicPath
    t0: float
    report: AdmissibilityReport


def check_admissible(
    chart: MetricChart,
    g1: GeodesicPath,
    g2: GeodesicPath,
    tol: float,
    alpha: UnitCovector | None = None,
) -> AdmissibilityReport:
    """Verify the admissibility conditions for a traced pair.

    Checks base coincidence, the covector-sum condition with recovered t0,
    absence of self-intersections through the base point, and that every
    crossing of the two paths is the base point.  Intersection coincidence
    uses max(tol, 5 * step), the sampling resolution floor.
    """
    if not (g1.nontangential and g2.nontangential):
        raise ValidationError(
            f"check_admissible needs nontangential paths "
            f"({g1.nontangential_reason or 'ok'} / {g2.nontangential_reason or 'ok'})"
        )
    x1, zeta1 = g1.state_at_zero()
    x2, zeta2 = g2.state_at_zero()
    base_err = float(np.linalg.norm(chart.delta(x1, x2)))

    G = chart.cometric(x1)
    ssum = zeta1 + zeta2
    t0 = math.sqrt(max(float(ssum @ G @ ssum), 0.0))
    if alpha is not None:
        dir_err = float(np.abs(ssum - t0 * np.asarray(alpha.xi)).max())
    else:
        dir_err = 0.0

    itol = max(tol, 5 * max(g1.step, g2.step))
    self_viol = []
    for label, g in (("gamma1", g1), ("gamma2", g2)):
        for (t, s, point) in g.self_intersections:
            if np.linalg.norm(chart.delta(point, x1)) <= itol:
                self_viol.append((label, t, s))
    cross_viol = []
    for (t, s, point) in cross_intersections(g1, g2, itol):
        if np.linalg.norm(chart.delta(point, x1)) > itol:
            cross_viol.append((t, s, chart.wrap(point)))

    reasons = []
    if base_err > tol:
        reasons.append(f"base mismatch {base_err:.2e}")
    if dir_err > tol:
        reasons.append(f"direction sum error {dir_err:.2e}")
    if not 0.0 < t0 < 2.0:
        reasons.append(f"t0 = {t0:.6f} outside (0, 2)")
    if self_viol:
        reasons.append("self-intersection at the base point")
    if cross_viol:
        reasons.append(f"{len(cross_viol)} extra crossing(s)")
    return AdmissibilityReport(
        base_coincidence_err=base_err,
        sum_direction_err=dir_err,
        t0=t0,
        self_intersection_violations=self_viol,
        cross_intersection_violations=cross_viol,
        passed=not reasons,
        reason="; ".join(reasons),
    )


def build_pair(
    chart: MetricChart,
    alpha: UnitCovector,
    zeta1,
    zeta2,
    step: float = 1e-2,
    tol: float = 1e-6,
) -> AdmissiblePair:
    """Trace both geodesics from alpha.x and verify the pair."""
    g1 = trace(chart, UnitCovector.make(chart, alpha.x, zeta1), step=step)
    g2 = trace(chart, UnitCovector.make(chart, alpha.x, zeta2), step=step)
    report = check_admissible(chart, g1, g2, tol, alpha=alpha)
    return AdmissiblePair(alpha=alpha, gamma1=g1, gamma2=g2, t0=report.t0, report=report)


def phase_space_grid(chart: MetricChart, alpha0: UnitCovector, radius: float, n: int):
    """Cube grid in (x1, x2, direction angle) of half-width ``radius``.

    Returns a list of UnitCovector queries including the center, in
    deterministic lexicographic order.
    """
    offs = np.linspace(-radius, radius, n)
    out = []
    ang0 = math.atan2(alpha0.xi[1], alpha0.xi[0])
    for d1 in offs:
        for d2 in offs:
            for da in offs:
                x = np.asarray(alpha0.x, dtype=float) + np.array([d1, d2])
                ang = ang0 + da
                xi = np.array([math.cos(ang), math.sin(ang)])
                out.append(UnitCovector.make(chart, x, xi))
    return out


@dataclass
class FamilyResult:
    pairs: list
    failures: list
    verified_radius: float


def family(
    chart: MetricChart,
    pair0: AdmissiblePair,
    grid,
    step: float = 1e-2,
    tol: float = 1e-6,
    parallel_map=map,
) -> FamilyResult:
    """Extend a verified pair over a phase-space grid via the omega-pair map.

    Every grid point gets its own direction pair from :func:`omega_pair`
    (anchored at the center pair's base data), its two traced geodesics, and
    a full admissibility check.  Only passing pairs are returned; the
    verified radius is the largest grid distance below every failure.
    """
    if not pair0.report.passed:
        report = check_admissible(chart, pair0.gamma1, pair0.gamma2, tol, alpha=pair0.alpha)
        if not report.passed:
            raise ValidationError(f"center pair fails re-verification: {report.reason}")
    x0 = np.asarray(pair0.alpha.x, dtype=float)
    _, z1 = pair0.gamma1.state_at_zero()
    _, z2 = pair0.gamma2.state_at_zero()
    base = OmegaPairBase(chart=chart, x0=x0, xi0=np.asarray(pair0.alpha.xi), zeta1=z1, zeta2=z2)

    def run(q):
        try:
            w1, w2 = omega_pair(chart, base, q)
            pair = build_pair(chart, q, w1, w2, step=step, tol=tol)
            return q, pair, None
        except (ValidationError, ConstructionError) as exc:
            return q, None, str(exc)

    def grid_dist(q):
        dx = np.linalg.norm(chart.delta(q.x, x0))
        da = abs(
            math.atan2(q.xi[1], q.xi[0]) - math.atan2(pair0.alpha.xi[1], pair0.alpha.xi[0])
        )
        return max(dx, da)

    pairs, failures = [], []
    for q, pair, err in parallel_map(run, list(grid)):
        if pair is not None and pair.report.passed:
            pairs.append(pair)
        else:
            failures.append((q, err or pair.report.reason))
    if failures:
        verified = min(grid_dist(q) for q, _ in failures)
    else:
        verified = max((grid_dist(q) for q, *_ in [(p.alpha,) for p in pairs]), default=0.0)
    return FamilyResult(pairs=pairs, failures=failures, verified_radius=verified)
