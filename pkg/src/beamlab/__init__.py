"""Gaussian beam quasimodes and FBI-transform singularity detection on
analytic surfaces: geodesic tracing, admissible pair construction, beam
phase/amplitude hierarchies, quasimode residual sweeps, and the
product-integral experiment on slab geometries."""

__version__ = "0.1.0"

from .admissibility import (
    AdmissiblePair,
    AdmissibilityReport,
    OmegaPairBase,
    check_admissible,
    cylinder_rotation,
    family,
    omega_pair,
)
from .beam_amplitude import AmplitudeJet, flat_amplitudes, symbol_constant, transport, truncation
from .beam_phase import exact_flat_phase, hessian_flow, phase_jet
from .errors import (
    BeamlabError,
    ChartDomainError,
    ConstructionError,
    NumericalError,
    ResolutionError,
    ValidationError,
)
from .fbi import FBIQuery, WavefrontReport, scan, transform
from .fermi import FermiFrame, build_frame, fermi_metric_jets, from_fermi, to_fermi
from .fitting import fit_decay_models
from .geodesic import GeodesicPath, UnitCovector, nontangential, self_intersections, trace, xray
from .manifold import MetricChart, SurfaceSpec, build_surface, christoffel, cometric_jet
from .quasimode import BeamParams, Quasimode, assemble, build_beam, l2_norm, residual_sweep

__all__ = [name for name in dir() if not name.startswith("_")]
