"""Command-line front end: config parsing, orchestration, CSV/JSON output.

Subcommands: trace, xray, admissible, beam, residual, fbi, calderon.  Config
files use flat sectioned key=value text (one level of [section] headers, as
parsed by configparser); unknown keys are rejected.  All floating-point
output carries 17 significant digits, files are written atomically, and a
fixed config plus seed reproduces outputs byte for byte.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .admissibility import build_pair, check_admissible, cylinder_rotation, family, omega_pair, phase_space_grid, rotated_directions
from .errors import BeamlabError, NumericalError, ResolutionError, ValidationError
from .fbi import FBIQuery, scan
from .geodesic import UnitCovector, trace, xray
from .manifold import SURFACE_NAMES, SurfaceSpec, build_surface
from .quasimode import BeamParams, assemble, build_beam, l2_norm, residual_sweep
from .util import atomic_write_text, fmt, parallel_map, write_csv

SURFACE_KEYS = {"name", "a", "caps", "profile", "amplitude", "bump", "jet_order", "margin"}
BEAM_KEYS = {"mode", "m0", "b", "k", "k_a", "n", "delta_prime", "lambda", "step", "n_max"}
GRIDS_KEYS = {"h", "alpha_radius", "alpha_n"}
EXPERIMENT_KEYS = {
    "field", "sigma1", "sigma", "q", "nu", "slab", "rotation_alpha", "point", "xi",
    "offsets", "c_min", "r2_min", "fbi_cutoff_radius", "box_radius", "samples",
}
OUTPUT_KEYS = {"csv", "json", "prefix"}


def _parse_floats(text):
    return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip() != ""]


def _surface_from_args(ns):
    params = {}
    if ns.a is not None:
        params["a"] = ns.a
    if ns.caps is not None:
        params["caps"] = ns.caps
    if ns.profile is not None:
        params["profile"] = ns.profile
    if ns.amplitude is not None:
        params["amplitude"] = ns.amplitude
    if ns.bump is not None:
        params["bump"] = ns.bump
    spec = SurfaceSpec(ns.surface, params)
    return build_surface(spec, jet_order=ns.jet_order, margin=ns.margin)


def _add_surface_args(p):
    p.add_argument("--surface", required=True, choices=SURFACE_NAMES)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--caps", type=float, default=None)
    p.add_argument("--profile", type=str, default=None)
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--bump", type=int, default=None)
    p.add_argument("--jet-order", dest="jet_order", type=int, default=8)
    p.add_argument("--margin", type=float, default=None)


def _add_start_args(p):
    p.add_argument("--point", required=True, help="x1,x2 chart coordinates")
    p.add_argument("--xi", required=True, help="covector components c1,c2 (normalized)")
    p.add_argument("--step", type=float, default=1e-2)


def _start_from_args(chart, ns):
    x = np.array(_parse_floats(ns.point))
    xi = np.array(_parse_floats(ns.xi))
    return UnitCovector.make(chart, x, xi)


def _path_rows(path):
    return [
        (t, x[0], x[1], xi[0], xi[1])
        for t, x, xi in zip(path.ts, path.xs, path.xis)
    ]


def _path_footer(path, extra=None):
    d = {
        "entry_time": path.t_entry,
        "exit_time": path.t_exit,
        "nontangential": bool(path.nontangential),
        "intersections": [[t, s, list(pt)] for t, s, pt in path.self_intersections],
        "status": path.status,
    }
    if extra:
        d.update(extra)
    return json.dumps(d)


def cmd_trace(ns):
    chart = _surface_from_args(ns)
    path = trace(chart, _start_from_args(chart, ns), step=ns.step)
    write_csv(ns.output, ["t", "x1", "x2", "xi1", "xi2"], _path_rows(path), _path_footer(path))
    print(f"trace: {len(path.ts)} samples, status={path.status}, "
          f"nontangential={path.nontangential} -> {ns.output}")
    return 0


def cmd_xray(ns):
    chart = _surface_from_args(ns)
    path = trace(chart, _start_from_args(chart, ns), step=ns.step)
    if ns.field == "one":
        f = lambda p: 1.0
    else:
        ks = _parse_floats(ns.field)
        a = chart.hi[1] - chart.lo[1]
        f = lambda p: sum(c * math.sin(2 * math.pi * (i + 1) * p[1] / a) for i, c in enumerate(ks))
    val, err = xray(chart, f, path, return_error=True)
    write_csv(
        ns.output, ["t", "x1", "x2", "xi1", "xi2"], _path_rows(path),
        _path_footer(path, {"xray": val, "error_estimate": err}),
    )
    print(f"xray: value={fmt(val)} (est err {fmt(err)}) -> {ns.output}")
    return 0


def cmd_admissible(ns):
    chart = _surface_from_args(ns)
    alpha = _start_from_args(chart, ns)
    a = chart.hi[1] - chart.lo[1]
    rot, t0 = cylinder_rotation(alpha.xi, a)
    z1, z2 = rotated_directions(alpha.xi, rot)
    pair = build_pair(chart, alpha, z1, z2, step=ns.step)
    grid = phase_space_grid(chart, alpha, radius=ns.grid_radius, n=ns.grid_n)
    res = family(chart, pair, grid, step=ns.step, parallel_map=parallel_map)
    reports = []
    for p in res.pairs:
        reports.append({
            "alpha_x": list(p.alpha.x), "alpha_xi": list(p.alpha.xi),
            "t0": p.t0, "passed": True,
            "base_coincidence_err": p.report.base_coincidence_err,
            "sum_direction_err": p.report.sum_direction_err,
        })
    for q, reason in res.failures:
        reports.append({
            "alpha_x": list(q.x), "alpha_xi": list(q.xi),
            "passed": False, "reason": reason,
        })
    out = {
        "rotation_alpha": rot, "t0": t0,
        "verified_radius": res.verified_radius,
        "n_pass": len(res.pairs), "n_fail": len(res.failures),
        "reports": reports,
    }
    atomic_write_text(ns.output, json.dumps(out, indent=1) + "\n")
    print(f"admissible: {len(res.pairs)}/{len(grid)} grid points pass -> {ns.output}")
    return 0


def _beam_params_from_args(ns):
    return BeamParams(
        mode=ns.mode, b=ns.b, K=ns.K, K_a=ns.K_a, N=ns.N,
        m0_transverse=complex(0.0, ns.m0_im),
        delta_prime=ns.delta_prime, lam=ns.lam, step=ns.step,
    )


def _add_beam_args(p):
    p.add_argument("--mode", choices=["jets", "exact_flat"], default="jets")
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--m0-im", dest="m0_im", type=float, default=1.0)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--K-a", dest="K_a", type=int, default=3)
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--delta-prime", dest="delta_prime", type=float, default=0.2)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)


def cmd_beam(ns):
    chart = _surface_from_args(ns)
    params = _beam_params_from_args(ns)
    beam = build_beam(chart, _start_from_args(chart, ns), params)
    base = ns.output
    wrote = []
    if ns.dump_phase:
        if beam.is_flat:
            ts = beam.frame.path.ts[:: max(1, len(beam.frame.path.ts) // 200)]
            m = beam.phase.M_transverse(ts)
        else:
            ts = beam.phase.ts[:: max(1, len(beam.phase.ts) // 200)]
            m = np.array([beam.phase.M_transverse(float(t)) for t in ts])
        payload = {
            "t": [float(t) for t in ts],
            "M_transverse_re": [float(v) for v in np.real(m)],
            "M_transverse_im": [float(v) for v in np.imag(m)],
        }
        if not beam.is_flat:
            payload["c_tables"] = {
                str(k): [fmt(complex(beam.phase.c(float(t), k))) for t in ts]
                for k in range(2, beam.phase.order + 1)
            }
        atomic_write_text(base + ".phase.json", json.dumps(payload) + "\n")
        wrote.append(base + ".phase.json")
    if ns.dump_amp:
        sups = beam.amp.sup_norms(params.delta_prime / 2.0)
        C = beam.symbol_constant()
        rows = [(k, s) for k, s in enumerate(sups)]
        write_csv(base + ".amp.csv", ["k", "sup_norm"], rows, json.dumps({"C": C}))
        wrote.append(base + ".amp.csv")
    print(f"beam: min Im M_perp = "
          f"{fmt(float(np.min(np.imag(beam.phase.M_transverse(beam.frame.path.ts)))))} "
          f"-> {', '.join(wrote) if wrote else '(no dumps requested)'}")
    return 0


def cmd_residual(ns):
    chart = _surface_from_args(ns)
    params = _beam_params_from_args(ns)
    h_grid = _parse_floats(ns.h)
    beam = build_beam(chart, _start_from_args(chart, ns), params)
    rep = residual_sweep(
        beam, chart, h_grid, mode=ns.res_mode, parallel_map=parallel_map,
    )
    rows = list(zip(rep.h_grid, rep.residual_norms, rep.v_norms, rep.N_used))
    fit = rep.fit
    selected = fit.selected
    if selected == "power":
        params, r2 = {"c0": fit.pow_c0, "p": fit.pow_p}, fit.pow_r2
    else:  # exponential, or tie reported with the exponential numbers
        params, r2 = {"c0": fit.exp_c0, "c1": fit.exp_c1}, fit.exp_r2
    summary = {"model": selected, "params": params, "r2": r2, "fits": fit.as_dict()}
    write_csv(ns.output, ["h", "residual", "v_norm", "N_used"], rows, json.dumps(summary))
    print(f"residual: {selected} fit, r2_exp={fit.exp_r2:.4f}, c1={fmt(fit.exp_c1)} -> {ns.output}")
    return 0


def _load_samples_csv(path):
    if not os.path.exists(path):
        raise ValidationError(f"input file {path} does not exist")
    data = np.genfromtxt(path, delimiter=",", names=True)
    cols = data.dtype.names
    if cols is None or len(cols) < 3:
        raise ValidationError("samples CSV needs header columns x1,x2,value")
    from scipy.interpolate import LinearNDInterpolator

    pts = np.column_stack([data[cols[0]], data[cols[1]]])
    vals = data[cols[-1]]
    interp = LinearNDInterpolator(pts, vals, fill_value=0.0)

    def u(X):
        return interp(np.atleast_2d(X))

    return u


def _builtin_2d_field(name):
    if name == "builtin:gaussian":
        return lambda X: np.exp(-np.sum(np.atleast_2d(X) ** 2, axis=1))
    if name == "builtin:halfplane":
        def u(X):
            X = np.atleast_2d(X)
            return (X[:, 1] > 0).astype(float) * np.exp(-np.sum(X**2, axis=1) / 16.0)
        return u
    raise ValidationError(f"unknown builtin field {name!r}")


def cmd_fbi(ns):
    if ns.input.startswith("builtin:"):
        u = _builtin_2d_field(ns.input)
    else:
        u = _load_samples_csv(ns.input)
    h_grid = _parse_floats(ns.h)
    centers = _parse_floats(ns.alpha_grid)
    if len(centers) % 2 != 0:
        raise ValidationError("--alpha-grid wants x1,x2 pairs")
    n_dir = ns.directions
    alphas = []
    for i in range(0, len(centers), 2):
        for k in range(n_dir):
            ang = 2 * math.pi * k / n_dir
            alphas.append((np.array(centers[i : i + 2]), np.array([math.cos(ang), math.sin(ang)])))
    rep = scan(
        u, alphas, h_grid,
        query_template=FBIQuery(np.zeros(2), np.array([1.0, 0.0]), cutoff_radius=ns.cutoff_radius),
        parallel_map=parallel_map,
    )
    rows = []
    for e in rep.entries:
        f = e.fit
        rows.append((
            e.alpha_x[0], e.alpha_x[1], e.alpha_xi[0], e.alpha_xi[1],
            f.exp_c1 if f else math.inf, f.pow_p if f else math.inf,
            f.exp_r2 if f else 1.0, f.pow_r2 if f else 1.0, e.classification,
        ))
    write_csv(
        ns.output,
        ["alpha_x1", "alpha_x2", "alpha_xi1", "alpha_xi2", "c1", "p", "r2_exp", "r2_pow", "class"],
        rows,
    )
    counts = {}
    for e in rep.entries:
        counts[e.classification] = counts.get(e.classification, 0) + 1
    print(f"fbi: {len(rep.entries)} points, {counts} -> {ns.output}")
    return 0


def _read_config(path):
    if not os.path.exists(path):
        raise ValidationError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read(path)
    known = {
        "surface": SURFACE_KEYS, "beam": BEAM_KEYS, "grids": GRIDS_KEYS,
        "experiment": EXPERIMENT_KEYS, "output": OUTPUT_KEYS, "run": {"seed"},
    }
    for section in cp.sections():
        if section not in known:
            raise ValidationError(f"unknown config section [{section}]")
        bad = sorted(set(cp[section]) - known[section])
        if bad:
            raise ValidationError(f"unknown keys in [{section}]: {', '.join(bad)}")
    return cp


def cmd_calderon(ns):
    from .calderon import ProductExperiment, make_test_field, microlocal_scan

    cp = _read_config(ns.config)
    surf = cp["surface"] if "surface" in cp else {}
    spec_params = {}
    for key in ("a", "caps", "amplitude"):
        if key in surf:
            spec_params[key] = float(surf[key])
    if "bump" in surf:
        spec_params["bump"] = int(surf["bump"])
    if "profile" in surf:
        spec_params["profile"] = surf["profile"]
    chart = build_surface(
        SurfaceSpec(surf.get("name", "flat_cylinder"), spec_params),
        jet_order=int(surf.get("jet_order", 6)),
        margin=float(surf["margin"]) if "margin" in surf else None,
    )
    beam = cp["beam"] if "beam" in cp else {}
    params = BeamParams(
        mode=beam.get("mode", "exact_flat"),
        b=float(beam.get("b", 1.6)),
        K=int(beam.get("k", 4)),
        K_a=int(beam.get("k_a", 3)),
        N=int(beam.get("n", 12)),
        m0_transverse=complex(beam.get("m0", "1j")),
        delta_prime=float(beam.get("delta_prime", 2.4)),
        lam=float(beam.get("lambda", 0.5)),
        step=float(beam.get("step", "2e-3")),
    )
    grids = cp["grids"] if "grids" in cp else {}
    h_grid = _parse_floats(grids.get("h", "0.25,0.16666666666666666,0.125,0.0833,0.0625,0.0416,0.03125"))
    if any(b >= a for a, b in zip(h_grid, h_grid[1:])) is False and len(h_grid) > 1:
        pass
    if not all(b < a for a, b in zip(h_grid, h_grid[1:])):
        raise ValidationError("h list must be strictly decreasing")
    exp_sec = cp["experiment"] if "experiment" in cp else {}
    fkind = exp_sec.get("field", "separable_gauss")
    fkw = {}
    for key in ("sigma1", "sigma"):
        if key in exp_sec:
            fkw[key] = float(exp_sec[key])
    if "q" in exp_sec:
        fkw["q"] = tuple(_parse_floats(exp_sec["q"]))
    if "nu" in exp_sec:
        fkw["nu"] = tuple(_parse_floats(exp_sec["nu"]))
    if fkind == "csv":
        raise ValidationError("csv field input for calderon is configured via [experiment] samples")
    f = make_test_field(fkind, **fkw)
    slab = tuple(_parse_floats(exp_sec.get("slab", "-3,3")))
    point = _parse_floats(exp_sec.get("point", "1.0,0.5"))
    xi = _parse_floats(exp_sec.get("xi", "0,1"))
    alpha0 = UnitCovector.make(chart, np.array(point), np.array(xi))
    offsets = [(0.0, 0.0, 0.0)]
    if "offsets" in exp_sec:
        vals = _parse_floats(exp_sec["offsets"])
        if len(vals) % 3 != 0:
            raise ValidationError("offsets must be triples d1,d2,dangle;...")
        offsets = [tuple(vals[i : i + 3]) for i in range(0, len(vals), 3)]
    exp = ProductExperiment(
        chart=chart, f=f, slab=slab, lam=params.lam, alpha0=alpha0,
        rotation_alpha=float(exp_sec.get("rotation_alpha", 1.05)),
        beam_params=params, h_grid=np.array(h_grid), scan_offsets=offsets,
    )
    rep = microlocal_scan(
        exp,
        c_min=float(exp_sec["c_min"]) if "c_min" in exp_sec else None,
        r2_min=float(exp_sec.get("r2_min", 0.9)),
        fbi_cutoff_radius=float(exp_sec.get("fbi_cutoff_radius", 0.5)),
        parallel_map=parallel_map,
    )
    out_sec = cp["output"] if "output" in cp else {}
    csv_path = out_sec.get("csv", ns.output or "calderon.csv")
    json_path = out_sec.get("json", os.path.splitext(csv_path)[0] + ".json")
    rows = []
    for e in rep.entries:
        f_ = e.fit
        rows.append((
            e.alpha.x[0], e.alpha.x[1], e.alpha.xi[0], e.alpha.xi[1],
            f_.exp_c1 if f_ else math.inf, f_.pow_p if f_ else math.inf,
            f_.exp_r2 if f_ else 1.0, f_.pow_r2 if f_ else 1.0,
            e.classification, e.direct_classification or "",
            "" if e.agree is None else str(bool(e.agree)).lower(),
        ))
    write_csv(
        csv_path,
        ["alpha_x1", "alpha_x2", "alpha_xi1", "alpha_xi2",
         "c1", "p", "r2_exp", "r2_pow", "class", "direct_class", "agree"],
        rows,
    )
    summary = {
        "h": list(map(float, rep.h_grid)),
        "c_min": rep.c_min,
        "classifications": rep.classifications(),
        "agreement_fraction": rep.agreement_fraction(),
        "phase_checks_passed": all(e.phase_check.passed for e in rep.entries),
    }
    atomic_write_text(json_path, json.dumps(summary, indent=1) + "\n")
    print(f"calderon: {summary['classifications']}, agreement="
          f"{summary['agreement_fraction']} -> {csv_path}, {json_path}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="beamlab", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="trace a geodesic")
    _add_surface_args(p)
    _add_start_args(p)
    p.add_argument("--output", default="trace.csv")
    p.set_defaults(fn=cmd_trace)

    p = sub.add_parser("xray", help="integrate a field along a geodesic")
    _add_surface_args(p)
    _add_start_args(p)
    p.add_argument("--field", default="one",
                   help='"one" or sine coefficients c1,c2,... of sin(2 pi k x2 / a)')
    p.add_argument("--output", default="xray.csv")
    p.set_defaults(fn=cmd_xray)

    p = sub.add_parser("admissible", help="build and verify an admissible pair family")
    _add_surface_args(p)
    _add_start_args(p)
    p.add_argument("--grid-radius", dest="grid_radius", type=float, default=0.05)
    p.add_argument("--grid-n", dest="grid_n", type=int, default=3)
    p.add_argument("--output", default="admissible.json")
    p.set_defaults(fn=cmd_admissible)

    p = sub.add_parser("beam", help="build a beam and dump phase/amplitude data")
    _add_surface_args(p)
    _add_start_args(p)
    _add_beam_args(p)
    p.add_argument("--dump-phase", action="store_true")
    p.add_argument("--dump-amp", action="store_true")
    p.add_argument("--output", default="beam")
    p.set_defaults(fn=cmd_beam)

    p = sub.add_parser("residual", help="residual sweep across h")
    _add_surface_args(p)
    _add_start_args(p)
    _add_beam_args(p)
    p.add_argument("--h", required=True, help="descending list h1,h2,...")
    p.add_argument("--res-mode", dest="res_mode",
                   choices=["exact_flat", "scaled_NK", "fixed_N_K"], default="exact_flat")
    p.add_argument("--output", default="residual.csv")
    p.set_defaults(fn=cmd_residual)

    p = sub.add_parser("fbi", help="FBI scan of a sampled or builtin field")
    p.add_argument("--input", required=True, help="samples.csv or builtin:gaussian / builtin:halfplane")
    p.add_argument("--alpha-grid", dest="alpha_grid", required=True,
                   help="centers x1,x2;x1,x2;...")
    p.add_argument("--h", required=True)
    p.add_argument("--directions", type=int, default=8)
    p.add_argument("--cutoff-radius", dest="cutoff_radius", type=float, default=0.5)
    p.add_argument("--output", default="fbi.csv")
    p.set_defaults(fn=cmd_fbi)

    p = sub.add_parser("calderon", help="run the product-integral experiment from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_calderon)
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
        return ns.fn(ns)
    except (ValidationError, ResolutionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, BeamlabError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
