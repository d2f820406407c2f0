import json
import os

import numpy as np
import pytest

from beamlab.cli import run


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def csv_body_and_footer(path):
    text = read(path).decode()
    lines = [ln for ln in text.split("\r\n") if ln]
    footer = None
    if lines[-1].startswith("# "):
        footer = json.loads(lines[-1][2:])
        lines = lines[:-1]
    return lines, footer


def test_trace_csv_and_footer(tmp_path):
    out = str(tmp_path / "trace.csv")
    code = run([
        "trace", "--surface", "flat_cylinder", "--a", "1.0",
        "--point", "0.3,0.5", "--xi", "0.62,0.78", "--output", out,
    ])
    assert code == 0
    lines, footer = csv_body_and_footer(out)
    assert lines[0] == "t,x1,x2,xi1,xi2"
    assert len(lines) > 50
    assert footer["nontangential"] is True
    assert footer["entry_time"] < 0 < footer["exit_time"]
    assert footer["intersections"] == []


def test_xray_kernel_value(tmp_path):
    out = str(tmp_path / "xray.csv")
    code = run([
        "xray", "--surface", "flat_cylinder", "--a", "1.0",
        "--point", "0.3,0.5", "--xi", "0.62,0.78", "--step", "2e-3",
        "--field", "0.0,1.0", "--output", out,
    ])
    assert code == 0
    _, footer = csv_body_and_footer(out)
    assert abs(footer["xray"]) < 1e-8


def test_admissible_json(tmp_path):
    out = str(tmp_path / "adm.json")
    code = run([
        "admissible", "--surface", "flat_cylinder", "--a", "1.0",
        "--point", "1.0,0.5", "--xi", "0.0,1.0",
        "--grid-radius", "0.04", "--grid-n", "2", "--output", out,
    ])
    assert code == 0
    data = json.loads(read(out))
    assert data["n_pass"] == 8 and data["n_fail"] == 0
    assert 0 < data["t0"] < 2


def test_beam_dumps(tmp_path):
    base = str(tmp_path / "beam")
    code = run([
        "beam", "--surface", "flat_cylinder", "--a", "1.0",
        "--point", "1.0,0.5", "--xi", "0.5,0.87", "--step", "5e-3",
        "--mode", "exact_flat", "--b", "1.5", "--delta-prime", "1.4",
        "--N", "6", "--dump-phase", "--dump-amp", "--output", base,
    ])
    assert code == 0
    phase = json.loads(read(base + ".phase.json"))
    assert min(phase["M_transverse_im"]) > 0
    lines, footer = csv_body_and_footer(base + ".amp.csv")
    assert lines[0] == "k,sup_norm"
    assert len(lines) == 8
    assert footer["C"] > 0


def test_residual_subcommand_and_determinism(tmp_path):
    args = [
        "residual", "--surface", "flat_cylinder", "--a", "1.0",
        "--point", "1.0,0.5", "--xi", "0.5,0.866025403784438646", "--step", "5e-3",
        "--mode", "exact_flat", "--b", "2.2", "--delta-prime", "3.0", "--N", "24",
        "--h", "0.2,0.125,0.08,0.05,0.025",
    ]
    out1 = str(tmp_path / "res1.csv")
    out2 = str(tmp_path / "res2.csv")
    assert run(args + ["--output", out1]) == 0
    assert run(args + ["--output", out2]) == 0
    assert read(out1) == read(out2)  # byte-identical reruns
    lines, footer = csv_body_and_footer(out1)
    assert lines[0] == "h,residual,v_norm,N_used"
    assert footer["model"] in ("exponential", "tie")  # short smoke grid
    assert footer["params"]["c1"] > 0
    assert set(footer["fits"]) == {"exponential", "power", "selected"}


def test_fbi_subcommand(tmp_path):
    out = str(tmp_path / "fbi.csv")
    code = run([
        "fbi", "--input", "builtin:gaussian", "--alpha-grid", "0,0",
        "--h", "0.5,0.35,0.25,0.18,0.125,0.09,0.0625",
        "--directions", "4", "--cutoff-radius", "2.0", "--output", out,
    ])
    assert code == 0
    lines, _ = csv_body_and_footer(out)
    assert lines[0].startswith("alpha_x1,alpha_x2")
    assert len(lines) == 5
    assert all(ln.endswith("analytic_decay") for ln in lines[1:])


def test_fbi_samples_csv_input(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-2.5, 2.5, size=(4000, 2))
    vals = np.exp(-np.sum(pts**2, axis=1))
    samples = str(tmp_path / "samples.csv")
    with open(samples, "w") as fh:
        fh.write("x1,x2,value\n")
        for p, v in zip(pts, vals):
            fh.write(f"{p[0]},{p[1]},{v}\n")
    out = str(tmp_path / "fbi2.csv")
    code = run([
        "fbi", "--input", samples, "--alpha-grid", "0,0",
        "--h", "0.5,0.35,0.25,0.18,0.125,0.0625",
        "--directions", "2", "--cutoff-radius", "1.5", "--output", out,
    ])
    assert code == 0
    lines, _ = csv_body_and_footer(out)
    assert len(lines) == 3


def test_validation_errors_exit_code(tmp_path):
    code = run([
        "residual", "--surface", "flat_cylinder",
        "--point", "1.0,0.5", "--xi", "0.5,0.87",
        "--mode", "exact_flat", "--delta-prime", "-0.5",
        "--h", "0.125,0.0625",
        "--output", str(tmp_path / "x.csv"),
    ])
    assert code == 1
    code = run(["fbi", "--input", str(tmp_path / "missing.csv"),
                "--alpha-grid", "0,0", "--h", "0.5,0.25,0.125,0.0625",
                "--output", str(tmp_path / "y.csv")])
    assert code == 1


def test_calderon_config_validation(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("[surface]\nname = flat_cylinder\nbogus_key = 1\n")
    code = run(["calderon", "--config", str(cfg)])
    assert code == 1
    cfg.write_text("[grids]\nh = 0.1,0.2\n")
    code = run(["calderon", "--config", str(cfg)])
    assert code == 1  # h not decreasing


def test_calderon_config_end_to_end(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        "\n".join([
            "[surface]", "name = flat_cylinder", "a = 1.0", "margin = 0.3",
            "jet_order = 6",
            "[beam]", "mode = exact_flat", "b = 1.6", "delta_prime = 2.4",
            "n = 12", "lambda = 0.5", "step = 5e-3",
            "[grids]", "h = 0.25,0.166666666666666,0.125,0.08333333333333,0.0625,0.03125",
            "[experiment]", "field = separable_gauss", "sigma = 0.45",
            "q = 1.0,0.5", "point = 1.0,0.5", "xi = 0,1",
            "rotation_alpha = 1.05", "c_min = 0.2",
            "offsets = 0,0,0",
            "[output]",
            f"csv = {tmp_path / 'cal.csv'}",
            f"json = {tmp_path / 'cal.json'}",
        ])
    )
    code = run(["calderon", "--config", str(cfg)])
    assert code == 0
    summary = json.loads(read(str(tmp_path / "cal.json")))
    assert summary["classifications"] == ["analytic_decay"]
    assert summary["phase_checks_passed"] is True
    lines, _ = csv_body_and_footer(str(tmp_path / "cal.csv"))
    assert lines[0].startswith("alpha_x1")
