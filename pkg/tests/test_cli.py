"""End-to-end command-line behaviour: files, determinism, exit codes."""

import json
import math

import numpy as np
import pytest

from fluorcorr.cli import _assign_roles, main
from fluorcorr.config import preset_config
from fluorcorr.curves import read_curve, sidecar_path
from fluorcorr.errors import CalibrationError


def _fast_twolevel(**tweaks):
    """Preset scaled down to a fraction of a second of CLI runtime."""
    raw = preset_config("twolevel")
    raw["simulation"]["duration_s"] = 0.002
    raw["simulation"]["n_segments"] = 2
    raw["analysis"]["bin_width_s"] = 2e-9
    raw["analysis"]["tau_max_s"] = 2e-7
    raw["analysis"]["tail_window_s"] = [1.5e-7, 2e-7]
    for dotted, value in tweaks.items():
        section, key = dotted.split(".")
        raw[section][key] = value
    return raw


def _write(tmp_path, raw, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


# ---------------------------------------------------------------------------
# theory
# ---------------------------------------------------------------------------

def test_theory_writes_curves(tmp_path):
    cfg = _write(tmp_path, _fast_twolevel())
    out = tmp_path / "theory"
    assert main(["theory", "--config", cfg, "--out", str(out)]) == 0
    names = {p.name for p in out.glob("*.csv")}
    assert names == {
        "g2.csv",
        "g15_phi000.csv", "g15_phi090.csv", "g15_phi180.csv",
        "gtotal_phi000.csv", "gtotal_phi090.csv", "gtotal_phi180.csv",
    }
    g2 = read_curve(out / "g2.csv")
    assert g2.kind == "g2"
    assert 0.0 < g2.values[0] < 0.1               # first bin centre, not 0
    assert g2.values[-1] == pytest.approx(1.0, abs=1e-6)
    gt = read_curve(out / "gtotal_phi090.csv")
    assert gt.kind == "gtotal"
    assert gt.meta["norm"] > 0
    assert gt.phi == pytest.approx(math.pi / 2)
    assert sidecar_path(out / "g2.csv").exists()


def test_theory_with_preset_name(tmp_path):
    out = tmp_path / "th"
    assert main(["theory", "--preset", "twolevel", "--out", str(out)]) == 0
    assert (out / "g2.csv").exists()


# ---------------------------------------------------------------------------
# simulate / correlate
# ---------------------------------------------------------------------------

def test_simulate_is_deterministic_and_correlatable(tmp_path):
    cfg = _write(tmp_path, _fast_twolevel())
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    for name in ("start_phi000", "stop_phi000", "start_phi090", "stop_phi090",
                 "start_phi180", "stop_phi180"):
        fa, fb = a / f"{name}.dctag", b / f"{name}.dctag"
        assert fa.read_bytes() == fb.read_bytes()

    c = tmp_path / "c"
    assert main(["simulate", "--config", cfg, "--out", str(c), "--seed", "99"]) == 0
    assert (a / "start_phi000.dctag").read_bytes() != (c / "start_phi000.dctag").read_bytes()

    hists = tmp_path / "hists"
    assert main(["correlate", "--config", cfg, "--tags", str(a),
                 "--out", str(hists)]) == 0
    files = sorted(p.name for p in hists.glob("hist_phi*.csv"))
    assert files == ["hist_phi000.csv", "hist_phi090.csv", "hist_phi180.csv"]


def test_correlate_missing_tags_exits_2(tmp_path):
    cfg = _write(tmp_path, _fast_twolevel())
    assert main(["correlate", "--config", cfg, "--tags", str(tmp_path / "void"),
                 "--out", str(tmp_path / "h")]) == 2


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def test_analyze_needs_exactly_one_source(tmp_path):
    cfg = _write(tmp_path, _fast_twolevel())
    with pytest.raises(SystemExit):
        main(["analyze", "--config", cfg, "--out", str(tmp_path / "x")])
    with pytest.raises(SystemExit):
        main(["analyze", "--config", cfg, "--out", str(tmp_path / "x"),
              "--tags", "t", "--from-theory", "th"])


def test_analyze_from_theory_is_an_identity(tmp_path):
    """Feeding the emitted theory curves back through calibration and
    extraction must return the theory field correlations."""
    # longer window than the fast config so the tail is fully relaxed
    cfg = _write(tmp_path, _fast_twolevel(**{
        "analysis.tau_max_s": 4e-7,
        "analysis.tail_window_s": [3e-7, 4e-7],
    }))
    th, an = tmp_path / "th", tmp_path / "an"
    assert main(["theory", "--config", cfg, "--out", str(th)]) == 0
    assert main(["analyze", "--config", cfg, "--from-theory", str(th),
                 "--out", str(an)]) == 0

    report = json.loads((an / "calibration.json").read_text())
    assert report["roles"] == {"inphase": "000", "quadrature": "090",
                               "antiphase": "180"}
    for label, run in report["runs"].items():
        assert not run["corrected"]

    got_in = read_curve(an / "g15_inphase.csv")
    want_in = read_curve(th / "g15_phi000.csv")
    np.testing.assert_allclose(got_in.values, want_in.values, atol=1e-8)
    got_q = read_curve(an / "g15_quadrature.csv")
    want_q = read_curve(th / "g15_phi090.csv")
    np.testing.assert_allclose(got_q.values, want_q.values, atol=1e-8)
    tail = got_q.tau >= 3e-7
    assert np.abs(got_q.values[tail]).max() < 1e-8
    assert np.abs(got_in.values[tail] - 1.0).max() < 1e-8


def test_analyze_flat_interference_exits_4(tmp_path):
    """Without an LO all phases coincide, so calibration must refuse."""
    cfg = _write(tmp_path, _fast_twolevel(**{"detection.lo_amplitude_sqrt_cps": 0.0}))
    th = tmp_path / "th"
    assert main(["theory", "--config", cfg, "--out", str(th)]) == 0
    assert main(["analyze", "--config", cfg, "--from-theory", str(th),
                 "--out", str(tmp_path / "an")]) == 4


def test_assign_roles_rejects_far_and_colliding_phases():
    with pytest.raises(CalibrationError):
        _assign_roles({"a": 0.0, "b": 0.9, "c": math.pi})   # 0.9 too far from pi/2
    with pytest.raises(CalibrationError):
        _assign_roles({"a": 0.0, "b": math.pi})             # roles collide


# ---------------------------------------------------------------------------
# exit codes from configuration and physics
# ---------------------------------------------------------------------------

def test_invalid_config_exits_2(tmp_path):
    cfg = _write(tmp_path, _fast_twolevel(**{"simulation.duration_s": -1.0}))
    assert main(["theory", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_unparseable_json_exits_2(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["theory", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_unknown_preset_exits_2(tmp_path):
    assert main(["theory", "--preset", "nope", "--out", str(tmp_path / "o")]) == 2


def test_degenerate_atom_exits_3(tmp_path):
    raw = preset_config("fig2")
    raw["atom"]["rabi_red_hz"] = 0.0          # unpumped D manifold traps population
    cfg = _write(tmp_path, raw)
    assert main(["theory", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def test_pipeline_end_to_end(tmp_path):
    cfg = _write(tmp_path, _fast_twolevel(**{"simulation.duration_s": 0.004}))
    out = tmp_path / "run"
    assert main(["pipeline", "--config", cfg, "--out", str(out)]) == 0

    assert (out / "tags" / "start_phi000.dctag").exists()
    assert (out / "hist_phi000.csv").exists()
    assert (out / "theory" / "gtotal_phi000.csv").exists()
    assert (out / "g15_inphase.csv").exists()
    assert (out / "g15_quadrature.csv").exists()

    report = json.loads((out / "calibration.json").read_text())
    assert report["visibility"] == pytest.approx(0.182, abs=0.03)

    # chi2 includes the run-to-run normalisation scale draw, so the band is
    # wider than pure per-bin Poisson statistics would suggest
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["chi2_per_bin"]) == {"000", "090", "180"}
    for label, chi2 in summary["chi2_per_bin"].items():
        assert 0.5 < chi2 < 2.0, f"phase {label}: chi2/bin {chi2}"

    # the measured quadrature curve relaxes to zero asymptote
    quad = read_curve(out / "g15_quadrature.csv")
    tail = quad.tau >= 1.5e-7
    resid = quad.values[tail].mean()
    err = math.sqrt(float(np.sum(quad.stderr[tail] ** 2))) / tail.sum()
    assert abs(resid) < 4 * err


def test_pipeline_is_deterministic(tmp_path):
    cfg = _write(tmp_path, _fast_twolevel())
    a, b = tmp_path / "p1", tmp_path / "p2"
    assert main(["pipeline", "--config", cfg, "--out", str(a)]) == 0
    assert main(["pipeline", "--config", cfg, "--out", str(b)]) == 0
    for rel in ("g15_inphase.csv", "g15_quadrature.csv", "calibration.json",
                "summary.json", "hist_phi090.csv"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
