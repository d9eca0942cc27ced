"""Pair counting, merging, normalisation and phase calibration."""

import math

import numpy as np
import pytest

import fluorcorr.correlator as correlator
from fluorcorr.correlator import (
    Histogram,
    calibrate_phases,
    cross_correlate,
    estimate_visibility,
    merge_histograms,
    normalize,
    read_histogram,
    write_histogram,
)
from fluorcorr.curves import sidecar_path
from fluorcorr.errors import CalibrationError, StatisticsError
from fluorcorr.trajectory import ClickStream

from oracles import brute_force_counts

Q_PS = 100
Q_S = Q_PS * 1e-12


def _stream(channel, tags, duration):
    return ClickStream(channel=channel, tags=np.sort(np.asarray(tags, np.int64)),
                       duration=int(duration), quantization_ps=Q_PS, seed=0)


def _random_pair(rng, duration=2000):
    n_a = int(rng.integers(0, 40))
    n_b = int(rng.integers(0, 60))
    a = rng.integers(0, duration, size=n_a)
    b = rng.integers(0, duration, size=n_b)
    if n_a and n_b and rng.random() < 0.5:
        # force exact coincidences and duplicate tags
        k = int(rng.integers(1, min(n_a, n_b) + 1))
        b[:k] = a[:k]
        a = np.concatenate([a, a[:1]])
    return _stream("start", a, duration), _stream("stop", b, duration)


# ---------------------------------------------------------------------------
# exact pair counting
# ---------------------------------------------------------------------------

def test_cross_correlate_matches_brute_force():
    rng = np.random.default_rng(2024)
    for case in range(150):
        start, stop = _random_pair(rng)
        bin_q = int(rng.integers(1, 8))
        n_bins = int(rng.integers(2, 30))
        hist = cross_correlate(start, stop, bin_q * Q_S, bin_q * n_bins * Q_S)
        want = brute_force_counts(start.tags, stop.tags, bin_q, n_bins)
        np.testing.assert_array_equal(hist.counts, want, err_msg=f"case {case}")
        assert hist.n_starts == start.tags.size
        assert hist.stop_count == stop.tags.size


def test_cross_correlate_hand_case():
    """One start, stops at 0, +1, +2 quanta: every delay in its own bin,
    the exact coincidence counted at zero delay."""
    start = _stream("start", [10], 100)
    stop = _stream("stop", [10, 11, 12, 50], 100)
    hist = cross_correlate(start, stop, Q_S, 3 * Q_S)
    np.testing.assert_array_equal(hist.counts, [1, 1, 1])
    assert hist.meta["total_pairs"] == 3


def test_cross_correlate_chunking_invariance(monkeypatch):
    rng = np.random.default_rng(8)
    start = _stream("start", rng.integers(0, 5000, 300), 5000)
    stop = _stream("stop", rng.integers(0, 5000, 800), 5000)
    whole = cross_correlate(start, stop, 2 * Q_S, 40 * Q_S)
    monkeypatch.setattr(correlator, "_CHUNK_PAIRS", 7)
    chunked = cross_correlate(start, stop, 2 * Q_S, 40 * Q_S)
    np.testing.assert_array_equal(whole.counts, chunked.counts)


def test_cross_correlate_validation():
    start = _stream("start", [0, 10], 100)
    stop = _stream("stop", [5], 100)
    with pytest.raises(ValueError):
        cross_correlate(start, stop, 1.5 * Q_S, 15 * Q_S)   # bin not on grid
    with pytest.raises(ValueError):
        cross_correlate(start, stop, 2 * Q_S, 5 * Q_S)      # window not on bins
    other = ClickStream(channel="stop", tags=np.array([5], np.int64),
                        duration=100, quantization_ps=200, seed=0)
    with pytest.raises(ValueError):
        cross_correlate(start, other, Q_S, 10 * Q_S)        # quantisation clash
    shorter = _stream("stop", [5], 50)
    with pytest.raises(ValueError):
        cross_correlate(start, shorter, Q_S, 10 * Q_S)      # duration clash


# ---------------------------------------------------------------------------
# merging
# ---------------------------------------------------------------------------

def test_merged_start_partitions_equal_whole_stream():
    """Partitioning the start tags and correlating each part against the
    full stop stream must reproduce the whole-stream histogram exactly."""
    rng = np.random.default_rng(5)
    duration = 10_000
    start_tags = np.sort(rng.integers(0, duration, 500))
    stop = _stream("stop", rng.integers(0, duration, 1500), duration)
    whole = cross_correlate(_stream("start", start_tags, duration), stop,
                            2 * Q_S, 60 * Q_S)
    bounds = [0, 150, 380, 500]
    parts = [
        cross_correlate(
            _stream("start", start_tags[lo:hi], duration), stop, 2 * Q_S, 60 * Q_S)
        for lo, hi in zip(bounds[:-1], bounds[1:])
    ]
    merged = merge_histograms(parts, same_acquisition=True)
    np.testing.assert_array_equal(merged.counts, whole.counts)
    assert merged.n_starts == whole.n_starts
    assert merged.stop_count == whole.stop_count
    assert merged.duration == whole.duration


def test_merge_independent_runs_sums_exposure():
    rng = np.random.default_rng(6)
    mk = lambda seed: cross_correlate(
        _stream("start", rng.integers(0, 1000, 50), 1000),
        _stream("stop", rng.integers(0, 1000, 80), 1000),
        Q_S, 20 * Q_S)
    a, b = mk(1), mk(2)
    merged = merge_histograms([a, b])
    np.testing.assert_array_equal(merged.counts, a.counts + b.counts)
    assert merged.duration == pytest.approx(a.duration + b.duration)
    assert merged.stop_count == a.stop_count + b.stop_count
    assert merged.n_starts == a.n_starts + b.n_starts


def test_merge_rejects_incompatible_grids():
    start = _stream("start", [0], 100)
    stop = _stream("stop", [5], 100)
    a = cross_correlate(start, stop, Q_S, 10 * Q_S)
    b = cross_correlate(start, stop, 2 * Q_S, 20 * Q_S)
    with pytest.raises(ValueError):
        merge_histograms([a, b])
    with pytest.raises(ValueError):
        merge_histograms([])


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def _flat_histogram(level, n_bins=40, n_starts=1000):
    counts = np.full(n_bins, level, dtype=np.int64)
    return Histogram(counts=counts, bin_width=Q_S, tau_max=n_bins * Q_S,
                     n_starts=n_starts, stop_count=12345,
                     duration=1.0, quantization_ps=Q_PS)


def test_normalize_self_uses_tail_mean():
    hist = _flat_histogram(400)
    hist.counts[:10] = 0                     # suppressed early bins
    curve = normalize(hist, kind="g2")
    np.testing.assert_allclose(curve.values[-10:], 1.0, atol=0)
    np.testing.assert_allclose(curve.values[:10], 0.0, atol=0)
    np.testing.assert_allclose(curve.stderr[-1], math.sqrt(400) / 400, atol=1e-12)


def test_normalize_transfer_scales_per_start():
    hist = _flat_histogram(400, n_starts=1000)
    curve = normalize(hist, normalizer_per_start=0.5)
    np.testing.assert_allclose(curve.values, 400 / (0.5 * 1000), atol=0)
    assert curve.meta["normalizer_per_start"] == pytest.approx(0.5)


def test_normalize_explicit_tail_window():
    hist = _flat_histogram(100, n_bins=10)
    hist.counts[:] = np.arange(10) * 100
    curve = normalize(hist, tail_window=(5 * Q_S, 8 * Q_S))
    # bins 5, 6, 7 -> mean 600
    np.testing.assert_allclose(curve.values, hist.counts / 600.0, atol=0)


def test_normalize_failure_modes():
    hist = _flat_histogram(0)
    with pytest.raises(StatisticsError):
        normalize(hist)
    with pytest.raises(StatisticsError):
        normalize(_flat_histogram(5), normalizer_per_start=0.0)
    with pytest.raises(StatisticsError):
        normalize(_flat_histogram(5), tail_window=(0.0, 0.5 * Q_S))


# ---------------------------------------------------------------------------
# phase calibration
# ---------------------------------------------------------------------------

def _poisson_phase_histograms(vis, rng, per_bin=40_000, phases=(0.0, math.pi / 2, math.pi)):
    w = vis / (1.0 - vis)
    out = {}
    for k, phi in enumerate(phases):
        lam = per_bin * (1.0 + w * math.cos(phi))
        counts = rng.poisson(lam, size=64)
        out[f"p{k}"] = Histogram(
            counts=counts, bin_width=Q_S, tau_max=64 * Q_S, n_starts=10_000,
            stop_count=0, duration=1.0, quantization_ps=Q_PS)
    return out


def test_calibrate_phases_recovers_geometry():
    rng = np.random.default_rng(42)
    vis = 0.18
    hists = _poisson_phase_histograms(vis, rng)
    cal = calibrate_phases(hists)
    assert cal.phases["p0"] == pytest.approx(0.0, abs=1e-12)
    assert cal.phases["p2"] == pytest.approx(math.pi, abs=1e-12)
    assert cal.phases["p1"] == pytest.approx(math.pi / 2, abs=0.03)
    assert cal.visibility == pytest.approx(vis, abs=0.01)
    mid = 0.5 * (cal.asymptotes["p0"] + cal.asymptotes["p2"])
    assert cal.normalizer_per_start == pytest.approx(mid, rel=1e-12)


def test_calibrate_phases_handles_swapped_input_order():
    """Labels are nominal; calibration must key off the data, not the order."""
    rng = np.random.default_rng(43)
    hists = _poisson_phase_histograms(0.2, rng, phases=(math.pi, 0.0, math.pi / 2))
    cal = calibrate_phases(hists)
    assert cal.phases["p0"] == pytest.approx(math.pi, abs=1e-12)
    assert cal.phases["p1"] == pytest.approx(0.0, abs=1e-12)
    assert cal.phases["p2"] == pytest.approx(math.pi / 2, abs=0.03)


def test_calibrate_phases_rejects_flat_set():
    rng = np.random.default_rng(44)
    a = Histogram(counts=rng.poisson(100, 16), bin_width=Q_S, tau_max=16 * Q_S,
                  n_starts=100, stop_count=0, duration=1.0, quantization_ps=Q_PS)
    b = Histogram(counts=rng.poisson(100, 16), bin_width=Q_S, tau_max=16 * Q_S,
                  n_starts=100, stop_count=0, duration=1.0, quantization_ps=Q_PS)
    with pytest.raises(CalibrationError):
        calibrate_phases({"a": a, "b": b})
    with pytest.raises(CalibrationError):
        calibrate_phases({"a": a})


def test_estimate_visibility_round_trip_and_guards():
    for v in (0.05, 0.18, 0.45):
        w = v / (1.0 - v)
        assert estimate_visibility(1.0 + w, 1.0 - w) == pytest.approx(v, rel=1e-12)
    with pytest.raises(StatisticsError):
        estimate_visibility(0.9, 1.1)
    with pytest.raises(StatisticsError):
        estimate_visibility(1.0, -0.1)


# ---------------------------------------------------------------------------
# statistical flatness of uncorrelated streams
# ---------------------------------------------------------------------------

def test_uncorrelated_poisson_streams_give_flat_unit_curve():
    rng = np.random.default_rng(20260826)
    duration = 5_000_000                     # 500 us of 100 ps quanta
    n_start = rng.poisson(30_000)
    n_stop = rng.poisson(60_000)
    start = _stream("start", rng.integers(0, duration, n_start), duration)
    stop = _stream("stop", rng.integers(0, duration, n_stop), duration)
    hist = cross_correlate(start, stop, 10 * Q_S, 1000 * Q_S)
    curve = normalize(hist, kind="gtotal")
    z = (curve.values - 1.0) / curve.stderr
    assert abs(z).max() < 4.5
    chi2_per_bin = float(np.mean(z ** 2))
    assert 0.8 < chi2_per_bin < 1.2
    assert float(np.mean(curve.values)) == pytest.approx(1.0, abs=0.01)


# ---------------------------------------------------------------------------
# container and file round trips
# ---------------------------------------------------------------------------

def test_histogram_validation():
    with pytest.raises(ValueError):
        Histogram(counts=np.array([-1, 2]), bin_width=Q_S, tau_max=2 * Q_S,
                  n_starts=1, stop_count=1, duration=1.0, quantization_ps=Q_PS)
    with pytest.raises(ValueError):
        Histogram(counts=np.array([1, 2, 3]), bin_width=Q_S, tau_max=2 * Q_S,
                  n_starts=1, stop_count=1, duration=1.0, quantization_ps=Q_PS)


def test_histogram_io_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    start = _stream("start", rng.integers(0, 1000, 60), 1000)
    stop = _stream("stop", rng.integers(0, 1000, 90), 1000)
    hist = cross_correlate(start, stop, Q_S, 25 * Q_S)
    path = tmp_path / "hist.csv"
    write_histogram(hist, path)
    back = read_histogram(path)
    np.testing.assert_array_equal(back.counts, hist.counts)
    assert back.bin_width == pytest.approx(hist.bin_width)
    assert back.n_starts == hist.n_starts
    assert back.stop_count == hist.stop_count
    assert back.quantization_ps == hist.quantization_ps
    assert back.meta["total_pairs"] == hist.meta["total_pairs"]


def test_histogram_read_requires_sidecar(tmp_path):
    start = _stream("start", [0], 100)
    stop = _stream("stop", [5], 100)
    hist = cross_correlate(start, stop, Q_S, 10 * Q_S)
    path = tmp_path / "h.csv"
    write_histogram(hist, path)
    sidecar_path(path).unlink()
    with pytest.raises(ValueError):
        read_histogram(path)
