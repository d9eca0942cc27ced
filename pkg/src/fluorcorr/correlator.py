"""Start-stop coincidence histogramming and curve normalisation.

The correlator counts *every* stop tag in a window after each start tag
(multi-stop counting), so the histogram estimates the stationary
rate-rate correlation without pile-up distortion and its expectation is
directly comparable to the regression-theorem curves.  All time arithmetic
happens on integer quantised tags; bin width and window must be exact
multiples of the quantisation step.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curves import CorrelationCurve, sidecar_path
from .errors import CalibrationError, StatisticsError
from .trajectory import ClickStream

__all__ = [
    "Histogram",
    "cross_correlate",
    "merge_histograms",
    "normalize",
    "PhaseCalibration",
    "calibrate_phases",
    "estimate_visibility",
    "write_histogram",
    "read_histogram",
]

_CHUNK_PAIRS = 4_000_000


@dataclass
class Histogram:
    """Raw coincidence counts on a uniform delay grid ``[0, tau_max)``."""

    counts: np.ndarray
    bin_width: float
    tau_max: float
    n_starts: int
    stop_count: int
    duration: float
    quantization_ps: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size == 0:
            raise ValueError("counts must be a non-empty 1-d array")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")
        n_bins = int(round(self.tau_max / self.bin_width))
        if n_bins != self.counts.size:
            raise ValueError("tau_max / bin_width does not match the number of bins")

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def bin_centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) * self.bin_width


def _quantised(value_s: float, q_ps: int, name: str) -> int:
    ps = value_s * 1e12
    units = int(round(ps / q_ps))
    if units <= 0 or abs(ps - units * q_ps) > 1e-6 * q_ps:
        raise ValueError(f"{name} = {value_s} s is not a positive multiple "
                         f"of the {q_ps} ps quantisation step")
    return units


def cross_correlate(start: ClickStream, stop: ClickStream, bin_width: float,
                    tau_max: float) -> Histogram:
    """Histogram of delays from each start tag to all stop tags within the window.

    Delays are ``stop - start`` restricted to ``[0, tau_max)``; equal tags
    count as zero delay.  Exact integer arithmetic throughout.
    """
    if start.quantization_ps != stop.quantization_ps:
        raise ValueError("start and stop streams use different quantisations")
    if start.duration != stop.duration:
        raise ValueError("start and stop streams cover different durations")
    q_ps = start.quantization_ps
    bin_q = _quantised(bin_width, q_ps, "bin_width")
    window_q = _quantised(tau_max, q_ps, "tau_max")
    if window_q % bin_q:
        raise ValueError("tau_max must be an integer number of bins")
    n_bins = window_q // bin_q

    s_tags = start.tags
    p_tags = stop.tags
    lo = np.searchsorted(p_tags, s_tags, side="left")
    hi = np.searchsorted(p_tags, s_tags + window_q, side="left")
    counts = np.zeros(n_bins, dtype=np.int64)
    per_start = hi - lo
    boundaries = np.concatenate([[0], np.cumsum(per_start)])
    total_pairs = int(boundaries[-1])
    a = 0
    while a < s_tags.size:
        b = int(np.searchsorted(boundaries, boundaries[a] + _CHUNK_PAIRS, side="left"))
        b = max(b, a + 1)
        reps = per_start[a:b]
        n_pairs = int(reps.sum())
        if n_pairs:
            base = np.repeat(lo[a:b], reps)
            offsets = np.arange(n_pairs) - np.repeat(np.cumsum(reps) - reps, reps)
            delays = p_tags[base + offsets] - np.repeat(s_tags[a:b], reps)
            counts += np.bincount(delays // bin_q, minlength=n_bins)
        a = b

    return Histogram(
        counts=counts,
        bin_width=bin_q * q_ps * 1e-12,
        tau_max=window_q * q_ps * 1e-12,
        n_starts=int(s_tags.size),
        stop_count=int(p_tags.size),
        duration=start.duration * q_ps * 1e-12,
        quantization_ps=q_ps,
        meta={"total_pairs": total_pairs,
              "lo_phase": start.meta.get("lo_phase")},
    )


def merge_histograms(parts: list[Histogram], *, same_acquisition: bool = False) -> Histogram:
    """Sum compatible histograms.

    With ``same_acquisition=True`` the parts are segments of one run (start
    tags partitioned, each correlated against the full stop stream), so the
    acquisition duration is shared rather than summed.
    """
    if not parts:
        raise ValueError("nothing to merge")
    first = parts[0]
    for h in parts[1:]:
        if (h.n_bins != first.n_bins
                or abs(h.bin_width - first.bin_width) > 1e-15
                or h.quantization_ps != first.quantization_ps):
            raise ValueError("histograms have incompatible grids")
    counts = np.sum([h.counts for h in parts], axis=0)
    duration = first.duration if same_acquisition else float(sum(h.duration for h in parts))
    stop_count = first.stop_count if same_acquisition else int(sum(h.stop_count for h in parts))
    return Histogram(
        counts=counts,
        bin_width=first.bin_width,
        tau_max=first.tau_max,
        n_starts=int(sum(h.n_starts for h in parts)),
        stop_count=stop_count,
        duration=duration,
        quantization_ps=first.quantization_ps,
        meta={"merged": len(parts)},
    )


def _tail_bins(hist: Histogram, tail_window: tuple[float, float] | None) -> np.ndarray:
    if tail_window is None:
        k0 = (3 * hist.n_bins) // 4
        return np.arange(k0, hist.n_bins)
    lo, hi = tail_window
    edges = np.arange(hist.n_bins) * hist.bin_width
    sel = (edges >= lo - 1e-12) & (edges + hist.bin_width <= hi + 1e-12)
    idx = np.nonzero(sel)[0]
    if idx.size == 0:
        raise StatisticsError(f"tail window {tail_window} contains no complete bin")
    return idx


def normalize(hist: Histogram, *, tail_window: tuple[float, float] | None = None,
              normalizer_per_start: float | None = None, kind: str = "gtotal",
              phi: float | None = None) -> CorrelationCurve:
    """Convert counts to a normalised correlation curve with Poisson errors.

    Without an explicit normaliser the curve is divided by its own tail
    mean (suitable when the curve's asymptote is 1, e.g. ``g2`` or the
    quadrature-phase total correlation).  ``normalizer_per_start`` transfers
    the asymptote scale from a calibration curve: expected tail counts per
    start tag, so different phases of one run share one scale.
    """
    if normalizer_per_start is None:
        idx = _tail_bins(hist, tail_window)
        tail_total = int(hist.counts[idx].sum())
        if tail_total <= 0:
            raise StatisticsError("empty tail window; cannot self-normalise")
        norm = tail_total / idx.size
    else:
        if normalizer_per_start <= 0:
            raise StatisticsError("normaliser must be positive")
        norm = normalizer_per_start * hist.n_starts
    values = hist.counts / norm
    stderr = np.sqrt(hist.counts) / norm
    meta = {
        "n_starts": hist.n_starts,
        "duration": hist.duration,
        "normalizer_per_start": norm / hist.n_starts if hist.n_starts else math.nan,
        "stop_rate": hist.stop_count / hist.duration if hist.duration else math.nan,
    }
    meta.update(hist.meta)
    return CorrelationCurve(hist.bin_centers, values, stderr, kind=kind,
                            phi=phi, meta=meta)


@dataclass(frozen=True)
class PhaseCalibration:
    """Detector phases recovered from measured tail asymptotes.

    ``asymptotes`` are tail means per start tag (scale-free up to one common
    factor); ``normalizer_per_start`` is the phase-independent part of that
    scale, usable to normalise every curve of the run.
    """

    phases: dict
    asymptotes: dict
    stderrs: dict
    normalizer_per_start: float
    visibility: float


def _tail_stats(obj, tail_window) -> tuple[float, float]:
    """Tail asymptote and its standard error, per start tag.

    Accepts a :class:`Histogram` (counts, Poisson errors) or an
    already-normalised :class:`~fluorcorr.curves.CorrelationCurve` from a
    theory run (values, propagated errors).
    """
    if hasattr(obj, "counts"):
        idx = _tail_bins(obj, tail_window)
        total = int(obj.counts[idx].sum())
        per_start = total / idx.size / obj.n_starts
        err = math.sqrt(max(total, 1)) / idx.size / obj.n_starts
        return per_start, err
    curve = obj
    width = float(curve.tau[1] - curve.tau[0])
    edges = curve.tau - 0.5 * width
    if tail_window is None:
        idx = np.arange((3 * curve.tau.size) // 4, curve.tau.size)
    else:
        lo, hi = tail_window
        sel = (edges >= lo - 1e-12) & (edges + width <= hi + 1e-12)
        idx = np.nonzero(sel)[0]
        if idx.size == 0:
            raise StatisticsError(f"tail window {tail_window} contains no complete bin")
    a = float(np.mean(curve.values[idx]))
    err = float(np.sqrt(np.sum(curve.stderr[idx] ** 2)) / idx.size)
    return a, err


def calibrate_phases(histograms: dict, *,
                     tail_window: tuple[float, float] | None = None) -> PhaseCalibration:
    """Assign detector phases from long-delay asymptotes.

    The largest asymptote is phase 0, the smallest is pi, and intermediate
    curves get ``arccos`` of the asymptote's position between the extremes
    (sign of the phase is not observable from asymptotes alone).  Values may
    be histograms or normalised curves.  Raises :class:`CalibrationError`
    when the extremes are statistically indistinguishable (3 sigma).
    """
    if len(histograms) < 2:
        raise CalibrationError("phase calibration needs at least two curves")
    stats = {k: _tail_stats(h, tail_window) for k, h in histograms.items()}
    asym = {k: v[0] for k, v in stats.items()}
    errs = {k: v[1] for k, v in stats.items()}
    k_max = max(asym, key=asym.get)
    k_min = min(asym, key=asym.get)
    spread = asym[k_max] - asym[k_min]
    noise = math.hypot(errs[k_max], errs[k_min])
    if spread <= 3.0 * noise:
        raise CalibrationError(
            f"tail asymptotes are indistinguishable (spread {spread:.3g} "
            f"vs 3 sigma = {3 * noise:.3g}); cannot assign phases"
        )
    phases = {}
    for k, a in asym.items():
        c = (2.0 * a - asym[k_max] - asym[k_min]) / spread
        phases[k] = math.acos(min(1.0, max(-1.0, c)))
    mid = 0.5 * (asym[k_max] + asym[k_min])
    return PhaseCalibration(
        phases=phases,
        asymptotes=asym,
        stderrs=errs,
        normalizer_per_start=mid,
        visibility=estimate_visibility(asym[k_max], asym[k_min]),
    )


def estimate_visibility(asym_inphase: float, asym_antiphase: float) -> float:
    """Interference visibility from the two extreme-phase asymptotes.

    Scale-invariant: with ``w = (a0 - api) / (a0 + api)`` the visibility is
    ``w / (1 + w)``, because the asymptotes are proportional to
    ``1 +- V / (1 - V)``.
    """
    if asym_inphase <= asym_antiphase:
        raise StatisticsError("in-phase asymptote must exceed the anti-phase one")
    if asym_antiphase <= 0:
        raise StatisticsError("anti-phase asymptote must be positive")
    w = (asym_inphase - asym_antiphase) / (asym_inphase + asym_antiphase)
    return w / (1.0 + w)


def write_histogram(hist: Histogram, path: str | Path) -> None:
    """CSV table (bin centres, counts) plus JSON sidecar with the context."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_s", "counts"])
        for t, c in zip(hist.bin_centers, hist.counts):
            writer.writerow([f"{t:.12g}", int(c)])
    meta = {
        "bin_width": hist.bin_width,
        "tau_max": hist.tau_max,
        "n_starts": hist.n_starts,
        "stop_count": hist.stop_count,
        "duration": hist.duration,
        "quantization_ps": hist.quantization_ps,
    }
    meta.update({k: v for k, v in hist.meta.items() if k not in meta})
    with sidecar_path(path).open("w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def read_histogram(path: str | Path) -> Histogram:
    """Read a histogram written by :func:`write_histogram`."""
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise ValueError(f"{path}: missing sidecar {side.name}")
    meta = json.loads(side.read_text())
    counts = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["tau_s", "counts"]:
            raise ValueError(f"{path}: not a histogram CSV")
        for row in reader:
            counts.append(int(row[1]))
    known = {"bin_width", "tau_max", "n_starts", "stop_count", "duration",
             "quantization_ps"}
    return Histogram(
        counts=np.asarray(counts, dtype=np.int64),
        bin_width=float(meta["bin_width"]),
        tau_max=float(meta["tau_max"]),
        n_starts=int(meta["n_starts"]),
        stop_count=int(meta["stop_count"]),
        duration=float(meta["duration"]),
        quantization_ps=int(meta["quantization_ps"]),
        meta={k: v for k, v in meta.items() if k not in known},
    )
