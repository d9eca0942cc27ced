"""Detection-chain arithmetic for the weak-local-oscillator correlator.

The stop detector sees the interference of the atom's fluorescence (flux
``gamma2`` per unit excited population) with a weak local oscillator of
amplitude ``E`` (in sqrt(counts/s)).  Conditioned on a start click, the
normalised coincidence curve decomposes into a constant, an intensity
correlation ``g2`` weighted by the chaotic-to-total intensity ratio ``r``,
and an intensity-field correlation ``g15`` weighted by ``V / (1 - V)``
where ``V`` is the interference visibility.  This module computes the
weights from steady-state moments and converts between the composed curve
and its parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .curves import CorrelationCurve
from .errors import ConfigError

__all__ = [
    "DetectionChain",
    "HomodyneDerived",
    "derive",
    "compose_gtotal",
    "extract_inphase",
    "extract_quadrature",
    "phase_jitter_average",
]


@dataclass(frozen=True)
class DetectionChain:
    """Detector and local-oscillator parameters.

    ``gamma1`` and ``gamma2`` are the detected photon fluxes (counts/s per
    unit excited-state population) of the start and stop arms;
    ``lo_amplitude`` is in sqrt(counts/s), so ``lo_amplitude**2`` is the
    local-oscillator count rate.  ``lo_phase`` is measured relative to the
    mean dipole of the detected transition; ``phase_jitter`` is the rms
    phase spread (rad) applied segment by segment when synthesising data.
    """

    gamma1: float
    gamma2: float
    lo_amplitude: float
    lo_phase: float = 0.0
    dark_rate_start: float = 0.0
    dark_rate_stop: float = 0.0
    phase_jitter: float = 0.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "lo_amplitude", "dark_rate_start",
                     "dark_rate_stop", "phase_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass(frozen=True)
class HomodyneDerived:
    """Derived weights of the conditioned homodyne measurement.

    ``prefactor`` is the dimensional scale of the unnormalised coincidence
    rate, ``visibility`` the interference weight of the field term, and
    ``intensity_ratio`` the chaotic fraction of the LO-free stop intensity.
    """

    prefactor: float
    visibility: float
    intensity_ratio: float

    def __post_init__(self):
        if self.prefactor < 0:
            raise ValueError("prefactor must be non-negative")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must lie in [0, 1]")
        if not 0.0 <= self.intensity_ratio <= 1.0:
            raise ValueError("intensity ratio must lie in [0, 1]")


def _as_matrix(rho) -> np.ndarray:
    return np.asarray(getattr(rho, "matrix", rho), dtype=complex)


def derive(detection: DetectionChain, rho_ss, sigma_minus: np.ndarray) -> HomodyneDerived:
    """Compute (prefactor, visibility, intensity ratio) from steady-state moments.

    With ``n = <sigma^+ sigma^->``, ``s = <sigma^+ + sigma^->`` (evaluated in
    the frame where the mean dipole is real positive, i.e. ``s = 2 |<sigma^->|``)
    and LO amplitude ``E``:

    * ``prefactor = gamma1 * n * (E^2 + E*sqrt(gamma2)*s + gamma2*n)``
    * ``visibility = E*sqrt(gamma2)*s / (E^2 + E*sqrt(gamma2)*s + gamma2*n)``
    * ``intensity_ratio = gamma2*n / (E^2 + gamma2*n)``
    """
    rho = _as_matrix(rho_ss)
    sm = np.asarray(sigma_minus, dtype=complex)
    n = float(np.real(np.trace(sm.conj().T @ sm @ rho)))
    s = 2.0 * abs(complex(np.trace(rho @ sm)))
    e = detection.lo_amplitude
    interference = e * math.sqrt(detection.gamma2) * s
    bracket = e * e + interference + detection.gamma2 * n
    prefactor = detection.gamma1 * n * bracket
    visibility = interference / bracket if bracket > 0 else 0.0
    chaotic_den = e * e + detection.gamma2 * n
    ratio = detection.gamma2 * n / chaotic_den if chaotic_den > 0 else 0.0
    return HomodyneDerived(prefactor, visibility, ratio)


def _check_pair(a: CorrelationCurve, b: CorrelationCurve) -> None:
    if not a.same_grid(b):
        raise ValueError("curves are sampled on different tau grids")


def compose_gtotal(g2: CorrelationCurve, g15: CorrelationCurve,
                   visibility: float, intensity_ratio: float) -> CorrelationCurve:
    """Assemble the normalised total correlation from its parts.

    ``gtotal = (1 - r) + r * g2 + V/(1 - V) * g15``.  Statistical errors are
    propagated in quadrature assuming independent inputs.
    """
    _check_pair(g2, g15)
    if g2.kind != "g2" or g15.kind != "g15":
        raise ValueError("compose_gtotal expects one g2 curve and one g15 curve")
    if not 0.0 <= visibility < 1.0:
        raise ValueError("visibility must lie in [0, 1)")
    if not 0.0 <= intensity_ratio <= 1.0:
        raise ValueError("intensity ratio must lie in [0, 1]")
    w = visibility / (1.0 - visibility)
    values = (1.0 - intensity_ratio) + intensity_ratio * g2.values + w * g15.values
    stderr = np.hypot(intensity_ratio * g2.stderr, w * g15.stderr)
    meta = {"visibility": visibility, "intensity_ratio": intensity_ratio}
    meta.update({k: v for k, v in g15.meta.items() if k not in meta})
    return CorrelationCurve(g2.tau.copy(), values, stderr, kind="gtotal",
                            phi=g15.phi, meta=meta)


def _extraction_weight(visibility: float) -> float:
    if not 0.0 < visibility < 1.0:
        raise ValueError("extraction needs a visibility strictly between 0 and 1")
    return (1.0 - visibility) / (2.0 * visibility)


def extract_inphase(gtotal_0: CorrelationCurve, gtotal_pi: CorrelationCurve,
                    visibility: float) -> CorrelationCurve:
    """In-phase field correlation from the two extreme-phase total curves.

    ``g15_0 = (1 - V) / (2 V) * (gtotal_0 - gtotal_pi)``; the intensity terms
    are phase-independent and cancel in the difference.
    """
    _check_pair(gtotal_0, gtotal_pi)
    w = _extraction_weight(visibility)
    values = w * (gtotal_0.values - gtotal_pi.values)
    stderr = w * np.hypot(gtotal_0.stderr, gtotal_pi.stderr)
    return CorrelationCurve(gtotal_0.tau.copy(), values, stderr, kind="g15",
                            phi=0.0, meta={"visibility": visibility})


def extract_quadrature(gtotal_0: CorrelationCurve, gtotal_quad: CorrelationCurve,
                       gtotal_pi: CorrelationCurve, visibility: float) -> CorrelationCurve:
    """Quadrature field correlation from the three measured total curves.

    ``g15_pi2 = (1 - V) / (2 V) * (2 gtotal_pi2 - gtotal_0 - gtotal_pi)``.
    The combination removes intensity terms using the mean of the two
    extreme-phase curves, so its variance carries a factor 4 from the
    middle curve plus one from each extreme.
    """
    _check_pair(gtotal_0, gtotal_quad)
    _check_pair(gtotal_0, gtotal_pi)
    w = _extraction_weight(visibility)
    values = w * (2.0 * gtotal_quad.values - gtotal_0.values - gtotal_pi.values)
    stderr = w * np.sqrt(4.0 * gtotal_quad.stderr**2
                         + gtotal_0.stderr**2 + gtotal_pi.stderr**2)
    return CorrelationCurve(gtotal_0.tau.copy(), values, stderr, kind="g15",
                            phi=math.pi / 2.0, meta={"visibility": visibility})


def phase_jitter_average(curve_fn: Callable[[float], CorrelationCurve],
                         phi0: float, sigma: float, n_nodes: int = 16) -> CorrelationCurve:
    """Average a phase-parametrised curve over Gaussian phase jitter.

    Uses Gauss-Hermite quadrature with ``n_nodes`` points, exact to machine
    precision for the trigonometric phase dependence at laboratory jitter
    levels.  ``curve_fn(phi)`` must return curves on one common grid.
    """
    if sigma < 0:
        raise ValueError("jitter sigma must be non-negative")
    if sigma == 0.0:
        return curve_fn(phi0)
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    weights = weights / math.sqrt(math.pi)
    curves = [curve_fn(phi0 + math.sqrt(2.0) * sigma * x) for x in nodes]
    base = curves[0]
    for c in curves[1:]:
        _check_pair(base, c)
    values = sum(w * c.values for w, c in zip(weights, curves))
    stderr = np.sqrt(sum(w * c.stderr**2 for w, c in zip(weights, curves)))
    meta = dict(base.meta)
    meta["phase_jitter"] = sigma
    return CorrelationCurve(base.tau.copy(), values, stderr, kind=base.kind,
                            phi=phi0, meta=meta)
