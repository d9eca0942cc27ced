"""Multilevel atom models: level structure, drive couplings, decay channels.

Conventions used throughout:

* All frequencies and rates are angular (rad/s).  Convert laboratory values
  quoted in Hz by multiplying with 2*pi.
* Hamiltonians live in the rotating frame of the driving lasers, so the
  diagonal carries detunings and Zeeman shifts, not optical frequencies.
* Detunings are laser frequency minus transition frequency; a level's
  rotating-frame energy therefore drops by the detuning of the laser that
  reaches it.
* Lowering operators are unit-normalised; the associated rate lives on the
  :class:`DecayChannel`, so the Lindblad collapse operator is
  ``sqrt(rate) * lowering``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError

__all__ = [
    "BOHR_MAGNETON_HZ_PER_G",
    "Level",
    "LaserDrive",
    "DecayChannel",
    "AtomModel",
    "clebsch_gordan",
    "assemble_model",
    "build_two_level",
    "Ba138Config",
    "build_ba138",
]

# Bohr magneton over Planck constant, Hz per gauss (CODATA).
BOHR_MAGNETON_HZ_PER_G = 1.399624604e6


def _two_j(x: float, name: str) -> int:
    """Return 2*x as an exact integer, or raise for non-half-integer input."""
    two = round(2.0 * x)
    if abs(2.0 * x - two) > 1e-9:
        raise ValueError(f"{name}={x} is not integer or half-integer")
    return int(two)


def clebsch_gordan(j1: float, m1: float, j2: float, m2: float,
                   j: float, m: float) -> float:
    """Clebsch-Gordan coefficient ``<j1 m1; j2 m2 | j m>``.

    Evaluated with the Racah sum in exact rational arithmetic; only the final
    square root is floating point, so results are accurate to one ulp.
    Condon-Shortley phase convention.

    Returns 0.0 when ``m != m1 + m2``.  Raises :class:`ValueError` for
    malformed angular momenta (negative or non-half-integer ``j``,
    ``|m| > j``, projection/parity mismatch, or triangle violation).
    """
    tj1, tm1 = _two_j(j1, "j1"), _two_j(m1, "m1")
    tj2, tm2 = _two_j(j2, "j2"), _two_j(m2, "m2")
    tj, tm = _two_j(j, "j"), _two_j(m, "m")
    for tjx, tmx, name in ((tj1, tm1, "1"), (tj2, tm2, "2"), (tj, tm, "")):
        if tjx < 0:
            raise ValueError(f"j{name} must be non-negative")
        if abs(tmx) > tjx:
            raise ValueError(f"|m{name}| exceeds j{name}")
        if (tjx - tmx) % 2:
            raise ValueError(f"j{name} and m{name} differ by a non-integer")
    if (tj1 + tj2 + tj) % 2:
        raise ValueError("j1 + j2 + j is not an integer")
    if tj < abs(tj1 - tj2) or tj > tj1 + tj2:
        raise ValueError("triangle inequality |j1-j2| <= j <= j1+j2 violated")
    if tm1 + tm2 != tm:
        return 0.0

    f = math.factorial
    # Rational square of the prefactor.
    pre = Fraction(
        (tj + 1)
        * f((tj1 + tj2 - tj) // 2) * f((tj1 - tj2 + tj) // 2)
        * f((-tj1 + tj2 + tj) // 2),
        f((tj1 + tj2 + tj) // 2 + 1),
    ) * Fraction(
        f((tj + tm) // 2) * f((tj - tm) // 2)
        * f((tj1 - tm1) // 2) * f((tj1 + tm1) // 2)
        * f((tj2 - tm2) // 2) * f((tj2 + tm2) // 2)
    )

    k_min = max(0, (tj2 - tj - tm1) // 2, (tj1 + tm2 - tj) // 2)
    k_max = min((tj1 + tj2 - tj) // 2, (tj1 - tm1) // 2, (tj2 + tm2) // 2)
    total = Fraction(0)
    for k in range(k_min, k_max + 1):
        den = (
            f(k)
            * f((tj1 + tj2 - tj) // 2 - k)
            * f((tj1 - tm1) // 2 - k)
            * f((tj2 + tm2) // 2 - k)
            * f((tj - tj2 + tm1) // 2 + k)
            * f((tj - tj1 - tm2) // 2 + k)
        )
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0.0
    sign = 1.0 if total > 0 else -1.0
    return sign * math.sqrt(float(pre * total * total))


@dataclass(frozen=True)
class Level:
    """One sublevel of the atom in the rotating frame.

    ``zeeman_shift`` is the magnetic contribution to the rotating-frame
    energy in rad/s; frame offsets (detunings) are added by the model
    builders, not stored here.
    """

    label: str
    j: float
    m: float
    zeeman_shift: float = 0.0

    def __post_init__(self):
        tj = _two_j(self.j, "j")
        tm = _two_j(self.m, "m")
        if tj < 0 or abs(tm) > tj or (tj - tm) % 2:
            raise ValueError(f"invalid (j, m) = ({self.j}, {self.m})")


@dataclass(frozen=True)
class LaserDrive:
    """Classical drive coupling a lower manifold to an upper manifold.

    ``rabi`` is the reduced Rabi frequency: the coupling of a transition with
    unit Clebsch-Gordan coefficient.  ``delta_m`` lists the driven Zeeman
    components (polarisation content); linear polarisation perpendicular to
    the quantisation axis corresponds to ``(-1, +1)`` with equal weight.
    """

    rabi: float
    detuning: float
    transition: tuple[str, str]
    delta_m: tuple[int, ...] = (-1, +1)

    def __post_init__(self):
        if self.rabi < 0:
            raise ValueError("rabi must be non-negative")
        if any(q not in (-1, 0, +1) for q in self.delta_m):
            raise ValueError("delta_m entries must be -1, 0 or +1")


def _frozen_array(a, dim: int | None = None) -> np.ndarray:
    out = np.array(a, dtype=complex)
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise ConfigError(f"operator must be a square matrix, got shape {out.shape}")
    if dim is not None and out.shape[0] != dim:
        raise ConfigError(f"operator dimension {out.shape[0]} != model dimension {dim}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DecayChannel:
    """One radiative decay path.

    The Lindblad collapse operator is ``sqrt(rate) * lowering`` with
    ``lowering`` unit-normalised (a single matrix element of modulus 1 for
    the builders in this module).
    """

    rate: float
    lowering: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"decay rate must be non-negative, got {self.rate}")
        object.__setattr__(self, "lowering", _frozen_array(self.lowering))

    @property
    def collapse(self) -> np.ndarray:
        return math.sqrt(self.rate) * self.lowering


@dataclass(frozen=True)
class AtomModel:
    """Immutable bundle of levels, Hamiltonian and decay channels.

    ``sigma_det`` is the unit-normalised lowering operator of the transition
    the photodetectors look at; the detected fluxes are carried by the
    detection chain, not by the model.
    """

    levels: tuple[Level, ...]
    hamiltonian: np.ndarray
    collapse_ops: tuple[DecayChannel, ...]
    sigma_det: np.ndarray
    drives: tuple[LaserDrive, ...] = ()

    def __post_init__(self):
        dim = len(self.levels)
        if dim < 2:
            raise ConfigError("a model needs at least two levels")
        h = _frozen_array(self.hamiltonian, dim)
        scale = max(1.0, float(np.abs(h).max()))
        if np.abs(h - h.conj().T).max() > 1e-12 * scale:
            raise ConfigError("hamiltonian is not Hermitian")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "collapse_ops", tuple(self.collapse_ops))
        for ch in self.collapse_ops:
            if ch.lowering.shape[0] != dim:
                raise ConfigError("decay channel dimension mismatch")
        sd = _frozen_array(self.sigma_det, dim)
        if np.abs(sd).max() == 0.0:
            raise ConfigError("sigma_det is identically zero")
        if np.abs(sd @ sd).max() > 1e-12:
            raise ConfigError("sigma_det must be nilpotent (a pure lowering operator)")
        object.__setattr__(self, "sigma_det", sd)

    @property
    def dim(self) -> int:
        return len(self.levels)

    def collapse_matrices(self) -> list[np.ndarray]:
        """Lindblad collapse operators, rates folded in."""
        return [ch.collapse for ch in self.collapse_ops]

    def total_decay(self) -> np.ndarray:
        """Sum over channels of rate * lowering^dag lowering (anticommutator part)."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for ch in self.collapse_ops:
            c = ch.collapse
            out += c.conj().T @ c
        return out

    def fingerprint(self) -> str:
        """Short stable hash of the physical content, for output metadata."""
        h = hashlib.sha256()
        for lv in self.levels:
            h.update(repr((lv.label, lv.j, lv.m, round(lv.zeeman_shift, 6))).encode())
        h.update(np.ascontiguousarray(self.hamiltonian).tobytes())
        for ch in self.collapse_ops:
            h.update(repr(round(ch.rate, 6)).encode())
            h.update(np.ascontiguousarray(ch.lowering).tobytes())
        h.update(np.ascontiguousarray(self.sigma_det).tobytes())
        return h.hexdigest()[:12]


def assemble_model(
    levels: Sequence[Level],
    frame_shifts: Mapping[str, float],
    drives: Sequence[LaserDrive],
    channels: Sequence[DecayChannel],
    sigma_det: np.ndarray,
) -> AtomModel:
    """Build an :class:`AtomModel` from levels, frame offsets and drives.

    ``frame_shifts`` maps each manifold label to its rotating-frame energy
    offset (rad/s); each level's diagonal entry is that offset plus its
    Zeeman shift.  Drive couplings are ``rabi/2`` times the Clebsch-Gordan
    coefficient ``<j_l m; 1 q | j_u m+q>`` for every allowed ``q``.
    """
    levels = tuple(levels)
    dim = len(levels)
    h = np.zeros((dim, dim), dtype=complex)
    for k, lv in enumerate(levels):
        if lv.label not in frame_shifts:
            raise ConfigError(f"no frame shift given for manifold {lv.label!r}")
        h[k, k] = frame_shifts[lv.label] + lv.zeeman_shift

    index = {(lv.label, lv.m): k for k, lv in enumerate(levels)}
    for drive in drives:
        lo_label, up_label = drive.transition
        lowers = [k for k, lv in enumerate(levels) if lv.label == lo_label]
        if not lowers:
            raise ConfigError(f"drive targets unknown manifold {lo_label!r}")
        for k in lowers:
            lv = levels[k]
            for q in drive.delta_m:
                ku = index.get((up_label, lv.m + q))
                if ku is None:
                    continue
                up = levels[ku]
                g = 0.5 * drive.rabi * clebsch_gordan(lv.j, lv.m, 1, q, up.j, up.m)
                h[ku, k] += g
                h[k, ku] += np.conj(g)

    return AtomModel(levels, h, tuple(channels), sigma_det, drives=tuple(drives))


def build_two_level(rabi: float, detuning: float, gamma: float) -> AtomModel:
    """Driven two-level atom, basis ``(|g>, |e>)``.

    ``H = -detuning |e><e| + (rabi/2)(sigma^+ + sigma^-)`` with a single
    decay channel of rate ``gamma``; the detected transition is the only
    transition.
    """
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    if rabi < 0:
        raise ConfigError("rabi must be non-negative")
    levels = (Level("g", 0.0, 0.0), Level("e", 0.0, 0.0))
    sigma = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    h = np.array([[0.0, rabi / 2.0], [rabi / 2.0, -detuning]], dtype=complex)
    channels = (DecayChannel(gamma, sigma, "e->g"),)
    drive = LaserDrive(rabi, detuning, ("g", "e"), delta_m=(0,))
    return AtomModel(levels, h, channels, sigma, drives=(drive,))


@dataclass(frozen=True)
class Ba138Config:
    """Inputs for the eight-level Ba-138 ion scheme.  All values explicit.

    Angular frequencies (rad/s): ``rabi_green``/``rabi_red`` are reduced Rabi
    frequencies of the S-P and D-P drives, ``detuning_green``/``detuning_red``
    their detunings, ``gamma_p`` the total P1/2 decay rate.  ``branching_s``
    is the fraction of P decay going to S1/2 (the rest goes to D3/2).
    ``b_field`` is in gauss; ``g_s``, ``g_p``, ``g_d`` are the Lande factors
    of the three manifolds.
    """

    rabi_green: float
    rabi_red: float
    detuning_green: float
    detuning_red: float
    gamma_p: float
    branching_s: float
    b_field: float
    g_s: float
    g_p: float
    g_d: float

    def __post_init__(self):
        if self.gamma_p <= 0:
            raise ConfigError("gamma_p must be positive")
        if not 0.0 < self.branching_s < 1.0:
            raise ConfigError("branching_s must lie strictly between 0 and 1")
        if self.rabi_green < 0 or self.rabi_red < 0:
            raise ConfigError("Rabi frequencies must be non-negative")
        if self.b_field < 0:
            raise ConfigError("b_field must be non-negative")


S12, P12, D32 = "S1/2", "P1/2", "D3/2"

# Fixed basis order of the eight-level scheme: S then P then D, each by
# ascending m.  Index 2 is P(-1/2); the detected decay is P(-1/2) -> S(+1/2).
_BA138_MANIFOLDS = (
    (S12, 0.5, (-0.5, +0.5)),
    (P12, 0.5, (-0.5, +0.5)),
    (D32, 1.5, (-1.5, -0.5, +0.5, +1.5)),
)


def build_ba138(cfg: Ba138Config) -> AtomModel:
    """Eight-level Ba-138 ion: S1/2 and P1/2 doublets plus the D3/2 quartet.

    A green laser drives S-P and a red laser drives D-P, both linearly
    polarised perpendicular to the magnetic field, i.e. equal-weight
    sigma+ / sigma- couplings.  Spontaneous decay splits into ten
    Clebsch-Gordan weighted channels.  The detectors collect the
    P(-1/2) -> S(+1/2) sigma- photons.
    """
    zeeman_unit = 2.0 * math.pi * BOHR_MAGNETON_HZ_PER_G * cfg.b_field
    g_factor = {S12: cfg.g_s, P12: cfg.g_p, D32: cfg.g_d}
    levels = []
    for label, j, ms in _BA138_MANIFOLDS:
        for m in ms:
            levels.append(Level(label, j, m, zeeman_shift=m * g_factor[label] * zeeman_unit))
    levels = tuple(levels)
    dim = len(levels)
    index = {(lv.label, lv.m): k for k, lv in enumerate(levels)}

    frame_shifts = {
        S12: 0.0,
        P12: -cfg.detuning_green,
        D32: -cfg.detuning_green + cfg.detuning_red,
    }
    drives = (
        LaserDrive(cfg.rabi_green, cfg.detuning_green, (S12, P12)),
        LaserDrive(cfg.rabi_red, cfg.detuning_red, (D32, P12)),
    )

    gamma_ps = cfg.branching_s * cfg.gamma_p
    gamma_pd = (1.0 - cfg.branching_s) * cfg.gamma_p
    channels = []
    for m_p in (-0.5, +0.5):
        kp = index[(P12, m_p)]
        for lo_label, j_lo, gamma_branch in ((S12, 0.5, gamma_ps), (D32, 1.5, gamma_pd)):
            for q in (-1, 0, +1):
                m_lo = m_p - q
                kl = index.get((lo_label, m_lo))
                if kl is None:
                    continue
                cg = clebsch_gordan(j_lo, m_lo, 1, q, 0.5, m_p)
                if cg == 0.0:
                    continue
                lowering = np.zeros((dim, dim), dtype=complex)
                lowering[kl, kp] = 1.0
                channels.append(
                    DecayChannel(
                        gamma_branch * cg * cg,
                        lowering,
                        label=f"P({m_p:+.1g})->{lo_label[0]}({m_lo:+.2g})",
                    )
                )

    sigma_det = np.zeros((dim, dim), dtype=complex)
    sigma_det[index[(S12, +0.5)], index[(P12, -0.5)]] = 1.0

    return assemble_model(levels, frame_shifts, drives, channels, sigma_det)
