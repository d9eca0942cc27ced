"""Quantum-jump synthesis of detector click streams.

The master equation is unravelled so that three kinds of jumps reproduce the
experiment's detectors: a *start* jump ``sqrt(gamma1) sigma`` (bare
fluorescence on the trigger PMT), a *stop* jump
``E exp(i phi) + sqrt(gamma2) sigma`` (fluorescence displaced by the weak
local oscillator), and unmonitored *loss* jumps carrying the rest of the
radiated flux.  Displacing the stop channel changes the deterministic drift,
which the compensation Hamiltonian
``H_c = (i/2) (alpha C^dag - conj(alpha) C)`` with ``alpha = E exp(i phi)``
and ``C = sqrt(gamma2) sigma`` exactly cancels, so the ensemble-averaged
dynamics stay those of the bare master equation (this identity is asserted
in the tests).

The local-oscillator phase ``phi`` is referenced to the mean steady-state
dipole, matching both the theory curves and the way the experiment
calibrates its phase; the raw phase entering the jump operator is
``phi + arg <sigma->_ss``.

Click times are produced in units of ``quantization_ps`` (100 ps floor) and
written in a little-endian binary format with a plain-text sidecar.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from ._jump import JumpRun
from .atom import AtomModel
from .errors import ConfigError, NumericalError, PhaseReferenceError
from .homodyne import DetectionChain
from .liouville import Liouvillian, liouvillian, steady_state, vec

__all__ = [
    "ClickStream",
    "UnravelingSpec",
    "build_unraveling",
    "detected_decay_rate",
    "expected_rates",
    "synthesize",
    "ensemble_states",
    "write_tags",
    "read_tags",
]

MIN_QUANTIZATION_PS = 100

CHANNEL_CODES = {"start": 0, "stop": 1}
CHANNEL_NAMES = {v: k for k, v in CHANNEL_CODES.items()}


@dataclass
class ClickStream:
    """Time tags of one detector channel, in quantisation units.

    ``tags`` are non-decreasing int64 multiples of ``quantization_ps``
    picoseconds from the run start; simultaneous clicks keep one tag each.
    ``duration`` is the run length in the same units.
    """

    channel: str
    tags: np.ndarray
    duration: int
    quantization_ps: int
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.channel not in CHANNEL_CODES:
            raise ValueError(f"unknown channel {self.channel!r}")
        self.tags = np.asarray(self.tags, dtype=np.int64)
        if self.quantization_ps < MIN_QUANTIZATION_PS:
            raise ValueError(f"quantization below the {MIN_QUANTIZATION_PS} ps floor")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.tags.size:
            if self.tags[0] < 0 or self.tags[-1] >= self.duration:
                raise ValueError("tags must lie in [0, duration)")
            if np.any(np.diff(self.tags) < 0):
                raise ValueError("tags must be non-decreasing")

    @property
    def duration_s(self) -> float:
        return self.duration * self.quantization_ps * 1e-12

    def times_s(self) -> np.ndarray:
        return self.tags * (self.quantization_ps * 1e-12)


@dataclass(frozen=True)
class UnravelingSpec:
    """Operators of the detector unravelling at one LO phase.

    ``stop_op`` already contains the c-number LO amplitude; ``h_effective``
    is ``H + h_compensation - (i/2) sum_k A_k^dag A_k`` over all jump
    operators including losses.
    """

    start_op: np.ndarray
    stop_op: np.ndarray
    loss_ops: tuple
    h_compensation: np.ndarray
    h_effective: np.ndarray
    lo_phase_raw: float
    detected_rate: float

    def jump_operators(self) -> list[np.ndarray]:
        return [self.start_op, self.stop_op, *self.loss_ops]

    def lindblad_matrix(self, model: AtomModel) -> np.ndarray:
        """Generator assembled from the unravelling pieces (for validation).

        Must equal ``liouville.liouvillian(model).matrix``: the displacement
        of the stop operator and the compensation Hamiltonian cancel in the
        ensemble average.
        """
        dim = model.dim
        eye = np.eye(dim, dtype=complex)
        h = model.hamiltonian + self.h_compensation
        gen = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
        for c in self.jump_operators():
            cdc = c.conj().T @ c
            gen += np.kron(c.conj(), c)
            gen -= 0.5 * (np.kron(eye, cdc) + np.kron(cdc.T, eye))
        return gen


def detected_decay_rate(model: AtomModel) -> float:
    """Total spontaneous rate flowing through the detected transition.

    Decay channels must be either proportional to ``sigma_det`` or orthogonal
    to it (true for the built-in models, where every channel is a single
    matrix element).
    """
    sd = model.sigma_det
    nrm = float(np.real(np.vdot(sd, sd)))
    rate = 0.0
    for ch in model.collapse_ops:
        overlap = complex(np.vdot(sd, ch.lowering)) / nrm
        if abs(overlap) < 1e-12:
            continue
        residual = ch.lowering - overlap * sd
        if float(np.abs(residual).max()) > 1e-12:
            raise ConfigError(
                f"decay channel {ch.label!r} partially overlaps the detected "
                "transition; detected flux is ill-defined"
            )
        rate += ch.rate * abs(overlap) ** 2 * nrm
    return rate


class _Unraveler:
    """Model-level context shared by all segments of a synthesis run."""

    def __init__(self, model: AtomModel, detection: DetectionChain):
        self.model = model
        self.detection = detection
        self.gamma_det = detected_decay_rate(model)
        budget = detection.gamma1 + detection.gamma2
        if budget > self.gamma_det * (1.0 + 1e-9) + 1e-12:
            raise ConfigError(
                f"gamma1 + gamma2 = {budget:.6g} exceeds the detected decay rate "
                f"{self.gamma_det:.6g}; the detectors cannot out-collect the atom"
            )
        self.liou = liouvillian(model)
        self.rho_ss = steady_state(self.liou)
        dipole = complex(np.trace(self.rho_ss.matrix @ model.sigma_det))
        if detection.lo_amplitude > 0.0 and abs(dipole) <= 1e-12:
            raise PhaseReferenceError(
                "steady-state dipole vanishes; the LO phase has no reference"
            )
        self.theta = float(np.angle(dipole)) if abs(dipole) > 1e-12 else 0.0

        evals, evecs = scipy.linalg.eigh(self.rho_ss.matrix)
        evals = np.clip(evals, 0.0, None)
        self._mix_probs = evals / evals.sum()
        self._mix_states = evecs

        sd = model.sigma_det
        residual_rate = self.gamma_det - budget
        self._losses = []
        if residual_rate > 1e-12 * max(1.0, self.gamma_det):
            self._losses.append(math.sqrt(residual_rate) * sd)
        nrm = float(np.real(np.vdot(sd, sd)))
        for ch in model.collapse_ops:
            overlap = complex(np.vdot(sd, ch.lowering)) / nrm
            if abs(overlap) < 1e-12:
                self._losses.append(ch.collapse)

    def spec(self, phi: float) -> UnravelingSpec:
        det = self.detection
        model = self.model
        sd = model.sigma_det
        dim = model.dim
        phi_raw = phi + self.theta
        alpha = det.lo_amplitude * np.exp(1j * phi_raw)
        start_op = math.sqrt(det.gamma1) * sd
        coupling = math.sqrt(det.gamma2) * sd
        stop_op = alpha * np.eye(dim, dtype=complex) + coupling
        h_comp = 0.5j * (alpha * coupling.conj().T - np.conj(alpha) * coupling)
        ops = [start_op, stop_op, *self._losses]
        damp = np.zeros((dim, dim), dtype=complex)
        for a in ops:
            damp += a.conj().T @ a
        h_eff = model.hamiltonian + h_comp - 0.5j * damp
        return UnravelingSpec(
            start_op=start_op,
            stop_op=stop_op,
            loss_ops=tuple(self._losses),
            h_compensation=h_comp,
            h_effective=h_eff,
            lo_phase_raw=phi_raw,
            detected_rate=self.gamma_det,
        )

    def sample_state(self, rng) -> np.ndarray:
        idx = rng.choice(self._mix_probs.size, p=self._mix_probs)
        return np.ascontiguousarray(self._mix_states[:, idx])

    def monitored_rate(self) -> float:
        """Expected start+stop click rate in the steady state (capacity hint)."""
        det = self.detection
        rho = self.rho_ss.matrix
        sd = self.model.sigma_det
        n = float(np.real(np.trace(sd.conj().T @ sd @ rho)))
        s = 2.0 * abs(complex(np.trace(rho @ sd)))
        e = det.lo_amplitude
        stop = e * e + e * math.sqrt(det.gamma2) * s + det.gamma2 * n
        return det.gamma1 * n + stop


def build_unraveling(model: AtomModel, detection: DetectionChain,
                     phi: float | None = None) -> UnravelingSpec:
    """Unravelling operators at dipole-referenced LO phase ``phi``.

    Defaults to ``detection.lo_phase``.  Raises
    :class:`~fluorcorr.errors.ConfigError` when ``gamma1 + gamma2`` exceeds
    the decay rate of the detected transition.
    """
    ctx = _Unraveler(model, detection)
    return ctx.spec(detection.lo_phase if phi is None else phi)


def _segment_bounds(total_q: int, n_segments: int) -> list[tuple[int, int]]:
    return [
        (i * total_q // n_segments, (i + 1) * total_q // n_segments)
        for i in range(n_segments)
    ]


def synthesize(model: AtomModel, detection: DetectionChain, duration: float,
               seed: int, *, quantization_ps: int = MIN_QUANTIZATION_PS,
               n_segments: int = 1, initial_state: np.ndarray | None = None,
               waiting_tol: float = 1e-10) -> tuple[ClickStream, ClickStream]:
    """Synthesise one acquisition: returns the (start, stop) click streams.

    The run is split into ``n_segments`` statistically independent segments:
    each draws its initial state from the steady-state eigenmixture, its own
    LO phase (nominal phase plus Gaussian jitter when configured) and its
    own RNG stream.  Dark counts are appended per channel as homogeneous
    Poisson processes.  Identical inputs give identical streams.
    """
    if duration <= 0:
        raise ConfigError("duration must be positive")
    if n_segments < 1:
        raise ConfigError("n_segments must be at least 1")
    if int(quantization_ps) != quantization_ps or quantization_ps < MIN_QUANTIZATION_PS:
        raise ConfigError(f"quantization_ps must be an integer >= {MIN_QUANTIZATION_PS}")
    qstep = quantization_ps * 1e-12
    total_q = int(round(duration / qstep))
    if total_q < 1:
        raise ConfigError("duration is shorter than one quantisation step")

    ctx = _Unraveler(model, detection)
    rate_hint = ctx.monitored_rate()
    children = np.random.SeedSequence(seed).spawn(n_segments + 2)

    all_tags: list[np.ndarray] = []
    all_chans: list[np.ndarray] = []
    for i, (q_lo, q_hi) in enumerate(_segment_bounds(total_q, n_segments)):
        if q_hi == q_lo:
            continue
        rng = np.random.default_rng(children[i])
        phi = detection.lo_phase
        if detection.phase_jitter > 0.0:
            phi += rng.normal(0.0, detection.phase_jitter)
        spec = ctx.spec(phi)
        psi0 = initial_state if initial_state is not None else ctx.sample_state(rng)
        run = JumpRun(spec.h_effective, spec.jump_operators(),
                      [0, 1] + [-1] * len(spec.loss_ops))
        tags, chans, _ = run.run(psi0, (q_hi - q_lo) * qstep, qstep, rng,
                                 rel_tol=waiting_tol, rate_hint=rate_hint)
        all_tags.append(tags + q_lo)
        all_chans.append(chans)

    tags = np.concatenate(all_tags) if all_tags else np.empty(0, np.int64)
    chans = np.concatenate(all_chans) if all_chans else np.empty(0, np.uint8)

    streams = {}
    dark_rates = {"start": detection.dark_rate_start, "stop": detection.dark_rate_stop}
    for name, code in CHANNEL_CODES.items():
        chan_tags = tags[chans == code]
        dark_rate = dark_rates[name]
        if dark_rate > 0.0:
            dark_rng = np.random.default_rng(children[n_segments + code])
            n_dark = dark_rng.poisson(dark_rate * total_q * qstep)
            dark = dark_rng.integers(0, total_q, size=n_dark, dtype=np.int64)
            chan_tags = np.concatenate([chan_tags, dark])
        chan_tags = np.sort(chan_tags)
        streams[name] = ClickStream(
            channel=name,
            tags=chan_tags,
            duration=total_q,
            quantization_ps=int(quantization_ps),
            seed=seed,
            meta={
                "lo_phase": detection.lo_phase,
                "phase_jitter": detection.phase_jitter,
                "n_segments": n_segments,
                "dark_rate": dark_rate,
            },
        )
    return streams["start"], streams["stop"]


def ensemble_states(model: AtomModel, detection: DetectionChain,
                    times: np.ndarray, n_traj: int, seed: int,
                    waiting_tol: float = 1e-10) -> np.ndarray:
    """States of ``n_traj`` independent trajectories at absolute ``times``.

    Each trajectory starts from a steady-state eigenmixture sample, so the
    trajectory average at every checkpoint must reproduce the steady state
    of the bare master equation — the stochastic counterpart of the
    compensation-term identity.  Returns an ``(n_traj, len(times), dim)``
    array of unit state vectors.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be a strictly increasing positive array")
    ctx = _Unraveler(model, detection)
    rate_hint = ctx.monitored_rate()
    duration = float(times[-1])
    out = np.empty((n_traj, times.size, model.dim), dtype=complex)
    children = np.random.SeedSequence(seed).spawn(n_traj)
    for k in range(n_traj):
        rng = np.random.default_rng(children[k])
        phi = detection.lo_phase
        if detection.phase_jitter > 0.0:
            phi += rng.normal(0.0, detection.phase_jitter)
        spec = ctx.spec(phi)
        run = JumpRun(spec.h_effective, spec.jump_operators(),
                      [0, 1] + [-1] * len(spec.loss_ops))
        psi0 = ctx.sample_state(rng)
        _, _, states = run.run(psi0, duration, 1e-10, rng, cp_times=times,
                               rel_tol=waiting_tol, rate_hint=rate_hint)
        out[k] = states
    return out


_HEADER = struct.Struct("<6sHBxIQQQ")
_MAGIC = b"DCTAG1"
_FORMAT_VERSION = 1


def tags_sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(Path(path).suffix + ".meta.txt")


def write_tags(stream: ClickStream, path: str | Path, config_hash: str = "") -> None:
    """Write a click stream: packed little-endian binary plus text sidecar."""
    path = Path(path)
    header = _HEADER.pack(
        _MAGIC,
        _FORMAT_VERSION,
        CHANNEL_CODES[stream.channel],
        stream.quantization_ps,
        stream.duration,
        stream.seed & 0xFFFFFFFFFFFFFFFF,
        stream.tags.size,
    )
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(stream.tags.astype("<u8").tobytes())
    lines = [
        f"config_hash={config_hash}",
        f"channel={stream.channel}",
        f"quantization_ps={stream.quantization_ps}",
        f"duration_units={stream.duration}",
        f"count={stream.tags.size}",
        f"seed={stream.seed & 0xFFFFFFFFFFFFFFFF}",
    ]
    lines += [f"{k}={v}" for k, v in sorted(stream.meta.items())]
    tags_sidecar_path(path).write_text("\n".join(lines) + "\n")


def read_tags(path: str | Path) -> ClickStream:
    """Read a click stream written by :func:`write_tags`."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated tag file")
    magic, version, chan_code, quant_ps, duration, seed, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a tag file (bad magic {magic!r})")
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported tag format version {version}")
    if chan_code not in CHANNEL_NAMES:
        raise ValueError(f"{path}: unknown channel code {chan_code}")
    expected = _HEADER.size + 8 * count
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} != {expected} for {count} tags")
    tags = np.frombuffer(raw, dtype="<u8", offset=_HEADER.size).astype(np.int64)
    return ClickStream(
        channel=CHANNEL_NAMES[chan_code],
        tags=tags,
        duration=int(duration),
        quantization_ps=int(quant_ps),
        seed=int(seed),
    )


def expected_rates(model: AtomModel, detection: DetectionChain,
                   phi: float | None = None) -> dict:
    """Steady-state click rates of each channel (counts/s), for diagnostics.

    The stop rate at dipole-referenced phase ``phi`` is
    ``E^2 + E sqrt(gamma2) s cos(phi) + gamma2 n + dark`` with
    ``n = <sigma^+ sigma^->`` and ``s = 2 |<sigma^->|``.
    """
    ctx = _Unraveler(model, detection)
    rho = ctx.rho_ss.matrix
    sd = model.sigma_det
    n = float(np.real(np.trace(sd.conj().T @ sd @ rho)))
    s = 2.0 * abs(complex(np.trace(rho @ sd)))
    e = detection.lo_amplitude
    phi = detection.lo_phase if phi is None else phi
    stop = (e * e + e * math.sqrt(detection.gamma2) * s * math.cos(phi)
            + detection.gamma2 * n)
    total_decay = float(np.real(np.trace(model.total_decay() @ rho)))
    return {
        "start": detection.gamma1 * n + detection.dark_rate_start,
        "stop": stop + detection.dark_rate_stop,
        "loss": total_decay - (detection.gamma1 + detection.gamma2) * n,
    }
