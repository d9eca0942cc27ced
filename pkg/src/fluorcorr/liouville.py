"""Lindblad generator, steady state, and two-time correlation functions.

Vectorisation is column-stacking: ``vec(rho) = rho.reshape(-1, order="F")``,
so ``vec(A rho B) = kron(B.T, A) vec(rho)``.  Two-time correlators come from
the quantum regression theorem: condition on an emission, propagate the
(unnormalised) conditioned operator with ``exp(L tau)``, take expectation
values, and divide by the stationary moments.

Phase convention for the field correlations: the detector phase ``phi`` is
measured relative to the mean steady-state dipole of the detected
transition.  Internally the raw local-oscillator phase is ``phi + theta``
with ``theta = arg <sigma^->_ss``, which makes the long-delay asymptote of
the in-phase curve exactly +1 regardless of laser detuning or Zeeman
rotations.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from . import homodyne as _homodyne
from .atom import AtomModel
from .curves import CorrelationCurve
from .errors import DegenerateSteadyStateError, NumericalError, PhaseReferenceError

__all__ = [
    "Liouvillian",
    "DensityOperator",
    "vec",
    "unvec",
    "liouvillian",
    "steady_state",
    "propagate",
    "conditional_state",
    "Propagator",
    "CorrelationEngine",
    "g2_curve",
    "g15_curve",
    "gtotal_direct",
]


def vec(matrix: np.ndarray) -> np.ndarray:
    """Column-stack a matrix into a vector."""
    return np.asarray(matrix, dtype=complex).reshape(-1, order="F")


def unvec(vector: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    return np.asarray(vector, dtype=complex).reshape((dim, dim), order="F")


@dataclass(frozen=True)
class Liouvillian:
    """Matrix of the Lindblad generator acting on column-stacked operators."""

    matrix: np.ndarray
    dim: int
    convention: str = "column-stacking"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.dim**2, self.dim**2):
            raise ValueError(f"Liouvillian shape {m.shape} != ({self.dim**2}, {self.dim**2})")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class DensityOperator:
    """A physical density matrix; construction validates the defining properties."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise NumericalError(f"density matrix must be square, got {m.shape}")
        tr = complex(np.trace(m))
        if abs(tr - 1.0) > 1e-9:
            raise NumericalError(f"density matrix trace {tr} differs from 1 beyond 1e-9")
        if np.abs(m - m.conj().T).max() > 1e-12 * max(1.0, float(np.abs(m).max())):
            raise NumericalError("density matrix is not Hermitian to 1e-12")
        eigmin = float(scipy.linalg.eigvalsh(m)[0])
        if eigmin < -1e-9:
            raise NumericalError(f"density matrix has eigenvalue {eigmin} < -1e-9")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix))

    def expectation(self, operator: np.ndarray) -> complex:
        return complex(np.trace(np.asarray(operator) @ self.matrix))


def liouvillian(model: AtomModel) -> Liouvillian:
    """Assemble the Lindblad generator of ``model``.

    ``L = -i (I x H - H^T x I)
    + sum_k [conj(C_k) x C_k - (I x C_k^dag C_k + (C_k^dag C_k)^T x I) / 2]``
    with ``x`` the Kronecker product and ``C_k`` the collapse operators.
    """
    dim = model.dim
    eye = np.eye(dim, dtype=complex)
    h = model.hamiltonian
    gen = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for c in model.collapse_matrices():
        cdc = c.conj().T @ c
        gen += np.kron(c.conj(), c)
        gen -= 0.5 * (np.kron(eye, cdc) + np.kron(cdc.T, eye))
    return Liouvillian(gen, dim)


def _nullspace_dimension(matrix: np.ndarray, rel_tol: float = 1e-10) -> int:
    svals = scipy.linalg.svdvals(matrix)
    cutoff = rel_tol * max(svals[0], 1e-300)
    return int(np.sum(svals <= cutoff))


def steady_state(liou: Liouvillian, rel_tol: float = 1e-10) -> DensityOperator:
    """Unique stationary state of the generator.

    Checks that the stationary subspace is one-dimensional (otherwise raises
    :class:`DegenerateSteadyStateError`), then solves ``L vec(rho) = 0``
    with the trace condition replacing one row.  The relative residual
    ``|L vec(rho)| / (1 + |L|)`` must not exceed ``rel_tol``.
    """
    null_dim = _nullspace_dimension(liou.matrix)
    if null_dim > 1:
        raise DegenerateSteadyStateError(null_dim)
    dim = liou.dim
    a = np.array(liou.matrix)
    trace_row = np.zeros(dim * dim, dtype=complex)
    trace_row[:: dim + 1] = 1.0
    a[0, :] = trace_row
    b = np.zeros(dim * dim, dtype=complex)
    b[0] = 1.0
    try:
        x = scipy.linalg.solve(a, b)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"steady-state solve failed: {exc}") from exc
    rho = unvec(x, dim)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.real(np.trace(rho))
    scale = 1.0 + float(np.abs(liou.matrix).sum(axis=1).max())
    residual = float(np.linalg.norm(liou.matrix @ vec(rho)))
    if residual > rel_tol * scale:
        raise NumericalError(
            f"steady-state residual {residual:.3e} exceeds {rel_tol:.1e} * {scale:.3e}"
        )
    return DensityOperator(rho)


def propagate(liou: Liouvillian, rho: DensityOperator | np.ndarray, tau: float) -> DensityOperator:
    """Evolve a state for a delay ``tau >= 0`` under the generator."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    mat = np.asarray(getattr(rho, "matrix", rho), dtype=complex)
    out = unvec(scipy.linalg.expm(liou.matrix * tau) @ vec(mat), liou.dim)
    out = 0.5 * (out + out.conj().T)
    return DensityOperator(out)


def conditional_state(rho_ss: DensityOperator, sigma_minus: np.ndarray) -> DensityOperator:
    """State immediately after a detected emission, ``s rho s^dag / <s^dag s>``."""
    rho = np.asarray(getattr(rho_ss, "matrix", rho_ss), dtype=complex)
    sm = np.asarray(sigma_minus, dtype=complex)
    reduced = sm @ rho @ sm.conj().T
    weight = float(np.real(np.trace(reduced)))
    if weight <= 1e-14:
        raise NumericalError("no excited population on the detected transition")
    return DensityOperator(reduced / weight)


class Propagator:
    """Evaluates ``Tr[O exp(L tau) rho0]`` on delay grids.

    Diagonalises the generator once; falls back to repeated matrix
    exponentials when the eigenbasis is too ill-conditioned to reconstruct
    the generator (relative Frobenius error above ``recon_tol``).
    """

    def __init__(self, liou: Liouvillian, recon_tol: float = 1e-9):
        self.liou = liou
        self._eig = None
        mat = liou.matrix
        scale = max(1.0, float(np.linalg.norm(mat)))
        try:
            w, v = scipy.linalg.eig(mat)
            vinv = scipy.linalg.inv(v)
            recon = (v * w[None, :]) @ vinv
            if np.linalg.norm(recon - mat) <= recon_tol * scale:
                self._eig = (w, v, vinv)
        except scipy.linalg.LinAlgError:
            pass

    @property
    def uses_eigenbasis(self) -> bool:
        return self._eig is not None

    def expectation_grid(self, rho0: np.ndarray, observables: Sequence[np.ndarray],
                         taus: np.ndarray) -> np.ndarray:
        """Return the complex array ``E[j, k] = Tr[O_j exp(L tau_k) rho0]``.

        ``rho0`` may be any operator (it is not normalised here), which is
        what the regression theorem needs.
        """
        taus = np.asarray(taus, dtype=float)
        if np.any(taus < 0):
            raise ValueError("delays must be non-negative")
        rows = np.stack([vec(np.asarray(o).T) for o in observables])
        if self._eig is not None:
            w, v, vinv = self._eig
            coeff = vinv @ vec(rho0)
            amp = (rows @ v) * coeff[None, :]
            return amp @ np.exp(np.outer(w, taus))
        order = np.argsort(taus)
        state = vec(rho0)
        out = np.empty((len(observables), taus.size), dtype=complex)
        t_prev = 0.0
        for idx in order:
            dt = taus[idx] - t_prev
            if dt > 0:
                state = scipy.linalg.expm(self.liou.matrix * dt) @ state
                t_prev = taus[idx]
            out[:, idx] = rows @ state
        return out


class CorrelationEngine:
    """Shared steady-state context for the correlation curves of one model.

    Building the engine computes the generator, its steady state and the
    stationary moments of the detected transition once; the curve methods
    then only propagate conditioned operators.
    """

    def __init__(self, model: AtomModel):
        self.model = model
        self.liou = liouvillian(model)
        self.propagator = Propagator(self.liou)
        self.rho_ss = steady_state(self.liou)
        sm = model.sigma_det
        rho = self.rho_ss.matrix
        self.n_excited = float(np.real(np.trace(sm.conj().T @ sm @ rho)))
        if self.n_excited <= 1e-14:
            raise NumericalError("steady state has no excited population on the "
                                 "detected transition; correlations are undefined")
        self.dipole = complex(np.trace(rho @ sm))
        self._rho_after_click = sm @ rho @ sm.conj().T  # unnormalised, trace n_excited
        self._ground_weight = float(np.real(np.trace(sm @ sm.conj().T @ rho)))

    @property
    def theta(self) -> float:
        """Phase of the mean steady-state dipole (the LO phase reference)."""
        if abs(self.dipole) <= 1e-12:
            raise PhaseReferenceError(
                "steady-state dipole of the detected transition vanishes; "
                "no phase reference for field correlations"
            )
        return cmath.phase(self.dipole)

    def _meta(self) -> dict:
        return {"model": self.model.fingerprint(), "n_excited": self.n_excited}

    def g2(self, taus: np.ndarray) -> CorrelationCurve:
        """Normalised intensity correlation of the detected transition."""
        ex = self.propagator.expectation_grid(
            self._rho_after_click,
            [self.model.sigma_det.conj().T @ self.model.sigma_det],
            taus,
        )[0]
        values = np.real(ex) / self.n_excited**2
        return CorrelationCurve(taus, values, None, kind="g2", meta=self._meta())

    def _rotated_numerator(self, phi: float, taus: np.ndarray,
                           phase_reference: str) -> np.ndarray:
        sm = self.model.sigma_det
        if phase_reference == "dipole":
            phi_raw = phi + self.theta
        elif phase_reference == "raw":
            phi_raw = phi
        else:
            raise ValueError("phase_reference must be 'dipole' or 'raw'")
        up, down = self.propagator.expectation_grid(
            self._rho_after_click, [sm.conj().T, sm], taus
        )
        return np.real(np.exp(1j * phi_raw) * up + np.exp(-1j * phi_raw) * down)

    def _field_denominator(self, denominator: str) -> float:
        s = 2.0 * abs(self.dipole)
        if denominator == "excited":
            return s * self.n_excited
        if denominator == "ground":
            return s * self._ground_weight
        raise ValueError("denominator must be 'excited' or 'ground'")

    def g15(self, phi: float, taus: np.ndarray, *, denominator: str = "excited",
            phase_reference: str = "dipole") -> CorrelationCurve:
        """Normalised intensity-field correlation at detector phase ``phi``.

        The default ``denominator='excited'`` divides by
        ``<sigma^+ + sigma^-> <sigma^+ sigma^->``, which is the normalisation
        under which the measured total correlation decomposes exactly into
        constant, ``g2`` and ``g15`` parts.  ``'ground'`` divides by the
        de-excited weight ``<sigma^- sigma^+>`` instead (a variant that
        appears in print); it is provided for comparison only.
        """
        num = self._rotated_numerator(phi, taus, phase_reference)
        den = self._field_denominator(denominator)
        meta = self._meta()
        meta.update(dipole_abs=abs(self.dipole), theta=self.theta,
                    denominator=denominator)
        return CorrelationCurve(taus, num / den, None, kind="g15", phi=phi, meta=meta)

    def gtotal(self, detection: _homodyne.DetectionChain, phi: float,
               taus: np.ndarray) -> CorrelationCurve:
        """Unnormalised conditioned stop rate after a start click.

        Returns ``gamma1 * <sigma^+(0) X^dag X(tau) sigma^-(0)>`` with
        ``X = E exp(i phi') + sqrt(gamma2) sigma^-`` and ``phi'`` the
        dipole-referenced phase; the normalisation constant
        ``prefactor * (1 - visibility)`` rides along in the metadata under
        ``"norm"``.
        """
        derived = _homodyne.derive(detection, self.rho_ss, self.model.sigma_det)
        sm = self.model.sigma_det
        number_op = sm.conj().T @ sm
        pops = np.real(self.propagator.expectation_grid(
            self._rho_after_click, [number_op], taus)[0])
        num15 = self._rotated_numerator(phi, taus, "dipole")
        e = detection.lo_amplitude
        g1, g2rate = detection.gamma1, detection.gamma2
        values = g1 * (e * e * self.n_excited
                       + e * math.sqrt(g2rate) * num15
                       + g2rate * pops)
        meta = self._meta()
        meta.update(
            norm=derived.prefactor * (1.0 - derived.visibility),
            prefactor=derived.prefactor,
            visibility=derived.visibility,
            intensity_ratio=derived.intensity_ratio,
            theta=self.theta if abs(self.dipole) > 1e-12 else None,
        )
        return CorrelationCurve(taus, values, None, kind="gtotal", phi=phi, meta=meta)


def g2_curve(model: AtomModel, taus: np.ndarray) -> CorrelationCurve:
    """Intensity correlation ``g2(tau)`` of the detected transition."""
    return CorrelationEngine(model).g2(taus)


def g15_curve(model: AtomModel, phi: float, taus: np.ndarray, *,
              denominator: str = "excited",
              phase_reference: str = "dipole") -> CorrelationCurve:
    """Intensity-field correlation ``g15_phi(tau)``; see :meth:`CorrelationEngine.g15`."""
    return CorrelationEngine(model).g15(phi, taus, denominator=denominator,
                                        phase_reference=phase_reference)


def gtotal_direct(model: AtomModel, detection: _homodyne.DetectionChain,
                  phi: float, taus: np.ndarray) -> CorrelationCurve:
    """Direct regression evaluation of the conditioned stop rate (unnormalised)."""
    return CorrelationEngine(model).gtotal(detection, phi, taus)
