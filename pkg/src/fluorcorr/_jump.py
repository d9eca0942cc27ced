"""Quantum-jump integration kernel.

The non-Hermitian drift ``exp(-i H_eff t)`` is applied in the eigenbasis of
``H_eff``, so advancing the state between jumps costs one elementwise
complex exponential instead of a matrix exponential.  With ``V`` the
eigenvector matrix and ``c`` the coefficient vector, the survival
probability is ``f(s) = c_s^dag (V^dag V) c_s`` with
``c_s = exp(-i lambda s) * c``; ``f`` is monotone non-increasing because the
anti-Hermitian part of ``H_eff`` is negative semidefinite, so the waiting
time ``f(s) = u`` has a unique root found by safeguarded Newton bisection.

Jump operators are pre-transformed: ``M_k = V^-1 A_k V`` applies the jump to
coefficients, ``W_k = (A_k V)^dag (A_k V)`` gives the jump rate as a
quadratic form in the coefficients.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from numba import njit

from .errors import NumericalError


@njit(cache=True)
def _matvec(a, x, out):
    n = a.shape[0]
    for i in range(n):
        acc = 0j
        for j in range(n):
            acc += a[i, j] * x[j]
        out[i] = acc


@njit(cache=True)
def _quad_form(g, c, tmp):
    """real(c^dag g c) for Hermitian g, using tmp as scratch."""
    _matvec(g, c, tmp)
    acc = 0.0
    for i in range(c.shape[0]):
        acc += (np.conj(c[i]) * tmp[i]).real
    return acc


@njit(cache=True)
def _drift(lam, c, s, out):
    for i in range(c.shape[0]):
        out[i] = np.exp(-1j * lam[i] * s) * c[i]


@njit(cache=True)
def _run(lam, gram, ops, wts, monitored, c_init, duration, qstep, rel_tol,
         cp_times, cp_out, tags, chans, rng):
    n = lam.shape[0]
    n_ops = ops.shape[0]
    n_cp = cp_times.shape[0]
    cap = tags.shape[0]

    c = c_init.copy()
    ce = np.empty(n, np.complex128)
    tmp = np.empty(n, np.complex128)
    tmp2 = np.empty(n, np.complex128)
    lce = np.empty(n, np.complex128)
    wk = np.empty(n_ops, np.float64)

    nrm = _quad_form(gram, c, tmp)
    for i in range(n):
        c[i] /= np.sqrt(nrm)

    t = 0.0
    icp = 0
    n_tags = 0
    while True:
        u = rng.random()
        if u < 1e-300:
            u = 1e-300
        remaining = duration - t
        _drift(lam, c, remaining, ce)
        f_end = _quad_form(gram, ce, tmp)
        if f_end >= u:
            # No jump before the end of the window.
            while icp < n_cp and cp_times[icp] <= duration:
                _drift(lam, c, cp_times[icp] - t, ce)
                nrm = _quad_form(gram, ce, tmp)
                for i in range(n):
                    cp_out[icp, i] = ce[i] / np.sqrt(nrm)
                icp += 1
            return n_tags

        # Bracket the root of f(s) = u inside (0, remaining].
        r0 = 0.0
        for k in range(n_ops):
            r0 += _quad_form(wts[k], c, tmp)
        hi = remaining
        if r0 > 0.0:
            guess = -np.log(u) / r0
            if guess < remaining:
                hi = guess
        lo = 0.0
        _drift(lam, c, hi, ce)
        f_hi = _quad_form(gram, ce, tmp)
        while f_hi >= u and hi < remaining:
            lo = hi
            hi = hi * 2.0
            if hi > remaining:
                hi = remaining
            _drift(lam, c, hi, ce)
            f_hi = _quad_form(gram, ce, tmp)

        # Safeguarded Newton for the waiting time.
        s = 0.5 * (lo + hi)
        for _ in range(200):
            _drift(lam, c, s, ce)
            f = _quad_form(gram, ce, tmp)
            err = f - u
            if abs(err) <= rel_tol * u + 1e-16:
                break
            if err > 0.0:
                lo = s
            else:
                hi = s
            if hi - lo <= 1e-15 * (s + 1e-300):
                break
            for i in range(n):
                lce[i] = lam[i] * ce[i]
            _matvec(gram, lce, tmp2)
            z = 0j
            for i in range(n):
                z += np.conj(ce[i]) * tmp2[i]
            fprime = 2.0 * z.imag
            s_new = 0.5 * (lo + hi)
            if fprime < 0.0:
                cand = s - err / fprime
                if lo < cand < hi and np.isfinite(cand):
                    s_new = cand
            s = s_new

        # Checkpoints passed during this waiting interval.
        while icp < n_cp and cp_times[icp] <= t + s:
            _drift(lam, c, cp_times[icp] - t, tmp2)
            nrm = _quad_form(gram, tmp2, tmp)
            for i in range(n):
                cp_out[icp, i] = tmp2[i] / np.sqrt(nrm)
            icp += 1

        _drift(lam, c, s, ce)
        t += s

        wsum = 0.0
        for k in range(n_ops):
            wk[k] = _quad_form(wts[k], ce, tmp)
            wsum += wk[k]
        if wsum <= 0.0:
            # Defensive: cannot happen at a genuine jump time.
            nrm = _quad_form(gram, ce, tmp)
            for i in range(n):
                c[i] = ce[i] / np.sqrt(nrm)
            continue
        x = rng.random() * wsum
        k_sel = n_ops - 1
        acc = 0.0
        for k in range(n_ops):
            acc += wk[k]
            if x < acc:
                k_sel = k
                break

        _matvec(ops[k_sel], ce, c)
        nrm = _quad_form(gram, c, tmp)
        for i in range(n):
            c[i] /= np.sqrt(nrm)
        if monitored[k_sel] >= 0:
            if n_tags >= cap:
                return -1
            tags[n_tags] = np.int64(t / qstep)
            chans[n_tags] = monitored[k_sel]
            n_tags += 1


class JumpRun:
    """Eigenbasis form of one effective Hamiltonian plus its jump operators."""

    def __init__(self, h_eff: np.ndarray, jump_ops, monitored, recon_tol: float = 1e-9):
        h_eff = np.asarray(h_eff, dtype=complex)
        n = h_eff.shape[0]
        lam, v = scipy.linalg.eig(h_eff)
        try:
            vinv = scipy.linalg.inv(v)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError("effective Hamiltonian eigenbasis is singular") from exc
        scale = max(1.0, float(np.linalg.norm(h_eff)))
        if np.linalg.norm((v * lam[None, :]) @ vinv - h_eff) > recon_tol * scale:
            raise NumericalError(
                "effective Hamiltonian is too ill-conditioned for eigenbasis evolution"
            )
        self.dim = n
        self.lam = np.ascontiguousarray(lam)
        self.v = v
        self.vinv = vinv
        self.gram = np.ascontiguousarray(v.conj().T @ v)
        self.ops = np.ascontiguousarray(
            np.stack([vinv @ np.asarray(a, complex) @ v for a in jump_ops])
        )
        avs = [np.asarray(a, complex) @ v for a in jump_ops]
        self.wts = np.ascontiguousarray(np.stack([av.conj().T @ av for av in avs]))
        self.monitored = np.ascontiguousarray(np.asarray(monitored, dtype=np.int8))

    def coeffs(self, psi: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(self.vinv @ np.asarray(psi, complex))

    def run(self, psi0: np.ndarray, duration: float, qstep: float, rng,
            cp_times: np.ndarray | None = None, rel_tol: float = 1e-10,
            rate_hint: float | None = None):
        """Integrate one segment; returns (tags, channels, checkpoint states).

        Checkpoint states are physical-basis unit vectors sampled at
        ``cp_times`` (absolute times within the segment).  The tag buffer is
        grown and the segment re-run from a saved RNG state if the click
        count estimate was too small.
        """
        if cp_times is None:
            cp_times = np.empty(0, dtype=float)
        cp_times = np.ascontiguousarray(cp_times, dtype=float)
        if cp_times.size and (np.any(np.diff(cp_times) <= 0) or cp_times[0] <= 0
                              or cp_times[-1] > duration):
            raise ValueError("checkpoint times must be increasing and inside (0, duration]")
        cp_out = np.empty((cp_times.size, self.dim), dtype=np.complex128)
        expect = 64.0 + (rate_hint or 0.0) * duration
        capacity = int(expect + 6.0 * np.sqrt(expect)) + 64
        c0 = self.coeffs(psi0)
        state0 = rng.bit_generator.state
        while True:
            tags = np.empty(capacity, dtype=np.int64)
            chans = np.empty(capacity, dtype=np.uint8)
            rng.bit_generator.state = state0
            n = _run(self.lam, self.gram, self.ops, self.wts, self.monitored,
                     c0, float(duration), float(qstep), float(rel_tol),
                     cp_times, cp_out, tags, chans, rng)
            if n >= 0:
                eig_states = cp_out if cp_times.size else cp_out[:0]
                states = eig_states @ self.v.T if cp_times.size else np.empty((0, self.dim), complex)
                return tags[:n].copy(), chans[:n].copy(), states
            capacity *= 2
