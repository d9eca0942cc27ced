"""Homodyne weights, composition/extraction algebra and phase jitter."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluorcorr.atom import build_two_level
from fluorcorr.curves import CorrelationCurve
from fluorcorr.errors import ConfigError
from fluorcorr.homodyne import (
    DetectionChain,
    HomodyneDerived,
    compose_gtotal,
    derive,
    extract_inphase,
    extract_quadrature,
    phase_jitter_average,
)
from fluorcorr.liouville import liouvillian, steady_state

from oracles import two_level_steady


def _chain(**kw):
    base = dict(gamma1=1.0e7, gamma2=0.5e7, lo_amplitude=2.0e3)
    base.update(kw)
    return DetectionChain(**base)


def _curve(values, kind, phi=None, stderr=None, tau=None):
    values = np.asarray(values, dtype=float)
    if tau is None:
        tau = np.linspace(0.0, 1.0, values.size)
    return CorrelationCurve(tau, values, stderr, kind=kind, phi=phi)


# ---------------------------------------------------------------------------
# derive()
# ---------------------------------------------------------------------------

def test_derive_matches_closed_form_moments():
    rabi, det, gamma = 2.85, 0.0, 1.0
    model = build_two_level(rabi, det, gamma)
    rho = steady_state(liouvillian(model))
    n, coh = two_level_steady(rabi, det, gamma)
    s = 2.0 * abs(coh)
    chain = _chain(gamma1=0.6, gamma2=0.3, lo_amplitude=0.8)
    d = derive(chain, rho, model.sigma_det)
    e = chain.lo_amplitude
    bracket = e * e + e * math.sqrt(chain.gamma2) * s + chain.gamma2 * n
    assert d.prefactor == pytest.approx(chain.gamma1 * n * bracket, rel=1e-12)
    assert d.visibility == pytest.approx(
        e * math.sqrt(chain.gamma2) * s / bracket, rel=1e-12)
    assert d.intensity_ratio == pytest.approx(
        chain.gamma2 * n / (e * e + chain.gamma2 * n), rel=1e-12)


def test_derive_start_flux_only_scales_prefactor():
    """gamma1 sets the start rate; V and r must not depend on it."""
    model = build_two_level(2.85, 0.0, 1.0)
    rho = steady_state(liouvillian(model))
    a = derive(_chain(gamma1=0.1), rho, model.sigma_det)
    b = derive(_chain(gamma1=10.0), rho, model.sigma_det)
    assert b.visibility == pytest.approx(a.visibility, rel=1e-14)
    assert b.intensity_ratio == pytest.approx(a.intensity_ratio, rel=1e-14)
    assert b.prefactor == pytest.approx(100.0 * a.prefactor, rel=1e-12)


def test_derive_zero_lo_amplitude():
    """Without an LO there is no interference and the stop arm is all atom."""
    model = build_two_level(2.85, 0.0, 1.0)
    rho = steady_state(liouvillian(model))
    d = derive(_chain(lo_amplitude=0.0), rho, model.sigma_det)
    assert d.visibility == 0.0
    assert d.intensity_ratio == 1.0


def test_detection_chain_rejects_negative_parameters():
    for field in ("gamma1", "gamma2", "lo_amplitude", "dark_rate_start",
                  "dark_rate_stop", "phase_jitter"):
        with pytest.raises(ConfigError):
            _chain(**{field: -1.0})


def test_homodyne_derived_range_checks():
    with pytest.raises(ValueError):
        HomodyneDerived(prefactor=-1.0, visibility=0.2, intensity_ratio=0.3)
    with pytest.raises(ValueError):
        HomodyneDerived(prefactor=1.0, visibility=1.2, intensity_ratio=0.3)
    with pytest.raises(ValueError):
        HomodyneDerived(prefactor=1.0, visibility=0.2, intensity_ratio=-0.1)


# ---------------------------------------------------------------------------
# compose / extract algebra
# ---------------------------------------------------------------------------

def test_compose_constant_offset_at_zero_delay():
    g2 = _curve([0.0, 0.5, 1.0], "g2")
    g15 = _curve([0.0, 0.3, 1.0], "g15", phi=0.0)
    total = compose_gtotal(g2, g15, visibility=0.18, intensity_ratio=0.31)
    assert total.values[0] == pytest.approx(1.0 - 0.31, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(
    v=st.floats(min_value=0.01, max_value=0.95),
    r=st.floats(min_value=0.0, max_value=1.0),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_extraction_inverts_composition(v, r, seed):
    """Three composed phase curves always give back the two field curves."""
    rng = np.random.default_rng(seed)
    n = 17
    g2 = _curve(rng.uniform(0.0, 2.0, n), "g2")
    f0 = rng.uniform(-1.5, 1.5, n)
    fq = rng.uniform(-1.5, 1.5, n)
    gt0 = compose_gtotal(g2, _curve(f0, "g15", 0.0), v, r)
    gtq = compose_gtotal(g2, _curve(fq, "g15", math.pi / 2), v, r)
    gtpi = compose_gtotal(g2, _curve(-f0, "g15", math.pi), v, r)
    got0 = extract_inphase(gt0, gtpi, v)
    gotq = extract_quadrature(gt0, gtq, gtpi, v)
    np.testing.assert_allclose(got0.values, f0, atol=1e-12)
    np.testing.assert_allclose(gotq.values, fq, atol=1e-12)


def test_extraction_error_propagation():
    tau = np.linspace(0.0, 1.0, 5)
    v = 0.2
    w = (1.0 - v) / (2.0 * v)
    mk = lambda err: CorrelationCurve(tau, np.ones(5), np.full(5, err), kind="gtotal")
    inph = extract_inphase(mk(0.1), mk(0.2), v)
    np.testing.assert_allclose(inph.stderr, w * math.hypot(0.1, 0.2), atol=1e-15)
    quad = extract_quadrature(mk(0.1), mk(0.3), mk(0.2), v)
    np.testing.assert_allclose(
        quad.stderr, w * math.sqrt(4 * 0.3**2 + 0.1**2 + 0.2**2), atol=1e-15)


def test_extraction_rejects_degenerate_visibility():
    gt = _curve([1.0, 1.0], "gtotal")
    for v in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            extract_inphase(gt, gt, v)


def test_compose_rejects_mismatched_grids():
    g2 = _curve([0.0, 1.0], "g2", tau=np.array([0.0, 1.0]))
    g15 = _curve([0.0, 1.0], "g15", phi=0.0, tau=np.array([0.0, 2.0]))
    with pytest.raises(ValueError):
        compose_gtotal(g2, g15, 0.2, 0.3)


def test_compose_rejects_wrong_kinds():
    a = _curve([0.0, 1.0], "g2")
    with pytest.raises(ValueError):
        compose_gtotal(a, a, 0.2, 0.3)


# ---------------------------------------------------------------------------
# phase jitter
# ---------------------------------------------------------------------------

def test_phase_jitter_damps_oscillating_part_analytically():
    """For values a + b cos(phi) + c sin(phi), Gaussian jitter multiplies the
    oscillating part by exp(-sigma^2/2) exactly."""
    tau = np.linspace(0.0, 1.0, 9)
    a = np.linspace(1.0, 2.0, 9)
    b = np.linspace(-0.5, 0.5, 9)
    c = np.full(9, 0.25)

    def fn(phi):
        return CorrelationCurve(
            tau, a + b * math.cos(phi) + c * math.sin(phi), None, kind="gtotal")

    for sigma in (0.05, 0.17, 0.6):
        for phi0 in (0.0, 1.1, math.pi):
            got = phase_jitter_average(fn, phi0, sigma)
            damp = math.exp(-0.5 * sigma**2)
            want = a + damp * (b * math.cos(phi0) + c * math.sin(phi0))
            np.testing.assert_allclose(got.values, want, atol=1e-12)


def test_phase_jitter_zero_sigma_is_identity():
    tau = np.linspace(0.0, 1.0, 4)
    fn = lambda phi: CorrelationCurve(tau, np.full(4, math.cos(phi)), None, kind="gtotal")
    got = phase_jitter_average(fn, 0.7, 0.0)
    np.testing.assert_allclose(got.values, math.cos(0.7), atol=0)


def test_phase_jitter_rejects_negative_sigma():
    fn = lambda phi: _curve([1.0, 1.0], "gtotal")
    with pytest.raises(ValueError):
        phase_jitter_average(fn, 0.0, -0.1)
