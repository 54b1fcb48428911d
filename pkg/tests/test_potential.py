import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tiltcross.potential import (
    DiabaticPotential,
    custom_series,
    eval_adiabatic,
    find_crossing,
    landau_zener,
    natural_scale,
    parametric_tanh,
    stokes_data,
    tau_on_grid,
)

ALPHA, BETA, DELTA, LAM = 0.5, -0.4, 0.5, 1.0

# frozen from a converged run of the adaptive Gauss-Legendre path integral
TAU_DELTA = -0.16610312230809193 + 0.5376900405917037j
Q_DELTA = -0.20708367621614218 + 0.6384412974172314j


@pytest.fixture(scope="module")
def pot():
    return parametric_tanh(ALPHA, BETA, DELTA, LAM)


@pytest.fixture(scope="module")
def stokes(pot):
    return stokes_data(pot)


def test_crossing_at_origin(pot):
    assert abs(find_crossing(pot)) < 1e-10


def test_adiabatic_identities(pot):
    x = np.linspace(-6.0, 6.0, 201)
    rho, theta, d = eval_adiabatic(pot, x)
    assert_allclose(rho**2, pot.X(x) ** 2 + pot.Z(x) ** 2, rtol=1e-13)
    assert_allclose(rho * np.sin(theta), pot.X(x), rtol=0, atol=1e-13)
    assert_allclose(rho * np.cos(theta), pot.Z(x), rtol=0, atol=1e-13)
    assert_allclose(d, pot.d(x), rtol=1e-13)
    # theta comes back unwrapped: no 2 pi jumps across the crossing
    assert np.abs(np.diff(theta)).max() < 0.5


def test_matrix_eigenvalues_are_adiabatic_bands(pot):
    for x in (-1.3, 0.0, 0.8, 2.5):
        m = pot.matrix(x)
        rho, _, d = eval_adiabatic(pot, x)
        ev = np.sort(np.linalg.eigvalsh(m))
        assert_allclose(ev, [d - rho, d + rho], rtol=1e-12)


def test_stokes_constants(stokes):
    assert_allclose(stokes.tau_delta.real, TAU_DELTA.real, atol=1e-10)
    assert_allclose(stokes.tau_delta.imag, TAU_DELTA.imag, atol=1e-10)
    assert_allclose(stokes.q_delta.real, Q_DELTA.real, atol=1e-10)
    assert_allclose(stokes.q_delta.imag, Q_DELTA.imag, atol=1e-10)
    assert stokes.tau_c > 0.0
    assert stokes.tau_r == stokes.tau_delta.real


def test_stokes_local_data(stokes, pot):
    assert_allclose(stokes.delta, DELTA, rtol=1e-12)
    assert stokes.d0 == pytest.approx(0.0, abs=1e-12)
    # slope of the tilt at the crossing: lam * sech^2(0) = lam
    assert_allclose(stokes.lam, LAM, rtol=1e-9)


def test_gap_zero_really_is_one(pot, stokes):
    q = stokes.q_delta
    val = pot.Z(q) ** 2 + pot.X(q) ** 2
    assert abs(val) < 1e-12


def test_landau_zener_closed_form():
    """Linear model: q_delta = i delta/slope, tau_delta = i pi delta^2 / (2 slope)."""
    for delta, slope in ((0.5, 1.0), (0.3, 2.0), (1.0, 0.7)):
        st = stokes_data(landau_zener(delta, slope))
        assert_allclose(st.q_delta.imag, delta / slope, rtol=1e-9)
        assert abs(st.q_delta.real) < 1e-9
        assert_allclose(st.tau_c, math.pi * delta**2 / (2.0 * slope), rtol=1e-9)
        assert abs(st.tau_r) < 1e-9


def test_even_gap_gives_real_symmetric_scale():
    """Without the x^2 term the gap is even around 0, so Re tau_delta = 0."""
    st = stokes_data(parametric_tanh(ALPHA, 0.0, DELTA, LAM))
    assert abs(st.tau_r) < 1e-9
    assert st.tau_c > 0.0


def test_natural_scale_real_axis(pot, stokes):
    # on the real axis tau is real, odd-ish around x_c, and increasing
    q = np.linspace(-2.0, 2.0, 41)
    tau = tau_on_grid(pot, q, x_c=stokes.x_c)
    assert np.all(np.isreal(tau))
    assert np.all(np.diff(tau) > 0.0)
    assert abs(natural_scale(pot, stokes.x_c, x_c=stokes.x_c)) < 1e-12


def test_natural_scale_linear_near_crossing(pot, stokes):
    # d tau / dx = 2 rho, so tau ~ 2 delta (x - x_c) close in
    h = 1e-4
    tau = natural_scale(pot, stokes.x_c + h, x_c=stokes.x_c)
    assert_allclose(tau.real, 2.0 * DELTA * h, rtol=1e-4)


def test_custom_series_matches_landau_zener():
    series = custom_series([0.0, 1.5], [0.4], [0.0])
    lz = landau_zener(0.4, 1.5)
    x = np.linspace(-3.0, 3.0, 31)
    assert_allclose(series.Z(x), lz.Z(x), rtol=1e-14)
    assert_allclose(series.X(x), lz.X(x) * np.ones_like(x), rtol=1e-14)
    st_s, st_l = stokes_data(series), stokes_data(lz)
    assert_allclose(st_s.tau_delta, st_l.tau_delta, rtol=1e-8)


def test_potential_is_picklable(pot):
    import pickle

    clone = pickle.loads(pickle.dumps(pot))
    assert isinstance(clone, DiabaticPotential)
    x = np.linspace(-1.0, 1.0, 7)
    assert_allclose(clone.Z(x), pot.Z(x), rtol=0, atol=0)


def test_stokes_record_round_trip(stokes):
    from tiltcross.potential import StokesData

    rec = stokes.to_record()
    back = StokesData.from_record(rec)
    assert back.tau_delta == stokes.tau_delta
    assert back.q_delta == stokes.q_delta
    assert back.delta == stokes.delta
