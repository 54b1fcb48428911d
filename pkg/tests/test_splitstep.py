import numpy as np
import pytest
from dataclasses import replace
from numpy.testing import assert_allclose

from tiltcross.errors import EdgeMassExceeded, GridMismatch, ShiftOffGrid
from tiltcross.packets import (
    GaussianPacket,
    normalize,
    semiclassical_fourier,
    state_from_packet,
)
from tiltcross.potential import find_crossing, parametric_tanh
from tiltcross.splitstep import (
    SURFACE_COUPLED,
    SURFACE_LINEAR_UPPER,
    SURFACE_LOWER,
    SURFACE_UPPER,
    PropagatorSpec,
    adiabatic_transform,
    avron_herbst,
    evolve_to_crossing,
    propagate,
)

EPS = 0.02
GRID = (-20.0, 20.0, 4096)
POT = parametric_tanh(0.5, -0.4, 0.5, 1.0)


def upper_position_state(x_off=2.0):
    packet = normalize(GaussianPacket(1.0, 5.0, 0.25, x_off), eps=EPS)
    return semiclassical_fourier(state_from_packet(packet, EPS, *GRID))


def embedded(pos):
    two = replace(pos, values=np.stack([pos.values, np.zeros_like(pos.values)]))
    return adiabatic_transform(two, POT)


def coupled_spec(t0, t1, n_steps):
    return PropagatorSpec(eps=EPS, t0=t0, t1=t1, n_steps=n_steps, grid=GRID,
                          surface=SURFACE_COUPLED, pot=POT)


def test_norm_preserved():
    dia = embedded(upper_position_state())
    out = propagate(coupled_spec(0.0, 1.0, 800), dia)
    assert abs(out.norm() - dia.norm()) < 1e-12


def test_time_reversal():
    dia = embedded(upper_position_state())
    out = propagate(coupled_spec(0.0, 1.0, 800), dia)
    back = propagate(coupled_spec(1.0, 0.0, 800), out)
    err = np.linalg.norm(back.values - dia.values) / np.linalg.norm(dia.values)
    assert err < 1e-11


def test_second_order_self_convergence():
    """Halving dt divides the error by ~4 (the scheme is second order)."""
    dia = embedded(upper_position_state())
    outs = {n: propagate(coupled_spec(0.0, 1.0, n), dia).values
            for n in (200, 400, 800, 3200)}
    e200 = np.linalg.norm(outs[200] - outs[3200])
    e400 = np.linalg.norm(outs[400] - outs[3200])
    e800 = np.linalg.norm(outs[800] - outs[3200])
    assert 3.4 < e200 / e400 < 4.8
    assert 3.4 < e400 / e800 < 4.8


def test_constant_potential_is_exact():
    """With Z = 0 and constant X the kinetic and potential factors commute,
    so a single Strang pass reproduces the analytic two-level rotation."""
    pot_c = parametric_tanh(0.0, 0.0, 0.5, 0.0)
    pos = upper_position_state()
    dia = replace(pos, values=np.stack([pos.values, np.zeros_like(pos.values)]))
    t = 0.7
    spec = PropagatorSpec(eps=EPS, t0=0.0, t1=t, n_steps=140, grid=GRID,
                          surface=SURFACE_COUPLED, pot=pot_c)
    num = propagate(spec, dia)

    kf = 2.0 * np.pi * EPS * np.fft.fftfreq(GRID[2], d=pos.dx)
    ph_kin = np.exp(-1j * kf**2 * t / (2.0 * EPS))
    up_hat = np.fft.fft(pos.values)
    cosd, sind = np.cos(0.5 * t / EPS), np.sin(0.5 * t / EPS)
    exact = np.stack([np.fft.ifft(ph_kin * up_hat * cosd),
                      np.fft.ifft(ph_kin * up_hat * (-1j * sind))])
    err = np.linalg.norm(num.values - exact) / np.linalg.norm(exact)
    assert err < 1e-11


def test_scalar_band_propagation_norm():
    pos = upper_position_state()
    spec = PropagatorSpec(eps=EPS, t0=0.0, t1=-0.5, n_steps=200, grid=GRID,
                          surface=SURFACE_UPPER, pot=POT)
    out = propagate(spec, pos)
    assert abs(out.norm() - pos.norm()) < 1e-12
    spec_lo = PropagatorSpec(eps=EPS, t0=0.5, t1=0.0, n_steps=200, grid=GRID,
                             surface=SURFACE_LOWER, pot=POT)
    out_lo = propagate(spec_lo, pos)
    assert abs(out_lo.norm() - pos.norm()) < 1e-12


def test_adiabatic_transform_is_involutive():
    pos = upper_position_state()
    rng = np.random.default_rng(0)
    two = replace(pos, values=np.stack([pos.values,
                                        pos.values * rng.standard_normal(GRID[2])]))
    once = adiabatic_transform(two, POT)
    twice = adiabatic_transform(once, POT)
    assert_allclose(twice.values, two.values, rtol=0,
                    atol=1e-13 * np.abs(two.values).max())
    assert abs(once.norm() - two.norm()) < 1e-12


def test_avron_herbst_matches_split_step():
    packet = normalize(GaussianPacket(1.0, 5.0, 0.25, 0.0), eps=EPS)
    grid = (-40.0, 40.0, 8192)
    mom = state_from_packet(packet, EPS, *grid)
    pos = semiclassical_fourier(mom)
    s = 0.05
    spec = PropagatorSpec(eps=EPS, t0=0.0, t1=s, n_steps=2000, grid=grid,
                          surface=SURFACE_LINEAR_UPPER, pot=POT,
                          delta=0.5, lam=1.0)
    num = semiclassical_fourier(propagate(spec, pos))
    exact = avron_herbst(mom, s, "upper", delta=0.5, lam=1.0)
    err = np.linalg.norm(num.values - exact.values) / np.linalg.norm(exact.values)
    assert err < 1e-9


def test_avron_herbst_packet_route_matches_grid_route():
    packet = normalize(GaussianPacket(1.0, 5.0, 0.25, 0.2), eps=EPS)
    grid = (-40.0, 40.0, 8192)
    mom = state_from_packet(packet, EPS, *grid)
    a = avron_herbst(mom, 0.15, "lower", delta=0.5, lam=1.0)
    b = avron_herbst(mom, 0.15, "lower", delta=0.5, lam=1.0, packet=packet)
    assert np.linalg.norm(a.values - b.values) / np.linalg.norm(b.values) < 1e-10


def test_avron_herbst_no_tilt_is_pure_phase():
    packet = normalize(GaussianPacket(1.0, 5.0, 0.25, 0.0), eps=EPS)
    mom = state_from_packet(packet, EPS, *GRID)
    out = avron_herbst(mom, 0.3, "upper", delta=0.5, lam=0.0)
    assert_allclose(np.abs(out.values), np.abs(mom.values), rtol=0, atol=1e-14)


def test_avron_herbst_shift_off_grid():
    packet = normalize(GaussianPacket(1.0, 5.0, 0.25, 0.0), eps=EPS)
    mom = state_from_packet(packet, EPS, *GRID)
    with pytest.raises(ShiftOffGrid):
        avron_herbst(mom, 15.0, "upper", delta=0.5, lam=1.0)


def test_evolve_to_crossing():
    pos = upper_position_state(x_off=2.0)  # sits at x = -2 moving right
    state, t_c = evolve_to_crossing(pos, POT)
    assert t_c == pytest.approx(0.4008719403631574, abs=2e-3)
    dens = np.abs(state.values) ** 2
    mean_x = float((state.x * dens).sum() / dens.sum())
    assert abs(mean_x - find_crossing(POT)) < 1e-5


def test_evolve_to_crossing_already_there():
    pos = upper_position_state(x_off=0.0)
    state, t_c = evolve_to_crossing(pos, POT)
    assert t_c == 0.0
    assert_allclose(state.values, pos.values, rtol=0, atol=0)


def test_edge_mass_guard():
    pos = upper_position_state(x_off=-18.0)  # starts at x = +18 moving right
    spec = PropagatorSpec(eps=EPS, t0=0.0, t1=1.5, n_steps=600, grid=GRID,
                          surface=SURFACE_UPPER, pot=POT)
    with pytest.raises(EdgeMassExceeded):
        propagate(spec, pos)


def test_grid_mismatch_and_shape_checks():
    pos = upper_position_state()
    bad_spec = PropagatorSpec(eps=EPS, t0=0.0, t1=1.0, n_steps=100,
                              grid=(-20.0, 20.0, 2048),
                              surface=SURFACE_UPPER, pot=POT)
    with pytest.raises(GridMismatch):
        propagate(bad_spec, pos)
    with pytest.raises(ValueError):
        propagate(coupled_spec(0.0, 1.0, 100), pos)  # scalar into coupled
    mom = state_from_packet(GaussianPacket(1.0, 5.0, 0.25, 0.0), EPS, *GRID)
    with pytest.raises(ValueError):
        propagate(PropagatorSpec(eps=EPS, t0=0.0, t1=1.0, n_steps=100, grid=GRID,
                                 surface=SURFACE_UPPER, pot=POT), mom)


def test_spec_validation():
    with pytest.raises(ValueError):
        PropagatorSpec(eps=EPS, t0=0.0, t1=1.0, n_steps=0, grid=GRID,
                       surface=SURFACE_UPPER, pot=POT)
    with pytest.raises(ValueError):
        PropagatorSpec(eps=EPS, t0=0.0, t1=1.0, n_steps=10, grid=GRID,
                       surface="diagonal", pot=POT)
