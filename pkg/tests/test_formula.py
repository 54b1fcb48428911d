import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import dblquad

from tiltcross.errors import ConstraintViolated, CutoffRegion
from tiltcross.formula import (
    MODE_HERMITE,
    OFFSET_IN_A01,
    OFFSET_IN_NONE,
    VARIANT_SIMPLIFIED,
    AlphaSet,
    TransitionInputs,
    alpha_coeffs,
    constraint_margin,
    gaussian_double_integral,
    phase_shift,
    select_n0,
    transmitted_gaussian,
    transmitted_hagedorn,
    transmitted_sum,
)
from tiltcross.packets import (
    GaussianPacket,
    GridState,
    HagedornPacket,
    MOMENTUM,
    PacketSum,
    normalize,
)
from tiltcross.potential import parametric_tanh, stokes_data

EPS = 0.02
POT = parametric_tanh(0.5, -0.4, 0.5, 1.0)
ST = stokes_data(POT)
K_GRID = GridState(EPS, -40.0, 40.0, 8192, np.zeros(8192, complex), MOMENTUM).k

# frozen outputs of this module at the reference configuration
NORM_SQ_SINGLE = 2.950561077645286e-05
NORM_SQ_SIMPLIFIED = 2.9167355658427328e-05
PHI_P5 = -0.06177336790368404
ORDER_C14 = (5.135880712214838, 5.234643002055103, 5.039988825281705)
ORDER_C18 = (5.09944394365459, 5.272045800805101, 5.078825349013953)


def single_inputs(**kw):
    packet = kw.pop("packet", None) or normalize(
        GaussianPacket(1.0, 5.0, 0.25, 0.0), eps=EPS)
    return TransitionInputs(EPS, kw.pop("stokes", ST), packet, K_GRID)


def test_optimal_order_values():
    for c, frozen in ((0.25, ORDER_C14), (0.125, ORDER_C18)):
        order = select_n0(ST.delta, ST.tau_c, EPS, c, 5.0)
        assert_allclose((order.n0, order.k0, order.eta0), frozen, rtol=1e-9)


def test_optimal_order_invariants():
    order = select_n0(ST.delta, ST.tau_c, EPS, 0.25, 5.0)
    assert_allclose(order.k0**2, order.eta0**2 + 4.0 * ST.delta, rtol=1e-12)
    assert_allclose(order.n0, ST.tau_c / (EPS * order.k0), rtol=1e-12)
    # defining fixed point: eta = k (1 - 4 c delta (eta - p0) / tau_c)
    resid = order.k0 * (1.0 - 4.0 * 0.25 * ST.delta * (order.eta0 - 5.0)
                        / ST.tau_c) - order.eta0
    assert abs(resid) < 1e-10


def test_optimal_order_momentum_reflection():
    plus = select_n0(ST.delta, ST.tau_c, EPS, 0.25, 5.0)
    minus = select_n0(ST.delta, ST.tau_c, EPS, 0.25, -5.0)
    assert_allclose(minus.eta0, -plus.eta0, rtol=1e-12)
    assert_allclose(minus.k0, plus.k0, rtol=1e-12)


def test_phase_shift_value_and_tilt_free_limit():
    order = select_n0(ST.delta, ST.tau_c, EPS, 0.25, 5.0)
    assert_allclose(phase_shift(5.0, order, EPS, ST.lam, ST.delta), PHI_P5,
                    rtol=1e-12)
    assert phase_shift(5.0, order, EPS, 0.0, ST.delta) == 0.0


def test_inputs_validation():
    with pytest.raises(ValueError):
        single_inputs(packet=GaussianPacket(1.0, 1.0, 0.25, 0.0))  # |p0| <= 2 sqrt(delta)
    with pytest.raises(ValueError):
        TransitionInputs(-EPS, ST, GaussianPacket(1.0, 5.0, 0.25, 0.0), K_GRID)


def test_transmitted_norm_frozen():
    res = transmitted_gaussian(single_inputs())
    assert_allclose(res.norm_sq, NORM_SQ_SINGLE, rtol=1e-9)
    assert_allclose(res.phi, PHI_P5, rtol=1e-12)


def test_zero_tilt_collapses_to_short_form():
    """At lam = 0 the double integral degenerates and the transmitted packet
    reduces to -(k+eta)/(2 eta) phi_hat(eta) e^{-tau_c|k-eta|/(2 delta eps)}
    e^{-i tau_r (k-eta)/(2 delta eps)} with no extra phase."""
    pot0 = parametric_tanh(0.5, -0.4, 0.5, 0.0)
    st0 = stokes_data(pot0)
    g = GaussianPacket(0.8 - 0.2j, 5.0, 0.25, 0.3)
    res = transmitted_gaussian(TransitionInputs(EPS, st0, g, K_GRID))
    assert res.phi == 0.0

    delta = st0.delta
    mask = K_GRID**2 > 4.0 * delta
    km = K_GRID[mask]
    eta = np.sign(g.p0) * np.sqrt(km**2 - 4.0 * delta)
    phat = g.A * np.exp(-g.c * (eta - g.p0) ** 2 / EPS + 1j * eta * g.x_off / EPS)
    short = (-(km + eta) / (2.0 * eta) * phat
             * np.exp(-st0.tau_c * np.abs(km - eta) / (2.0 * delta * EPS))
             * np.exp(-1j * st0.tau_r * (km - eta) / (2.0 * delta * EPS)))
    vals = res.psi_minus_hat[mask]
    big = np.abs(short) > 1e-200 * np.abs(short).max()
    rel = np.abs(vals[big] - short[big]) / np.abs(short[big])
    assert rel.max() < 1e-12


def test_double_integral_against_quadrature():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 5:
        al = AlphaSet(
            a10=complex(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)),
            a01=complex(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)),
            a11=complex(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)),
            a20=complex(-rng.uniform(0.3, 3.0), rng.uniform(-1.0, 1.0)),
            a02=complex(-rng.uniform(0.3, 3.0), rng.uniform(-1.0, 1.0)),
            eta_star=0.0)
        if constraint_margin(al) <= 0.05:
            continue
        checked += 1
        closed = gaussian_double_integral(al)

        def f(s, e, part):
            v = np.exp(al.a20 * e * e + al.a10 * e + al.a11 * e * s
                       + al.a01 * s + al.a02 * s * s)
            return v.real if part == "re" else v.imag

        re, _ = dblquad(f, -np.inf, np.inf, -np.inf, np.inf, args=("re",))
        im, _ = dblquad(f, -np.inf, np.inf, -np.inf, np.inf, args=("im",))
        assert abs(complex(re, im) - closed) / abs(closed) < 1e-6


def test_double_integral_rejects_divergent_exponent():
    al = AlphaSet(a10=0.0, a01=0.0, a11=0.0, a20=0.5 + 0.0j, a02=-1.0 + 0.0j,
                  eta_star=0.0)
    with pytest.raises(ConstraintViolated):
        gaussian_double_integral(al)


def test_alpha_coeffs_cutoff_region():
    with pytest.raises(CutoffRegion):
        alpha_coeffs(np.array([0.5]), single_inputs(),
                     select_n0(ST.delta, ST.tau_c, EPS, 0.25, 5.0))


def test_branch_is_continuous_along_the_grid():
    inputs = single_inputs()
    res = transmitted_gaussian(inputs)
    sig = np.abs(res.psi_minus_hat) >= 1e-6 * np.abs(res.psi_minus_hat).max()
    phase = np.unwrap(np.angle(res.psi_minus_hat[sig]))
    assert np.abs(np.diff(phase)).max() < 0.5  # no pi-size branch jumps


def test_diagnostics_classify_the_grid():
    res = transmitted_gaussian(single_inputs())
    inside = K_GRID**2 <= 4.0 * ST.delta
    assert np.all(np.isnan(res.diagnostics[inside]))
    sig = np.abs(res.psi_minus_hat) >= 1e-3 * np.abs(res.psi_minus_hat).max()
    assert np.all(res.diagnostics[sig] > 0.0)
    assert res.n_violations == int(np.sum(res.diagnostics < 0.0))


def test_constant_phase_toggle_is_a_global_factor():
    with_phase = transmitted_gaussian(single_inputs())
    without = transmitted_gaussian(single_inputs(), apply_phase=False)
    assert without.phi == 0.0
    assert_allclose(with_phase.psi_minus_hat,
                    without.psi_minus_hat * np.exp(-1j * with_phase.phi),
                    rtol=0, atol=1e-16)


def test_offset_routing_changes_the_result():
    packet = normalize(GaussianPacket(1.0, 5.0, 0.25, 0.3), eps=EPS)
    base = transmitted_gaussian(single_inputs(packet=packet))
    alt = transmitted_gaussian(single_inputs(packet=packet),
                               offset_in=OFFSET_IN_A01)
    off = transmitted_gaussian(single_inputs(packet=packet),
                               offset_in=OFFSET_IN_NONE)
    for other in (alt, off):
        d = np.linalg.norm(base.psi_minus_hat - other.psi_minus_hat)
        assert d / np.linalg.norm(base.psi_minus_hat) > 1e-4


def test_simplified_variant():
    res = transmitted_gaussian(single_inputs(), variant=VARIANT_SIMPLIFIED)
    assert_allclose(res.norm_sq, NORM_SQ_SIMPLIFIED, rtol=1e-9)
    full = transmitted_gaussian(single_inputs())
    rel = (np.linalg.norm(res.psi_minus_hat - full.psi_minus_hat)
           / np.linalg.norm(full.psi_minus_hat))
    assert 0.005 < rel < 0.10


def test_sum_of_one_term_matches_single():
    g = normalize(GaussianPacket(1.0, 5.0, 0.25, 0.0), eps=EPS)
    single = transmitted_gaussian(single_inputs(packet=g))
    summed = transmitted_sum(TransitionInputs(EPS, ST, PacketSum((g,)), K_GRID))
    assert_allclose(summed.psi_minus_hat, single.psi_minus_hat, rtol=0,
                    atol=1e-15 * np.abs(single.psi_minus_hat).max())
    assert_allclose(summed.norm_sq, single.norm_sq, rtol=1e-12)


def test_degree_zero_hermite_matches_gaussian():
    g = normalize(GaussianPacket(1.0, 5.0, 0.25, 0.0), eps=EPS)
    h = HagedornPacket(g, degree=0)
    lead = transmitted_gaussian(single_inputs(packet=g))
    herm = transmitted_hagedorn(TransitionInputs(EPS, ST, h, K_GRID),
                                mode=MODE_HERMITE)
    assert_allclose(herm.psi_minus_hat, lead.psi_minus_hat, rtol=0,
                    atol=1e-14 * np.abs(lead.psi_minus_hat).max())


def test_hermite_correction_is_small_but_nonzero():
    h = normalize(HagedornPacket(GaussianPacket(1.0, 5.0, 0.25, 0.0), degree=2),
                  eps=EPS)
    inputs = TransitionInputs(EPS, ST, h, K_GRID)
    lead = transmitted_hagedorn(inputs)
    herm = transmitted_hagedorn(inputs, mode=MODE_HERMITE)
    rel = (np.linalg.norm(herm.psi_minus_hat - lead.psi_minus_hat)
           / np.linalg.norm(lead.psi_minus_hat))
    assert 1e-4 < rel < 0.5  # an O(sqrt(eps)) moment correction


def test_transmitted_gaussian_rejects_wrong_packet_type():
    h = HagedornPacket(GaussianPacket(1.0, 5.0, 0.25, 0.0), degree=2)
    with pytest.raises(TypeError):
        transmitted_gaussian(TransitionInputs(EPS, ST, h, K_GRID))
