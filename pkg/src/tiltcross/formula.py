"""Closed-form transmitted wavepacket for tilted avoided crossings.

Given Stokes data (delta, lambda, tau_r, tau_c) and an incoming momentum-space
packet at the crossing time, this module evaluates the transmitted packet on
the lower band at the crossing time:

    psi_hat_minus(k) = [1 / (2 sqrt(4 a20 a02 - a11^2))]
        * exp[(a20 a01^2 + a02 a10^2 - a10 a01 a11) / (a11^2 - 4 a20 a02)]
        * (eta* + k) * e^{-tau_c |k - eta*| / (2 delta eps)}
        * e^{-i tau_r (k - eta*) / (2 delta eps)}
        * e^{-i phi(p0)} * phi_hat(eta*) * chi_{k^2 > 4 delta},

with eta* = sgn(p0) sqrt(k^2 - 4 delta), the quadratic-exponent coefficients
a_ij of the underlying 2-D Gaussian integral evaluated at the optimal order
n0, and phi(p0) an empirical constant phase.  Monomial-times-Gaussian inputs
and superpositions of Gaussians reduce to the same evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import bisect

from .errors import ConstraintViolated, CutoffRegion, NoSolution
from .packets import GaussianPacket, HagedornPacket, PacketSum
from .potential import StokesData

VARIANT_FULL = "full"
VARIANT_SIMPLIFIED = "simplified"
OFFSET_IN_A10 = "a10"
OFFSET_IN_A01 = "a01"
OFFSET_IN_NONE = "none"  # diagnostic: drop the offset coupling term entirely
MODE_LEADING = "leading"
MODE_HERMITE = "hermite"

#: residual tolerance for the order-selection fixed point
_N0_TOL = 1e-12


def _base_gaussian(packet) -> GaussianPacket:
    if isinstance(packet, GaussianPacket):
        return packet
    if isinstance(packet, HagedornPacket):
        return packet.base
    raise TypeError(f"expected a (monomial-)Gaussian packet, got {type(packet).__name__}")


def _mean_momentum(packet) -> float:
    if isinstance(packet, PacketSum):
        w = np.array([abs(_base_gaussian(t).A) ** 2 for t in packet.terms])
        p = np.array([_base_gaussian(t).p0 for t in packet.terms])
        return float((w * p).sum() / w.sum())
    return _base_gaussian(packet).p0


@dataclass(frozen=True)
class TransitionInputs:
    """Everything the transmitted-packet formula needs.

    ``stokes`` supplies (delta, lambda, tau_r, tau_c); ``packet`` is the
    incoming momentum-space packet at the crossing time; ``k_grid`` is the
    ascending output momentum grid.
    """

    eps: float
    stokes: StokesData
    packet: object
    k_grid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k_grid", np.asarray(self.k_grid, dtype=float))
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")
        if not self.stokes.tau_c > 0.0:
            raise ValueError("tau_c must be positive")
        p_bar = _mean_momentum(self.packet)
        if not abs(p_bar) > 2.0 * np.sqrt(self.stokes.delta):
            raise ValueError(
                f"mean momentum {p_bar} is classically forbidden "
                f"(need |p0| > 2 sqrt(delta) = {2.0 * np.sqrt(self.stokes.delta)})"
            )


@dataclass(frozen=True)
class OptimalOrder:
    """Optimal superadiabatic order and the associated momenta.

    Kept real: the closed form only uses n0 through smooth real expressions.
    Invariants: k0^2 = eta0^2 + 4 delta, n0 = tau_c / (eps k0) > 0.
    """

    n0: float
    k0: float
    eta0: float


@dataclass(frozen=True)
class AlphaSet:
    """Quadratic-exponent coefficients at one (or an array of) momentum k.

    Conventions: the 2-D Gaussian integrand is
    exp(a20 eta^2 + a10 eta + a11 eta s + a01 s + a02 s^2).
    ``eta_star`` records the evaluation point sgn(p0) sqrt(k^2 - 4 delta).
    """

    a10: complex
    a01: complex
    a11: complex
    a20: complex
    a02: complex
    eta_star: float
    variant: str = VARIANT_FULL


def select_n0(delta: float, tau_c: float, eps: float, c: float, p0: float) -> OptimalOrder:
    """Solve the optimal-order pair k = sqrt(eta^2 + 4 delta),
    eta = k (1 - 4 c delta (eta - p0) / tau_c).

    A damped fixed-point iteration from eta = |p0| handles the generic case;
    if it fails to reach residual 1e-12, a sign-change scan plus bisection
    on eta in [0.2 |p0|, 5 |p0|] takes over.  Negative p0 is solved by
    symmetry (eta -> -eta).

    Raises
    ------
    NoSolution
        No sign change of the residual on the bisection interval.
    """
    if not (tau_c > 0.0 and eps > 0.0 and c > 0.0):
        raise ValueError("tau_c, eps and c must all be positive")
    if p0 == 0.0:
        raise ValueError("p0 must be nonzero")
    sgn = 1.0 if p0 > 0.0 else -1.0
    pa = abs(p0)

    def k_of(eta):
        return np.sqrt(eta**2 + 4.0 * delta)

    def resid(eta):
        return k_of(eta) * (1.0 - 4.0 * c * delta * (eta - pa) / tau_c) - eta

    eta = pa
    gamma = 0.5
    converged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(200):
            eta_new = (1.0 - gamma) * eta + gamma * k_of(eta) * (
                1.0 - 4.0 * c * delta * (eta - pa) / tau_c
            )
            if not np.isfinite(eta_new):
                break
            eta = eta_new
            if abs(resid(eta)) <= _N0_TOL:
                converged = True
                break
    if not converged or eta <= 0.0:
        lo, hi = 0.2 * pa, 5.0 * pa
        grid = np.linspace(lo, hi, 65)
        vals = np.array([resid(e) for e in grid])
        sign_change = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
        if len(sign_change) == 0:
            raise NoSolution(
                f"no residual sign change on eta in [{lo:.3g}, {hi:.3g}] "
                f"(delta={delta}, tau_c={tau_c}, c={c}, p0={p0})"
            )
        i = sign_change[0]
        eta = bisect(resid, grid[i], grid[i + 1], xtol=1e-15, maxiter=200)
        if abs(resid(eta)) > _N0_TOL:
            raise NoSolution(f"bisection stalled at residual {abs(resid(eta)):.3e}")
    k0 = float(k_of(eta))
    return OptimalOrder(n0=tau_c / (eps * k0), k0=k0, eta0=sgn * float(eta))


def alpha_coeffs(k, inputs: TransitionInputs, order: OptimalOrder,
                 variant: str = VARIANT_FULL,
                 offset_in: str = OFFSET_IN_A10) -> AlphaSet:
    """Quadratic-exponent coefficients at momentum k (scalar or array).

    The full variant is the printed five-coefficient set (with the
    sgn(k) tau_c term in a10 kept, so negative momenta are handled); the
    simplified variant applies the small-eps substitution
    n0 eps -> tau_c / eta* and drops the subleading prefactor terms.
    A packet position offset adds i x_off / sqrt(eps) to a10 (optionally
    to a01 instead, for comparison).

    Raises
    ------
    CutoffRegion
        Any requested k has k^2 <= 4 delta.
    ConstraintViolated
        Scalar k whose coefficient set fails the integrability constraint.
    """
    st = inputs.stokes
    delta, lam, tau_r, tau_c = st.delta, st.lam, st.tau_r, st.tau_c
    eps = inputs.eps
    g = _base_gaussian(inputs.packet)
    c, p0, x_off = g.c, g.p0, g.x_off

    k_arr = np.asarray(k, dtype=float)
    scalar = k_arr.ndim == 0
    if np.any(k_arr**2 <= 4.0 * delta):
        raise CutoffRegion(f"k^2 <= 4 delta = {4.0 * delta} on the requested grid")
    sgn_p = 1.0 if p0 > 0.0 else -1.0
    eta = sgn_p * np.sqrt(k_arr**2 - 4.0 * delta)
    rts = np.sqrt(eps)
    n0 = order.n0

    if variant == VARIANT_FULL:
        a10 = (np.sign(k_arr) * tau_c + 1j * tau_r - eta * n0 * eps
               - 4.0 * c * delta * (eta - p0)) / (2.0 * delta * rts) + rts / (k_arr + eta)
        a01 = -2.0 * (n0 + 1.0) * rts * lam / (k_arr + eta)
        a11 = -1j * eta + 2.0 * (n0 + 1.0) * lam * eps / (k_arr + eta) ** 2
        a20 = (-n0 * eps * (2.0 * delta + eta**2) / (8.0 * delta**2)
               - c - eps / (2.0 * (k_arr + eta) ** 2))
        a02 = (-2j * delta * lam / (k_arr + eta)
               - 2.0 * (n0 + 1.0) * lam**2 * eps / (k_arr + eta) ** 2)
    elif variant == VARIANT_SIMPLIFIED:
        a10 = 1j * tau_r / (2.0 * delta * rts) * np.ones_like(k_arr)
        a01 = -2.0 * tau_c * lam / (rts * (k_arr + eta) * eta)
        a11 = -1j * eta
        a20 = -tau_c * (2.0 * delta + eta**2) / (8.0 * delta**2 * eta) - c
        a02 = -2j * delta * lam / (k_arr + eta)
    else:
        raise ValueError(f"unknown variant {variant!r}")

    if x_off != 0.0 and offset_in != OFFSET_IN_NONE:
        if offset_in == OFFSET_IN_A10:
            a10 = a10 + 1j * x_off / rts
        elif offset_in == OFFSET_IN_A01:
            a01 = a01 + 1j * x_off / rts
        else:
            raise ValueError(f"offset_in must be 'a10', 'a01' or 'none', got {offset_in!r}")

    out = AlphaSet(a10=a10, a01=a01, a11=a11 + 0j * k_arr, a20=a20 + 0j * k_arr,
                   a02=a02 + 0j * k_arr, eta_star=eta, variant=variant)
    if scalar:
        m = constraint_margin(out)
        if not m > 0.0:
            raise ConstraintViolated(
                f"integrability constraint fails at k={float(k_arr)}", margin=float(m)
            )
    return out


def constraint_margin(alphas: AlphaSet):
    """Signed margin of the Gaussian-integrability constraints.

    Positive iff both Re(a11^2/a20 - 4 a02) > 0 and Re(a20) < 0 hold;
    the value is the smaller of the two slack quantities.
    """
    m1 = np.real(alphas.a11**2 / alphas.a20 - 4.0 * alphas.a02)
    m2 = -np.real(alphas.a20)
    return np.minimum(m1, m2)


def gaussian_double_integral(alphas: AlphaSet):
    """Closed form of the 2-D Gaussian integral
    int int exp(a20 eta^2 + a10 eta + a11 eta s + a01 s + a02 s^2) deta ds
    = 2 pi / sqrt(4 a20 a02 - a11^2) * exp[(a20 a01^2 + a02 a10^2
      - a10 a01 a11) / (a11^2 - 4 a20 a02)].

    The root is taken as the product sqrt(-a20) * sqrt(a11^2/(4 a20) - a02)
    of principal square roots; under the integrability constraints both
    factors have positive real part, which makes the branch continuous in k
    and equal to the iterated 1-D Gaussian evaluation.

    Raises
    ------
    ConstraintViolated
        The integrability constraint fails (scalar input only; array input
        is the caller's responsibility to mask).
    """
    m = constraint_margin(alphas)
    if np.ndim(m) == 0 and not m > 0.0:
        raise ConstraintViolated("integrability constraint fails", margin=float(m))
    root = np.sqrt(-alphas.a20) * np.sqrt(alphas.a11**2 / (4.0 * alphas.a20) - alphas.a02)
    d_prime = alphas.a11**2 - 4.0 * alphas.a20 * alphas.a02
    expo = (alphas.a20 * alphas.a01**2 + alphas.a02 * alphas.a10**2
            - alphas.a10 * alphas.a01 * alphas.a11) / d_prime
    return np.pi / root * np.exp(expo)


def phase_shift(p0: float, order: OptimalOrder, eps: float,
                lam: float, delta: float) -> float:
    """Empirical constant phase of the transmitted packet.

    phi(p0) = -(n0+1)^2 eps lam a0 delta / (2 (n0+1)^2 lam^2 eps^2
              + 2 delta^2 a0^2) - arctan(a0 delta / ((n0+1) eps lam)) / 2
              + sgn(lam p0) pi / 4,   a0 = sqrt(p0^2 + 4 delta) + p0.

    lam = 0 returns 0 exactly (the two limit terms cancel).
    """
    if lam == 0.0:
        return 0.0
    n1 = order.n0 + 1.0
    a0 = np.sqrt(p0**2 + 4.0 * delta) + p0
    return float(
        -(n1**2 * eps * lam * a0 * delta) / (2.0 * n1**2 * lam**2 * eps**2 + 2.0 * delta**2 * a0**2)
        - 0.5 * np.arctan(a0 * delta / (n1 * eps * lam))
        + np.sign(lam * p0) * np.pi / 4.0
    )


@dataclass(frozen=True)
class TransitionResult:
    """Transmitted momentum-space packet at the crossing time."""

    k: np.ndarray
    psi_minus_hat: np.ndarray
    norm_sq: float
    order: OptimalOrder
    diagnostics: np.ndarray = field(repr=False)
    phi: float = 0.0
    variant: str = VARIANT_FULL

    @property
    def n_violations(self) -> int:
        return int(np.sum(self.diagnostics < 0.0))


def _order_for(inputs: TransitionInputs, order: Optional[OptimalOrder]) -> OptimalOrder:
    if order is not None:
        return order
    st = inputs.stokes
    packet = inputs.packet
    if isinstance(packet, PacketSum):
        terms = [_base_gaussian(t) for t in packet.terms]
        w = np.array([abs(t.A) ** 2 for t in terms])
        cs = np.array([t.c for t in terms])
        c_eff = np.real(w.sum() / (w / cs).sum())
    else:
        c_eff = float(np.real(_base_gaussian(packet).c))
    return select_n0(st.delta, st.tau_c, inputs.eps, c_eff, _mean_momentum(packet))


def _saddle_margins(al, ka, delta, lam, eps):
    """Trust margins of the quadratic model behind the closed-form integral.

    The coefficients in AlphaSet come from second-order expansions around
    eta* whose stationary point must stay inside their region of validity:
    the energy displacement |(eta* + sqrt(eps) eta_hat)^2 - eta*^2| has to
    remain below the gap 4 delta, and the expanded logarithm argument
    2 lam s_hat sqrt(eps) / (k + eta*) below one.  Where either fails the
    closed form evaluates an expansion that no longer represents the
    integrand and can grow without bound even though the true transmitted
    amplitude there is negligible, so such points are zeroed and reported
    with a non-positive margin.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        det = 4.0 * al.a20 * al.a02 - al.a11**2
        eta_hat = (al.a01 * al.a11 - 2.0 * al.a02 * al.a10) / det
        s_hat = (al.a10 * al.a11 - 2.0 * al.a20 * al.a01) / det
    rts = np.sqrt(eps)
    shift = eps * np.abs(eta_hat) ** 2 + 2.0 * rts * np.abs(eta_hat) * np.abs(al.eta_star)
    m_energy = 4.0 * delta - shift
    m_slog = np.abs(ka + al.eta_star) - 2.0 * abs(lam) * rts * np.abs(s_hat)
    m = np.minimum(m_energy, m_slog)
    return np.where(np.isfinite(m), m, -np.inf)


def _transmitted_single(inputs, order, variant, offset_in, apply_phase, mode):
    """Shared evaluation for one Gaussian or monomial-Gaussian packet.

    The exponentials (critical-point value of the double integral, history
    decay, twist, packet envelope, constant phase) are summed in log space
    and exponentiated once, so far-tail points cannot overflow on the way
    to an exponentially small product.  The overall sign matches the
    two-level reference propagation in the adiabatic frame of
    adiabatic_transform (the symmetric involution with upper branch first).
    """
    st = inputs.stokes
    delta, lam, tau_r, tau_c = st.delta, st.lam, st.tau_r, st.tau_c
    eps = inputs.eps
    k = inputs.k_grid
    packet = inputs.packet
    g = _base_gaussian(packet)
    degree = packet.degree if isinstance(packet, HagedornPacket) else 0

    psi = np.zeros(k.shape, dtype=complex)
    margins = np.full(k.shape, np.nan)
    allowed = k**2 > 4.0 * delta
    phi = phase_shift(g.p0, order, eps, lam, delta) if apply_phase else 0.0
    if np.any(allowed):
        ka = k[allowed]
        al = alpha_coeffs(ka, inputs, order, variant, offset_in)
        margin = np.minimum(constraint_margin(al),
                            _saddle_margins(al, ka, delta, lam, eps))
        margins[allowed] = margin
        ok = margin > 0.0
        eta = al.eta_star
        if np.any(ok) and g.A != 0:
            alo = AlphaSet(a10=al.a10[ok], a01=al.a01[ok], a11=al.a11[ok],
                           a20=al.a20[ok], a02=al.a02[ok],
                           eta_star=eta[ok], variant=variant)
            eo, ko = eta[ok], ka[ok]
            root = np.sqrt(-alo.a20) * np.sqrt(alo.a11**2 / (4.0 * alo.a20) - alo.a02)
            d_prime = alo.a11**2 - 4.0 * alo.a20 * alo.a02
            expo = (alo.a20 * alo.a01**2 + alo.a02 * alo.a10**2
                    - alo.a10 * alo.a01 * alo.a11) / d_prime
            log_amp = (np.log(complex(g.A)) - g.c * (eo - g.p0) ** 2 / eps
                       + 1j * eo * g.x_off / eps)
            log_tot = (expo + log_amp
                       - tau_c * np.abs(ko - eo) / (2.0 * delta * eps)
                       - 1j * tau_r * (ko - eo) / (2.0 * delta * eps)
                       - 1j * phi)
            vals = -(eo + ko) / (4.0 * root) * np.exp(log_tot)
            if degree > 0:
                if mode == MODE_HERMITE:
                    vals = vals * _hermite_factor(degree, alo, eps)
                else:
                    vals = vals * eo**degree
            res = np.zeros(ka.shape, dtype=complex)
            res[ok] = vals
            psi[allowed] = res
    norm_sq = float(np.trapezoid(np.abs(psi) ** 2, k))
    return TransitionResult(k=k, psi_minus_hat=psi, norm_sq=norm_sq, order=order,
                            diagnostics=margins, phi=phi, variant=variant)


def _hermite_factor(degree: int, alphas: AlphaSet, eps: float):
    """sum_j C(p, j) eta*^(p-j) eps^(j/2) g_j, the exact replacement for
    eta*^p in the monomial-packet evaluation.

    g_j are the normalized a10-derivatives of the Gaussian integral,
    generated by g_0 = 1, g_{j+1} = g_j' + (-2 a a10 + b) g_j with
    a = -a02/D', b = -a01 a11/D', D' = a11^2 - 4 a20 a02 (polynomials in
    a10, evaluated per grid point).  Regular at lam = 0, where all moments
    beyond g_0 vanish.
    """
    d_prime = alphas.a11**2 - 4.0 * alphas.a20 * alphas.a02
    a = -alphas.a02 / d_prime
    b = -alphas.a01 * alphas.a11 / d_prime
    shape = np.broadcast(alphas.a10, a).shape
    # polynomial coefficients in a10 (ascending), each an array over k
    coeffs = [np.ones(shape, dtype=complex)]
    g_vals = []
    for j in range(degree + 1):
        acc = np.zeros(shape, dtype=complex)
        for m in range(len(coeffs) - 1, -1, -1):
            acc = acc * alphas.a10 + coeffs[m]
        g_vals.append(acc)
        if j == degree:
            break
        nxt = [np.zeros(shape, dtype=complex) for _ in range(len(coeffs) + 1)]
        for m, cm in enumerate(coeffs):
            if m + 1 < len(coeffs):
                nxt[m] += (m + 1) * coeffs[m + 1]
            nxt[m + 1] += -2.0 * a * cm
            nxt[m] += b * cm
        coeffs = nxt
    from math import comb

    total = np.zeros(shape, dtype=complex)
    for j in range(degree + 1):
        total += comb(degree, j) * alphas.eta_star ** (degree - j) * eps ** (j / 2.0) * g_vals[j]
    return total


def transmitted_gaussian(inputs: TransitionInputs, order: Optional[OptimalOrder] = None,
                         variant: str = VARIANT_FULL,
                         offset_in: str = OFFSET_IN_A10,
                         apply_phase: bool = True) -> TransitionResult:
    """Transmitted packet for a single Gaussian input.

    Points failing the integrability constraint are zeroed and flagged in
    the diagnostics (negative margin); the cutoff region k^2 <= 4 delta is
    zero by construction (margin NaN).
    """
    if not isinstance(inputs.packet, GaussianPacket):
        raise TypeError("transmitted_gaussian needs a GaussianPacket input")
    order = _order_for(inputs, order)
    return _transmitted_single(inputs, order, variant, offset_in, apply_phase, MODE_LEADING)


def transmitted_hagedorn(inputs: TransitionInputs, order: Optional[OptimalOrder] = None,
                         variant: str = VARIANT_FULL,
                         offset_in: str = OFFSET_IN_A10,
                         apply_phase: bool = True,
                         mode: str = MODE_LEADING) -> TransitionResult:
    """Transmitted packet for a monomial-times-Gaussian input.

    mode="leading" replaces the Gaussian amplitude by eta*^p times it;
    mode="hermite" keeps the full finite sum over moment corrections
    (differs from leading order by O(sqrt(eps))).
    """
    if not isinstance(inputs.packet, HagedornPacket):
        raise TypeError("transmitted_hagedorn needs a HagedornPacket input")
    if mode not in (MODE_LEADING, MODE_HERMITE):
        raise ValueError(f"unknown mode {mode!r}")
    order = _order_for(inputs, order)
    return _transmitted_single(inputs, order, variant, offset_in, apply_phase, mode)


def transmitted_sum(inputs: TransitionInputs, order: Optional[OptimalOrder] = None,
                    variant: str = VARIANT_FULL,
                    offset_in: str = OFFSET_IN_A10,
                    apply_phase: bool = True) -> TransitionResult:
    """Transmitted packet for a superposition of Gaussians.

    One optimal order is selected from the aggregate mean momentum and the
    amplitude-weighted harmonic-mean width; each term then goes through the
    single-Gaussian formula (with its own offset and constant phase) and
    the results are summed.  Diagnostics keep the per-k minimum margin.
    """
    packet = inputs.packet
    if not isinstance(packet, PacketSum):
        raise TypeError("transmitted_sum needs a PacketSum input")
    if not all(isinstance(t, GaussianPacket) for t in packet.terms):
        raise TypeError("every term of the superposition must be Gaussian")
    order = _order_for(inputs, order)
    total = np.zeros(inputs.k_grid.shape, dtype=complex)
    margins = np.full(inputs.k_grid.shape, np.inf)
    for term in packet.terms:
        sub = TransitionInputs(eps=inputs.eps, stokes=inputs.stokes,
                               packet=term, k_grid=inputs.k_grid)
        res = _transmitted_single(sub, order, variant, offset_in, apply_phase,
                                  MODE_LEADING)
        total += res.psi_minus_hat
        margins = np.fmin(margins, res.diagnostics)
    margins[np.isinf(margins)] = np.nan
    norm_sq = float(np.trapezoid(np.abs(total) ** 2, inputs.k_grid))
    phi_bar = (phase_shift(_mean_momentum(packet), order, inputs.eps,
                           inputs.stokes.lam, inputs.stokes.delta)
               if apply_phase else 0.0)
    return TransitionResult(k=inputs.k_grid, psi_minus_hat=total, norm_sq=norm_sq,
                            order=order, diagnostics=margins, phi=phi_bar,
                            variant=variant)
