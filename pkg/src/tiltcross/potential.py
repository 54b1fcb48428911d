"""Diabatic two-level potentials and their complex Stokes data.

The potential matrix is

    V(x) = Z(x) sigma_z + X(x) sigma_x + d(x) 1,

with real entry functions that extend analytically into a strip around the
real axis.  The adiabatic surfaces are ``+-rho(x) + d(x)`` with
``rho = sqrt(X^2 + Z^2)`` and mixing angle ``theta = atan2(X, Z)``.

An avoided crossing is a minimum of the gap ``2 rho``.  Off the real axis
``rho^2`` has a conjugate pair of zeros; the one with positive imaginary
part, ``q_delta``, together with the "natural scale"

    tau(z) = 2 * integral_{x_c}^{z} rho(xi) d xi,

yields the complex action ``tau_delta = tau_r + i tau_c`` that controls the
exponentially small transition amplitude.  This module computes all of that.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import (
    BranchAmbiguity,
    NoInteriorMinimum,
    QuadratureNotConverged,
    TiltcrossError,
    ZeroNotFound,
    ZeroOutsideStrip,
)

KIND_PARAMETRIC_TANH = "parametric_tanh"
KIND_LANDAU_ZENER = "landau_zener"
KIND_CUSTOM = "custom_series"


@dataclass(frozen=True)
class DiabaticPotential:
    """Diabatic matrix entries X, Z, d with complex-analytic evaluation.

    Instances are built with :func:`parametric_tanh`, :func:`landau_zener`
    or :func:`custom_series`; ``params`` is family specific.  All entry
    functions accept real or complex scalars/arrays, but are only guaranteed
    analytic for ``|Im z| < strip_radius``.
    """

    kind: str
    params: tuple
    strip_radius: float

    # -- matrix entries ------------------------------------------------

    def Z(self, z):
        if self.kind == KIND_PARAMETRIC_TANH:
            alpha, beta, _, _ = self.params
            return alpha * np.tanh(z) + beta * z**2 / np.cosh(z)
        if self.kind == KIND_LANDAU_ZENER:
            _, slope = self.params
            return slope * np.asarray(z) if np.ndim(z) else slope * z
        zc, _, _ = self.params
        return np.polynomial.polynomial.polyval(z, zc)

    def X(self, z):
        if self.kind == KIND_PARAMETRIC_TANH:
            _, _, delta_gap, _ = self.params
            return np.full_like(np.asarray(z, dtype=np.result_type(z, 1.0)), delta_gap)
        if self.kind == KIND_LANDAU_ZENER:
            delta_gap, _ = self.params
            return np.full_like(np.asarray(z, dtype=np.result_type(z, 1.0)), delta_gap)
        _, xc_, _ = self.params
        return np.polynomial.polynomial.polyval(z, xc_)

    def d(self, z):
        if self.kind == KIND_PARAMETRIC_TANH:
            _, _, _, lambda_tilt = self.params
            return lambda_tilt * np.tanh(z)
        if self.kind == KIND_LANDAU_ZENER:
            return np.zeros_like(np.asarray(z, dtype=np.result_type(z, 1.0)))
        _, _, dc = self.params
        return np.polynomial.polynomial.polyval(z, dc)

    # -- first derivatives (analytic per family) ------------------------

    def dZ(self, z):
        if self.kind == KIND_PARAMETRIC_TANH:
            alpha, beta, _, _ = self.params
            sech = 1.0 / np.cosh(z)
            return alpha * sech**2 + beta * (2.0 * z - z**2 * np.tanh(z)) * sech
        if self.kind == KIND_LANDAU_ZENER:
            _, slope = self.params
            return np.full_like(np.asarray(z, dtype=np.result_type(z, 1.0)), slope)
        zc, _, _ = self.params
        return np.polynomial.polynomial.polyval(z, np.polynomial.polynomial.polyder(zc))

    def dX(self, z):
        if self.kind in (KIND_PARAMETRIC_TANH, KIND_LANDAU_ZENER):
            return np.zeros_like(np.asarray(z, dtype=np.result_type(z, 1.0)))
        _, xc_, _ = self.params
        return np.polynomial.polynomial.polyval(z, np.polynomial.polynomial.polyder(xc_))

    def dd(self, z):
        if self.kind == KIND_PARAMETRIC_TANH:
            _, _, _, lambda_tilt = self.params
            return lambda_tilt / np.cosh(z) ** 2
        if self.kind == KIND_LANDAU_ZENER:
            return np.zeros_like(np.asarray(z, dtype=np.result_type(z, 1.0)))
        _, _, dc = self.params
        return np.polynomial.polynomial.polyval(z, np.polynomial.polynomial.polyder(dc))

    # -- derived -------------------------------------------------------

    def rho_sq(self, z):
        """X^2 + Z^2, analytic; its complex zeros are the Stokes points."""
        return self.X(z) ** 2 + self.Z(z) ** 2

    def drho_sq(self, z):
        return 2.0 * (self.X(z) * self.dX(z) + self.Z(z) * self.dZ(z))

    def matrix(self, x):
        """V(x) as a stack of 2x2 matrices, shape (..., 2, 2)."""
        X, Z, d = self.X(x), self.Z(x), self.d(x)
        out = np.empty(np.shape(X) + (2, 2), dtype=np.result_type(X, 1.0))
        out[..., 0, 0] = d + Z
        out[..., 0, 1] = X
        out[..., 1, 0] = X
        out[..., 1, 1] = d - Z
        return out


def parametric_tanh(alpha, beta, delta_gap, lambda_tilt):
    """Tanh-saturating family: Z = a*tanh(x) + b*x^2/cosh(x), X = const, d = tilt*tanh(x).

    The entries have poles at x = i*pi/2, so the analyticity strip is
    |Im z| < pi/2.
    """
    return DiabaticPotential(
        kind=KIND_PARAMETRIC_TANH,
        params=(float(alpha), float(beta), float(delta_gap), float(lambda_tilt)),
        strip_radius=math.pi / 2,
    )


def landau_zener(delta_gap, slope):
    """Linear crossing Z = slope*x with constant coupling X = delta_gap, d = 0."""
    return DiabaticPotential(
        kind=KIND_LANDAU_ZENER,
        params=(float(delta_gap), float(slope)),
        strip_radius=math.inf,
    )


def custom_series(z_coeffs, x_coeffs, d_coeffs, strip_radius=math.inf):
    """Entire-series potential; coefficients are ascending powers of x."""
    return DiabaticPotential(
        kind=KIND_CUSTOM,
        params=(
            tuple(float(c) for c in z_coeffs),
            tuple(float(c) for c in x_coeffs),
            tuple(float(c) for c in d_coeffs),
        ),
        strip_radius=float(strip_radius),
    )


@dataclass(frozen=True)
class StokesData:
    """Crossing location plus the complex data parameterizing transitions.

    Attributes
    ----------
    x_c : float
        Position of the avoided crossing (gap minimum).
    delta : float
        Half gap rho(x_c).
    d0, lam : float
        Value and slope of the trace d at the crossing.
    q_delta : complex
        Zero of rho^2 with smallest positive imaginary part.
    tau_delta : complex
        Natural scale evaluated at q_delta; tau_r = Re, tau_c = Im > 0.
    """

    x_c: float
    delta: float
    d0: float
    lam: float
    q_delta: complex
    tau_delta: complex

    @property
    def tau_r(self) -> float:
        return self.tau_delta.real

    @property
    def tau_c(self) -> float:
        return self.tau_delta.imag

    def to_record(self) -> dict:
        """Flat JSON-style record."""
        return {
            "x_c": self.x_c,
            "delta": self.delta,
            "d0": self.d0,
            "lambda": self.lam,
            "q_delta_re": self.q_delta.real,
            "q_delta_im": self.q_delta.imag,
            "tau_r": self.tau_r,
            "tau_c": self.tau_c,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "StokesData":
        return cls(
            x_c=float(rec["x_c"]),
            delta=float(rec["delta"]),
            d0=float(rec["d0"]),
            lam=float(rec["lambda"]),
            q_delta=complex(rec["q_delta_re"], rec["q_delta_im"]),
            tau_delta=complex(rec["tau_r"], rec["tau_c"]),
        )


def eval_adiabatic(pot: DiabaticPotential, x):
    """Adiabatic data (rho, theta, d) at real x.

    Parameters
    ----------
    pot : DiabaticPotential
    x : float or ndarray
        Real evaluation points.  For array input the mixing angle is
        unwrapped along the sweep so that theta is continuous.

    Returns
    -------
    rho, theta, d : same shape as x
    """
    X = pot.X(x)
    Z = pot.Z(x)
    rho = np.sqrt(X * X + Z * Z)
    theta = np.arctan2(X, Z)
    if np.ndim(theta) and np.size(theta) > 1:
        theta = np.unwrap(theta)
    return rho, theta, pot.d(x)


def find_crossing(pot: DiabaticPotential, window=(-5.0, 5.0)) -> float:
    """Locate the avoided crossing (interior minimum of rho) in the window.

    Raises
    ------
    NoInteriorMinimum
        If the minimum of rho over the window sits on the boundary.
    """
    a, b = float(window[0]), float(window[1])
    xs = np.linspace(a, b, 4001)
    rho, _, _ = eval_adiabatic(pot, xs)
    i = int(np.argmin(rho))
    if i == 0 or i == len(xs) - 1:
        raise NoInteriorMinimum(
            f"minimum of the gap lies on the boundary of {window}"
        )

    def slope(x):
        # rho * rho' -- same zero as rho', smooth through the minimum
        return float(
            np.real(pot.X(x) * pot.dX(x) + pot.Z(x) * pot.dZ(x))
        )

    lo, hi = xs[i - 1], xs[i + 1]
    if slope(lo) == 0.0:
        x_c = float(lo)
    elif slope(hi) == 0.0:
        x_c = float(hi)
    else:
        x_c = brentq(slope, lo, hi, xtol=1e-15, rtol=8.9e-16)
    rho_c = float(eval_adiabatic(pot, x_c)[0])
    scale = max(1.0, abs(slope(lo) - slope(hi)) / max(hi - lo, 1e-300))
    assert abs(slope(x_c)) / max(rho_c, 1e-300) <= 1e-12 * scale
    return float(x_c)


def local_params(pot: DiabaticPotential, x_c: float):
    """(delta, d0, lam): half gap, trace value and trace slope at the crossing.

    The slope is a central finite difference with one Richardson refinement,
    step h = 1e-5.
    """
    rho_c, _, d0 = eval_adiabatic(pot, x_c)
    h = 1e-5
    d_h = (float(np.real(pot.d(x_c + h))) - float(np.real(pot.d(x_c - h)))) / (2 * h)
    d_h2 = (float(np.real(pot.d(x_c + h / 2))) - float(np.real(pot.d(x_c - h / 2)))) / h
    lam = (4.0 * d_h2 - d_h) / 3.0
    return float(rho_c), float(d0), float(lam)


def _newton_zero(pot, q0, max_iter):
    """Newton iteration on rho^2 from q0; returns the zero or None."""
    q = complex(q0)
    delta_sq = abs(complex(pot.rho_sq(np.real(q0))))
    for _ in range(max_iter):
        f = complex(pot.rho_sq(q))
        scale = abs(complex(pot.X(q))) ** 2 + abs(complex(pot.Z(q))) ** 2 + delta_sq
        if abs(f) <= 1e-13 * scale:
            return q
        fp = complex(pot.drho_sq(q))
        if fp == 0.0:
            q += 1e-6 * (1 + 1j)
            continue
        step = f / fp
        # keep the iterate from jumping across the real axis in one move
        if abs(step) > 1.0:
            step *= 1.0 / abs(step)
        q -= step
        if not (math.isfinite(q.real) and math.isfinite(q.imag)):
            return None
    return None


def find_complex_zero(pot: DiabaticPotential, x_c: float, eps_guess=1e-8, max_iter=100) -> complex:
    """Zero of rho^2 with the smallest positive imaginary part.

    Newton's method starting from ``x_c + i*delta/max(|Z'(x_c)|, eps_guess)``
    (exact for a linear-crossing potential), with perturbed restarts so the
    zero closest to the real axis is kept.

    Raises
    ------
    ZeroNotFound
        If no restart converges within ``max_iter`` iterations.
    ZeroOutsideStrip
        If the zero lies outside the declared analyticity strip.
    """
    delta = float(eval_adiabatic(pot, x_c)[0])
    dZc = abs(complex(pot.dZ(x_c)))
    im0 = delta / max(dZc, eps_guess)
    if math.isfinite(pot.strip_radius):
        im0 = min(im0, 0.9 * pot.strip_radius)

    zeros = []
    for im_fac in (1.0, 0.5, 1.5, 2.0):
        for re_off in (0.0, -0.5 * im0, 0.5 * im0):
            q = _newton_zero(pot, complex(x_c + re_off, im_fac * im0), max_iter)
            if q is None or q.imag <= 1e-12:
                continue
            if not any(abs(q - z) < 1e-8 for z in zeros):
                zeros.append(q)
    if not zeros:
        raise ZeroNotFound("Newton iteration on rho^2 did not converge")
    q_delta = min(zeros, key=lambda z: z.imag)
    if q_delta.imag >= pot.strip_radius:
        raise ZeroOutsideStrip(
            f"Im q_delta = {q_delta.imag:.6g} >= strip radius {pot.strip_radius:.6g}"
        )
    return q_delta


def _gl_nodes(n):
    u, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (u + 1.0), 0.5 * w  # mapped to [0, 1]


def _branch_fixed_sqrt(vals, start_value, spacing_bound, strict):
    """Square root of analytic samples with sign chosen by continuity.

    ``vals`` are rho^2 samples along a contour, ``start_value`` the known
    (positive) root at the start.  Returns the branch-continuous roots, or
    raises BranchAmbiguity when strict and a sign decision is unsupported.
    """
    w = np.sqrt(vals.astype(complex))
    # relative sign between consecutive nodes: flip when the principal
    # roots land on opposite sides of the cut
    inner = np.real(w[1:] * np.conj(w[:-1]))
    rel = np.where(inner < 0.0, -1.0, 1.0)
    s0 = 1.0 if np.real(w[0] * np.conj(start_value)) >= 0.0 else -1.0
    signs = s0 * np.concatenate(([1.0], np.cumprod(rel)))
    out = signs * w
    if strict:
        mags = np.abs(w)
        pair_scale = np.maximum(mags[1:], mags[:-1])
        jump = np.abs(out[1:] - out[:-1])
        # a genuine ambiguity: both sign choices imply a jump larger than
        # the local increment bound, away from the zero of rho
        ambiguous = (
            (np.abs(inner) < 0.1 * mags[1:] * mags[:-1])
            & (pair_scale > 0.05 * abs(start_value))
            & (jump > spacing_bound + 0.5 * pair_scale)
        )
        if np.any(ambiguous):
            raise BranchAmbiguity(
                "square-root branch could not be continued past node "
                f"{int(np.argmax(ambiguous)) + 1}"
            )
    return out


def natural_scale(pot: DiabaticPotential, z, x_c=0.0, tol=1e-12, n_start=64, n_max=65536) -> complex:
    """Natural scale tau(z) = 2 * integral of rho along the segment x_c -> z.

    Gauss-Legendre quadrature with the substitution t = 1 - (1-u)^2, which
    clusters nodes toward z and keeps spectral convergence when z is a zero
    of rho (square-root endpoint behaviour).  The order starts at
    ``n_start`` and doubles until the result changes by less than ``tol``.

    Raises
    ------
    QuadratureNotConverged
        If doubling past ``n_max`` still changes the value.
    BranchAmbiguity
        If the square-root branch cannot be continued along the segment.
    """
    z = complex(z)
    x_c = complex(x_c)
    span = z - x_c
    if span == 0.0:
        return 0.0 + 0.0j
    delta = cmath.sqrt(complex(pot.rho_sq(x_c)))

    prev = None
    n = n_start
    while n <= n_max:
        u, wq = _gl_nodes(n)
        t = 1.0 - (1.0 - u) ** 2
        xi = x_c + span * t
        jac = span * 2.0 * (1.0 - u)
        vals = np.asarray(pot.rho_sq(xi), dtype=complex)
        strict = n >= n_max // 2  # only fail on ambiguity once well refined
        max_step = float(np.max(np.abs(np.diff(xi)))) if n > 1 else abs(span)
        slope_bound = 10.0 * float(np.max(np.abs(pot.drho_sq(xi)))) / max(
            2.0 * float(np.min(np.abs(np.sqrt(np.abs(vals))) + 1e-300)), 1e-300
        )
        try:
            rho = _branch_fixed_sqrt(vals, delta, slope_bound * max_step, strict)
        except BranchAmbiguity:
            if strict:
                raise
            rho = None
        if rho is not None:
            tau = 2.0 * np.sum(wq * rho * jac)
            if prev is not None and abs(tau - prev) < tol * max(1.0, abs(tau)):
                return complex(tau)
            prev = tau
        n *= 2
    raise QuadratureNotConverged(
        f"tau({z}) did not stabilize to {tol} below order {n_max}"
    )


def tau_on_grid(pot: DiabaticPotential, q_grid, x_c=0.0):
    """Real natural scale tau(q) on an ascending real grid (vectorized).

    Composite 4-point Gauss-Legendre on each grid interval, accumulated from
    the first grid point; the offset to x_c is computed separately.  On the
    real axis rho > 0, so no branch tracking is needed.
    """
    q = np.asarray(q_grid, dtype=float)
    u4, w4 = np.polynomial.legendre.leggauss(4)
    a = q[:-1]
    h = np.diff(q)
    nodes = a[:, None] + np.outer(h, 0.5 * (u4 + 1.0))
    rho = np.sqrt(np.asarray(pot.rho_sq(nodes), dtype=float))
    seg = (0.5 * h)[:, None] * w4[None, :] * rho
    tau = np.empty_like(q)
    tau[0] = np.real(natural_scale(pot, q[0], x_c=x_c))
    tau[1:] = tau[0] + 2.0 * np.cumsum(seg.sum(axis=1))
    return tau


def stokes_data(pot: DiabaticPotential, window=(-5.0, 5.0)) -> StokesData:
    """Full Stokes analysis: crossing, local data, complex zero, tau_delta."""
    xs = np.linspace(window[0], window[1], 512)
    if np.min(pot.rho_sq(xs)) <= 0.0:
        raise TiltcrossError("potential has a real crossing: rho^2 not positive")
    x_c = find_crossing(pot, window)
    delta, d0, lam = local_params(pot, x_c)
    q_delta = find_complex_zero(pot, x_c)
    tau_delta = natural_scale(pot, q_delta, x_c=x_c)
    if tau_delta.imag <= 0.0:
        raise TiltcrossError(f"tau_c = {tau_delta.imag:.6g} is not positive")
    return StokesData(
        x_c=x_c, delta=delta, d0=d0, lam=lam,
        q_delta=q_delta, tau_delta=complex(tau_delta),
    )
