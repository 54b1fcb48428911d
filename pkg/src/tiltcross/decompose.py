"""Least-squares decomposition of momentum-space states into Gaussian sums.

An arbitrary incoming packet can be fed to the closed transmission formula
only as a linear combination of complex Gaussians.  This module fits that
combination: damped Gauss-Newton (trust-region-reflective) over amplitude,
centre, width and position offset of each term, with moment-based
initialization, residual-peak seeding for additional terms, and a
deterministic multistart around the seeded optimum.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateTerm, ResidualAboveTolerance
from .packets import MOMENTUM, GaussianPacket, GridState, PacketSum, eval_packet

#: Parameters per Gaussian term entering the optimizer: Re A, Im A, centre,
#: width, position offset.
_PARAMS_PER_TERM = 5

#: Two fitted terms whose centre, width and offset all agree to this
#: absolute tolerance describe the same Gaussian and are merged.
MERGE_TOL = 1e-6

#: Number of multistart attempts (seeded fit plus jittered restarts).
N_STARTS = 8


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`fit_gaussians`.

    n_terms : int
        Number of Gaussian terms in the model.
    variance_bounds : (float, float)
        Width window (sigma_min, sigma_max) each term is clamped to.
        Constraining the widths keeps the fit from trading a wide shelf
        against narrow spikes on noisy inputs.
    max_iter : int
        Iteration budget per least-squares solve.
    tol : float
        Relative L2 residual regarded as converged; a best-effort result
        above this triggers the ResidualAboveTolerance warning.
    seed : int
        Seed for the multistart jitter.
    """

    n_terms: int = 1
    variance_bounds: tuple = (0.05, 20.0)
    max_iter: int = 200
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_terms < 1:
            raise ValueError("n_terms must be at least 1")
        lo, hi = self.variance_bounds
        if not (0.0 < lo < hi):
            raise ValueError("variance bounds must satisfy 0 < lo < hi")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


def fit_gaussians(state: GridState, cfg: FitConfig):
    """Fit a sum of complex Gaussians to a normalized momentum-space state.

    Each term has the form

        A exp(-(k - p)^2 / (2 sigma^2 eps)) exp(i k x / eps),

    so the fitted parameters line up one-to-one with ``GaussianPacket``
    fields (with c = 1 / (2 sigma^2)).  Term one starts from the mean and
    variance of |phi|^2 and the phase slope over the support; every further
    term is seeded at the largest residual peak; the whole stack is then
    re-polished from ``N_STARTS`` jittered starting points and the best
    optimum kept.

    Returns
    -------
    (PacketSum, float)
        The fitted packet sum and the relative L2 residual.

    Warns
    -----
    ResidualAboveTolerance
        Best-effort result whose residual exceeds ``cfg.tol``.
    DegenerateTerm
        Two terms collapsed onto the same parameters and were merged.
    """
    if state.space != MOMENTUM:
        raise ValueError("fit_gaussians expects momentum-space samples")
    if state.values.ndim != 1:
        raise ValueError("fit_gaussians expects a single-component state")
    if abs(state.norm() - 1.0) > 1e-6:
        raise ValueError(f"state must be normalized (norm {state.norm():.6f})")
    if 4 * cfg.n_terms > state.n / 8:
        raise ValueError(
            f"{cfg.n_terms} terms need {4 * cfg.n_terms} model quantities; "
            f"the grid supports at most {state.n // 32} terms"
        )

    k = state.k
    target = state.values
    eps = state.eps
    sqrt_dk = np.sqrt(state.dk)
    norm = state.norm()

    def residual_vec(params):
        model = _model(params, k, eps)
        r = (model - target) * sqrt_dk
        return np.concatenate([r.real, r.imag])

    def jacobian(params):
        cols = _model_gradient(params, k, eps) * sqrt_dk
        return np.concatenate([cols.real, cols.imag], axis=1).T

    def rel_residual(params):
        return float(np.linalg.norm(residual_vec(params)) / norm)

    lo, hi = cfg.variance_bounds

    def solve(p0, tight=False):
        lower = np.tile([-np.inf, -np.inf, k[0], lo, -np.inf],
                        p0.size // _PARAMS_PER_TERM)
        upper = np.tile([+np.inf, +np.inf, k[-1], hi, +np.inf],
                        p0.size // _PARAMS_PER_TERM)
        p0 = np.clip(p0, lower, upper)
        tol = 1e-15 if tight else 1e-9
        res = least_squares(
            residual_vec, p0, jac=jacobian, bounds=(lower, upper), method="trf",
            max_nfev=cfg.max_iter * p0.size, xtol=tol, ftol=tol, gtol=tol,
        )
        return res.x

    # Build up the model one term at a time, each new term seeded where the
    # current residual is largest; exploration runs at a loose tolerance
    # and only the winning stack gets the final tight polish.
    params = np.empty(0)
    for j in range(cfg.n_terms):
        resid = target - _model(params, k, eps) if j else target
        seed_term = _seed_from(resid, k, eps, cfg)
        params = solve(np.concatenate([params, seed_term]))

    best = params
    best_val = rel_residual(params)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(N_STARTS - 1):
        if best_val <= cfg.tol:
            break
        trial = _jitter(best, rng, eps, cfg)
        cand = solve(trial)
        val = rel_residual(cand)
        if val < best_val:
            best, best_val = cand, val

    best = solve(best, tight=True)
    best = _merge_degenerate(best, solve)
    best_val = rel_residual(best)

    if best_val > cfg.tol:
        warnings.warn(
            f"relative residual {best_val:.3e} above tolerance {cfg.tol:.1e}; "
            "returning best effort",
            ResidualAboveTolerance,
        )
    return _to_packets(best), best_val


def _model(params, k, eps):
    out = np.zeros(k.size, dtype=complex)
    for re_a, im_a, p, sig, x in params.reshape(-1, _PARAMS_PER_TERM):
        g = GaussianPacket(A=re_a + 1j * im_a, p0=p, c=1.0 / (2.0 * sig * sig),
                           x_off=x)
        out += eval_packet(g, k, eps)
    return out


def _model_gradient(params, k, eps):
    """Derivatives of the model w.r.t. every parameter, stacked row-wise."""
    cols = np.empty((params.size, k.size), dtype=complex)
    for t, (re_a, im_a, p, sig, x) in enumerate(
            params.reshape(-1, _PARAMS_PER_TERM)):
        shape = np.exp(-((k - p) ** 2) / (2.0 * sig * sig * eps)
                       + 1j * k * x / eps)
        term = (re_a + 1j * im_a) * shape
        base = t * _PARAMS_PER_TERM
        cols[base + 0] = shape
        cols[base + 1] = 1j * shape
        cols[base + 2] = term * (k - p) / (sig * sig * eps)
        cols[base + 3] = term * (k - p) ** 2 / (sig ** 3 * eps)
        cols[base + 4] = term * 1j * k / eps
    return cols


def _to_packets(params) -> PacketSum:
    terms = tuple(
        GaussianPacket(A=re_a + 1j * im_a, p0=p, c=1.0 / (2.0 * sig * sig),
                       x_off=x)
        for re_a, im_a, p, sig, x in params.reshape(-1, _PARAMS_PER_TERM)
    )
    return PacketSum(terms)


def _seed_from(resid, k, eps, cfg):
    """Moment-based seed for one Gaussian term from a residual signal."""
    mag2 = np.abs(resid) ** 2
    total = mag2.sum()
    lo, hi = cfg.variance_bounds
    if total == 0.0:
        return np.array([0.0, 0.0, 0.5 * (k[0] + k[-1]), np.sqrt(lo * hi), 0.0])
    ipk = int(np.argmax(mag2))
    # local moments over the half-maximum neighbourhood of the peak
    support = mag2 >= 0.25 * mag2[ipk]
    # restrict to the contiguous run containing the peak
    support = _contiguous(support, ipk)
    w = mag2[support] / mag2[support].sum()
    kw = k[support]
    centre = float(np.sum(w * kw))
    var_k = float(np.sum(w * (kw - centre) ** 2))
    sigma = float(np.clip(np.sqrt(max(2.0 * var_k / eps, 1e-30)), lo, hi))
    x_off = _phase_slope(kw, resid[support], w) * eps
    amp = resid[ipk] * np.exp(-1j * k[ipk] * x_off / eps)
    return np.array([amp.real, amp.imag, centre, sigma, x_off])


def _contiguous(mask, idx):
    out = np.zeros_like(mask)
    i = idx
    while i >= 0 and mask[i]:
        out[i] = True
        i -= 1
    i = idx + 1
    while i < mask.size and mask[i]:
        out[i] = True
        i += 1
    return out


def _phase_slope(k, vals, weights):
    if k.size < 3:
        return 0.0
    phase = np.unwrap(np.angle(vals))
    kc = k - np.sum(weights * k)
    denom = float(np.sum(weights * kc * kc))
    if denom == 0.0:
        return 0.0
    return float(np.sum(weights * kc * (phase - np.sum(weights * phase))) / denom)


def _jitter(params, rng, eps, cfg):
    lo, hi = cfg.variance_bounds
    out = params.reshape(-1, _PARAMS_PER_TERM).copy()
    for row in out:
        row[2] += 0.3 * row[3] * rng.standard_normal()
        row[3] = float(np.clip(row[3] * np.exp(0.2 * rng.standard_normal()), lo, hi))
        row[4] += 0.5 * np.sqrt(eps) * rng.standard_normal()
    return out.ravel()


def _merge_degenerate(params, solve):
    """Merge term pairs that collapsed onto identical parameters."""
    rows = list(params.reshape(-1, _PARAMS_PER_TERM))
    merged = False
    i = 0
    while i < len(rows):
        j = i + 1
        while j < len(rows):
            same = (abs(rows[i][2] - rows[j][2]) < MERGE_TOL
                    and abs(rows[i][3] - rows[j][3]) < MERGE_TOL
                    and abs(rows[i][4] - rows[j][4]) < MERGE_TOL)
            if same:
                rows[i][0] += rows[j][0]
                rows[i][1] += rows[j][1]
                del rows[j]
                merged = True
            else:
                j += 1
        i += 1
    if not merged:
        return params
    warnings.warn(
        f"merged coincident terms; {len(rows)} distinct remain",
        DegenerateTerm,
    )
    return solve(np.concatenate(rows), True)


def reconstruct(packet: PacketSum, state: GridState) -> np.ndarray:
    """Momentum-space samples of a fitted sum on the grid of ``state``."""
    return eval_packet(packet, state.k, state.eps)
