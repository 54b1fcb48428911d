"""Figure rendering for the comparison and sweep reports.

All functions draw onto a fresh figure, save to the given path and close
the figure again, so they are safe to call from batch jobs.  The Agg
backend is forced at import time; this package never opens windows.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

STYLE = {
    "figure.figsize": (8.0, 5.0),
    "figure.dpi": 110,
    "savefig.dpi": 160,
    "savefig.bbox": "tight",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "font.size": 10,
    "legend.framealpha": 0.8,
}


def apply_style():
    plt.rcParams.update(STYLE)


def _limits(k, significant, pad=0.15):
    ks = k[significant]
    span = ks[-1] - ks[0] if ks.size > 1 else 1.0
    return ks[0] - pad * span, ks[-1] + pad * span


def save_comparison_figure(k, abs_formula, abs_reference, rel_err, significant,
                           path):
    """Moduli of both transmitted packets plus their relative error.

    Top panel: |psi_hat| of formula and reference on a log scale.  Bottom
    panel: pointwise relative error (percent) over the significant region.
    """
    apply_style()
    fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True, height_ratios=[2, 1])
    ax0.semilogy(k, abs_reference, label="reference", color="C0")
    ax0.semilogy(k, abs_formula, label="formula", color="C1", ls="--")
    floor = abs_reference[significant].min()
    ax0.set_ylim(floor * 1e-2, abs_reference.max() * 5)
    ax0.set_ylabel(r"$|\hat\psi^-(k)|$")
    ax0.legend()
    ax1.plot(k[significant], 100.0 * rel_err, color="C3", lw=1.0)
    ax1.set_xlabel("k")
    ax1.set_ylabel("rel. error [%]")
    ax1.set_xlim(*_limits(k, significant))
    fig.savefig(path)
    plt.close(fig)
    return path


def save_phase_figure(k, phase_formula, phase_reference, significant, path):
    """Unwrapped phases over the significant region and their mismatch."""
    apply_style()
    fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True, height_ratios=[2, 1])
    ks = k[significant]
    ax0.plot(ks, phase_reference, label="reference", color="C0")
    ax0.plot(ks, phase_formula, label="formula", color="C1", ls="--")
    ax0.set_ylabel("unwrapped phase [rad]")
    ax0.legend()
    diff = phase_formula - phase_reference
    ax1.plot(ks, diff, color="C3", lw=1.0)
    ax1.set_xlabel("k")
    ax1.set_ylabel("difference [rad]")
    fig.savefig(path)
    plt.close(fig)
    return path


def save_sweep_figure(rows, path):
    """Formula vs reference transition probability across sweep rows.

    Verified rows are filled circles on the identity line; rows below the
    certification floor only have a formula value and appear as open
    triangles pinned to the x-axis minimum.
    """
    apply_style()
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    ok = [r for r in rows if r.get("norm_sq_reference") not in (None, "")]
    un = [r for r in rows
          if r not in ok and r.get("norm_sq_formula") not in (None, "")]
    if ok:
        pr = np.array([float(r["norm_sq_reference"]) for r in ok])
        pf = np.array([float(r["norm_sq_formula"]) for r in ok])
        ax.loglog(pr, pf, "o", color="C0", label="verified")
        lo, hi = pr.min() * 0.3, pr.max() * 3
        ax.loglog([lo, hi], [lo, hi], "k-", lw=0.8)
        ax.loglog([lo, hi], [0.95 * lo, 0.95 * hi], "k:", lw=0.8)
        ax.loglog([lo, hi], [1.05 * lo, 1.05 * hi], "k:", lw=0.8,
                  label=r"$\pm$5%")
    if un and ok:
        pf = np.array([float(r["norm_sq_formula"]) for r in un])
        ax.loglog(np.full(pf.shape, lo), pf, "^", mfc="none", color="C3",
                  label="unverified")
    ax.set_xlabel("reference probability")
    ax.set_ylabel("formula probability")
    if ok:
        ax.legend()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_fit_figure(k, data, model, path):
    """Gaussian-sum fit overlay: |data|, |model| and |data - model|."""
    apply_style()
    fig, ax = plt.subplots()
    ax.plot(k, np.abs(data), label="input", color="C0")
    ax.plot(k, np.abs(model), label="fit", color="C1", ls="--")
    ax.plot(k, np.abs(data - model), label="residual", color="C3", lw=0.9)
    mask = np.abs(data) >= 1e-6 * np.abs(data).max()
    if mask.any():
        ax.set_xlim(*_limits(k, mask))
    ax.set_xlabel("k")
    ax.set_ylabel("modulus")
    ax.legend()
    fig.savefig(path)
    plt.close(fig)
    return path
