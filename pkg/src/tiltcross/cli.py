"""Command-line pipeline: analyze | transmit | reference | compare | sweep | decompose.

One JSON config file (key/value with nested sections, all quantities in the
dimensionless units of the model) drives every subcommand; every field has
a default matching the reference experiment (eps=1/50, 16384 points on
[-40, 40], T = t_star = 4, 1000 steps), and the effective config with all
defaults materialized is written next to the outputs so any run can be
reproduced or diffed.  Artifacts are CSV tables (k, re, im, abs, phase
[, constraint_margin]) plus JSON summaries; the compare and sweep reports
also render PNG figures.  Runtime telemetry goes to a separate
telemetry.json so the main artifacts are bit-identical across reruns of the
same config.

The exit code is 0 only if every invariant monitor of the command passed.
"""

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .decompose import FitConfig, fit_gaussians
from .errors import GridMismatch
from .formula import (
    MODE_HERMITE,
    MODE_LEADING,
    OFFSET_IN_A01,
    OFFSET_IN_A10,
    TransitionInputs,
    VARIANT_FULL,
    VARIANT_SIMPLIFIED,
    transmitted_gaussian,
    transmitted_hagedorn,
    transmitted_sum,
)
from .packets import (
    MOMENTUM,
    GaussianPacket,
    GridState,
    HagedornPacket,
    PacketSum,
    eval_packet,
    normalize,
    semiclassical_fourier,
    state_from_packet,
    width_to_c,
)
from .potential import landau_zener, parametric_tanh, stokes_data
from .splitstep import (
    SURFACE_COUPLED,
    SURFACE_LOWER,
    SURFACE_UPPER,
    PropagatorSpec,
    adiabatic_transform,
    evolve_to_crossing,
    propagate,
)

#: Reference probabilities below this cannot be certified by the double
#: precision split-step oracle; such sweep rows carry only formula values.
SWEEP_FLOOR = 1e-8

DEFAULT_CONFIG = {
    "potential": {"kind": "parametric_tanh", "alpha": 0.5, "beta": -0.4,
                  "delta": 0.5, "lambda": 1.0},
    "eps": 0.02,
    "packet": {
        "given_at": "crossing",
        "normalize": True,
        "terms": [{"A": [1.0, 0.0], "p0": 5.0,
                   "width": {"tag": "sigma_halfsq", "value": 2.0 ** 0.5},
                   "x_off": 0.0, "degree": 0}],
    },
    "grid": {"n_points": 16384, "x_min": -40.0, "x_max": 40.0},
    "time": {"T": 4.0, "t_star": 4.0, "n_steps": 1000,
             "evolve_transmitted": False},
    "formula": {"variant": VARIANT_FULL, "offset_in": OFFSET_IN_A10,
                "phase_shift": True, "hagedorn_mode": MODE_LEADING},
    "threshold": 1e-3,
    "out": "runs",
    "sweep": {"eps": [1.0 / 30.0, 1.0 / 50.0, 1.0 / 80.0],
              "p0": [4.0, 5.0, 6.0], "lambda": [0.0, 0.5, 1.0],
              "floor": SWEEP_FLOOR, "grid": None, "time": None},
    "decompose": {"n_terms": 1, "variance_bounds": [0.05, 20.0],
                  "max_iter": 200, "tol": 1e-6, "seed": 0},
}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Materialized run settings; every field is overridable from the file."""

    potential: dict
    eps: float
    packet: dict
    grid: dict
    time: dict
    formula: dict
    threshold: float
    out: str
    sweep: dict
    decompose: dict

    def to_dict(self) -> dict:
        return {
            "potential": dict(self.potential),
            "eps": self.eps,
            "packet": json.loads(json.dumps(self.packet)),
            "grid": dict(self.grid),
            "time": dict(self.time),
            "formula": dict(self.formula),
            "threshold": self.threshold,
            "out": self.out,
            "sweep": json.loads(json.dumps(self.sweep)),
            "decompose": dict(self.decompose),
        }

    @property
    def grid_tuple(self) -> tuple:
        return (self.grid["x_min"], self.grid["x_max"], self.grid["n_points"])


def _merge(default, override, path="config"):
    if override is None and isinstance(default, dict):
        return None  # e.g. sweep.grid = None means "use the main grid"
    if not isinstance(default, dict) or not isinstance(override, dict):
        return override
    unknown = set(override) - set(default)
    if unknown:
        raise ValueError(f"unknown keys in {path}: {sorted(unknown)}")
    out = dict(default)
    for key, val in override.items():
        if key == "terms":  # lists replace wholesale
            out[key] = val
        elif key == "potential" and isinstance(val, dict) and \
                val.get("kind", default[key]["kind"]) != default[key]["kind"]:
            out[key] = val  # schema depends on the kind
        else:
            out[key] = _merge(default[key], val, f"{path}.{key}")
    return out


def materialize(raw: dict) -> RunConfig:
    """Fill in every default; reject unknown keys."""
    merged = _merge(DEFAULT_CONFIG, raw or {})
    return RunConfig(**merged)


def load_config(path) -> RunConfig:
    if path is None:
        return materialize({})
    with open(path) as fh:
        return materialize(json.load(fh))


def build_potential(spec: dict):
    kind = spec.get("kind", "parametric_tanh")
    if kind == "parametric_tanh":
        return parametric_tanh(spec["alpha"], spec["beta"], spec["delta"],
                               spec["lambda"])
    if kind == "landau_zener":
        return landau_zener(spec["delta"], spec["slope"])
    raise ValueError(f"unknown potential kind {kind!r}")


def _term_from_config(term: dict):
    a_raw = term["A"]
    amp = complex(a_raw[0], a_raw[1]) if isinstance(a_raw, (list, tuple)) \
        else complex(a_raw)
    if "width" in term and term["width"] is not None:
        c = width_to_c(term["width"]["tag"], term["width"]["value"])
    else:
        c = float(term["c"])
    degree = int(term.get("degree", 0))
    base = GaussianPacket(A=amp, p0=float(term["p0"]), c=c,
                          x_off=float(term.get("x_off", 0.0)))
    if degree > 0:
        return HagedornPacket(base, degree=degree)
    return base


def build_packet(spec: dict, eps: float):
    terms = [_term_from_config(t) for t in spec["terms"]]
    packet = terms[0] if len(terms) == 1 else PacketSum(tuple(terms))
    if spec.get("normalize", True):
        packet = normalize(packet, eps)
    return packet


def packet_to_config(packet) -> dict:
    """Config fragment for a fitted packet; feeds back into build_packet."""
    terms = packet.terms if isinstance(packet, PacketSum) else (packet,)
    out = []
    for t in terms:
        degree = int(getattr(t, "degree", 0))
        g = t.base if isinstance(t, HagedornPacket) else t
        entry = {"A": [float(np.real(g.A)), float(np.imag(g.A))],
                 "p0": float(g.p0),
                 "width": {"tag": "c", "value": float(np.real(g.c))},
                 "x_off": float(g.x_off),
                 "degree": degree}
        out.append(entry)
    return {"given_at": "crossing", "normalize": False, "terms": out}


# ---------------------------------------------------------------------------
# artifacts


class Monitors:
    """Named pass/fail checks accumulated by a command."""

    def __init__(self):
        self.entries = []

    def check(self, name: str, ok, detail="") -> bool:
        self.entries.append({"name": name, "ok": bool(ok),
                             "detail": str(detail)})
        return bool(ok)

    @property
    def all_ok(self) -> bool:
        return all(e["ok"] for e in self.entries)

    def as_list(self) -> list:
        return list(self.entries)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_state_csv(path, k, values, margin=None):
    header = ["k", "re", "im", "abs", "phase"]
    if margin is not None:
        header.append("constraint_margin")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        phase = np.angle(values)
        mag = np.abs(values)
        for i in range(len(k)):
            row = [repr(float(k[i])), repr(float(values[i].real)),
                   repr(float(values[i].imag)), repr(float(mag[i])),
                   repr(float(phase[i]))]
            if margin is not None:
                row.append(repr(float(margin[i])))
            writer.writerow(row)


def grid_block(cfg: RunConfig) -> dict:
    return {"eps": cfg.eps, "x_min": cfg.grid["x_min"],
            "x_max": cfg.grid["x_max"], "n_points": cfg.grid["n_points"],
            "space": MOMENTUM}


def read_state(csv_path) -> GridState:
    """Load a momentum-space state written by this CLI (CSV + JSON sidecar)."""
    csv_path = Path(csv_path)
    meta_path = csv_path.with_suffix(".json")
    if not meta_path.exists():
        raise FileNotFoundError(f"metadata sidecar {meta_path} not found")
    meta = json.loads(meta_path.read_text())["grid"]
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    values = data["re"] + 1j * data["im"]
    state = GridState(eps=meta["eps"], x_min=meta["x_min"],
                      x_max=meta["x_max"], n=meta["n_points"],
                      values=values, space=meta["space"])
    if not np.allclose(state.k, data["k"], rtol=0.0, atol=1e-12):
        raise GridMismatch(f"k column of {csv_path} does not match its grid")
    return state


def momentum_template(cfg: RunConfig) -> GridState:
    return GridState(eps=cfg.eps, x_min=cfg.grid["x_min"],
                     x_max=cfg.grid["x_max"], n=cfg.grid["n_points"],
                     values=np.zeros(cfg.grid["n_points"], dtype=complex),
                     space=MOMENTUM)


def momentum_window_margin(k_grid, packet, delta, eps) -> float:
    """k-grid headroom beyond the transmitted window (negative = truncated).

    The dual grid narrows with eps, so a box/size pair adequate at one eps
    can silently cut off the outgoing packet (centered at sqrt(p0^2+4delta))
    at a smaller one.
    """
    terms = packet.terms if isinstance(packet, PacketSum) else (packet,)
    bases = [t.base if isinstance(t, HagedornPacket) else t for t in terms]
    p_max = max(abs(float(g.p0)) for g in bases)
    spread = max(np.sqrt(eps / (4.0 * float(np.real(g.c)))) for g in bases)
    k_out = np.sqrt(p_max ** 2 + 4.0 * delta)
    return float(k_grid[-1] - (k_out + 5.0 * spread))


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(cfg: RunConfig, out_dir: Path, verbose=False):
    t0 = time.perf_counter()
    pot = build_potential(cfg.potential)
    st = stokes_data(pot)
    monitors = Monitors()
    monitors.check("tau_c_positive", st.tau_c > 0.0, f"tau_c={st.tau_c!r}")
    monitors.check("gap_positive", st.delta > 0.0, f"delta={st.delta!r}")
    record = {
        "x_c": st.x_c, "delta": st.delta, "d0": st.d0, "lambda": st.lam,
        "q_delta_re": st.q_delta.real, "q_delta_im": st.q_delta.imag,
        "tau_delta_re": st.tau_delta.real, "tau_delta_im": st.tau_delta.imag,
        "tau_r": st.tau_r, "tau_c": st.tau_c,
        "monitors": monitors.as_list(),
    }
    write_json(out_dir / "stokes.json", record)
    write_json(out_dir / "telemetry.json",
               {"command": "analyze", "runtime_s": time.perf_counter() - t0})
    print(f"analyze: tau_delta = {st.tau_delta.real:+.5f}{st.tau_delta.imag:+.5f}i"
          f"  (q_delta = {st.q_delta.real:+.5f}{st.q_delta.imag:+.5f}i)")
    return monitors


def _transmit_result(cfg: RunConfig, stokes, packet, k_grid):
    opts = cfg.formula
    kwargs = dict(variant=opts["variant"], offset_in=opts["offset_in"],
                  apply_phase=opts["phase_shift"])
    inputs = TransitionInputs(eps=cfg.eps, stokes=stokes, packet=packet,
                              k_grid=k_grid)
    if isinstance(packet, HagedornPacket):
        return transmitted_hagedorn(inputs, mode=opts["hagedorn_mode"], **kwargs)
    if isinstance(packet, PacketSum):
        return transmitted_sum(inputs, **kwargs)
    return transmitted_gaussian(inputs, **kwargs)


def cmd_transmit(cfg: RunConfig, out_dir: Path, verbose=False):
    t0 = time.perf_counter()
    monitors = Monitors()
    pot = build_potential(cfg.potential)
    stokes = stokes_data(pot)
    packet = build_packet(cfg.packet, cfg.eps)
    telemetry = {"command": "transmit"}
    extra = {}

    if cfg.packet.get("given_at", "crossing") == "initial":
        # Step 1: ride the upper band until the packet reaches the crossing,
        # then refit Gaussians there (Step 2).
        mom = state_from_packet(packet, cfg.eps, *_box(cfg))
        pos, t_c = evolve_to_crossing(semiclassical_fourier(mom), pot)
        at_crossing = normalize(semiclassical_fourier(pos))
        packet, resid = fit_gaussians(at_crossing,
                                      _fit_config(cfg.decompose))
        monitors.check("crossing_fit_converged",
                       resid <= cfg.decompose["tol"],
                       f"residual={resid!r}")
        extra = {"crossing_time": t_c, "fit_residual": resid,
                 "packet_at_crossing": packet_to_config(packet)}

    template = momentum_template(cfg)
    margin = momentum_window_margin(template.k, packet, stokes.delta, cfg.eps)
    monitors.check("momentum_window_covered", margin >= 0.0,
                   f"headroom={margin!r}")
    result = _transmit_result(cfg, stokes, packet, template.k)
    telemetry["formula_runtime_s"] = time.perf_counter() - t0
    monitors.check("norm_sq_positive", result.norm_sq > 0.0,
                   f"norm_sq={result.norm_sq!r}")

    write_state_csv(out_dir / "transmitted.csv", result.k,
                    result.psi_minus_hat, margin=result.diagnostics)
    summary = {
        "norm_sq": result.norm_sq,
        "n0": result.order.n0, "k0": result.order.k0,
        "eta0": result.order.eta0, "phi": result.phi,
        "variant": result.variant,
        "offset_in": cfg.formula["offset_in"],
        "phase_shift": cfg.formula["phase_shift"],
        "hagedorn_mode": cfg.formula["hagedorn_mode"],
        "n_constraint_violations": result.n_violations,
        "grid": grid_block(cfg),
        **extra,
    }

    if cfg.time["evolve_transmitted"]:
        # Step 3: carry the transmitted packet to t_star on the lower band.
        t_star = cfg.time["t_star"]
        n3 = max(1, round(cfg.time["n_steps"] * t_star
                          / (cfg.time["T"] + t_star)))
        mom = replace(template, values=result.psi_minus_hat)
        spec3 = PropagatorSpec(eps=cfg.eps, t0=0.0, t1=t_star, n_steps=n3,
                               grid=cfg.grid_tuple, surface=SURFACE_LOWER,
                               pot=pot)
        evolved = propagate(spec3, semiclassical_fourier(mom))
        ev_mom = semiclassical_fourier(evolved)
        drift = abs(ev_mom.norm() - mom.norm()) / max(mom.norm(), 1e-300)
        monitors.check("step3_norm_preserved", drift <= 1e-12,
                       f"relative drift={drift!r}")
        write_state_csv(out_dir / "transmitted_tstar.csv", ev_mom.k,
                        ev_mom.values)
        write_json(out_dir / "transmitted_tstar.json",
                   {"norm_sq": ev_mom.norm() ** 2, "t_star": t_star,
                    "grid": grid_block(cfg)})

    summary["monitors"] = monitors.as_list()
    write_json(out_dir / "transmitted.json", summary)
    telemetry["runtime_s"] = time.perf_counter() - t0
    write_json(out_dir / "telemetry.json", telemetry)
    print(f"transmit: norm_sq = {result.norm_sq:.6e}  "
          f"(n0 = {result.order.n0:.4f}, variant = {result.variant})")
    return monitors


def _box(cfg: RunConfig) -> tuple:
    return (cfg.grid["x_min"], cfg.grid["x_max"], cfg.grid["n_points"])


def _fit_config(spec: dict) -> FitConfig:
    return FitConfig(n_terms=spec["n_terms"],
                     variance_bounds=tuple(spec["variance_bounds"]),
                     max_iter=spec["max_iter"], tol=spec["tol"],
                     seed=spec["seed"])


def reference_pipeline(pot, packet, eps, grid, t_span, t_star, n_steps):
    """Coupled reference run; returns (P at t_star, psi_hat_minus at t=0).

    The packet (given at the crossing time, upper band) is evolved backward
    to -T, embedded in the diabatic frame, propagated through the crossing
    with the coupled equation up to t_star, projected back pointwise, and
    the lower component is carried back to t=0 on its own band before the
    final Fourier transform.
    """
    mom0 = state_from_packet(packet, eps, *grid)
    pos0 = semiclassical_fourier(mom0)
    n_up = max(1, round(n_steps * t_span / (t_span + t_star)))
    spec_up = PropagatorSpec(eps=eps, t0=0.0, t1=-t_span, n_steps=n_up,
                             grid=grid, surface=SURFACE_UPPER, pot=pot)
    phi_start = propagate(spec_up, pos0)

    embedded = replace(phi_start,
                       values=np.stack([phi_start.values,
                                        np.zeros_like(phi_start.values)]))
    diabatic = adiabatic_transform(embedded, pot)
    spec_c = PropagatorSpec(eps=eps, t0=-t_span, t1=t_star, n_steps=n_steps,
                            grid=grid, surface=SURFACE_COUPLED, pot=pot)
    evolved = propagate(spec_c, diabatic)
    adiabatic = adiabatic_transform(evolved, pot)
    lower = replace(adiabatic, values=adiabatic.values[1].copy())
    prob = lower.norm() ** 2

    n_lo = max(1, round(n_steps * t_star / (t_span + t_star)))
    spec_lo = PropagatorSpec(eps=eps, t0=t_star, t1=0.0, n_steps=n_lo,
                             grid=grid, surface=SURFACE_LOWER, pot=pot)
    # The backward leg starts from a state whose support sits well inside
    # the box and moves it further inward; the edge monitor is relative to
    # the (tiny) lower-component norm, so leave it off here.
    lower_t0 = propagate(spec_lo, lower, check_edges=False)
    return prob, semiclassical_fourier(lower_t0), lower.norm()


def cmd_reference(cfg: RunConfig, out_dir: Path, verbose=False):
    t0 = time.perf_counter()
    monitors = Monitors()
    pot = build_potential(cfg.potential)
    packet = build_packet(cfg.packet, cfg.eps)
    if cfg.packet.get("given_at", "crossing") != "crossing":
        raise ValueError("reference needs the packet at the crossing time")
    prob, ref_mom, norm_tstar = reference_pipeline(
        pot, packet, cfg.eps, cfg.grid_tuple, cfg.time["T"],
        cfg.time["t_star"], cfg.time["n_steps"])
    drift = abs(ref_mom.norm() - norm_tstar) / max(norm_tstar, 1e-300)
    monitors.check("backward_leg_norm_preserved", drift <= 1e-12,
                   f"relative drift={drift!r}")
    monitors.check("norm_sq_positive", prob > 0.0, f"norm_sq={prob!r}")

    write_state_csv(out_dir / "reference.csv", ref_mom.k, ref_mom.values)
    write_json(out_dir / "reference.json", {
        "norm_sq": prob,
        "norm_sq_t0": ref_mom.norm() ** 2,
        "grid": grid_block(cfg),
        "time": dict(cfg.time),
        "monitors": monitors.as_list(),
    })
    write_json(out_dir / "telemetry.json",
               {"command": "reference",
                "runtime_s": time.perf_counter() - t0})
    print(f"reference: norm_sq = {prob:.6e}")
    return monitors


def cmd_compare(formula_csv, reference_csv, threshold, out_dir: Path,
                verbose=False):
    from . import plots

    t0 = time.perf_counter()
    monitors = Monitors()
    f_state = read_state(formula_csv)
    r_state = read_state(reference_csv)
    if not f_state.same_grid(r_state):
        raise GridMismatch("formula and reference grids differ")
    k = f_state.k
    f = f_state.values
    r = r_state.values

    mag_r = np.abs(r)
    mask = mag_r >= threshold * mag_r.max()
    monitors.check("significant_region_nonempty", mask.any(),
                   f"threshold={threshold!r}")
    rel = np.full(k.shape, np.nan)
    rel[mask] = np.abs(f[mask] - r[mask]) / mag_r[mask]
    phase_err = np.full(k.shape, np.nan)
    phase_err[mask] = np.angle(f[mask] / r[mask])

    # unwrapped phase series over the dominant contiguous significant run
    run = _dominant_run(mask, int(np.argmax(mag_r)))
    phase_f = np.unwrap(np.angle(f[run]))
    phase_r = np.unwrap(np.angle(r[run]))

    l2 = float(np.linalg.norm(f[mask] - r[mask]) / np.linalg.norm(r[mask])) \
        if mask.any() else None
    report = {
        "norm_sq_formula": f_state.norm() ** 2,
        "norm_sq_reference": r_state.norm() ** 2,
        "norm_sq_rel_err": abs(f_state.norm() ** 2 - r_state.norm() ** 2)
                           / r_state.norm() ** 2,
        "max_rel_err": float(np.nanmax(rel)) if mask.any() else None,
        "l2_rel_err": l2,
        "max_phase_err": float(np.max(np.abs(phase_err[mask])))
                         if mask.any() else None,
        "median_phase_err": float(np.median(phase_err[mask]))
                            if mask.any() else None,
        "threshold": threshold,
        "n_significant": int(mask.sum()),
        "monitors": monitors.as_list(),
    }
    write_json(out_dir / "comparison.json", report)

    with open(out_dir / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "abs_formula", "abs_reference", "rel_err",
                         "phase_formula", "phase_reference", "phase_err",
                         "significant"])
        pf_all = np.angle(f)
        pr_all = np.angle(r)
        for i in range(len(k)):
            writer.writerow([repr(float(k[i])), repr(float(np.abs(f[i]))),
                             repr(float(mag_r[i])), repr(float(rel[i])),
                             repr(float(pf_all[i])), repr(float(pr_all[i])),
                             repr(float(phase_err[i])), int(mask[i])])

    plots.save_comparison_figure(k, np.abs(f), mag_r, rel[mask], mask,
                                 out_dir / "comparison_modulus.png")
    plots.save_phase_figure(k[run], phase_f, phase_r,
                            np.ones(run.sum(), dtype=bool),
                            out_dir / "comparison_phase.png")
    write_json(out_dir / "telemetry.json",
               {"command": "compare", "runtime_s": time.perf_counter() - t0})
    if mask.any():
        print(f"compare: max rel err = {report['max_rel_err']:.4%}  "
              f"(l2 {report['l2_rel_err']:.4%}, "
              f"{report['n_significant']} significant points)")
    else:
        print("compare: significant region is empty")
    return monitors


def _dominant_run(mask, peak_idx):
    run = np.zeros_like(mask)
    i = peak_idx
    while i >= 0 and mask[i]:
        run[i] = True
        i -= 1
    i = peak_idx + 1
    while i < mask.size and mask[i]:
        run[i] = True
        i += 1
    return run


def _sweep_worker(job):
    """One sweep row: formula value, then reference if certifiable."""
    cfg = materialize(job["config"])
    eps, p0, lam = job["eps"], job["p0"], job["lambda"]
    row = {"index": job["index"], "eps": eps, "p0": p0, "lambda": lam,
           "norm_sq_formula": None, "norm_sq_reference": None,
           "rel_err": None, "status": "failed", "error": ""}
    try:
        pot_spec = dict(cfg.potential)
        if pot_spec.get("kind", "parametric_tanh") != "parametric_tanh":
            raise ValueError("sweep expects the parametric_tanh family")
        pot_spec["lambda"] = lam
        pot = build_potential(pot_spec)
        stokes = stokes_data(pot)

        packet_spec = json.loads(json.dumps(cfg.packet))
        for term in packet_spec["terms"]:
            term["p0"] = p0
        packet = build_packet(packet_spec, eps)

        sweep = cfg.sweep
        grid_spec = sweep["grid"] or cfg.grid
        time_spec = sweep["time"] or cfg.time
        grid = (grid_spec["x_min"], grid_spec["x_max"], grid_spec["n_points"])

        template = GridState(eps=eps, x_min=grid[0], x_max=grid[1],
                             n=grid[2],
                             values=np.zeros(grid[2], dtype=complex),
                             space=MOMENTUM)
        margin = momentum_window_margin(template.k, packet, stokes.delta, eps)
        if margin < 0.0:
            raise ValueError(
                f"momentum grid cuts off the transmitted window "
                f"(headroom {margin:.3f}); enlarge n_points or shrink the box")
        sub_cfg = replace(cfg, eps=eps)
        result = _transmit_result(sub_cfg, stokes, packet, template.k)
        row["norm_sq_formula"] = result.norm_sq

        floor = sweep["floor"]
        if result.norm_sq < floor:
            row["status"] = "unverified"
            return row
        prob, _, _ = reference_pipeline(pot, packet, eps, grid,
                                        time_spec["T"], time_spec["t_star"],
                                        time_spec["n_steps"])
        row["norm_sq_reference"] = prob
        if prob < floor:
            row["status"] = "unverified"
            return row
        row["rel_err"] = abs(result.norm_sq - prob) / prob
        row["status"] = "ok"
    except Exception as exc:  # per-row failure: record and continue
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_sweep(cfg: RunConfig, out_dir: Path, threads=1, verbose=False):
    from . import plots

    t0 = time.perf_counter()
    monitors = Monitors()
    raw = cfg.to_dict()
    jobs = []
    index = 0
    for eps in cfg.sweep["eps"]:
        for p0 in cfg.sweep["p0"]:
            for lam in cfg.sweep["lambda"]:
                jobs.append({"index": index, "eps": eps, "p0": p0,
                             "lambda": lam, "config": raw})
                index += 1

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(job) for job in jobs]
    rows.sort(key=lambda r: r["index"])

    n_failed = sum(r["status"] == "failed" for r in rows)
    monitors.check("no_failed_rows", n_failed == 0, f"{n_failed} failed")
    ok_errs = [r["rel_err"] for r in rows if r["status"] == "ok"]

    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "eps", "p0", "lambda", "norm_sq_formula",
                         "norm_sq_reference", "rel_err", "status"])
        for r in rows:
            writer.writerow([
                r["index"], repr(float(r["eps"])), repr(float(r["p0"])),
                repr(float(r["lambda"])),
                "" if r["norm_sq_formula"] is None
                else repr(float(r["norm_sq_formula"])),
                "" if r["norm_sq_reference"] is None
                else repr(float(r["norm_sq_reference"])),
                "" if r["rel_err"] is None else repr(float(r["rel_err"])),
                r["status"],
            ])
    write_json(out_dir / "sweep.json", {
        "rows": rows,
        "summary": {
            "n_rows": len(rows),
            "n_ok": sum(r["status"] == "ok" for r in rows),
            "n_unverified": sum(r["status"] == "unverified" for r in rows),
            "n_failed": n_failed,
            "max_rel_err_ok": max(ok_errs) if ok_errs else None,
        },
        "monitors": monitors.as_list(),
    })
    plots.save_sweep_figure(rows, out_dir / "sweep.png")
    write_json(out_dir / "telemetry.json",
               {"command": "sweep", "runtime_s": time.perf_counter() - t0,
                "threads": threads})
    worst = max(ok_errs) if ok_errs else float("nan")
    print(f"sweep: {len(rows)} rows, "
          f"{sum(r['status'] == 'ok' for r in rows)} verified, "
          f"worst verified rel err = {worst:.4%}")
    return monitors


def cmd_decompose(cfg: RunConfig, out_dir: Path, input_csv=None,
                  verbose=False):
    from . import plots

    t0 = time.perf_counter()
    monitors = Monitors()
    if input_csv is not None:
        state = read_state(input_csv)
    else:
        packet = build_packet(cfg.packet, cfg.eps)
        state = state_from_packet(packet, cfg.eps, *_box(cfg))
    scale = state.norm()
    unit = normalize(state)

    fitted, residual = fit_gaussians(unit, _fit_config(cfg.decompose))
    monitors.check("residual_within_tolerance",
                   residual <= cfg.decompose["tol"], f"residual={residual!r}")

    # scale amplitudes back so the fragment reproduces the raw input state
    terms = fitted.terms if isinstance(fitted, PacketSum) else (fitted,)
    rescaled = PacketSum(tuple(replace(t, A=t.A * scale) for t in terms))
    fragment = packet_to_config(rescaled)

    rebuilt = build_packet(json.loads(json.dumps(fragment)), cfg.eps)
    model = eval_packet(rebuilt, state.k, cfg.eps)
    round_trip = float(np.linalg.norm(model - scale * eval_packet(
        fitted, state.k, cfg.eps)) / max(np.linalg.norm(model), 1e-300))
    monitors.check("fragment_round_trip", round_trip <= 1e-12,
                   f"rel diff={round_trip!r}")

    write_json(out_dir / "decomposition.json", {
        "residual": residual,
        "n_terms": len(fragment["terms"]),
        "input_norm": scale,
        "packet": fragment,
        "grid": {"eps": state.eps, "x_min": state.x_min,
                 "x_max": state.x_max, "n_points": state.n,
                 "space": MOMENTUM},
        "monitors": monitors.as_list(),
    })
    with open(out_dir / "decomposition.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "re_input", "im_input", "re_fit", "im_fit",
                         "abs_err"])
        for i in range(state.n):
            writer.writerow([repr(float(state.k[i])),
                             repr(float(state.values[i].real)),
                             repr(float(state.values[i].imag)),
                             repr(float(model[i].real)),
                             repr(float(model[i].imag)),
                             repr(float(abs(state.values[i] - model[i])))])
    plots.save_fit_figure(state.k, state.values, model,
                          out_dir / "decomposition.png")
    write_json(out_dir / "telemetry.json",
               {"command": "decompose",
                "runtime_s": time.perf_counter() - t0})
    print(f"decompose: {len(fragment['terms'])} terms, "
          f"residual = {residual:.3e}")
    return monitors


# ---------------------------------------------------------------------------
# entry point


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    formula = dict(cfg.formula)
    if args.variant is not None:
        formula["variant"] = args.variant
    if args.offset_in is not None:
        formula["offset_in"] = args.offset_in
    if args.no_phase_shift:
        formula["phase_shift"] = False
    if args.hagedorn_mode is not None:
        formula["hagedorn_mode"] = args.hagedorn_mode
    return replace(cfg, formula=formula)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default=None,
                        help="output directory (default: config 'out')")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for sweep rows")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--variant", choices=[VARIANT_FULL, VARIANT_SIMPLIFIED],
                        default=None, help="formula variant override")
    common.add_argument("--offset-in", choices=[OFFSET_IN_A10, OFFSET_IN_A01],
                        default=None, help="offset-term placement override")
    common.add_argument("--no-phase-shift", action="store_true",
                        help="drop the constant phase correction")
    common.add_argument("--hagedorn-mode", choices=[MODE_LEADING, MODE_HERMITE],
                        default=None)

    parser = argparse.ArgumentParser(
        prog="tiltcross",
        description="Transmitted-wavepacket pipeline for tilted avoided "
                    "crossings.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common],
                   help="Stokes data of the configured potential")
    sub.add_parser("transmit", parents=[common],
                   help="closed-formula transmitted packet")
    sub.add_parser("reference", parents=[common],
                   help="coupled split-step reference run")
    cmp_p = sub.add_parser("compare", parents=[common],
                           help="formula-vs-reference report")
    cmp_p.add_argument("--formula", required=True, help="transmitted.csv path")
    cmp_p.add_argument("--reference", required=True, help="reference.csv path")
    cmp_p.add_argument("--threshold", type=float, default=None,
                       help="significance threshold (fraction of max)")
    sub.add_parser("sweep", parents=[common],
                   help="parameter sweep with verification floor")
    dec_p = sub.add_parser("decompose", parents=[common],
                           help="fit a Gaussian sum to a state")
    dec_p.add_argument("--input", default=None,
                       help="momentum-state CSV (default: config packet)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out if args.out is not None else cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "effective_config.json", cfg.to_dict())

    if args.command == "analyze":
        monitors = cmd_analyze(cfg, out_dir, verbose=args.verbose)
    elif args.command == "transmit":
        monitors = cmd_transmit(cfg, out_dir, verbose=args.verbose)
    elif args.command == "reference":
        monitors = cmd_reference(cfg, out_dir, verbose=args.verbose)
    elif args.command == "compare":
        threshold = args.threshold if args.threshold is not None \
            else cfg.threshold
        monitors = cmd_compare(args.formula, args.reference, threshold,
                               out_dir, verbose=args.verbose)
    elif args.command == "sweep":
        monitors = cmd_sweep(cfg, out_dir, threads=args.threads,
                             verbose=args.verbose)
    else:
        monitors = cmd_decompose(cfg, out_dir, input_csv=args.input,
                                 verbose=args.verbose)

    if args.verbose or not monitors.all_ok:
        for entry in monitors.as_list():
            flag = "ok" if entry["ok"] else "FAIL"
            print(f"  [{flag}] {entry['name']}  {entry['detail']}")
    return 0 if monitors.all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
