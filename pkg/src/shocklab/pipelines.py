"""End-to-end experiment pipelines driven by a validated config dict.

Each pipeline writes its CSV/JSON artifacts into ``out`` and returns a
summary with one entry per scientific check.  Failed checks are results,
not faults; faults propagate as exceptions.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import io
from .dynamics import (EKernel, decay_report, evolve_nonlinear, fit_with_ci, track_phase)
from .energy import auto_tune, compensator_field, verify_linear_damping, verify_nonlinear_damping
from .linop import (apply_projection, assemble, check_spectral_conditions, semigroup_decay_probe,
                    synthetic_unstable, unstable_spectrum)
from .manifold import TruncatedNonlinearity, contraction_ratio, fixed_point, graph_map
from .model import EndstatePair, builtin_system, validate_structure
from .norms import hk_norm, lp_norm, mixed_norm
from .profile import ProfileError, decay_fit, lax_classification, rankine_hugoniot, solve_profile


def _check(name, passed, value=None, **extra):
    return dict({"name": name, "pass": bool(passed), "value": value}, **extra)


# ---------------------------------------------------------------------------
# Shared setup

def build_wave(cfg):
    """System, endstates, shock speed and the profile on the profile grid."""
    sysm = builtin_system(cfg["system"]["name"], cfg["system"].get("params", {}))
    sh = cfg["shock"]
    Um = np.asarray(sh["U_minus"], float)
    if "U_plus" in sh:
        Up = np.asarray(sh["U_plus"], float)
        jump = Up - Um
        dF = sysm.flux(Up) - sysm.flux(Um)
        s = float(sh["s"]) if "s" in sh else float(jump @ dF / (jump @ jump))
        if np.max(np.abs(dF - s * jump)) > 1e-8 * max(1.0, np.max(np.abs(dF))):
            raise ProfileError("U_minus, U_plus do not satisfy the jump conditions")
    else:
        fixed = {int(k): float(v) for k, v in sh.get("fixed", {}).items()} or None
        Up, s = rankine_hugoniot(sysm, Um, s=sh.get("s"), fixed=fixed, lax=sh.get("lax", True))
    es = EndstatePair.from_states(sysm, Um, Up)
    pc = cfg["profile"]
    prof = solve_profile(sysm, es, s, L=pc["L"], N=pc["N"], residual_tol=pc["residual_tol"])
    return sysm, es, s, prof


def grid_profile(cfg, prof):
    d = cfg["discretization"]
    if d["N"] == prof.N and abs(d["L"] - prof.L) < 1e-12:
        return prof
    return prof.resample(d["N"], d["L"])


def operator(cfg, prof, synthetic_default=False):
    d = cfg["discretization"]
    q = grid_profile(cfg, prof)
    Lop = assemble(q, order=d["order"], bc=d["bc"])
    syn = cfg["run"].get("synthetic")
    if syn is None and synthetic_default:
        syn = {}
    if syn is not None:
        Lop = synthetic_unstable(Lop, **syn)
    return q, Lop


def gaussian_datum(cfg, x, n):
    dd = cfg["run"]["datum"]
    direction = np.asarray(dd.get("direction", np.ones(n)), float)
    f = np.exp(-0.5 * ((x - dd["center"]) / dd["width"]) ** 2)[:, None] * direction[None, :]
    return f


def _scale(f, w, norm, amplitude, k):
    cur = {"L1": lambda: lp_norm(w, f, 1), "L2": lambda: lp_norm(w, f, 2),
           "H3": lambda: hk_norm(w, f, 3), "mixed": lambda: mixed_norm(w, f, k)}[norm]()
    return f * (amplitude / cur)


def manifold_direction(cfg, Lop, spec):
    """Random localized center-stable direction of unit mixed norm (seeded)."""
    rng = np.random.default_rng(cfg["seed"])
    dd = cfg["run"]["datum"]
    x, w, n = Lop.x, Lop.weights, Lop.n
    k = n - Lop.profile.system.r
    what = np.exp(-0.25 * ((x - dd["center"] - 1.0) / dd["width"]) ** 2)[:, None] * rng.normal(size=n)[None, :]
    what = apply_projection(spec, "cs", what)
    return what / mixed_norm(w, what, k)


def _profile_columns(x, U, Ux):
    cols = {"x": x}
    for j in range(U.shape[1]):
        cols[f"U{j}"] = U[:, j]
    for j in range(U.shape[1]):
        cols[f"Ux{j}"] = Ux[:, j]
    return cols


# ---------------------------------------------------------------------------
# Pipelines

def run_profile(cfg, out: Path):
    sysm, es, s, prof = build_wave(cfg)
    csys = sysm.comoving(s)
    stride = max(1, prof.N // 64)
    structure = validate_structure(csys, list(prof.U[::stride]), endstates=es)
    lax = lax_classification(es, s)
    fit = decay_fit(prof)
    rel = abs(fit["eta"] - prof.decay_rate) / prof.decay_rate
    io.write_csv(out / "profile.csv", _profile_columns(prof.x, prof.U, prof.Ux))
    data = {"s": s, "U_minus": es.U_minus, "U_plus": es.U_plus, "L": prof.L, "N": prof.N,
            "residual": prof.residual, "decay_rate_linear": prof.decay_rate, "decay_fit": fit,
            "eta_relative_error": rel, "lax": lax, "structure": structure.to_dict(), "meta": prof.meta}
    checks = [
        _check("profile_residual", prof.residual < cfg["profile"]["residual_tol"], prof.residual),
        _check("decay_rate_fit", rel <= cfg["run"]["eta_tol"], rel),
        _check("structure", structure.all_pass, structure.failed()),
        _check("lax_shock", lax["is_lax"], lax),
    ]
    if cfg["run"]["plots"]:
        from .plotting import plot_profile
        plot_profile(out / "profile.png", prof.x, prof.U)
    return data, checks


def run_spectrum(cfg, out: Path):
    _, es, s, prof = build_wave(cfg)
    q, Lop = operator(cfg, prof)
    r = cfg["run"]
    spec = unstable_spectrum(Lop, re_cutoff=r["re_cutoff"], tail_threshold=r["tail_threshold"])
    D = check_spectral_conditions(Lop, spec, q, tail_threshold=r["tail_threshold"])
    w = Lop.weights
    zero = lp_norm(w, Lop.apply(Lop.Ubar_x), 2) / lp_norm(w, Lop.Ubar_x, 2)
    lam = spec.all_eigenvalues
    order = np.lexsort((lam.imag, -lam.real))
    io.write_csv(out / "spectrum.csv", {
        "re": lam.real[order], "im": lam.imag[order], "tail_mass": spec.all_tail_mass[order],
        "zero_alignment": spec.all_zero_alignment[order]})
    data = {"spectrum": spec.to_json(), "D": D.to_dict(), "zero_mode_residual": zero,
            "synthetic": Lop.meta.get("kind") == "synthetic", "N": Lop.N, "L": float(Lop.x[-1])}
    checks = [_check("D1", D.D1["pass"]), _check("D2", D.D2["pass"]), _check("D3", D.D3["pass"], D.D3["det"]),
              _check("unstable_count", True, spec.p)]
    if spec.p:
        f = gaussian_datum(cfg, Lop.x, Lop.n)
        P = apply_projection(spec, "u", f)
        idem = float(np.max(np.abs(apply_projection(spec, "u", P) - P)))
        data["projection_idempotence"] = idem
        checks.append(_check("projection_idempotent", idem < 1e-10, idem))
    if r["plots"]:
        from .plotting import plot_spectrum
        plot_spectrum(out / "spectrum.png", lam, spec.eigenvalues)
    return data, checks


def run_damping(cfg, out: Path):
    _, es, s, prof = build_wave(cfg)
    q, Lop = operator(cfg, prof)
    r = cfg["run"]
    km, kp, _ = compensator_field(q)
    E, info = auto_tune(q, Lop)
    rep = verify_linear_damping(E, Lop, trials=r["trials"], seed=cfg["seed"], T=r.get("T", 1.0),
                                C_f=info["C_f"])
    ev = sla.eigh(E.S, E.G_H1.toarray(), eigvals_only=True)
    io.write_csv(out / "energy_spectrum.csv", {"index": np.arange(len(ev)), "eigenvalue": ev})
    io.write_csv(out / "damping_trials.csv", {
        "trial": [t["trial"] for t in rep.records], "pass": [int(t["pass"]) for t in rep.records],
        "min_relative_slack": [t["min_relative_slack"] for t in rep.records]})
    data = {"energy": E.to_dict(), "tuning": info, "damping": rep.to_dict(),
            "kawashima": {"minus": {"K": km.K, "margin": km.margin}, "plus": {"K": kp.K, "margin": kp.margin}}}
    checks = [
        _check("kawashima_minus", km.success, km.margin),
        _check("kawashima_plus", kp.success, kp.margin),
        _check("energy_positive_definite", E.positive, E.c1),
        _check("damping_theta_positive", rep.theta > 0, rep.theta),
        _check("damping_trials", rep.passed == rep.trials, rep.passed / rep.trials),
    ]
    return data, checks


def run_manifold(cfg, out: Path):
    _, es, s, prof = build_wave(cfg)
    q, Lop = operator(cfg, prof, synthetic_default=True)
    r = cfg["run"]
    spec = unstable_spectrum(Lop, re_cutoff=r["re_cutoff"], tail_threshold=r["tail_threshold"])
    if spec.p == 0:
        return {"spectrum": spec.to_json()}, [_check("unstable_modes_present", False, 0)]
    w, k = Lop.weights, Lop.n - Lop.profile.system.r
    what = manifold_direction(cfg, Lop, spec)
    Ntr = TruncatedNonlinearity(Lop, r.get("delta"))
    delta = Ntr.delta
    Phi0, _ = graph_map(Ntr, spec, np.zeros_like(what), tol=r["tol"])
    phi0 = float(np.max(np.abs(Phi0)))
    amps = np.array(r["amplitudes"], float)
    if np.max(amps) > 0.5 * delta:
        raise ValueError(f"amplitudes must not exceed delta/2 = {0.5 * delta:g}")
    norms, iters = [], []
    for a in amps:
        Phi, info = graph_map(Ntr, spec, a * what, tol=r["tol"])
        norms.append(mixed_norm(w, Phi, k))
        iters.append(info["iterations"])
    norms = np.array(norms)
    slope = float(np.polyfit(np.log(amps), np.log(norms), 1)[0])
    deltas = delta * np.array(r["delta_factors"], float)
    ratios = []
    for d in deltas:
        Nd = TruncatedNonlinearity(Lop, d)
        _, hist = fixed_point(Nd, spec, 0.5 * d * what, tol=r["tol"])
        ratios.append(contraction_ratio(hist))
    ratios = np.array(ratios)
    rr = ratios[1:] / ratios[:-1]
    io.write_csv(out / "tangency.csv", {"amplitude": amps, "Phi_norm": norms, "iterations": iters})
    io.write_csv(out / "contraction.csv", {"delta": deltas, "ratio": ratios})
    data = {"spectrum": spec.to_json(), "delta": delta, "tangency_slope": slope, "Phi_at_zero": phi0,
            "amplitudes": amps, "Phi_norms": norms, "deltas": deltas, "contraction_ratios": ratios,
            "ratio_of_ratios": rr}
    checks = [
        _check("Phi_zero_at_origin", phi0 == 0.0, phi0),
        _check("tangency_slope", 1.8 <= slope <= 2.2, slope),
        _check("contraction_below_one", bool(np.all(ratios < 1)), float(np.max(ratios))),
        _check("contraction_linear_in_delta", bool(np.all((rr >= 0.35) & (rr <= 0.65))), rr),
    ]
    if r["plots"]:
        from .plotting import plot_xy
        plot_xy(out / "tangency.png", amps, {"|Phi|": norms, "slope 2": norms[0] * (amps / amps[0]) ** 2},
                logx=True, logy=True, xlabel="|w0|")
    return data, checks


def _band(rows, name, target, band):
    e = rows[name]["exponent"]
    return _check(f"{name}_exponent", np.isfinite(e) and abs(e - target) <= band, e, target=target, band=band)


def run_evolve(cfg, out: Path):
    _, es, s, prof = build_wave(cfg)
    q, Lop = operator(cfg, prof)
    r = cfg["run"]
    w, k = Lop.weights, Lop.n - Lop.profile.system.r
    dd = r["datum"]
    f = _scale(gaussian_datum(cfg, Lop.x, Lop.n), w, dd["norm"], dd["amplitude"], k)
    T = r.get("T", 45.0)
    plots = {}
    if r["mode"] == "linear":
        times = np.round(np.arange(0.0, T + 0.5 * r["record_dt"], r["record_dt"]), 12)
        tab = semigroup_decay_probe(Lop, None, f, times, fit_start=r["fit_start"], cfl=r["cfl"],
                                    contamination=r["contamination"])
        t1 = tab.fit_window[1]
        rows = {}
        for p, name in ((1, "L1"), (2, "L2"), (np.inf, "Linf")):
            e, ci, icpt = fit_with_ci(tab.times, tab.norms[p], r["fit_start"], t1)
            rows[name] = {"p": "inf" if np.isinf(p) else p, "target": tab.targets[p], "exponent": e,
                          "ci95": ci, "intercept": icpt}
            plots[name] = tab.norms[p]
        io.write_csv(out / "trajectory.csv", {"t": tab.times, "L1": tab.norms[1], "L2": tab.norms[2],
                                              "Linf": tab.norms[np.inf], "zero_mode": tab.zero_mode})
        data = {"mode": "linear", "exponents": rows, "fit_window": tab.fit_window,
                "contaminated_at": tab.contaminated_at}
        checks = [_check("Linf_exponent", -0.65 <= rows["Linf"]["exponent"] <= -0.35, rows["Linf"]["exponent"],
                         target=-0.5),
                  _check("L2_exponent", -0.40 <= rows["L2"]["exponent"] <= -0.10, rows["L2"]["exponent"],
                         target=-0.25)]
        times_out = tab.times
    else:
        traj = evolve_nonlinear(Lop, f, T, cfl=r["cfl"], record_dt=r["record_dt"],
                                contamination=r["contamination"])
        track_phase(traj, EKernel.from_profile(q), Lop)
        rep = decay_report(traj, fit_start=r["fit_start"])
        nl = verify_nonlinear_damping(traj)
        cols = {}
        for key, v in traj.table().items():
            v = np.asarray(v)
            if v.ndim == 2:
                for j in range(v.shape[1]):
                    cols[f"{key}_{j}"] = v[:, j]
            else:
                cols[key] = v
        io.write_csv(out / "trajectory.csv", cols)
        rows = rep["exponents"]
        for name in rows:
            rows[name]["p"] = {"L1": 1, "L2": 2, "Linf": "inf"}.get(name, name)
        data = {"mode": "nonlinear", "exponents": rows, "decay": {kk: v for kk, v in rep.items() if kk != "exponents"},
                "phase": traj.meta.get("phase"), "contaminated_at": traj.meta.get("contaminated_at"),
                "nonlinear_damping": nl}
        band = r["band"]
        checks = [_band(rows, "L2", -0.25, band), _band(rows, "Linf", -0.5, band),
                  _band(rows, "alpha_dot", -0.5, band),
                  _check("alpha_converged", rep["alpha_converged"], rep["alpha_cauchy_tail"],
                         drift=rep["alpha_total_drift"]),
                  _check("nonlinear_damping_feasible", nl["ok"], len(nl["feasible"]))]
        times_out = traj.times
        plots = {name: traj.tracked_norms[name] for name in ("L1", "L2", "Linf", "H3")}
        plots["alpha_dot"] = np.abs(traj.alpha_dot)
    if r["plots"]:
        from .plotting import plot_decay
        fits = {n: (rows[n]["exponent"], rows[n]["intercept"]) for n in plots if n in rows}
        plot_decay(out / "decay.png", np.asarray(times_out), plots, fits)
    return data, checks


def run_conditional(cfg, out: Path):
    _, es, s, prof = build_wave(cfg)
    q, Lop = operator(cfg, prof, synthetic_default=True)
    r = cfg["run"]
    spec = unstable_spectrum(Lop, re_cutoff=r["re_cutoff"], tail_threshold=r["tail_threshold"])
    if spec.p == 0:
        return {"spectrum": spec.to_json()}, [_check("unstable_modes_present", False, 0)]
    what = manifold_direction(cfg, Lop, spec)
    w0 = r["datum"]["amplitude"] * what
    mk = {"delta": r["delta"]} if "delta" in r else {}
    data, checks = {"spectrum": spec.to_json(), "runs": {}}, []
    for mode in r["modes"]:
        res = conditional(Lop, spec, w0, mode, r, mk)
        io.write_csv(out / f"conditional_{mode}.csv", {"t": res["times"], "distance": res["distance"]})
        data["runs"][mode] = {kk: v for kk, v in res.items() if kk not in ("times", "distance")}
        pred = res["predicted_exit"]
        if mode == "off_manifold":
            ex = res["exit_time"]
            ok = ex is not None and abs(ex - pred) <= 0.25 * pred
            checks.append(_check("off_manifold_exit_time", ok, ex, predicted=pred))
        else:
            ok = res["stayed_inside"] and res["horizon"] >= 3.0 * pred * (1 - 1e-9)
            checks.append(_check("on_manifold_stays", ok, float(np.max(res["distance"])), R=res["R"],
                                 horizon=res["horizon"]))
    return data, checks


def conditional(Lop, spec, w0, mode, r, mk):
    from .dynamics import conditional_experiment
    return conditional_experiment(Lop, spec, w0, mode, eps=r["eps"], R=r.get("R"), manifold_kwargs=mk,
                                  record_dt=min(r["record_dt"], 0.1))


PIPELINE_FUNCS = {"profile": run_profile, "spectrum": run_spectrum, "damping": run_damping,
                  "manifold": run_manifold, "evolve": run_evolve, "conditional": run_conditional}


def execute(cfg, out) -> dict:
    """Run the configured pipeline into ``out``; returns the summary written to report.json."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg["run"]["pipeline"]
    data, checks = PIPELINE_FUNCS[name](cfg, out)
    summary = {"pipeline": name, "config": cfg, "checks": checks, "all_pass": all(c["pass"] for c in checks),
               "results": data}
    io.write_json(out / "report.json", summary)
    lines = [f"pipeline: {name}"]
    lines += [f"  {'PASS' if c['pass'] else 'FAIL'}  {c['name']}: {_short(c['value'])}" for c in checks]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summary


def _short(v):
    v = io.to_plain(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list) and v and all(isinstance(u, float) for u in v):
        return "[" + ", ".join(f"{u:.4g}" for u in v) + "]"
    return str(v)
