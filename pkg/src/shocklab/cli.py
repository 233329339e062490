"""Command line entry point: ``shocklab run`` and ``shocklab report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, load, sweep_configs

log = logging.getLogger("shocklab")

EXIT_OK, EXIT_FAULT, EXIT_CONFIG = 0, 1, 2


def _run_one(cfg, out):
    from .pipelines import execute
    t0 = time.perf_counter()
    summary = execute(cfg, out)
    return summary["all_pass"], [c["name"] for c in summary["checks"] if not c["pass"]], time.perf_counter() - t0


def run(config_path, out=None, jobs=1) -> int:
    try:
        cfg = load(config_path)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    out = Path(out or cfg.get("output") or "shocklab_out")
    out.mkdir(parents=True, exist_ok=True)
    configs = sweep_configs(cfg)
    dirs = [out] if len(configs) == 1 and not cfg.get("sweep") else [out / f"sweep_{i:03d}" for i in range(len(configs))]
    try:
        if jobs > 1 and len(configs) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_one, configs, dirs))
        else:
            results = [_run_one(c, d) for c, d in zip(configs, dirs)]
    except Exception as exc:  # solver faults
        log.error("solver fault: %s: %s", type(exc).__name__, exc)
        return EXIT_FAULT
    for d, (ok, failed, dt) in zip(dirs, results):
        log.info("%s: %s (%.1fs)%s", d, "all checks pass" if ok else "checks failed",
                 dt, "" if ok else " -> " + ", ".join(failed))
    if len(dirs) > 1 or cfg.get("sweep"):
        io.write_json(out / "sweep.json", {"entries": [d.name for d in dirs],
                                           "all_pass": [r[0] for r in results]})
    for d in dirs:
        sys.stdout.write((d / "summary.txt").read_text(encoding="utf-8"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Report

def _collect(root: Path):
    files = sorted(root.glob("report.json")) + sorted(root.glob("sweep_*/report.json"))
    if not files:
        raise FileNotFoundError(f"no pipeline reports under {root}")
    runs = []
    for f in files:
        try:
            runs.append((f.parent.relative_to(root).as_posix() or ".", io.read_json(f)))
        except (json.JSONDecodeError, OSError) as exc:
            raise ValueError(f"corrupt artifact {f}: {exc}") from None
    return runs


def report(directory) -> int:
    root = Path(directory)
    try:
        runs = _collect(root)
    except (FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_FAULT
    check_rows = {"run": [], "pipeline": [], "check": [], "pass": [], "value": []}
    exp_rows = {"run": [], "norm": [], "p": [], "target": [], "exponent": [], "ci95": [], "delta_vs_first": []}
    fit_rows = {"run": [], "norm": [], "t": [], "observed": [], "fitted": []}
    first = {}
    lines = []
    for name, rep in runs:
        lines.append(f"[{name}] pipeline={rep['pipeline']} all_pass={rep['all_pass']}")
        for c in rep["checks"]:
            check_rows["run"].append(name)
            check_rows["pipeline"].append(rep["pipeline"])
            check_rows["check"].append(c["name"])
            check_rows["pass"].append(int(c["pass"]))
            check_rows["value"].append(json.dumps(c["value"], sort_keys=True))
            lines.append(f"  {'PASS' if c['pass'] else 'FAIL'}  {c['name']} = {json.dumps(c['value'], sort_keys=True)}")
        exps = rep.get("results", {}).get("exponents")
        if not exps:
            continue
        traj_path = root / name / "trajectory.csv"
        traj = io.read_csv(traj_path) if traj_path.exists() else None
        for norm in sorted(exps):
            row = exps[norm]
            e = row["exponent"]
            first.setdefault(norm, e)
            exp_rows["run"].append(name)
            exp_rows["norm"].append(norm)
            exp_rows["p"].append(row.get("p", ""))
            exp_rows["target"].append(row["target"])
            exp_rows["exponent"].append(e if e is not None else float("nan"))
            exp_rows["ci95"].append(row.get("ci95") if row.get("ci95") is not None else float("nan"))
            d = (e - first[norm]) if (e is not None and first[norm] is not None) else float("nan")
            exp_rows["delta_vs_first"].append(d)
            lines.append(f"  exponent {norm}: {e} (target {row['target']}, ci95 {row.get('ci95')}, delta {d})")
            col = norm if traj is None or norm in traj else None
            if traj is not None and norm == "alpha_dot" and "alpha_dot" in traj:
                obs = np.abs(traj["alpha_dot"])
            elif traj is not None and col in traj:
                obs = traj[col]
            else:
                continue
            icpt = row.get("intercept")
            for t, y in zip(traj["t"], obs):
                fit_rows["run"].append(name)
                fit_rows["norm"].append(norm)
                fit_rows["t"].append(float(t))
                fit_rows["observed"].append(float(y))
                ok = icpt is not None and e is not None
                fit_rows["fitted"].append(float(np.exp(icpt) * (1 + t) ** e) if ok else float("nan"))
    io.write_csv(root / "report_checks.csv", check_rows)
    if exp_rows["run"]:
        io.write_csv(root / "report_exponents.csv", exp_rows)
        io.write_csv(root / "report_fits.csv", fit_rows)
    text = "\n".join(lines) + "\n"
    (root / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="shocklab", description="Viscous shock stability experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    pr = sub.add_parser("run", help="run the pipeline described by a JSON config")
    pr.add_argument("config")
    pr.add_argument("--out", default=None, help="artifact directory")
    pr.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    pr.add_argument("-v", "--verbose", action="store_true")
    rp = sub.add_parser("report", help="consolidate the artifacts of a run directory")
    rp.add_argument("directory")
    rp.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "run":
        return run(args.config, args.out, max(1, args.jobs))
    return report(args.directory)


if __name__ == "__main__":
    sys.exit(main())
