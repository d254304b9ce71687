"""Command-line driver: ``bngd {run,sweep,dim-scan,omega,scaling-check,verify}``.

Exit status: 0 success (run: converged to a minimizer), 1 error,
2 usage/config error, 3 converged to a saddle, 4 max_iters reached,
5 diverged, 6 a verification or scaling check failed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import config as C
from .analysis import (
    ScalingTransform,
    beta_bar_mc,
    dim_scan_point,
    loglog_slope,
    sweep,
    verify_scaling,
)
from .dynamics import RunConfig, format_number, run
from .model import DomainError, SpectrumSpec
from .spectral import SpectralError
from .verify import available_checks, run_suite, scaling_case

log = logging.getLogger("bngd")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2
EXIT_SADDLE, EXIT_MAX_ITERS, EXIT_DIVERGED, EXIT_CHECK_FAILED = 3, 4, 5, 6
OUTCOME_EXIT = {
    "converged_minimizer": EXIT_OK,
    "converged_saddle": EXIT_SADDLE,
    "max_iters_reached": EXIT_MAX_ITERS,
    "diverged": EXIT_DIVERGED,
}


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(v) if isinstance(v, (float, int, np.floating, np.integer))
                        and not isinstance(v, bool) else v for v in row])


def write_manifest(out: Path, cfg: dict, started: float, files) -> None:
    """Manifest with schema version, config echo, wall time and checksums."""
    sums = {}
    for name in sorted(files):
        sums[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()
    write_json(out / "manifest.json", {
        "schema_version": C.SCHEMA_VERSION,
        "kind": cfg["kind"],
        "config": cfg,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "artifacts": sums,
    })


# ---------------------------------------------------------------- commands

def cmd_run(cfg: dict, out: Path) -> tuple[int, list]:
    p = C.build_instance(cfg)
    r = cfg["run"]
    rc = RunConfig(
        eps=float(r["eps"]), w0=C.initial_w(cfg, p), eps_a=float(r["eps_a"]), a0=float(r["a0"]),
        max_iters=int(r["max_iters"]), grad_tol=r["grad_tol"], div_tol=float(r["div_tol"]),
        q_tol=float(r["q_tol"]), thin=cfg["output"]["thin"],
        full_record=int(cfg["output"]["full_record"]), verify=bool(r["verify"]), fault=r["fault"],
    )
    traj = run(p, rc, r["mode"])
    with open(out / "trajectory.csv", "w", newline="") as fh:
        traj.to_csv(fh)
    summary = traj.summary()
    summary["instance"] = {"spectrum": cfg["instance"]["spectrum"], "kappa": p.spectrum.kappa,
                           "eps_opt": p.spectrum.eps_opt, "u_norm_h": math.sqrt(p.uhu)}
    write_json(out / "summary.json", summary)
    log.info("outcome %s after %d iterations", traj.outcome, traj.n_iters)
    return OUTCOME_EXIT[traj.outcome], ["trajectory.csv", "summary.json"]


def _sweep_instances(cfg):
    sec = cfg["sweep"]
    kappas = sec.get("kappas")
    if not kappas:
        return [("sweep", C.build_instance(cfg), cfg["instance"]["spectrum"])]
    base = cfg["instance"]["spectrum"]
    out = []
    for kappa in kappas:
        spec = SpectrumSpec.logspace(1.0, float(kappa), int(base.get("d", 100)))
        out.append((f"sweep_kappa{float(kappa):g}", C.build_instance(cfg, spec), spec.to_dict()))
    return out


def cmd_sweep(cfg: dict, out: Path) -> tuple[int, list]:
    sec = cfg["sweep"]
    eps_a = C.grid(sec["eps_a"])
    eps = C.grid(sec["eps"])
    files = []
    for stem, p, spec in _sweep_instances(cfg):
        w0 = C.initial_w(cfg, p)
        g = sweep(p, eps_a, eps, w0, float(cfg["run"]["a0"]), int(sec["k"]), cfg["workers"])
        g.meta.update({"instance": spec, "seed": cfg["seed"], "a0": cfg["run"]["a0"]})
        with open(out / f"{stem}.csv", "w", newline="") as fh:
            g.to_csv(fh)
        counts = {c: int(np.sum(g.colors == c)) for c in ("near_opt_and_better", "near_opt_only",
                                                          "better_only", "neither")}
        write_json(out / f"{stem}.json", {**g.header(), "color_counts": counts,
                                         "band_extent_decades": g.band_extent(),
                                         "n_diverged": int(np.sum(g.status == "diverged"))})
        files += [f"{stem}.csv", f"{stem}.json"]
        log.info("%s: %d cells, band extent %.2f decades", stem, g.colors.size, g.band_extent())
    return EXIT_OK, files


def cmd_dim_scan(cfg: dict, out: Path) -> tuple[int, list]:
    sec = cfg["dim_scan"]
    dims = [int(d) for d in C.grid(sec["dims"])]
    eps = C.grid(sec["eps"])
    rows = []
    for i, d in enumerate(dims):
        rows.append(dim_scan_point(d, eps, int(sec["n_runs"]), int(sec["k"]), cfg["seed"],
                                   float(sec["lo"]), float(sec["hi"]), int(sec["n_mc"]),
                                   cfg["workers"], d_index=i))
        log.info("d=%d: measured omega %.4g, predicted %.4g", d, rows[-1].omega_measured,
                 rows[-1].omega_predicted)
    write_rows(out / "dim_scan_curves.csv", ["d", "eps", "eps_hat"],
               [(r.d, e, h) for r in rows for e, h in zip(r.curve.eps, r.curve.eps_hat)])
    write_rows(out / "dim_scan.csv",
               ["d", "omega_measured", "omega_measured_empty", "omega_predicted", "beta_bar",
                "lower_bound_generic", "lower_bound_arithmetic"],
               [(r.d, r.omega_measured, int(r.omega_measured_empty), r.omega_predicted, r.beta_bar,
                 r.lower_bound_generic, r.lower_bound_arithmetic) for r in rows])
    summary = {"dims": dims}
    if len(rows) > 1:
        summary["predicted_slope"] = loglog_slope(dims, [r.omega_predicted for r in rows])
        measured = [r.omega_measured for r in rows]
        summary["measured_strictly_increasing"] = bool(all(b > a for a, b in zip(measured, measured[1:])))
    write_json(out / "dim_scan.json", summary)
    return EXIT_OK, ["dim_scan_curves.csv", "dim_scan.csv", "dim_scan.json"]


def cmd_omega(cfg: dict, out: Path) -> tuple[int, list]:
    sec = cfg["omega"]
    lam = C.spectrum_spec(cfg).eigenvalues()
    _, est = beta_bar_mc(lam, int(sec["n_samples"]), seed=cfg["seed"])
    write_json(out / "omega.json", est.to_dict(bool(sec.get("include_samples"))))
    log.info("omega %.6g (beta_bar %.6g)", est.omega, est.beta_bar)
    return EXIT_OK, ["omega.json"]


def cmd_scaling_check(cfg: dict, out: Path) -> tuple[int, list]:
    sec = cfg["scaling_check"]
    tol = float(sec["tol"])
    report = {}
    ok = True
    for variant in ("conjugate", "rescale_w"):
        devs = []
        for i in range(int(sec["n_cases"])):
            p, rc, t = scaling_case(cfg["seed"], variant, i)
            devs.append(verify_scaling(p, rc, t, variant, int(sec["steps"])))
        worst = max(devs) if devs else 0.0
        report[variant] = {"cases": len(devs), "max_relative_deviation": worst, "passed": worst <= tol}
        ok &= worst <= tol
    report["tol"] = tol
    write_json(out / "scaling.json", report)
    return (EXIT_OK if ok else EXIT_CHECK_FAILED), ["scaling.json"]


def cmd_verify(cfg: dict, out: Path) -> tuple[int, list]:
    sec = cfg["verify"]
    report = run_suite(cfg["seed"], sec.get("checks"), sec.get("fault"))
    write_json(out / "verify.json", report)
    for name, r in report["checks"].items():
        log.info("%-32s %s (%d checks, %d violations, worst %.3g)", name,
                 "PASS" if r["passed"] else "FAIL", r["checks"], r["violations"], r["worst"])
    return (EXIT_OK if report["passed"] else EXIT_CHECK_FAILED), ["verify.json"]


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "dim-scan": cmd_dim_scan,
    "omega": cmd_omega,
    "scaling-check": cmd_scaling_check,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bngd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        sp.add_argument("--config", type=Path, help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--thin", type=int, help="record every M-th step after the first 1000")
        if name == "verify":
            sp.add_argument("--checks", help="comma-separated check filter (empty: none)")
            sp.add_argument("--fault", choices=["flip_a_sign"], help="inject a known fault")
            sp.add_argument("--list", action="store_true", help="list check names and exit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "list", False):
        print("\n".join(available_checks()))
        return EXIT_OK
    kind = C.COMMAND_KIND[args.command]
    started = time.perf_counter()
    try:
        user = C.load(args.config) if args.config else {}
        if args.command == "verify":
            extra = {}
            if args.checks is not None:
                extra["checks"] = [c for c in args.checks.split(",") if c]
            if args.fault:
                extra["fault"] = args.fault
            if extra:
                user = C.deep_merge(user, {"verify": extra})
        cfg = C.resolve(kind, user, {"seed": args.seed, "workers": args.workers,
                                     "out": args.out, "thin": args.thin})
    except (C.ConfigError, OSError) as exc:
        print(f"bngd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg["output"]["dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        C.dump(cfg, out / "config.json")
        code, files = COMMANDS[args.command](cfg, out)
        write_manifest(out, cfg, started, ["config.json", *files])
    except (C.ConfigError, ValueError) as exc:
        print(f"bngd: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, C.ConfigError) else EXIT_ERROR
    except (OSError, SpectralError, DomainError) as exc:
        print(f"bngd: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return code


if __name__ == "__main__":
    sys.exit(main())
