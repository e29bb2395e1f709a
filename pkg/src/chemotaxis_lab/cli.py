"""Command-line entry point: ``chemotaxis-lab {run,sweep,audit,refine,scan}``.

Every verdict printed here is also written to a JSON file next to the
other outputs.  Exit status is 0 iff all checks in scope pass, 1 if a check
fails or a run breaks down, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import convergence, persistence, weak_residual
from .config import DEFAULT_C_WR, ConfigError, RunConfig, load_config
from .diagnostics import entropy_margin, entropy_tolerance
from .stepper import RunResult, StepError, run

log = logging.getLogger("chemotaxis_lab")


def _parse_override(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _clean(obj):
    """JSON-safe copy: numpy scalars become Python ones, non-finite floats strings."""
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_report(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    persistence.write_json_atomic(path, _clean(payload))
    return path


def _verdict(name: str, ok: bool, detail: str = "") -> bool:
    print(f"{'PASS' if ok else 'FAIL'} {name}" + (f"  ({detail})" if detail else ""))
    return ok


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.set:
        cfg = cfg.replace(**dict(args.set))
    return cfg


def _out_dir(args, cfg: RunConfig, suffix: str = "") -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg.output["directory"]) / (cfg.run_id + suffix)


def run_checks(res: RunResult, c_audit: float, mass_tol: float) -> list[dict]:
    p = res.params
    worst = min(
        (entropy_margin(r, p) + entropy_tolerance(r.t, res.grid.h, res.dt_max, c_audit, p.int_w0 + p.lam * r.t), r.t) for r in res.records
    )
    return [
        {"check": "mass", "value": res.max_mass_deviation, "tol": mass_tol,
         "pass": res.max_mass_deviation <= mass_tol},
        {"check": "v_bounds", "value": res.bound_violations, "tol": 0, "pass": res.bound_violations == 0},
        {"check": "entropy", "value": worst[0], "t": worst[1], "tol": 0.0, "pass": worst[0] >= 0,
         "note": "margin plus c_audit (h^2 + dt) t, minimised over records"},
    ]


# ------------------------------------------------------------------ commands


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    try:
        res = run(cfg)
    except StepError as exc:
        _write_report(out / "failure.json", {"run_id": cfg.run_id, "error": str(exc), "t": exc.t, "cell": exc.cell})
        print(f"run {cfg.run_id} failed at t={exc.t!r}, cell {exc.cell}: {exc}", file=sys.stderr)
        return 1
    manifest = persistence.persist_trajectory(res, out)
    checks = run_checks(res, cfg.audit["c_audit"], cfg.audit["mass_tol"])
    report = {
        "run_id": res.run_id,
        "steps": res.steps,
        "dt_min": res.dt_min,
        "dt_max": res.dt_max,
        "max_u": res.max_u,
        "manifest_hash": manifest["hash"],
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
    }
    _write_report(out / "run_report.json", report)
    ok = all([_verdict(c["check"], c["pass"], f"value={c['value']:.3e}") for c in checks])
    if not args.no_figures:
        from .plotting import plot_run

        plot_run(res.trajectory(), res.records, out / "run.png")
    print(f"wrote {out} ({res.steps} steps)")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "_sweep")
    try:
        report = convergence.eps_sweep(cfg, args.eps, threshold=args.threshold)
    except convergence.SweepError as exc:
        _write_report(out / "failure.json", {"error": str(exc), "eps": exc.eps, "t": exc.cause.t,
                                              "cell": exc.cause.cell})
        print(str(exc), file=sys.stderr)
        return 1
    jpath, _ = convergence.write_sweep_report(report, out)
    ok = all([_verdict(k, v) for k, v in report.verdicts.items()])
    if not args.no_figures:
        from .plotting import plot_sweep

        plot_sweep(report, out / "sweep.png")
    print(f"wrote {jpath}")
    return 0 if ok else 1


def cmd_audit(args) -> int:
    directory = Path(args.trajectory)
    try:
        traj, manifest = persistence.load_trajectory(directory)
    except (persistence.PersistenceError, ValueError, OSError) as exc:
        print(f"audit: {exc}", file=sys.stderr)
        return 1
    audit_cfg = (manifest.get("config") or {}).get("audit", {})
    c_wr = args.c_wr if args.c_wr is not None else audit_cfg.get("c_wr", DEFAULT_C_WR)
    mass_tol = audit_cfg.get("mass_tol", 1e-12)
    problems = persistence.integrity_problems(directory, manifest)
    entries = [{"run_id": traj.run_id, "phi_id": None, "check": "integrity", "R": len(problems), "tol": 0,
                "pass": not problems, "m_branch": None, "problems": problems}]
    entries += weak_residual.audit_trajectory(traj, c_wr, mass_tol=mass_tol, limit_form=args.limit_form)
    out = Path(args.out) if args.out else directory
    report = {
        "run_id": traj.run_id,
        "c_wr": c_wr,
        "family_coverage": "finite family of cosine-mode test functions; not a proof for all phi",
        "entries": entries,
        "pass": all(e["pass"] for e in entries),
    }
    path = _write_report(out / "audit.json", report)
    ok = all([
        _verdict(f"{e['check']}" + (f":{e['phi_id']}" if e["phi_id"] else ""), e["pass"],
                 f"R={e['R']:.3e} tol={e['tol']:.3e}")
        for e in entries
    ])
    if not args.no_figures:
        from .plotting import plot_audit

        plot_audit(entries, out / "audit.png")
    print(f"wrote {path}")
    return 0 if ok else 1


def cmd_refine(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "_refine")
    try:
        report = convergence.refinement_study(cfg, args.levels)
    except StepError as exc:
        print(f"refinement run failed at t={exc.t!r}, cell {exc.cell}: {exc}", file=sys.stderr)
        return 1
    path = _write_report(out / "refine.json", report.to_dict())
    detail = "exact" if report.exact else f"order={report.observed_order:.3f}"
    if not report.contract_applies:
        detail += ", reported only (m < 2)"
    ok = _verdict("observed_order", report.passed, detail)
    if not args.no_figures:
        from .plotting import plot_refinement

        plot_refinement(report, out / "refine.png")
    print(f"wrote {path}")
    return 0 if ok else 1


def cmd_scan(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "_scan")
    report = convergence.critical_exponent_scan(cfg, args.m, workers=args.workers)
    path = _write_report(out / "scan.json", report)
    ok = True
    for mem in report["members"]:
        if mem["completed"]:
            good = mem["bound_violations"] == 0 and mem["max_mass_deviation"] <= cfg.audit["mass_tol"]
            detail = f"max_u={mem['max_u']:.4g}"
        else:
            good = not mem["supercritical"]
            detail = f"failed at t={mem['failure_t']!r}"
        ok &= _verdict(f"m={mem['m']:g}" + ("" if mem["supercritical"] else " (subcritical)"), good, detail)
    if not args.no_figures:
        from .plotting import plot_scan

        plot_scan(report, out / "scan.png")
    print(f"wrote {path}")
    return 0 if ok else 1


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chemotaxis-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", metavar="{run,sweep,audit,refine,scan}")
    sub.required = True

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
            p.add_argument("--set", action="append", type=_parse_override, metavar="KEY=VALUE",
                           help="override a top-level config key (value parsed as JSON)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p = sub.add_parser("run", help="run one simulation and persist it")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="eps-sweep with Cauchy verdicts")
    common(p)
    p.add_argument("--eps", type=_float_list, required=True, help="strictly decreasing, comma separated")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("audit", help="weak-form audits of a stored trajectory")
    common(p, config=False)
    p.add_argument("--trajectory", required=True, help="run directory containing manifest.json")
    p.add_argument("--c-wr", type=float, default=None)
    p.add_argument("--limit-form", action="store_true", help="assemble the unregularized relations")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("refine", help="mesh refinement order study")
    common(p)
    p.add_argument("--levels", type=int, default=3)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("scan", help="observational scan over the diffusion exponent")
    common(p)
    p.add_argument("--m", type=_float_list, required=True, help="comma-separated exponents")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_scan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1
    except persistence.PersistenceError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
