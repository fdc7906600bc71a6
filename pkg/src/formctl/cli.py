"""Command-line front end: ``formctl synth | simulate | verify | reproduce-paper``.

Exit codes: 0 success, 1 invalid input (or regression mismatch),
2 synthesis failure, 3 simulation assertion failure.
Set ``FORMCTL_LOG`` to DEBUG, INFO, WARNING or ERROR for log output.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (BoundViolated, DefectiveW, FormctlError, NotDetectable, NotLocalizable,
                     NumericalBlowup, ParseError, RegressionMismatch, RiccatiDiverged, UnstablePole,
                     ValidationError, ZetaViolated)
from .gains import VARIANTS
from .io_csv import write_trace_csv
from .reproduce import DEFAULT_TOL, reproduce
from .scenario import build_pipeline, load_scenario
from .sim import leader_monte_carlo, run_dt_ladder, run_scenario, tracking_errors, verify_bounds

EXIT_OK, EXIT_INPUT, EXIT_SYNTH, EXIT_SIM = 0, 1, 2, 3

SYNTH_ERRORS = (NotLocalizable, NotDetectable, RiccatiDiverged, DefectiveW, UnstablePole)
SIM_ERRORS = (BoundViolated, ZetaViolated, NumericalBlowup)

log = logging.getLogger("formctl")


def _matrix(name, M, out, row_offset=0):
    print(f"{name} =", file=out)
    with np.printoptions(precision=6, suppress=True, linewidth=120):
        for k, row in enumerate(np.atleast_2d(M)):
            cells = " ".join(f"{v + 0.0:10.6g}" for v in row)
            print(f"  [{k + 1 + row_offset:>2}] {cells}", file=out)


def _load(args, variant=None):
    scn = load_scenario(args.scenario)
    if getattr(args, "dt", None) is not None or getattr(args, "t_end", None) is not None:
        kw = {}
        if args.dt is not None:
            kw["dt"] = args.dt
        if args.t_end is not None:
            kw["t_end"] = args.t_end
        scn = replace(scn, sim=replace(scn.sim, **kw))
    return scn, build_pipeline(scn, variant=variant)


def cmd_synth(args, out=None) -> int:
    out = out or sys.stdout
    scn = load_scenario(args.scenario)
    pl = build_pipeline(scn, variant=args.variant, synthesize_gains=False)
    mats, cert = pl.mats, pl.certificate
    print(f"scenario {scn.name}: n = {mats.n}, n_l = {mats.n_l}, m = {scn.plant.m}, variant {pl.variant}", file=out)
    _matrix("Omega_fl", mats.omega_fl, out, mats.n_l)
    _matrix("Omega_ff", mats.omega_ff, out, mats.n_l)
    print(f"localizable: {cert.localizable} (sigma_min {cert.sigma_min:.6g}, sigma_max {cert.sigma_max:.6g}"
          + (f", nominal residual {cert.residual:.3e})" if cert.residual is not None else ")"), file=out)
    if not cert.localizable:
        raise NotLocalizable("follower block of the follower matrix is singular")
    _matrix("Omega_bar", mats.omega_bar, out, mats.n_l)
    _matrix("Omega_hat", mats.omega_hat, out, mats.n_l)
    _matrix("sigma = inv(Omega_ff) Omega_fl", mats.sigma, out, mats.n_l)
    g = build_pipeline(scn, variant=args.variant).gains
    print(f"poles {np.round(g.poles, 9).tolist()}  beta {np.round(g.beta, 9).tolist()}", file=out)
    _matrix("K (per axis)", g.K[::3, ::3], out)
    _matrix("L (per axis)", g.L[::3, ::3], out)
    print(f"gamma_m {g.gamma_m:.6g}  zeta {g.zeta:.6g}  psi {g.psi:.6g}  cond(M) {g.cond_M:.6g}", file=out)
    print(f"gamma_u {g.gamma_u:.6g}  c1 {g.c1:.6g}  c2 {g.c2:.6g}  (n_l sigma gamma_u = {g.c2_required:.6g})",
          file=out)
    for note in g.notes:
        print(f"note: {note}", file=out)
    print("certificates:", file=out)
    certs = g.certificates()
    for name, c in certs.items():
        print(f"  {'PASS' if c['pass'] else 'FAIL'}  {name:28s} value {c['value']:.6g}  limit {c['limit']:.6g}",
              file=out)
    return EXIT_OK if all(c["pass"] for c in certs.values()) else EXIT_SYNTH


def _summary(scn, pl, trace, bound):
    errs = tracking_errors(trace, scn.plan)
    return {
        "scenario": scn.name,
        "variant": trace.variant,
        "backend": trace.backend,
        "dt": trace.dt,
        "integrator": trace.integrator,
        "epsilon": trace.epsilon,
        "epsilon_effective": trace.epsilon_eff,
        "samples": int(trace.times.size),
        "gamma_u": pl.gains.gamma_u,
        "leader_input_sup": [float(v) for v in bound.sup_norm],
        "gamma_u_slack": bound.slack,
        "segments": [
            {"t": [s.t_start, s.t_end], "tail_start": s.tail_start,
             "tail_leader_max": s.tail_leader_max, "tail_follower_max": s.tail_follower_max,
             "tail_formation_max": s.tail_formation_max,
             "terminal_leader": s.terminal_leader, "terminal_follower": s.terminal_follower}
            for s in errs.segments
        ],
    }


def _print_summary(summary, out):
    print(f"{summary['scenario']} [{summary['variant']}] dt {summary['dt']:g} {summary['integrator']} "
          f"({summary['backend']} kernel)", file=out)
    if summary["epsilon_effective"] > summary["epsilon"]:
        print(f"sign boundary layer widened {summary['epsilon']:g} -> {summary['epsilon_effective']:.6g} "
              f"to keep the step stable", file=out)
    print("segment            tail |e_leader|   tail |e_f|     tail |p - p*|", file=out)
    for s in summary["segments"]:
        print(f"  [{s['t'][0]:6.3g}, {s['t'][1]:6.3g})   {s['tail_leader_max']:12.4e}  "
              f"{s['tail_follower_max']:12.4e}  {s['tail_formation_max']:12.4e}", file=out)
    print(f"leader input sup {max(summary['leader_input_sup']):.6g} <= gamma_u {summary['gamma_u']:.6g} "
          f"(slack {summary['gamma_u_slack']:.6g})", file=out)


def _ladder_path(out: Path, dt: float) -> Path:
    return out.with_name(f"{out.stem}_dt{dt:.0e}{out.suffix or '.csv'}")


def cmd_simulate(args, out=None) -> int:
    out = out or sys.stdout
    scn, pl = _load(args, args.variant)
    out_path = Path(args.out) if args.out else Path(scn.outputs.get("trace", f"{scn.name}.csv"))
    if args.dt_ladder:
        traces, diffs, orders = run_dt_ladder(pl.mats, scn.plan, pl.gains, scn.sim, variant=pl.variant)
        for tr in traces:
            path = _ladder_path(out_path, tr.dt)
            write_trace_csv(tr, path)
            print(f"wrote {path}", file=out)
        print("terminal-state differences between successive dt: "
              + ", ".join(f"{d:.3e}" for d in diffs), file=out)
        print("observed order: " + ", ".join(f"{o:.3f}" for o in orders), file=out)
        if pl.gains.c2 > 0:
            print("note: the sign term limits the observed order; use c2 = 0 for a clean RK4 check", file=out)
        return EXIT_OK
    trace = run_scenario(pl.mats, scn.plan, pl.gains, scn.sim, variant=pl.variant)
    write_trace_csv(trace, out_path)
    bound = verify_bounds(trace, pl.gains, raise_on_violation=False)
    summary = _summary(scn, pl, trace, bound)
    _print_summary(summary, out)
    print(f"wrote {out_path}", file=out)
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=2) + "\n")
    if scn.sim.assert_bounds and not bound.ok:
        verify_bounds(trace, pl.gains)     # raises with the first offender
    return EXIT_OK


def cmd_verify(args, out=None) -> int:
    out = out or sys.stdout
    scn, pl = _load(args, args.variant)
    g = pl.gains
    report = leader_monte_carlo(scn.plan, g, args.runs, scn.sim, jobs=args.jobs)
    print(f"leader bound Monte-Carlo: {args.runs} runs inside zeta = {g.zeta:g}: "
          f"sup |u| = {report.sup_norm.max():.6g}, gamma_u = {g.gamma_u:.6g}, "
          f"{len(report.violations)} violations", file=out)
    certs = g.certificates()
    failed = [k for k, c in certs.items() if not c["pass"]]
    print(f"gain certificates: {len(certs) - len(failed)}/{len(certs)} pass", file=out)
    trace = run_scenario(pl.mats, scn.plan, g, replace(scn.sim, assert_bounds=True), variant=pl.variant)
    bound = verify_bounds(trace, g, raise_on_violation=False)
    _print_summary(_summary(scn, pl, trace, bound), out)
    if failed:
        print("failed certificates: " + ", ".join(failed), file=out)
        return EXIT_SYNTH
    if report.violations:
        t, i, val = report.violations[0]
        raise BoundViolated(f"Monte-Carlo run {i // scn.plan.n_l}, leader {i % scn.plan.n_l + 1}: "
                            f"|u| = {val:.6g} > gamma_u at t = {t:.6g}", time=t, leader=i)
    if not bound.ok:
        verify_bounds(trace, g)
    return EXIT_OK


def cmd_reproduce(args, out=None) -> int:
    out = out or sys.stdout
    entries = reproduce(args.fixtures or None, tol=args.tol)
    for e in entries:
        print(f"{'PASS' if e.ok else 'FAIL'}  {e.fixture:14s} {e.item:36s} max error {e.error:.3e}", file=out)
    bad = [e for e in entries if not e.ok]
    if bad:
        raise RegressionMismatch(f"{len(bad)} of {len(entries)} regression entries differ", entries=bad)
    print(f"all {len(entries)} entries match within {args.tol:g}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="formctl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"formctl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="build follower matrices and gains, print certificates")
    s.add_argument("scenario")
    s.add_argument("--variant", choices=VARIANTS)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", help="run the closed loop and write a trace CSV")
    s.add_argument("scenario")
    s.add_argument("--out", help="trace CSV path (default: the scenario's outputs.trace)")
    s.add_argument("--summary", help="also write the summary as JSON")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--dt", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--dt-ladder", action="store_true", help="run at dt = 4e-3, 2e-3, 1e-3 and report the order")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="Monte-Carlo leader bound check plus a bound-asserting run")
    s.add_argument("scenario")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--runs", type=int, default=20)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--dt", type=float)
    s.add_argument("--t-end", type=float)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("reproduce-paper", help="diff bundled fixtures against stored values")
    s.add_argument("fixtures", nargs="*", help="scenario files (default: all bundled)")
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.set_defaults(func=cmd_reproduce)
    return p


def _setup_logging():
    level = os.environ.get("FORMCTL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SYNTH_ERRORS as exc:
        print(f"synthesis failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SYNTH
    except SIM_ERRORS as exc:
        print(f"simulation assertion failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIM
    except RegressionMismatch as exc:
        print(f"regression mismatch: {exc}", file=sys.stderr)
        for e in exc.entries:
            print(f"  {e.fixture}: {e.item} off by {e.error:.3e}", file=sys.stderr)
        return EXIT_INPUT
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FormctlError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
