"""Command line: ``ksns {run,semigroup-check,duhamel-check,sweep,verify}``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import grid
from .config import ConfigError, RunConfig, load_config
from .diagnostics import (
    NormSeries,
    check_identities,
    decay_report,
    epsilon_sweep,
    measure_stokes_rate,
    write_report_csv,
    write_sweep_csv,
)
from .duhamel import contraction_monotone, cross_validate, write_report_csv as write_duhamel_csv
from .pde_core.stepper import run as run_scenario
from .presets import linear_scenario
from .semigroup import VARIANTS, default_times, standard_probes, verify_lp_lq

log = logging.getLogger("ksns")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _exponent(s: str) -> float:
    if s.lower() in ("inf", "infinity", "∞"):
        return math.inf
    v = float(s)
    if v < 1:
        raise argparse.ArgumentTypeError("Lebesgue exponents must be >= 1")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value run configuration")
    p.add_argument("--preset", help="sperm_excess, egg_excess, balanced or stokes_ab")
    p.add_argument("--epsilon", type=float, help="smallness of the deviation from equilibrium")
    p.add_argument("--out", help="output directory (default: $KSNS_OUT_DIR, then output.dir)")
    p.add_argument("--threads", type=int, default=None, help="FFT worker threads")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksns", description="Chemotaxis-fluid coral fertilization simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate a configured scenario")
    _common(p)
    p.add_argument("--snapshots", action="store_true", help="write binary field snapshots")

    p = sub.add_parser("semigroup-check", help="empirical heat semigroup decay constants")
    _common(p)
    p.add_argument("--variant", choices=VARIANTS, default="i")
    p.add_argument("--p", type=_exponent, default=math.inf)
    p.add_argument("--q", type=_exponent, default=1.0)
    p.add_argument("--cells", type=int, default=64)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--times", type=int, default=25, help="number of log-spaced times")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("duhamel-check", help="stepper vs Picard iteration of the mild equations")
    _common(p)
    p.add_argument("--T", type=float, default=0.25)
    p.add_argument("--linear", action="store_true", help="use the decoupled linear scenario")

    p = sub.add_parser("sweep", help="decay verdicts across a range of epsilon")
    _common(p)
    p.add_argument("--epsilons", default="0.001,0.01,0.1,1", help="comma separated, increasing")

    p = sub.add_parser("verify", help="run, then identity checks and decay fits")
    _common(p)
    return parser


def _configure(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.preset is not None:
        changes["preset"] = args.preset
    if args.epsilon is not None:
        changes["epsilon"] = args.epsilon
    return cfg.with_(**changes) if changes else cfg


def _out_dir(args, cfg: RunConfig | None) -> Path | None:
    out = args.out or os.environ.get("KSNS_OUT_DIR") or (cfg.output_dir if cfg else None)
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sub_dir(out: Path | None, name: str, several: bool) -> Path | None:
    if out is None or not several:
        return out
    return out / name.replace(":", "_")


def cmd_run(args) -> int:
    cfg = _configure(args)
    out = _out_dir(args, cfg)
    scenarios = cfg.scenarios()
    status = EXIT_OK
    for sc in scenarios:
        traj = run_scenario(sc, _sub_dir(out, sc.name, len(scenarios) > 1), keep_states=False, snapshots=args.snapshots)
        s = traj.summary
        print(
            f"{sc.name}: t={s['t_reached']:.6g} steps={s['steps']} |m|inf={s['m_dev']:.3e} "
            f"|rho-rho_inf|inf={s['rho_dev']:.3e} |u|inf={s['u']:.3e}"
        )
        if traj.blew_up:
            print(f"{sc.name}: blow-up detected, T proxy = {traj.t_reached:.6g} ({traj.blowup_reason})")
            status = EXIT_FAIL
    return status


def cmd_semigroup(args) -> int:
    out = _out_dir(args, None)
    dom = grid.BoxDomain.cube(args.dim, args.cells)
    probes = standard_probes(dom, args.variant, args.seed)
    rep = verify_lp_lq(args.p, args.q, probes, default_times(dom, args.times), dom, args.variant)
    fh = open(out / "semigroup_check.csv", "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "p", "q", "t", "probe_id", "ratio"])
        for variant, p, q, t, pid, r in rep.rows:
            w.writerow([variant, p, q, "%.17g" % t, pid, "%.17g" % r])
    finally:
        if out:
            fh.close()
    print(f"variant {args.variant} p={args.p} q={args.q}: constant {rep.measured_ratio:.6g}, passed={rep.passed}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_duhamel(args) -> int:
    cfg = _configure(args)
    out = _out_dir(args, cfg)
    if args.linear:
        sc = linear_scenario(cfg.scenarios()[0].domain)
    else:
        sc = cfg.scenarios()[0]
    rep = cross_validate(sc, args.T)
    monotone = contraction_monotone(rep.distances)
    if out is not None:
        write_duhamel_csv(out / "duhamel_check.csv", rep)
    for k, d in enumerate(rep.distances, start=1):
        print(f"dist({k}) = {d:.3e}")
    for name, val in rep.half_vs_picard.items():
        print(f"{name}: |stepper - picard| = {val:.3e}, allowed {rep.tolerance[name]:.3e}")
    print(f"{rep.message}; passed={rep.passed}; dist monotone={monotone}")
    return EXIT_OK if rep.passed and monotone else EXIT_FAIL


def cmd_sweep(args) -> int:
    cfg = _configure(args)
    out = _out_dir(args, cfg)
    eps = [float(x) for x in args.epsilons.split(",") if x.strip()]
    base = cfg.scenarios()[0]
    cal = measure_stokes_rate(base.domain)

    def build(e):
        return cfg.with_(epsilon=e).scenarios()[0]

    rows = epsilon_sweep(build, eps, cal.rate)
    if out is not None:
        write_sweep_csv(out / "sweep.csv", rows)
    for r in rows:
        verdicts = " ".join(f"{k}={v}" for k, v in r.verdicts.items())
        print(f"eps={r.epsilon:g} global={r.global_run} t={r.t_reached:.4g} {verdicts}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _configure(args)
    out = _out_dir(args, cfg)
    scenarios = cfg.scenarios()
    cal = measure_stokes_rate(scenarios[0].domain)
    print(f"measured Stokes rate {cal.rate:.6g} (R^2 {cal.r2:.6f})")
    ok = True
    for sc in scenarios:
        sub = _sub_dir(out, sc.name, len(scenarios) > 1)
        traj = run_scenario(sc, sub, keep_states=False)
        ledger = check_identities(traj)
        report = decay_report(NormSeries.from_trajectory(traj), sc.domain.lambda1, cal.rate)
        if sub is not None:
            write_report_csv(sub / "verify.csv", ledger, report)
        for c in ledger.checks:
            print(f"{sc.name} identity {c.name}: {'pass' if c.passed else 'FAIL'} (margin {c.margin:.3e})")
        for row in report.rows():
            if row["verdict"] == "n/a":
                print(f"{sc.name} decay {row['norm']}: n/a")
            else:
                print(f"{sc.name} decay {row['norm']}: rate {row['rate']:.4f} R^2 {row['r2']:.4f} {row['verdict']}")
        if traj.blew_up:
            print(f"{sc.name}: blow-up at t={traj.t_reached:.6g}")
        ok = ok and ledger.passed and report.consistent and not traj.blew_up
    print("verify: PASS" if ok else "verify: FAIL")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "run": cmd_run,
    "semigroup-check": cmd_semigroup,
    "duhamel-check": cmd_duhamel,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.deterministic:
        grid.set_fft_workers(1)
    elif args.threads is not None:
        grid.set_fft_workers(args.threads)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"ksns: cannot read {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"ksns: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
