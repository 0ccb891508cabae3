"""Command-line interface.

Exit codes: 0 success, 1 usage or input-file error, 2 numerical failure.
Errors go to stderr as ``gridstab:error:<kind>: <message>``.
"""
import argparse
from dataclasses import replace
import json
import sys

import numpy as np

from .equilibrium import assemble_equilibrium, default_dispatch, load_dispatch
from .errors import ConfigError, GridStabError, NumericalError
from .netmodel import load_network_config
from .simulate import Scenario, load_scenario, simulate
from .smallsignal import DEFAULT_MARGIN, analyze, write_modes_csv
from .sweep import SweepResult, load_sweep_spec, region_summary, run_sweep, summary_to_dict

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _report(kind, message):
    print(f"gridstab:error:{kind}: {message}", file=sys.stderr)


def build_parser():
    p = _Parser(prog="gridstab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, dispatch=True):
        sp.add_argument("--net", required=True, help="network description (JSON)")
        if dispatch:
            sp.add_argument("--dispatch", help="dispatch overrides (JSON)")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized Jacobian probes")

    sp = sub.add_parser("powerflow", help="solve the power flow and print the bus table")
    common(sp)
    sp.add_argument("--out", help="write the solution as JSON")

    sp = sub.add_parser("modes", help="eigenvalues and stability verdict at one operating point")
    common(sp)
    sp.add_argument("--margin", type=float, default=DEFAULT_MARGIN)
    sp.add_argument("--keep-zero-mode", action="store_true",
                    help="treat angle-symmetry zero modes as ordinary eigenvalues")
    sp.add_argument("--dump-modes", metavar="CSV", help="write all modes with participations")
    sp.add_argument("--dump-equilibrium", metavar="JSON", help="write bus table and named states")

    sp = sub.add_parser("simulate", help="time-domain simulation of a scenario")
    common(sp)
    sp.add_argument("--scenario", required=True, help="scenario description (JSON)")
    sp.add_argument("--out", required=True, help="output CSV")
    sp.add_argument("--record", nargs="+", help="signals to record (default: all)")
    sp.add_argument("--dump-equilibrium", metavar="JSON")

    sp = sub.add_parser("sweep", help="stability map over a grid of operating points")
    common(sp, dispatch=False)
    sp.add_argument("--spec", required=True, help="sweep description (JSON)")
    sp.add_argument("--out", required=True, help="output CSV")
    sp.add_argument("--workers", type=int, default=1,
                    help="worker processes (GRIDSTAB_THREADS overrides)")

    sp = sub.add_parser("summarize", help="region summary of a sweep CSV")
    sp.add_argument("--result", required=True, help="CSV written by 'sweep'")
    sp.add_argument("--out", help="write the summary as JSON")
    sp.add_argument("--v-from", type=float, default=1.0,
                    help="lower voltage bound for the voltage trend")
    return p


def _equilibrium(args):
    net = load_network_config(args.net)
    disp = load_dispatch(net, args.dispatch) if args.dispatch else default_dispatch(net)
    return net, assemble_equilibrium(net, disp)


def cmd_powerflow(args):
    net, eq = _equilibrium(args)
    sol = eq.bus_solution
    print(f"converged in {sol.iterations} iterations, mismatch {sol.mismatch:.2e}")
    print(f"{'bus':>6} {'v':>10} {'theta':>10} {'p':>10} {'q':>10}")
    for k, b in enumerate(sol.bus_ids):
        print(f"{b:>6} {sol.v[k]:10.6f} {sol.theta[k]:10.6f} {sol.p[k]:10.6f} {sol.q[k]:10.6f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(sol.to_dict(), fh, indent=2)


def cmd_modes(args):
    net, eq = _equilibrium(args)
    rng = np.random.default_rng(args.seed)
    lm, ma, rep = analyze(eq.system, eq, rng=rng, margin=args.margin, keep_zero_mode=args.keep_zero_mode)
    print(f"verdict: {rep.verdict}")
    if rep.dominant is not None:
        lam = rep.dominant
        print(f"dominant: {lam.real:.6g} {lam.imag:+.6g}j  ({rep.freq_hz:.4g} Hz, damping {rep.damping:.4g})")
        print("top states: " + ", ".join(f"{n} {v:.3f}" for n, v in rep.top_states))
    if rep.zero_modes:
        print(f"zero modes reported separately: {rep.zero_modes}")
    if args.dump_modes:
        write_modes_csv(ma, args.dump_modes)
    if args.dump_equilibrium:
        eq.save(args.dump_equilibrium)


def cmd_simulate(args):
    net, eq = _equilibrium(args)
    sc = load_scenario(args.scenario)
    if args.record:
        sc = Scenario(sc.t_end, sc.dt, sc.events, tuple(args.record))
    ts = simulate(eq.system, eq, sc)
    ts.to_csv(args.out)
    if args.dump_equilibrium:
        eq.save(args.dump_equilibrium)
    status = "diverged" if ts.diverged else "completed"
    print(f"{status}: {len(ts.time)} samples up to t = {ts.time[-1]:.6g} s")


def cmd_sweep(args):
    net = load_network_config(args.net)
    spec = load_sweep_spec(args.spec)
    if args.seed:
        spec = replace(spec, seed=args.seed)
    res = run_sweep(net, spec, parallelism=args.workers)
    res.to_csv(args.out)
    counts = {}
    for r in res.records:
        counts[r.verdict] = counts.get(r.verdict, 0) + 1
    print(", ".join(f"{k}: {v}" for k, v in sorted(counts.items())))


def cmd_summarize(args):
    try:
        res = SweepResult.from_csv(args.result)
    except FileNotFoundError:
        raise ConfigError(f"result file not found: {args.result}") from None
    except (StopIteration, ValueError) as exc:
        raise ConfigError(f"cannot read sweep result {args.result}: {exc}") from None
    s = region_summary(res, v_from=args.v_from)
    others = [a.path for a in res.axes if a.path != s.p_axis]
    data = summary_to_dict(s, others)
    print(f"stable points: {s.stable_count} of {s.total}")
    for key, val in s.trends.items():
        if val is not None:
            print(f"{key}: {val}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(data, fh, indent=2)


COMMANDS = {
    "powerflow": cmd_powerflow,
    "modes": cmd_modes,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "summarize": cmd_summarize,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _report("usage", str(exc))
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except NumericalError as exc:
        _report(exc.kind, str(exc))
        return EXIT_NUMERICAL
    except GridStabError as exc:
        _report(exc.kind, str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _report("io", str(exc))
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
