"""Command-line entry point: ``ncsopt validate|synthesize|simulate|verify``.

Exit codes: 0 on success, 1 when validation or verification fails, 2 on I/O
or format errors.
"""
from __future__ import annotations

import argparse
import sys

from . import oracle
from .errors import Blowup, FormatError, HashMismatch, NCSError, ValidationError
from .problem import load_problem
from .simulation import run_episode, run_monte_carlo
from .synthesis import GainSchedule, synthesize

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2


def _load(path):
    return load_problem(path)


def cmd_validate(args) -> int:
    spec = _load(args.config)
    lay = spec.layout
    print(f"ok: n={spec.n} m={spec.m} k0={spec.cost.k0} N={spec.cost.N} "
          f"r=[{lay.r_lo},{lay.r_hi}] d=[{lay.d_lo},{lay.d_hi}] "
          f"m_tilde={lay.m_tilde} m_hat={lay.m_hat}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    spec = _load(args.config)
    schedule = synthesize(spec)
    schedule.save(args.output)
    print(f"wrote {args.output}")
    print("k  min_cond  max_cond")
    for i, k in enumerate(range(schedule.k0, schedule.N + 1)):
        c = schedule.cond[i]
        print(f"{k}  {c.min():.3e}  {c.max():.3e}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _load(args.config)
    schedule = GainSchedule.load(args.gains)
    if schedule.spec_hash != spec.spec_hash():
        raise HashMismatch(f"{args.gains} was synthesized for a different problem "
                           f"(hash {schedule.spec_hash[:12]}, config {spec.spec_hash()[:12]})")
    episodes = spec.run.episodes if args.episodes is None else args.episodes
    seed = spec.run.seed if args.seed is None else args.seed
    if args.trace:
        run_episode(spec, schedule, seed=seed).write_csv(args.trace)
    if episodes >= 2:
        text = run_monte_carlo(spec, schedule, episodes=episodes, seed=seed).to_text()
    else:
        trace = run_episode(spec, schedule, seed=seed)
        v = schedule.value(spec.initial_x_hat(), spec.init.r0, spec.init.d_init)
        text = (f"J = {trace.J!r}\nJ_tilde = {trace.J_tilde!r}\nv_k0 = {v!r}\n"
                f"episodes = {episodes}\nseed = {seed}\n")
    sys.stdout.write(text)
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _load(args.config)
    results = oracle.verify(spec, level=args.level, seed=args.seed)
    for res in results:
        print(res.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncsopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a problem config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synthesize", help="compute the gain schedule")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True, help="schedule file to write")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="closed-loop Monte-Carlo run")
    p.add_argument("config")
    p.add_argument("gains", help="schedule file from 'synthesize'")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace", help="write the first episode as CSV")
    p.add_argument("--summary", help="also write the summary to this file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the oracle property suite")
    p.add_argument("config")
    p.add_argument("--level", choices=("quick", "exhaustive"), default="quick")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Blowup as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValidationError as exc:
        print(f"invalid config {args.config}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except NCSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
