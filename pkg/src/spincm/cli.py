"""Command-line front end.

Subcommands: ``simulate`` (integrate one flow, CSV + conservation report),
``discrete`` (implicit stepping with certification columns), ``verify``
(named residual suites), ``kp-check`` (wave-function identity residuals).

Exit codes: 0 success, 1 usage error or failed verification, 2 singular
configuration, 3 constraint violation/drift, 4 I/O or state-file error,
5 solver non-convergence, 6 spectral-margin violation.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .discrete import DiscreteLevel, DiscreteSpec, discrete_lax_residual, run_discrete
from .errors import (
    ConditioningError,
    ConstraintViolationError,
    NewtonConvergenceError,
    RangeOverflowError,
    SingularConfigurationError,
    SpinCMError,
    StateFileError,
)
from .flows import FlowSpec, conservation_report, integrate
from .io import load_state, save_report, write_discrete_csv, write_trajectory_csv
from .kp import (
    bilinear_identity_sides,
    default_spectral_point,
    default_w_samples,
    schrodinger_residual,
    wave_vector_evolution_residual,
)
from .report import VerificationReport
from .verify import SUITE_NAMES, build_metadata, run_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SINGULAR = 2
EXIT_CONSTRAINT = 3
EXIT_IO = 4
EXIT_SOLVER = 5
EXIT_MARGIN = 6


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="spincm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"spincm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="integrate one hierarchy flow")
    sim.add_argument("--state", required=True, help="input state file (JSON)")
    sim.add_argument("--flow", type=int, required=True, help="flow index m >= 1")
    sim.add_argument("--t-end", type=float, required=True)
    sim.add_argument("--dt", type=float, required=True)
    sim.add_argument("--record-every", type=int, default=1)
    sim.add_argument("--out", required=True, help="trajectory CSV path")
    sim.add_argument("--seed", type=int, default=0)

    dis = sub.add_parser("discrete", help="run the implicit discrete-time stepper")
    dis.add_argument("--state", required=True)
    dis.add_argument("--mu", type=float, required=True)
    dis.add_argument("--steps", type=int, required=True)
    dis.add_argument("--newton-tol", type=float, default=1e-12)
    dis.add_argument("--newton-max-iter", type=int, default=50)
    dis.add_argument("--out", required=True, help="levels CSV path")
    dis.add_argument("--seed", type=int, default=0)

    ver = sub.add_parser("verify", help="run a named verification suite")
    ver.add_argument("--state", required=True)
    ver.add_argument("--suite", choices=SUITE_NAMES, default="all")
    ver.add_argument("--mu", type=float, default=1e3)
    ver.add_argument("--out", required=True, help="report JSON path")
    ver.add_argument("--seed", type=int, default=0)

    kpc = sub.add_parser("kp-check", help="wave-function identity residuals")
    kpc.add_argument("--state", required=True)
    kpc.add_argument("--z", type=float, default=None, help="spectral point (default: auto)")
    kpc.add_argument("--m", type=int, required=True, help="flow index for the bilinear identity")
    kpc.add_argument("--samples", type=int, default=8)
    kpc.add_argument("--delta-t", type=float, default=1e-4)
    kpc.add_argument("--out", required=True, help="report JSON path")
    kpc.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_simulate(args) -> int:
    state = load_state(args.state)
    if args.flow < 1:
        print("simulate: --flow must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    spec = FlowSpec(m=args.flow, t_end=args.t_end, dt=args.dt, record_every=args.record_every)
    traj = integrate(state, spec)
    write_trajectory_csv(traj, args.out)
    report = conservation_report(traj, k_max=4, tol=1e-8)
    report.metadata = build_metadata(
        "simulate",
        {"flow": args.flow, "t_end": args.t_end, "dt": args.dt, "state": str(args.state)},
        args.seed,
    )
    save_report(report, str(args.out) + ".report.json")
    for line in report.summary_lines():
        print(line)
    print(f"wrote {args.out} ({len(traj.samples)} samples)")
    return EXIT_OK


def _cmd_discrete(args) -> int:
    state = load_state(args.state)
    try:
        spec = DiscreteSpec(
            mu=args.mu, newton_tol=args.newton_tol, newton_max_iter=args.newton_max_iter
        )
    except ValueError as exc:
        print(f"discrete: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.steps < 1:
        print("discrete: --steps must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    traj = run_discrete(DiscreteLevel.from_state(state), spec, args.steps)
    write_discrete_csv(traj, args.out)
    for idx, meta in enumerate(traj.step_info, start=1):
        lax = discrete_lax_residual(traj.levels[idx - 1], traj.levels[idx])
        print(
            f"step {idx}: newton_iterations={meta['iterations']} "
            f"residual={meta['residual']:.3e} lax_residual={lax:.3e}"
        )
    print(f"wrote {args.out} ({len(traj.levels)} levels)")
    return EXIT_OK


def _cmd_verify(args) -> int:
    # verification admits states violating the pairing constraint so the
    # suite itself can report the failure by name
    state = load_state(args.state, constraint_tol=np.inf)
    report = run_suite(args.suite, state, seed=args.seed, mu=args.mu)
    save_report(report, args.out)
    for line in report.summary_lines():
        print(line)
    if not report.passed:
        print(f"failed checks: {', '.join(report.failed_names())}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def _cmd_kp_check(args) -> int:
    state = load_state(args.state)
    if args.m < 1:
        print("kp-check: --m must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    z = default_spectral_point(state) if args.z is None else args.z
    report = VerificationReport()

    r1 = schrodinger_residual(state, z, _probe_points(state), args.delta_t)
    r2 = schrodinger_residual(state, z, _probe_points(state), 0.5 * args.delta_t)
    report.add("schrodinger_residual", r1, 1e-5)
    report.add("schrodinger_order", abs(r1 / r2 - 4.0), 1.0)

    samples = default_w_samples(state, count=args.samples)
    lhs, rhs = bilinear_identity_sides(state, args.m, samples)
    scale = 1.0 + float(np.max(np.abs(rhs)))
    report.add(f"bilinear_identity_m{args.m}", float(np.max(np.abs(lhs - rhs))) / scale, 1e-9)

    report.add("wave_vector_evolution", wave_vector_evolution_residual(state, z, args.delta_t), 1e-5)
    report.metadata = build_metadata(
        "kp-check", {"z": z, "m": args.m, "samples": args.samples}, args.seed
    )
    save_report(report, args.out)
    for line in report.summary_lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_USAGE


def _probe_points(state):
    xs = np.sort(state.x)
    pts = [0.5 * (xs[i] + xs[i + 1]) for i in range(len(xs) - 1)]
    pts.append(float(xs[-1] + 0.9))
    return pts


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "simulate": _cmd_simulate,
        "discrete": _cmd_discrete,
        "verify": _cmd_verify,
        "kp-check": _cmd_kp_check,
    }
    try:
        return handlers[args.command](args)
    except StateFileError as exc:
        print(f"state file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SingularConfigurationError as exc:
        print(f"singular configuration: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except ConstraintViolationError as exc:
        print(f"constraint violation: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except NewtonConvergenceError as exc:
        print(
            f"solver failed to converge: {exc} (last residual {exc.last_residual:.3e})",
            file=sys.stderr,
        )
        return EXIT_SOLVER
    except ConditioningError as exc:
        hint = f"; try z >= {exc.suggestion:.6g}" if exc.suggestion is not None else ""
        print(f"spectral margin violation: {exc}{hint}", file=sys.stderr)
        return EXIT_MARGIN
    except RangeOverflowError as exc:
        print(f"range overflow: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except (ValueError, SpinCMError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
