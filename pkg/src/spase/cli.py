"""Command-line interface: ``spase <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid input, 2 infeasible workload, 3 internal
limit exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ._io import atomic_write_text
from .baselines import BASELINES
from .errors import LimitExceededError, SpaseError, UnschedulableTaskError
from .gantt import gantt
from .introspection import IntrospectionConfig, load_events, round_introspection
from .milp import build_milp, check_solution, export_lp, parse_solution_text
from .sim import format_plan, plan_from_list, plan_makespan, plan_to_list, simulate
from .solver import INFEASIBLE, brute_force, solve
from .study import compare, sweep_timeout
from .workload import Cluster, dumps_workload, load_workload, random_workload, save_workload

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_LIMIT = 0, 1, 2, 3


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _gpu_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated GPU counts, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("GPU counts must be positive integers")
    return vals


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated seconds, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("timeouts must be positive")
    return vals


def _plan_for(args, tasks, cluster):
    if getattr(args, "baseline", None):
        plan = BASELINES[args.baseline](tasks, cluster, args.seed)
        return plan, plan_makespan(plan, tasks), f"baseline-{args.baseline}"
    if getattr(args, "brute_force", False):
        outcome = brute_force(tasks, cluster)
    else:
        outcome = solve(tasks, cluster, args.timeout, args.seed)
    if outcome.status == INFEASIBLE:
        raise UnschedulableTaskError(outcome.unschedulable)
    return outcome.plan, outcome.makespan, outcome.status


def cmd_gen(args) -> int:
    cluster = Cluster.of(*args.nodes)
    tasks = random_workload(args.seed, args.tasks, cluster, noise=args.noise)
    if args.out:
        save_workload(args.out, tasks, cluster)
    else:
        sys.stdout.write(dumps_workload(tasks, cluster))
    return EXIT_OK


def cmd_solve(args) -> int:
    tasks, cluster = load_workload(args.workload)
    plan, ms, status = _plan_for(args, tasks, cluster)
    print(f"makespan {ms:.6f}")
    print(f"status {status}")
    if plan:
        print(format_plan(plan, tasks))
    metrics = simulate(plan, tasks, cluster, args.sample_rate)
    print(f"mean_utilization {metrics.mean_utilization:.6f}")
    if args.out:
        metrics.save_csv(args.out)
    if args.plan_out:
        atomic_write_text(args.plan_out, json.dumps(plan_to_list(plan), indent=2) + "\n")
    return EXIT_OK


def cmd_compare(args) -> int:
    tasks, cluster = load_workload(args.workload)
    seeds = list(range(args.seed, args.seed + args.seeds))
    table = compare(tasks, cluster, seeds, args.timeout)
    _emit(table.format(args.format), args.out)
    return EXIT_OK


def cmd_introspect(args) -> int:
    tasks, cluster = load_workload(args.workload)
    events = load_events(args.events) if args.events else []
    cfg = IntrospectionConfig(args.interval, args.threshold, args.overhead, args.overlap, args.timeout,
                              not args.compare_raw)
    sched = round_introspection(tasks, cluster, cfg, events, args.seed)
    print(f"makespan {sched.makespan:.6f}")
    print(f"one_shot_makespan {sched.one_shot_makespan:.6f}")
    print(f"rounds {len(sched.segments)} adoptions {sched.adoptions}")
    if args.out:
        sched.save(args.out)
    if args.metrics:
        simulate(sched, tasks, cluster, args.sample_rate).save_csv(args.metrics)
    return EXIT_OK


def cmd_export_lp(args) -> int:
    tasks, cluster = load_workload(args.workload)
    _emit(export_lp(build_milp(tasks, cluster)), args.out)
    return EXIT_OK


def cmd_check_solution(args) -> int:
    tasks, cluster = load_workload(args.workload)
    model = build_milp(tasks, cluster)
    sol = parse_solution_text(Path(args.solution).read_text())
    tags = check_solution(model, sol)
    if tags:
        print("violated " + " ".join(tags))
        return EXIT_INVALID
    print(f"ok objective {sol.objective_value:.6f}")
    return EXIT_OK


def cmd_gantt(args) -> int:
    tasks, cluster = load_workload(args.workload)
    if args.plan:
        try:
            plan = plan_from_list(json.loads(Path(args.plan).read_text()))
        except (ValueError, KeyError, TypeError) as err:
            raise SpaseError(f"cannot read plan {args.plan}: {err}") from None
        simulate(plan, tasks, cluster)  # refuses invalid plans
    else:
        plan, _, _ = _plan_for(args, tasks, cluster)
    _emit(gantt(plan, tasks, cluster, Path(args.workload).stem), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    tasks, cluster = load_workload(args.workload)
    rows = sweep_timeout(tasks, cluster, args.ladder, args.seed)
    sep = "," if args.format == "csv" else " "
    text = f"timeout_s{sep}makespan_s\n" + "".join(f"{t:.3f}{sep}{m:.6f}\n" for t, m in rows)
    _emit(text, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spase", description="Joint parallelism selection, GPU apportioning and scheduling.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workload=True):
        if workload:
            sp.add_argument("--workload", required=True, help="workload JSON file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output file (default: stdout where applicable)")
        return sp

    def solving(sp):
        sp.add_argument("--timeout", type=float, default=300.0, help="solver timeout in seconds")
        return sp

    g = common(sub.add_parser("gen", help="write a synthetic workload"), workload=False)
    g.add_argument("--tasks", type=int, default=12)
    g.add_argument("--nodes", type=_gpu_list, default=[8], help="GPU count per node, e.g. 8,4")
    g.add_argument("--noise", type=float, default=0.0, help="lognormal sigma applied to runtimes")
    g.set_defaults(func=cmd_gen)

    s = solving(common(sub.add_parser("solve", help="solve a workload and print the plan")))
    s.add_argument("--baseline", choices=sorted(BASELINES), help="use a baseline instead of the solver")
    s.add_argument("--brute-force", action="store_true", help="exhaustive search (small instances only)")
    s.add_argument("--sample-rate", type=float, default=100.0)
    s.add_argument("--plan-out", help="write the plan as JSON")
    s.set_defaults(func=cmd_solve)

    c = solving(common(sub.add_parser("compare", help="solver versus baselines table")))
    c.add_argument("--seeds", type=int, default=3, help="number of consecutive seeds starting at --seed")
    c.add_argument("--format", choices=("text", "csv"), default="text")
    c.set_defaults(func=cmd_compare)

    i = solving(common(sub.add_parser("introspect", help="run the round-based re-solving loop")))
    i.add_argument("--interval", type=float, default=1000.0)
    i.add_argument("--threshold", type=float, default=500.0)
    i.add_argument("--overhead", type=float, default=0.0, help="switch overhead per reconfigured task")
    i.add_argument("--overlap", action="store_true")
    i.add_argument("--compare-raw", action="store_true", help="adoption test ignores switch overheads")
    i.add_argument("--events", help="events JSON file")
    i.add_argument("--sample-rate", type=float, default=100.0)
    i.add_argument("--metrics", help="write utilization CSV")
    i.set_defaults(func=cmd_introspect)

    e = common(sub.add_parser("export-lp", help="write the MILP in LP format"))
    e.set_defaults(func=cmd_export_lp)

    k = common(sub.add_parser("check-solution", help="check an external MILP solution"))
    k.add_argument("--solution", required=True)
    k.set_defaults(func=cmd_check_solution)

    gt = solving(common(sub.add_parser("gantt", help="render an SVG Gantt chart")))
    gt.add_argument("--plan", help="plan JSON (default: solve the workload)")
    gt.add_argument("--baseline", choices=sorted(BASELINES))
    gt.set_defaults(func=cmd_gantt)

    w = common(sub.add_parser("sweep-timeout", help="makespan at increasing solver timeouts"))
    w.add_argument("--ladder", type=_float_list, help="comma-separated timeouts (default scales 1,5,15,60,300)")
    w.add_argument("--format", choices=("text", "csv"), default="text")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    try:
        return args.func(args)
    except UnschedulableTaskError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except LimitExceededError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_LIMIT
    except (SpaseError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
