"""
SmartCrowd - Command Line
Build and maintain C-DEX indexes, generate instances, run simulator comparisons
"""
import argparse
import json
import logging
import os
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, ValidationError

from crowd_model import (
    AssignmentState, CDexIndex, ConstraintConfig, Instance, InstanceError, ObjectiveWeights, SmartCrowdError,
    VirtualWorker, feasibility_warnings, instance_from_dict, instance_to_dict, load_events,
    load_example_instance, validate_instance,
)
from task_value import (
    check_constraints, global_value, index_errors, refresh_indexes, unconstrained_global_value,
)
from cdex_solver import ProgramError, build_design_program, design_exact, handle_event, to_lp
from greedy_assign import greedy_handle_event, offline_greedy_design
from virtual_workers import (
    PROFILE_SPACES, PlusIndex, alpha_from_percentile, build_cdex_plus, build_virtual_program,
    clusters_to_csv, cluster_workers, maintain_cdex_plus,
)
from crowd_simulator import (
    STRATEGIES, SWEEP_PARAMS, SimConfig, generate_workers, generate_workload, load_sim_config,
    run_comparison, run_sweep, stream, write_csv,
)

logger = logging.getLogger(__name__)

METHODS = ("exact", "greedy", "cdex-plus")
EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_BUDGET = 0, 1, 2, 3, 4
DEFAULT_ALPHA_PERCENTILE = 20.0


class UsageError(SmartCrowdError):
    pass


class CommandFailed(SmartCrowdError):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def rule(title: Optional[str] = None):
    print("\n" + "=" * 60)
    if title:
        print(title)
        print("=" * 60)


@contextmanager
def atomic_output(path):
    """Yield a temp path next to `path`; it replaces `path` only if the block succeeds."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def write_json(data: dict, path):
    with atomic_output(path) as tmp:
        with open(tmp, "w") as f:
            json.dump(data, f, indent=2)
            f.write("\n")


# ============================================================
# Index files
# ============================================================

class IndexRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task_id: int
    value: float
    expected_quality: list[float]
    expected_cost: float
    workers: list[int]


class ClusterRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    skills: list[float]
    wage: float
    members: list[int]
    capacity_max: int
    capacity_min: int


class IndexFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: str
    instance: dict
    global_value: float
    indexes: list[IndexRecord]
    clusters: list[ClusterRecord] = []
    cursors: dict[int, int] = {}
    alpha: Optional[float] = None
    space: str = "expected"


def index_document(instance: Instance, state: AssignmentState, method: str,
                   plus: Optional[PlusIndex] = None) -> dict:
    refresh_indexes(state, instance.workload, instance.workers, instance.weights)
    doc = {
        "method": method,
        "instance": instance_to_dict(instance),
        "global_value": global_value(state, instance.workload, instance.workers, instance.weights),
        "indexes": [state.indexes[t].to_dict() for t in instance.workload.task_ids],
    }
    if plus is not None:
        doc["clusters"] = [v.to_dict() for v in plus.clusters]
        doc["cursors"] = {str(k): v for k, v in sorted(plus.cursors.items())}
        doc["alpha"] = plus.alpha
        doc["space"] = plus.space
    return doc


def read_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InstanceError(f"{path}: not valid JSON ({e})") from e


def load_index(path) -> tuple:
    """Returns (instance, state, method, plus or None, stored record)."""
    try:
        doc = IndexFile.model_validate(read_json(path))
    except ValidationError as e:
        raise InstanceError(f"invalid index file {path}: {e}") from e
    instance = instance_from_dict(doc.instance)
    pairs = [(u, r.task_id) for r in doc.indexes for u in r.workers]
    state = AssignmentState.from_pairs(pairs, instance.workers, instance.workload.task_ids)
    plus = None
    if doc.clusters:
        clusters = [VirtualWorker(id=c.id, skills=tuple(c.skills), wage=c.wage, members=tuple(c.members),
                                  capacity_max=c.capacity_max, capacity_min=c.capacity_min) for c in doc.clusters]
        plus = PlusIndex(clusters=clusters, state=state, cursors=dict(doc.cursors),
                         alpha=doc.alpha or 0.0, space=doc.space)
    return instance, state, doc.method, plus, doc


# ============================================================
# Shared option handling
# ============================================================

def apply_overrides(instance: Instance, args) -> Instance:
    constraints = ConstraintConfig(
        instance.constraints.x_l if args.xl is None else args.xl,
        instance.constraints.x_h if args.xh is None else args.xh,
    )
    weights = instance.weights if args.w1 is None else ObjectiveWeights.from_w1(args.w1)
    return Instance(instance.workers, instance.workload, constraints, weights)


def checked_instance(path, args) -> Instance:
    instance = apply_overrides(load_instance_or_fail(path), args)
    violations = validate_instance(instance.workers, instance.workload, instance.constraints, instance.weights)
    if violations:
        raise InstanceError("invalid instance:\n  " + "\n  ".join(violations))
    for warning in feasibility_warnings(instance.workers, instance.workload, instance.constraints):
        print(f"⚠️  {warning}")
    return instance


def load_instance_or_fail(path) -> Instance:
    return instance_from_dict(read_json(path))


def resolve_alpha(args, workers) -> float:
    if args.alpha is not None:
        if args.alpha < 0:
            raise UsageError("--alpha must be non-negative")
        return args.alpha
    percentile = DEFAULT_ALPHA_PERCENTILE if args.alpha_percentile is None else args.alpha_percentile
    if not 0 <= percentile <= 100:
        raise UsageError("--alpha-percentile must lie in [0, 100]")
    return alpha_from_percentile(workers, percentile, args.space)


def print_indexes(instance: Instance, state: AssignmentState):
    for t in instance.workload.task_ids:
        index = state.indexes[t]
        quality = " ".join(f"{q:.4f}" for q in index.expected_quality)
        print(f"  t{t}: workers {sorted(index.assigned_workers)}  v={index.value:.4f}  "
              f"q=[{quality}]  w={index.expected_cost:.4f}")


# ============================================================
# Commands
# ============================================================

def cmd_build(args) -> int:
    instance = checked_instance(args.instance, args)
    workers, workload = instance.workers, instance.workload
    constraints, weights = instance.constraints, instance.weights

    # (path, writer) pairs, flushed only after the solve status checks pass
    side_outputs = []
    started = time.perf_counter()
    plus = None
    result = None
    if args.method == "greedy":
        state, trace = offline_greedy_design(workers, workload, constraints, weights)
        if args.trace:
            side_outputs.append((args.trace, trace.to_csv))
    elif args.method == "exact":
        if args.lp:
            lp_text = to_lp(build_design_program(workers, workload, constraints, weights))
            side_outputs.append((args.lp, lambda tmp: write_plain(lp_text, tmp)))
        incumbent, _ = offline_greedy_design(workers, workload, constraints, weights)
        state, result = design_exact(workers, workload, constraints, weights, budget=args.budget,
                                     incumbent_pairs=incumbent.pairs())
    else:
        alpha = resolve_alpha(args, workers)
        if args.lp:
            clusters = cluster_workers(workers, alpha, constraints, args.space)
            lp_text = to_lp(build_virtual_program(clusters, workload, constraints, weights))
            side_outputs.append((args.lp, lambda tmp: write_plain(lp_text, tmp)))
        plus, virtual, result = build_cdex_plus(workers, workload, constraints, weights, alpha, args.space,
                                                budget=args.budget)
        state = plus.state
        if args.clusters:
            side_outputs.append((args.clusters, lambda tmp: clusters_to_csv(plus.clusters, tmp)))
    elapsed = time.perf_counter() - started

    if result is not None:
        if result.status == "infeasible":
            raise CommandFailed("no assignment satisfies the tasks-per-worker bounds", EXIT_INFEASIBLE)
        if result.status == "budget_exhausted":
            raise CommandFailed(f"node budget exhausted after {result.nodes} nodes without a solution",
                                EXIT_BUDGET)
        if result.status == "feasible":
            print(f"⚠️  Node budget hit after {result.nodes} nodes; best assignment found is not proven optimal")

    violations = check_constraints(state, workload, workers, constraints)
    for path, writer in side_outputs:
        with atomic_output(path) as tmp:
            writer(tmp)
    write_json(index_document(instance, state, args.method, plus), args.output)

    if not args.quiet:
        rule(f"📊 C-DEX BUILD ({args.method})")
        print_indexes(instance, state)
        print(f"V = {global_value(state, workload, workers, weights):.6f}  "
              f"(unconstrained {unconstrained_global_value(state, workload, workers, weights):.6f})")
        if result is not None:
            print(f"Solver: {result.status}, {result.nodes} nodes, root bound {result.root_bound:.4f}")
        if plus is not None:
            print(f"Virtual workers: {len(plus.clusters)} (alpha={plus.alpha:.4f}), "
                  f"virtual objective {virtual.objective:.6f}")
        print(f"Build time: {elapsed:.3f}s")
        rule()
    for v in violations:
        print(f"⚠️  {v}")
    print(f"✅ Index written to {args.output}")
    return EXIT_OK


def cmd_maintain(args) -> int:
    instance, state, stored_method, plus, _ = load_index(args.index)
    workers, workload = instance.workers, instance.workload
    constraints, weights = instance.constraints, instance.weights
    events = load_events(args.events, workers, workload)
    method = args.method or stored_method
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}")

    if method == "cdex-plus" and plus is None:
        alpha = resolve_alpha(args, workers)
        plus = PlusIndex(clusters=cluster_workers(workers, alpha, constraints, args.space),
                         state=state, alpha=alpha, space=args.space)

    roster = workers
    value = global_value(state, workload, roster, weights)
    if not args.quiet:
        rule(f"📊 C-DEX MAINTENANCE ({method}, {len(events)} events)")
        print(f"Start V = {value:.6f}")

    for i, event in enumerate(events):
        started = time.perf_counter()
        status = "greedy"
        if method == "exact":
            state, roster, result = handle_event(state, event, roster, workload, constraints, weights,
                                                 budget=args.budget)
            status = result.status
        elif method == "greedy":
            state, roster, _ = greedy_handle_event(state, event, roster, workload, constraints, weights)
        else:
            plus, roster, result = maintain_cdex_plus(plus, event, roster, workload, constraints, weights,
                                                      budget=args.budget)
            state = plus.state
            status = result.status if result is not None else "skipped"
        elapsed = time.perf_counter() - started

        new_value = global_value(state, workload, roster, weights)
        if status in ("infeasible", "budget_exhausted"):
            print(f"⚠️  event {i} ({event.kind}): {status}, assignment unchanged")
        elif status == "no_candidates":
            print(f"⚠️  event {i} ({event.kind}): no candidates left, "
                  f"tasks below threshold: {result.infeasible_tasks}")
        if not args.quiet:
            print(f"  event {i} {event.kind:<8} ΔV={new_value - value:+.6f}  V={new_value:.6f}  "
                  f"[{status}, {elapsed:.3f}s]")
        value = new_value

    updated = Instance(roster, workload, constraints, weights)
    write_json(index_document(updated, state, method, plus if method == "cdex-plus" else None), args.output)
    if not args.quiet:
        rule()
    print(f"✅ Maintained index written to {args.output}")
    return EXIT_OK


def sim_config_from_args(args) -> SimConfig:
    overrides = {
        "duration": args.duration,
        "worker_count": args.worker_count,
        "workload_size": args.workload_size,
        "acceptance_mean": args.acceptance_mean,
        "alpha_percentile": args.alpha_percentile,
        "provable_regime": True if args.provable_regime else None,
    }
    if args.desk:
        base = SimConfig.desk().model_dump()
        if args.config:
            base.update(read_json(args.config))
        base.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return SimConfig(**base)
        except ValidationError as e:
            raise InstanceError(f"invalid simulator config:\n{e}") from e
    return load_sim_config(args.config, **overrides)


def parse_strategies(names) -> list:
    names = list(names or STRATEGIES)
    unknown = [n for n in names if n not in STRATEGIES]
    if unknown:
        raise UsageError(f"unknown strategies {unknown}, expected some of {', '.join(STRATEGIES)}")
    return names


def print_reports(reports):
    rule("📊 SIMULATION RESULTS")
    print(f"{'strategy':<26}{'seed':>6}{'arrived':>9}{'success':>9}{'fraction':>10}{'objective':>11}"
          f"{'e2e':>8}{'timeouts':>10}")
    for r in reports:
        s = r.final
        if s is None:
            print(f"{r.strategy:<26}{r.seed:>6}  (no samples)")
            continue
        print(f"{r.strategy:<26}{r.seed:>6}{s.tasks_arrived:>9}{s.tasks_successful:>9}"
              f"{s.fraction_successful:>10.4f}{s.normalized_objective:>11.4f}{s.avg_end_to_end:>8.2f}"
              f"{s.solver_timeouts:>10}")
    rule()


def cmd_simulate(args) -> int:
    config = sim_config_from_args(args)
    strategies = parse_strategies(args.strategies)
    seeds = args.seeds if args.seeds else [config.seed]
    reports = run_comparison(strategies, config, seeds, max_workers=args.jobs, progress=not args.quiet)
    with atomic_output(args.output) as tmp:
        write_csv(reports, tmp)
    if not args.quiet:
        print_reports(reports)
    print(f"✅ {len(reports)} runs written to {args.output}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = sim_config_from_args(args)
    strategies = parse_strategies(args.strategies)
    seeds = args.seeds if args.seeds else [config.seed]
    cast = int if args.param == "skills_per_task" else float
    try:
        values = [cast(v) for v in args.values]
    except ValueError as e:
        raise UsageError(f"bad --values for {args.param}: {e}") from e
    tagged = run_sweep(args.param, values, strategies, config, seeds, max_workers=args.jobs,
                       progress=not args.quiet)
    with atomic_output(args.output) as tmp:
        write_csv([], tmp, extra=("param_value", tagged))
    if not args.quiet:
        for value in values:
            print(f"\n{args.param} = {value}")
            print_reports([r for v, r in tagged if v == value])
    print(f"✅ {len(tagged)} runs written to {args.output}")
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.example:
        instance = load_example_instance()
    else:
        overrides = {"seed": args.seed, "worker_count": args.workers, "workload_size": args.tasks}
        config = load_sim_config(args.config, **overrides)
        rng = stream(config.seed, "scenario")
        workers = generate_workers(config, rng)
        workload = generate_workload(config, rng)
        instance = Instance(workers, workload, config.constraints, config.weights)
    instance = apply_overrides(instance, args)
    write_json(instance_to_dict(instance), args.output)
    print(f"✅ {len(instance.workers)} workers, {len(instance.workload)} tasks written to {args.output}")
    return EXIT_OK


def cmd_validate(args) -> int:
    data = read_json(args.file)
    problems = []
    if isinstance(data, dict) and "indexes" in data:
        instance, state, method, _, doc = load_index(args.file)
        kind = f"index ({method})"
        stored = [_stored_index(r) for r in doc.indexes]
        problems += validate_instance(instance.workers, instance.workload, instance.constraints, instance.weights)
        problems += index_errors(stored, instance.workload, instance.workers, instance.weights)
        problems += check_constraints(state, instance.workload, instance.workers, instance.constraints)
        recomputed = global_value(state, instance.workload, instance.workers, instance.weights)
        if abs(recomputed - doc.global_value) > 1e-9:
            problems.append(f"stored V {doc.global_value} != recomputed {recomputed}")
    else:
        instance = instance_from_dict(data)
        kind = "instance"
        problems += validate_instance(instance.workers, instance.workload, instance.constraints, instance.weights)
        problems += feasibility_warnings(instance.workers, instance.workload, instance.constraints)

    rule(f"📊 VALIDATION: {args.file} [{kind}]")
    print(f"Workers: {len(instance.workers)}  Tasks: {len(instance.workload)}  "
          f"X=[{instance.constraints.x_l}, {instance.constraints.x_h}]  "
          f"W=({instance.weights.w1}, {instance.weights.w2})")
    for p in problems:
        print(f"❌ {p}")
    rule()
    if problems:
        return EXIT_PARSE
    print("✅ Valid")
    return EXIT_OK


def _stored_index(record: IndexRecord):
    return CDexIndex(task_id=record.task_id, value=record.value, expected_quality=tuple(record.expected_quality),
                     expected_cost=record.expected_cost, assigned_workers=frozenset(record.workers))


def write_plain(text: str, path):
    with open(path, "w") as f:
        f.write(text)


# ============================================================
# Parser
# ============================================================

def add_instance_overrides(p):
    p.add_argument("--w1", type=float, default=None, help="quality weight; W2 = 1 - W1")
    p.add_argument("--xl", type=int, default=None, help="minimum tasks per worker")
    p.add_argument("--xh", type=int, default=None, help="maximum tasks per worker")


def add_clustering_options(p):
    p.add_argument("--alpha", type=float, default=None, help="clustering distance threshold")
    p.add_argument("--alpha-percentile", type=float, default=None,
                   help=f"alpha as a percentile of pairwise distances (default {DEFAULT_ALPHA_PERCENTILE:g})")
    p.add_argument("--space", choices=PROFILE_SPACES, default="expected")


def add_sim_options(p):
    p.add_argument("--config", default=None, help="simulator config JSON")
    p.add_argument("--desk", action="store_true", help="start from the desk-scale preset")
    p.add_argument("--strategies", nargs="+", default=None, metavar="NAME")
    p.add_argument("--seeds", nargs="+", type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--worker-count", type=int, default=None)
    p.add_argument("--workload-size", type=int, default=None)
    p.add_argument("--acceptance-mean", type=float, default=None)
    p.add_argument("--alpha-percentile", type=float, default=None)
    p.add_argument("--provable-regime", action="store_true", help="W2=0, X_l=0 and no quality thresholds")
    p.add_argument("--jobs", type=int, default=1, help="parallel simulation cells")
    p.add_argument("-o", "--output", required=True, help="CSV path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smartcrowd", description="Index-based crowd task assignment")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("build", help="design a C-DEX index for an instance")
    p.add_argument("instance")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--method", choices=METHODS, default="exact")
    p.add_argument("--budget", type=int, default=None, help="solver node budget")
    p.add_argument("--lp", default=None, help="also write the design program in LP format")
    p.add_argument("--trace", default=None, help="greedy step trace CSV")
    p.add_argument("--clusters", default=None, help="virtual worker CSV")
    add_clustering_options(p)
    add_instance_overrides(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("maintain", help="apply churn events to an index")
    p.add_argument("index")
    p.add_argument("events")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--method", choices=METHODS, default=None, help="defaults to the index's method")
    p.add_argument("--budget", type=int, default=None)
    add_clustering_options(p)
    p.set_defaults(func=cmd_maintain)

    p = sub.add_parser("simulate", help="compare strategies in the simulator")
    add_sim_options(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run the comparison across values of one parameter")
    p.add_argument("--param", choices=sorted(SWEEP_PARAMS), required=True)
    p.add_argument("--values", nargs="+", required=True)
    add_sim_options(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen", help="generate an instance file")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--tasks", type=int, default=None)
    p.add_argument("--example", action="store_true", help="write the six-worker, three-task running example")
    add_instance_overrides(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("validate", help="check an instance or index file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format='%(asctime)s - %(message)s')
    if args.quiet:
        logging.getLogger().setLevel(logging.WARNING)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except CommandFailed as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.code
    except (InstanceError, ProgramError, FileNotFoundError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
