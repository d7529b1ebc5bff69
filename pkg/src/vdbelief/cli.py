"""``vdbelief`` command line.

Exit codes: 0 success, 1 domain error, 2 unreadable or malformed input.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from . import experiments
from .belief import belief_from_dict, reconstruct, FactoredBelief
from .bounds import SwitchTester, e_bound_finite, e_bound_infinite, u_bound_for_assignment, \
    u_bound_infinite_for_assignment
from .errors import ModelFormatError, VDBeliefError
from .lattice import SchemeAssignment, greedy_search
from .model import load_model, serialize_model, validate_document
from .runtime import CSV_HEADER, ExecutionConfig, execute_exact_loss, monte_carlo_loss
from .scenarios import factory_model
from .solver import INFINITE, solve_finite, solve_infinite, value_functions_from_dict, \
    value_functions_to_dict

log = logging.getLogger("vdbelief")


def _read_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: invalid JSON: {exc}") from exc


def _emit(doc, schema, path=None):
    validate_document(doc, schema)
    text = json.dumps(doc, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_vf(args, pomdp):
    doc = _read_json(args.value_function)
    validate_document(doc, "value_function.schema.json")
    return value_functions_from_dict(doc, pomdp)


def _load_assignment(path):
    doc = _read_json(path)
    validate_document(doc, "assignment.schema.json")
    return SchemeAssignment.from_dict(doc)


def _tester(args, pomdp):
    return SwitchTester(pomdp, include_ties=args.include_ties, threads=args.threads)


# ---------------------------------------------------------------------------

def cmd_solve(args):
    pomdp = load_model(args.model)
    if args.infinite:
        vf = solve_infinite(pomdp, args.epsilon)
        print(f"infinite: {len(vf)} vectors", file=sys.stderr)
        doc = value_functions_to_dict(vf, pomdp)
    else:
        stages = solve_finite(pomdp, args.horizon)
        for vf in stages:
            print(f"stage {vf.stage}: {len(vf)} vectors", file=sys.stderr)
        doc = value_functions_to_dict(stages, pomdp)
    _emit(doc, "value_function.schema.json", args.output)


def cmd_search(args):
    pomdp = load_model(args.model)
    target = _load_vf(args, pomdp)
    kind = f"{args.bound.upper()}_{args.horizon}"
    if (args.horizon == "infinite") != (getattr(target, "stage", None) == INFINITE):
        raise VDBeliefError(f"--horizon {args.horizon} does not match the value function file")

    def progress(stage, alpha_id, node, score):
        log.info("stage %s α%d -> %s (score %.6g)", stage, alpha_id,
                 node.scheme.label(pomdp.var_names), score)

    result = greedy_search(pomdp, target, kind, args.max_constraints, _tester(args, pomdp),
                           weighting=args.u_weighting, e_steps=args.e_steps, on_progress=progress)
    if args.trace:
        with open(args.trace, "w") as fh:
            for row in result.trace:
                fh.write(json.dumps(row) + "\n")
    _emit(result.assignment.to_dict(pomdp.var_names), "assignment.schema.json", args.output)
    report = result.bound.to_dict()
    if args.report:
        _emit(report, "bounds.schema.json", args.report)
    print(f"{kind} bound: {result.bound.value:.6g}", file=sys.stderr)


def cmd_bounds(args):
    pomdp = load_model(args.model)
    target = _load_vf(args, pomdp)
    assignment = _load_assignment(args.assignment)
    tester = _tester(args, pomdp)
    if isinstance(target, list):
        if args.kind == "u":
            bound = u_bound_for_assignment(target, assignment, tester, args.u_weighting)
        else:
            bound = e_bound_finite(target, assignment, tester, args.restrict_region)
    elif args.kind == "u":
        bound = u_bound_infinite_for_assignment(target, assignment, tester)
    else:
        bound = e_bound_infinite(target, assignment, tester, args.e_steps)
    _emit(bound.to_dict(), "bounds.schema.json", args.output)


def cmd_exec(args):
    pomdp = load_model(args.model)
    stages = _load_vf(args, pomdp)
    doc = _read_json(args.prior)
    validate_document(doc, "belief.schema.json")
    prior = belief_from_dict(doc, pomdp)
    if isinstance(prior, FactoredBelief):
        prior = reconstruct(prior)
    if args.assignment:
        config = ExecutionConfig(prior, "projected", _load_assignment(args.assignment),
                                 rng_seed=args.seed)
    else:
        config = ExecutionConfig(prior, "exact", rng_seed=args.seed)
    if args.monte_carlo:
        report = monte_carlo_loss(pomdp, stages, config, args.monte_carlo)
    else:
        report = execute_exact_loss(pomdp, stages, config)
    if args.csv:
        print(CSV_HEADER)
        print(report.csv_row())
    else:
        _emit(report.to_dict(), "execution.schema.json", args.output)


def cmd_table2(args):
    bases = sorted({args.kl_base, math.e, 2.0})
    res = experiments.table2(args.prior, kl_bases=bases, joint_prior=args.joint_prior)
    if args.csv:
        keys = list(res.tables["rows"][0])
        print(",".join(keys))
        for r in res.tables["rows"]:
            print(",".join(str(r[k]) if not isinstance(r[k], list) else "|".join(r[k]) for k in keys))
    else:
        _emit(res.to_dict(), "experiment.schema.json", args.output)


def cmd_random_priors(args):
    res = experiments.random_priors(args.trials, args.seed, args.scheme, args.interpretation,
                                    args.approx_from)
    if args.csv:
        row = res.tables["summary"][0]
        print(",".join(row))
        print(",".join(str(v) for v in row.values()))
    else:
        _emit(res.to_dict(), "experiment.schema.json", args.output)


def cmd_factory(args):
    text = serialize_model(factory_model(args.discount))
    if args.emit in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.emit, "w") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Flags accepted before or after the subcommand.

    The copy attached to subcommands suppresses defaults so it does not
    overwrite a value given before the subcommand name.
    """
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--threads", type=int, default=d(1), help="parallel switch LPs")
    g.add_argument("--kl-base", type=float, default=d(math.e), help="logarithm base for KL")
    g.add_argument("--include-ties", action="store_true", default=d(False),
                   help="count exact ties as switches (more conservative bounds)")
    g.add_argument("--u-weighting", choices=("paper", "time"), default=d("paper"),
                   help="per-stage discount weights of the cumulative U bound")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="vdbelief", parents=[_global_flags(suppress=False)],
                                description="Value-directed belief approximation for factored POMDPs")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve a model exactly")
    s.add_argument("model")
    s.add_argument("--horizon", type=int)
    s.add_argument("--infinite", action="store_true")
    s.add_argument("--epsilon", type=float, default=1e-3)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("search", parents=[common], help="greedy scheme search")
    s.add_argument("model")
    s.add_argument("value_function")
    s.add_argument("--bound", choices=("u", "e"), default="e")
    s.add_argument("--horizon", choices=("finite", "infinite"), default="finite")
    s.add_argument("-c", "--max-constraints", type=int, required=True)
    s.add_argument("--e-steps", type=int, default=3)
    s.add_argument("-o", "--output", help="assignment file (default stdout)")
    s.add_argument("--report", help="bound report file")
    s.add_argument("--trace", help="JSON-lines search trace")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("bounds", parents=[common], help="bounds for a given assignment")
    s.add_argument("model")
    s.add_argument("value_function")
    s.add_argument("assignment")
    s.add_argument("--kind", choices=("u", "e"), default="e")
    s.add_argument("--restrict-region", action="store_true")
    s.add_argument("--e-steps", type=int, default=3)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("exec", parents=[common], help="exact or sampled execution loss")
    s.add_argument("model")
    s.add_argument("value_function")
    s.add_argument("assignment", nargs="?", help="omit for exact monitoring")
    s.add_argument("--prior", required=True)
    s.add_argument("--monte-carlo", type=int, metavar="TRIALS")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_exec)

    s = sub.add_parser("table2", parents=[common], help="distance measures versus loss on the factory")
    s.add_argument("--prior", type=float, default=0.5, help="Pr(FM)")
    s.add_argument("--joint-prior", action="store_true", help="start from the uniform joint prior instead")
    s.add_argument("--csv", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_table2)

    s = sub.add_parser("random-priors", parents=[common], help="loss over random factory priors")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scheme", default="f1f2", choices=sorted(experiments.SCHEME_ALIASES))
    s.add_argument("--interpretation", choices=experiments.INTERPRETATIONS, default="dirichlet")
    s.add_argument("--approx-from", type=int, default=3,
                   help="first stage-to-go at which projection is applied")
    s.add_argument("--csv", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_random_priors)

    s = sub.add_parser("factory", parents=[common], help="write the built-in factory model")
    s.add_argument("--emit", default="-")
    s.add_argument("--discount", type=float, default=1.0)
    s.set_defaults(func=cmd_factory)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ModelFormatError) as exc:
        print(f"vdbelief: {exc}", file=sys.stderr)
        return 2
    except VDBeliefError as exc:
        print(f"vdbelief: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
