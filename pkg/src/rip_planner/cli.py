"""Command-line entry point: ``rip <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from typing import Sequence

from .adaptation import AdaptationConfig, adaptation_curve, calibrate_tau
from .bench import MethodSpec, evaluate_forecasts, run_matrix, run_trials
from .config import PlannerConfig, TrainingConfig, WorldConfig
from .density import Architecture
from .engine import collect_demonstrations, derive_seed
from .ensemble import train_ensemble
from .errors import ContractError, RipError
from .library import build_library
from .storage import (
    load_ensemble,
    load_library,
    read_demonstrations,
    read_episode_logs,
    save_ensemble,
    save_library,
    write_adaptation_csv,
    write_demonstrations,
    write_episode_logs,
    write_forecast_csv,
    write_results_csv,
)
from .suites import SUITES, generate_suite

logger = logging.getLogger("rip_planner")


def _csv_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _budgets(text: str) -> list[int]:
    try:
        return [int(b) for b in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad budget list '{text}'") from exc


def _tau(text: str) -> float | None:
    if text.upper() == "AUTO":
        return None
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"tau must be AUTO or a number, got '{text}'") from exc


def _planner_config(args) -> PlannerConfig:
    return PlannerConfig(epsilon=args.epsilon, max_iters=args.max_iters, learning_rate=args.plan_lr)


def cmd_generate(args) -> None:
    scenes = generate_suite(args.suite, args.episodes, args.seed)
    demos = collect_demonstrations(scenes, WorldConfig(), stride=args.stride)
    write_demonstrations(demos, args.out)
    logger.info("wrote %d demonstrations to %s", len(demos), args.out)


def cmd_train(args) -> None:
    demos = read_demonstrations(args.data)
    arch = Architecture.from_world(WorldConfig(), hidden_size=args.hidden, min_scale=args.min_scale)
    config = TrainingConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        bootstrap=not args.no_bootstrap,
        distinct_init=not args.shared_init,
    )
    posterior = train_ensemble(
        [d.as_record() for d in demos], args.k, arch, rng_seed=args.seed, config=config, progress=args.progress
    )
    save_ensemble(posterior, args.out)
    logger.info("saved %d-member ensemble to %s", len(posterior), args.out)


def cmd_library(args) -> None:
    demos = read_demonstrations(args.data)
    library = build_library([d.plan for d in demos], args.l, args.seed)
    save_library(library, args.out)
    logger.info("saved %d-centroid library to %s", len(library), args.out)


def cmd_eval(args) -> None:
    posterior = load_ensemble(args.models)
    library = load_library(args.library) if args.library else None
    scenes = generate_suite(args.suite, args.episodes, args.seed)
    rows, logs = run_matrix(
        _csv_list(args.methods),
        {args.suite: scenes},
        args.trials,
        args.seed,
        posterior,
        planner_config=_planner_config(args),
        library=library,
        forecast_records=args.forecast_records,
    )
    write_results_csv(rows, args.out)
    if args.logs:
        write_episode_logs([log for cell in logs.values() for log in cell], args.logs)
    for row in rows:
        print(f"{row.method:<12} {row.suite:<12} success={row.success_rate:.3f} +- {row.success_se:.3f}")


def cmd_forecast(args) -> None:
    posterior = load_ensemble(args.models)
    demos = read_demonstrations(args.data)
    if args.limit:
        demos = demos[: args.limit]
    if not demos:
        raise ContractError(f"no demonstrations in {args.data}")
    rows = []
    for name in _csv_list(args.methods):
        spec = MethodSpec.parse(name)
        summary = evaluate_forecasts(
            demos, spec.posterior(posterior), spec.aggregator, args.samples, args.seed, args.refine_iters
        )
        rows.append(
            (spec.name, len(demos), args.samples, summary.mean_min_ade1, summary.mean_min_ade5, summary.mean_min_fde1)
        )
        print(f"{spec.name:<12} minADE1={summary.mean_min_ade1:.3f} minADE5={summary.mean_min_ade5:.3f}")
    write_forecast_csv(rows, args.out)


def cmd_adapt(args) -> None:
    posterior = load_ensemble(args.models)
    library = load_library(args.library) if args.library else None
    planner_config = _planner_config(args)
    spec = MethodSpec.parse(args.method)
    tau = args.tau
    if tau is None:
        validation = generate_suite(args.suite, args.validation_episodes, derive_seed(args.seed, 1))
        logs = run_trials(validation, spec, posterior, 1, derive_seed(args.seed, 2), planner_config, library=library)
        tau = calibrate_tau(logs, args.fnr)
        logger.info("calibrated tau = %g", tau)
    config = AdaptationConfig(
        tau=tau,
        buffer_capacity=args.buffer,
        update_steps=args.update_steps,
        update_lr=args.update_lr,
    )
    scenes = generate_suite(args.suite, args.episodes, args.seed)
    points = adaptation_curve(
        scenes, spec.posterior(posterior), spec.aggregator, config, args.budget, args.seed,
        planner_config=planner_config, library=library,
    )
    write_adaptation_csv(points, args.out)
    for point in points:
        print(f"budget={point.budget:<4} success={point.success_rate:.3f} queries={point.queries}")


def cmd_calibrate(args) -> None:
    tau = calibrate_tau(read_episode_logs(args.logs), args.fnr)
    print("inf" if math.isinf(tau) else repr(tau))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rip", description="Robust imitative planning toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate expert demonstrations on a suite")
    p.add_argument("--suite", choices=SUITES, required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=1, help="record every n-th step")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a bootstrap ensemble")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--min-scale", type=float, default=Architecture().min_scale, help="floor of the step scale in meters")
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--shared-init", action="store_true")
    p.add_argument("--progress", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("library", help="cluster expert plans into a trajectory library")
    p.add_argument("--data", required=True)
    p.add_argument("--l", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_library)

    def planner_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--epsilon", type=float, default=1.0)
        p.add_argument("--max-iters", type=int, default=100)
        p.add_argument("--plan-lr", type=float, default=0.1)
        p.add_argument("--library")

    p = sub.add_parser("eval", help="closed-loop method x suite evaluation")
    p.add_argument("--models", required=True)
    p.add_argument("--suite", choices=SUITES, required=True)
    p.add_argument("--episodes", type=int, default=10, help="scenes in the suite")
    p.add_argument("--methods", default="rip-wcm,rip-ma,rip-bcm,dim")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--forecast-records", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--logs")
    planner_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forecast", help="open-loop minADE/minFDE on held-out demonstrations")
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--methods", default="rip-wcm,rip-ma,rip-bcm,dim")
    p.add_argument("--refine-iters", type=int, default=0)
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("adapt", help="AdaRIP success rate against the expert-query budget")
    p.add_argument("--models", required=True)
    p.add_argument("--suite", choices=SUITES, default="roundabout")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--method", default="rip-wcm")
    p.add_argument("--tau", type=_tau, default=None, help="AUTO or a variance threshold")
    p.add_argument("--fnr", type=float, default=0.1)
    p.add_argument("--validation-episodes", type=int, default=20)
    p.add_argument("--budget", type=_budgets, default=[0, 5, 10, 20])
    p.add_argument("--buffer", type=int, default=256)
    p.add_argument("--update-steps", type=int, default=20)
    p.add_argument("--update-lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    planner_flags(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("calibrate", help="variance threshold from episode logs")
    p.add_argument("--logs", required=True)
    p.add_argument("--fnr", type=float, default=0.1)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=max(logging.WARNING - 10 * args.verbose, logging.DEBUG),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except RipError as exc:
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
