#!/usr/bin/env python3
"""
Command-line front door of the strap tying stack.

Subcommands cover the whole pipeline: exploration data, the two learned
models, single trials, evaluation grids, the exact linking oracle, reports
and the cost benchmark. Every subcommand accepts ``--config`` and repeated
``--set section.field=value`` overrides.

Exit codes: 0 success, 1 usage/validation/config error, 2 runtime failure,
130 interrupted.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from src import __version__
from src.core import amortizer, dynamics_model, evaluation, exploration, linking, mpc, rope_sim
from src.models.enums import HookFamily, LogLevel, MaterialId, Method
from src.utils.config import HarnessConfig, apply_overrides, config_hash, load_config, output_root
from src.utils.exceptions import ConfigurationError, StrapMpcError, ValidationError
from src.utils.logging import get_operation_logger, setup_logging
from src.utils.persistence import build_provenance, write_json

WORLD_KINDS = ("initial", "threaded", "tip-draped", "table")


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that exits with 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='JSON config file (defaults when omitted)')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.FIELD=VALUE',
                        help='Override one config field; repeatable')
    common.add_argument('--log-level', type=str, choices=[str(level) for level in LogLevel],
                        default='info', help='Logging level (default: info)')
    common.add_argument('--log-file', type=Path, help='Write logs to specified file')
    common.add_argument('--quiet', '-q', action='store_true', help='Suppress console logging')
    common.add_argument('--verbose', '-v', action='store_true',
                        help='Thread info in logs and tracebacks on unexpected errors')
    return common


def _scene_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--hook', choices=[h.value for h in HookFamily], default='H1', help='Hook preset')
    parser.add_argument('--material', choices=[m.value for m in MaterialId], default='M1', help='Material preset')
    parser.add_argument('--slack', type=float, default=0.0, help='Extra strap length in meters')
    parser.add_argument('--seed', type=int, default=0, help='Seed')


def _model_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--dynamics', type=Path, required=True, help='Dynamics checkpoint')
    parser.add_argument('--cost', type=Path, required=True, help='Amortizer checkpoint')


def setup_argument_parser() -> argparse.ArgumentParser:
    """
    Setup command-line argument parser with all subcommands.

    Returns:
        Configured ArgumentParser instance
    """
    common = _common_options()
    parser = CliParser(
        prog='strap-mpc',
        description="Strap tying with turn-taking multi-agent MPC",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s gen-data --out runs/data/h1m1.npz --episodes 200
  %(prog)s train-dynamics --data runs/data/h1m1.npz --out runs/models/dynamics.npz
  %(prog)s train-cost --data runs/data/h1m1.npz --out runs/models/cost.npz
  %(prog)s run-trial --dynamics runs/models/dynamics.npz --cost runs/models/cost.npz --seed 3
  %(prog)s run-trial --dynamics runs/models/dynamics.npz --cost runs/models/cost.npz --trajectory runs/traj.jsonl
  %(prog)s eval-grid --dynamics runs/models/dynamics.npz --cost runs/models/cost.npz --out runs/eval
  %(prog)s oracle-link --world threaded --hook H2
  %(prog)s oracle-link --trajectory runs/traj.jsonl --out runs/traj.oracle.jsonl
  %(prog)s report runs/eval
        """
    )
    parser.add_argument('--version', action='version', version=f'strap-mpc {__version__}')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)

    gen = sub.add_parser('gen-data', parents=[common], help='Generate exploration transitions')
    gen.add_argument('--out', type=Path, help='Dataset path (default: <output root>/data/dataset.npz)')
    gen.add_argument('--episodes', type=int, help='Episodes (default: data.episodes)')
    gen.add_argument('--steps', type=int, help='Steps per episode (default: data.steps)')
    gen.add_argument('--workers', type=int, default=1, help='Worker threads')
    gen.add_argument('--seed', type=int, default=0, help='Master seed')

    dyn = sub.add_parser('train-dynamics', parents=[common], help='Train the keypoint dynamics model')
    dyn.add_argument('--data', type=Path, required=True, help='Dataset path')
    dyn.add_argument('--out', type=Path, help='Checkpoint path (default: <output root>/models/dynamics.npz)')

    cost = sub.add_parser('train-cost', parents=[common], help='Label a dataset and train the linking cost')
    cost.add_argument('--data', type=Path, required=True, help='Dataset path')
    cost.add_argument('--out', type=Path, help='Checkpoint path (default: <output root>/models/cost.npz)')
    cost.add_argument('--seed', type=int, default=0, help='Labeling jitter seed')
    cost.add_argument('--profile-ties', type=int, default=0, metavar='N',
                      help='Record the mean linking profile over N scripted ties')

    trial = sub.add_parser('run-trial', parents=[common], help='Run one closed-loop trial')
    _model_options(trial)
    _scene_options(trial)
    trial.add_argument('--method', choices=[m.value for m in Method], default=Method.TURN_TAKING.value,
                       help='Control method')
    trial.add_argument('--out', type=Path, help='Trial JSONL log (default: <output root>/trials/<id>.jsonl)')
    trial.add_argument('--timing', action='store_true', help='Record planning wall-clock in the log')
    trial.add_argument('--trajectory', type=Path, metavar='PATH', help='Also write a per-step trajectory JSONL')
    trial.add_argument('--trajectory-links', action='store_true',
                       help='Store the exact linking value in every trajectory step')

    grid = sub.add_parser('eval-grid', parents=[common], help='Run the evaluation grid')
    _model_options(grid)
    grid.add_argument('--out', type=Path, help='Output directory (default: <output root>/eval)')
    grid.add_argument('--trials', type=int, help='Trials per cell (default: grid.trials)')
    grid.add_argument('--workers', type=int, help='Worker threads (default: grid.workers)')
    grid.add_argument('--methods', nargs='+', choices=[m.value for m in Method], help='Methods to run')
    grid.add_argument('--no-trial-logs', action='store_true', help='Skip per-trial JSONL logs')

    oracle = sub.add_parser('oracle-link', parents=[common],
                            help='Exact linking of a scripted world or a trajectory log')
    _scene_options(oracle)
    oracle.add_argument('--world', choices=WORLD_KINDS, default='threaded', help='World to build')
    oracle.add_argument('--bar-angle', type=float, default=0.0, help='Bar angle (rad)')
    oracle.add_argument('--refine', type=int, default=0, metavar='LEVELS',
                        help='Also report refinement over LEVELS midpoint subdivisions')
    oracle.add_argument('--goal', action='store_true', help='Also run the release-and-settle goal test')
    oracle.add_argument('--cost', type=Path, help='Amortizer checkpoint for the normalized cost')
    oracle.add_argument('--trajectory', type=Path, metavar='IN',
                        help='Trajectory JSONL to annotate with per-frame linking values')
    oracle.add_argument('--out', type=Path, metavar='OUT',
                        help='Annotated trajectory (default: IN with an .oracle.jsonl suffix)')

    rep = sub.add_parser('report', parents=[common], help='Pool evaluation results under a directory')
    rep.add_argument('directory', type=Path, help='Directory holding eval.json files')

    bench = sub.add_parser('benchmark', parents=[common], help='Time learned cost against exact linking')
    _model_options(bench)
    bench.add_argument('--repeats', type=int, default=5, help='Timed calls per measurement')
    bench.add_argument('--out', type=Path, help='Result JSON (default: <output root>/benchmark.json)')
    return parser


def configure_logging(args: argparse.Namespace) -> None:
    """
    Configure logging based on command-line arguments.

    Args:
        args: Parsed command-line arguments
    """
    setup_logging(
        level=LogLevel(args.log_level),
        log_file=args.log_file,
        console_output=not args.quiet,
        include_thread_info=args.verbose,
    )


def build_config(args: argparse.Namespace) -> HarnessConfig:
    """Config file layered with ``--set`` overrides."""
    return apply_overrides(load_config(args.config), args.overrides)


def _print_json(data: Dict[str, Any]) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _checkpoints_exist(*paths: Path) -> bool:
    """Report missing checkpoints on stderr; they abort a command before any work."""
    missing = [p for p in paths if not p.is_file()]
    for path in missing:
        print(f"Error: Checkpoint not found: {path}", file=sys.stderr)
    return not missing


def cmd_gen_data(args: argparse.Namespace, cfg: HarnessConfig) -> int:
    out = args.out or output_root() / "data" / "dataset.npz"
    dataset = dynamics_model.generate_data(cfg, args.seed, args.episodes, args.steps, args.workers)
    dynamics_model.save_dataset(out, dataset)
    _print_json({"dataset": str(out), "transitions": len(dataset),
                 "skipped_episodes": dataset.header.get("skipped_episodes", [])})
    return 0


def cmd_train_dynamics(args: argparse.Namespace, cfg: HarnessConfig) -> int:
    out = args.out or output_root() / "models" / "dynamics.npz"
    dataset = dynamics_model.load_dataset(args.data)
    provenance = build_provenance(config_hash(cfg), cfg.dynamics.seed, dataset=str(args.data),
                                  hook=dataset.header.get("hook"), material=dataset.header.get("material"))
    sizes = tuple((c.width, c.height) for c in cfg.cameras)
    model, report = dynamics_model.train_dynamics(dataset, cfg.dynamics, provenance, sizes)
    dynamics_model.save_dynamics(out, model, provenance)
    write_json(out.with_suffix(".report.json"), {"provenance": provenance, **report})
    _print_json({"checkpoint": str(out), **{k: v for k, v in report.items() if k != "training"}})
    return 0


def cmd_train_cost(args: argparse.Namespace, cfg: HarnessConfig) -> int:
    out = args.out or output_root() / "models" / "cost.npz"
    dataset = dynamics_model.load_dataset(args.data)
    labeled = amortizer.label_dataset(dataset, cfg, seed=args.seed)
    provenance = build_provenance(config_hash(cfg), cfg.amortizer.seed, dataset=str(args.data),
                                  hook=dataset.header.get("hook"), material=dataset.header.get("material"))
    model, report = amortizer.train_amortizer(labeled, cfg.amortizer, provenance)
    if args.profile_ties > 0:
        hook, material = dataset.header.get("hook", "H1"), dataset.header.get("material", "M1")
        ties = [exploration.scripted_tie(cfg, hook, material, cfg.data.slack, seed=s)
                for s in range(args.profile_ties)]
        successful = [t.features for t in ties if t.success]
        report["profile"] = {"ties": len(ties), "successful": len(successful),
                             "mean_link": amortizer.linking_profile(model, successful).tolist()}
    amortizer.save_amortizer(out, model, provenance)
    write_json(out.with_suffix(".report.json"), {"provenance": provenance, **report})
    _print_json({"checkpoint": str(out), "dropped_frames": len(dataset) - len(labeled),
                 **{k: v for k, v in report.items() if k not in ("training", "profile")}})
    return 0


def cmd_run_trial(args: argparse.Namespace, cfg: HarnessConfig) -> int:
    if not _checkpoints_exist(args.dynamics, args.cost):
        return 1
    method = Method(args.method)
    trial = evaluation.TrialConfig(args.hook, args.material, args.slack, args.seed, method,
                                   args.dynamics, args.cost,
                                   [o for o in args.overrides if o.startswith("planner.")])
    trial.validate(cfg)
    models = trial.load_models()
    trial_id = f"{args.hook}_{args.material}_{args.slack:g}_{method}_{args.seed}"
    out = args.out or output_root() / "trials" / f"{trial_id}.jsonl"
    provenance = build_provenance(config_hash(cfg), args.seed, dynamics=str(args.dynamics), cost=str(args.cost))
    world = evaluation.trial_world(cfg, args.hook, args.material, args.slack, args.seed)
    result = mpc.trial_for_method(method, world, models, cfg, args.seed, trial_id=trial_id, log_path=out,
                                  provenance=provenance, include_timing=args.timing,
                                  trajectory_path=args.trajectory, trajectory_links=args.trajectory_links)
    data: Dict[str, Any] = {"log": str(out)}
    if args.trajectory:
        data["trajectory"] = str(args.trajectory)
    _print_json({**data, **result.summary()})
    return 0


def cmd_eval_grid(args: argparse.Namespace, cfg: HarnessConfig) -> int:
    if not _checkpoints_exist(args.dynamics, args.cost):
        return 1
    models = evaluation.load_models(args.dynamics, args.cost)
    out = args.out or output_root() / "eval"
    methods = [Method(m) for m in args.methods] if args.methods else None
    report = evaluation.eval_grid(cfg, models, out, trials=args.trials, methods=methods, workers=args.workers,
                                  write_logs=not args.no_trial_logs)
    print(evaluation.format_table(report), end='')
    return 0


def _oracle_world(args: argparse.Namespace, cfg: HarnessConfig):
    if args.world == "initial":
        world = evaluation.trial_world(cfg, args.hook, args.material, args.slack, args.seed)
        world.bar_angle = args.bar_angle
        return world
    if args.world == "threaded":
        return rope_sim.threaded_world(cfg, args.hook, args.material, args.slack, args.bar_angle)
    if args.world == "tip-draped":
        return rope_sim.tip_draped_world(cfg, args.hook, args.material, args.slack, args.bar_angle)
    return rope_sim.table_world(cfg, args.hook, args.material)


def cmd_oracle_link(args: argparse.Namespace, cfg: HarnessConfig) -> int:
    if args.trajectory:
        out = args.out or args.trajectory.with_name(f"{args.trajectory.stem}.oracle.jsonl")
        _print_json(evaluation.oracle_link_trajectory(args.trajectory, out, seed=args.seed))
        return 0
    world = _oracle_world(args, cfg)
    strap = linking.strap_curve(world.rope.positions, cfg.scene.closure_drop)
    hook = linking.hook_curve(world)
    value = linking.link_with_jitter(strap, hook, seed=args.seed).value
    data: Dict[str, Any] = {"world": args.world, "hook": args.hook, "material": args.material,
                            "slack": args.slack, "bar_angle": world.bar_angle, "link": value,
                            "abs_link": abs(value), "vertices": [strap.count, hook.count]}
    if args.refine > 0:
        levels = linking.refine_convergence(strap, hook, args.refine)
        data["refine"] = {"values": [r.value for r in levels],
                          "deltas": linking.successive_differences(levels)}
    if args.goal:
        check = rope_sim.goal_check(world, cfg.goal, seed=args.seed)
        data["goal"] = {"passed": check.passed, "min_link": check.min_link,
                        "contact_bottom": check.contact_bottom, "diverged": check.diverged}
    if args.cost:
        bounds = amortizer.load_amortizer(args.cost).bounds
        data["c_link_exact"] = linking.c_link_exact(strap, hook, bounds)
    _print_json(data)
    return 0


def cmd_report(args: argparse.Namespace, cfg: HarnessConfig) -> int:
    summary = evaluation.report(args.directory)
    print(evaluation.format_table(summary.report), end='')
    for path, error in summary.malformed:
        print(f"malformed: {path}: {error}", file=sys.stderr)
    return 0


def cmd_benchmark(args: argparse.Namespace, cfg: HarnessConfig) -> int:
    if not _checkpoints_exist(args.dynamics, args.cost):
        return 1
    models = evaluation.load_models(args.dynamics, args.cost)
    result = evaluation.benchmark(models, cfg, repeats=args.repeats)
    write_json(args.out or output_root() / "benchmark.json", result)
    _print_json(result)
    return 0


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train-dynamics': cmd_train_dynamics,
    'train-cost': cmd_train_cost,
    'run-trial': cmd_run_trial,
    'eval-grid': cmd_eval_grid,
    'oracle-link': cmd_oracle_link,
    'report': cmd_report,
    'benchmark': cmd_benchmark,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the CLI application.

    Returns:
        Exit code (0 success, 1 usage/validation, 2 runtime failure, 130 interrupted)
    """
    try:
        parser = setup_argument_parser()
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        configure_logging(args)
        logger = get_operation_logger(__name__)
        cfg = build_config(args)
        logger.debug(f"Running {args.command} with config {config_hash(cfg)[:12]}")
        return COMMANDS[args.command](args, cfg)

    except KeyboardInterrupt:
        print("\nOperation cancelled by user.", file=sys.stderr)
        return 130

    except (ValidationError, ConfigurationError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    except StrapMpcError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2

    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        if args.verbose:
            import traceback
            traceback.print_exc()
        return 2


if __name__ == '__main__':
    sys.exit(main())
