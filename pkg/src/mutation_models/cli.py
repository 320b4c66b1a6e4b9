"""Command line: ``mutation-models {evolve,generate,analyze,bench,reproduce}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .bench import summarize, time_evolution, time_network, write_benchmark_csv
from .config import ConfigError, ExperimentConfig, load_config, preset
from .experiments import (
    RunDirectory,
    evolve,
    generate,
    output_root,
    read_outcomes,
    reproduce_fig3,
    reproduce_table1,
    reproduce_table2,
    write_analysis,
    write_json,
)
from .policy import WeightsFormatError, load_weights

log = logging.getLogger("mutation_models")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def _base_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "preset", None):
        try:
            chosen = preset(args.preset)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        config = replace(config, mode=chosen.mode, epochs=chosen.epochs)
    try:
        config = config.scaled(args.scale)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config.with_seed(args.seed)


def _load_weights(path):
    try:
        return load_weights(path)
    except FileNotFoundError:
        raise RuntimeError(f"weights file not found: {path}") from None


def cmd_evolve(args) -> Path:
    config = _base_config(args)
    with RunDirectory(output_root(args.out), f"evolve-{config.label}", config, [args.seed]) as run:
        result = evolve(config, run)
        last = result.stats[-1]
        run.finish(
            summary={
                "best_fitness": last.best_fitness,
                "dataset_size": last.dataset_size,
                "history_similarity": last.history_similarity,
                "training_events": result.training_events,
            },
        )
    print(run.path)
    return run.path


def cmd_generate(args) -> Path:
    config = _base_config(args)
    weights = _load_weights(args.weights)
    n = args.n or config.inference_levels
    with RunDirectory(output_root(args.out), "generate", config, [args.seed]) as run:
        run.manifest["weights"] = str(Path(args.weights).resolve())
        run.save()
        _, metrics = generate(weights, config, run, n, args.seed, workers=args.workers)
        run.finish(summary=asdict(metrics))
    print(run.path)
    return run.path


def cmd_analyze(args) -> Path:
    source = Path(args.outcomes)
    csv_path = source / "outcomes.csv" if source.is_dir() else source
    if not csv_path.exists():
        raise RuntimeError(f"no outcomes file at {csv_path}")
    rows = read_outcomes(csv_path)
    if not rows:
        raise RuntimeError(f"{csv_path} has no outcome rows")
    with RunDirectory(output_root(args.out), "analyze") as run:
        run.manifest["source"] = str(csv_path.resolve())
        metrics = write_analysis(rows, run, extra={"source": str(csv_path.resolve())})
        run.finish(summary=asdict(metrics))
    print(run.path)
    return run.path


def cmd_bench(args) -> Path:
    config = _base_config(args)
    weights = _load_weights(args.weights)
    n = args.n or config.inference_levels
    runs = args.evolution_runs or n
    with RunDirectory(output_root(args.out), "bench", config, [args.seed]) as run:
        net_outcomes, net_times = time_network(weights, n, config.evolution, args.seed, config.max_passes)
        evo_outcomes, evo_times = time_evolution(runs, config.evolution, args.seed, config.evolution.generations)
        write_benchmark_csv(run.file("benchmark.csv"), net_outcomes, net_times, evo_outcomes, evo_times)
        report = summarize(net_outcomes, net_times, evo_outcomes, evo_times)
        write_json(run.file("report.json"), {"benchmark": report.as_dict(), "weights": str(Path(args.weights).resolve())})
        run.finish(summary=report.as_dict())
    print(run.path)
    return run.path


def cmd_reproduce(args) -> Path:
    config = _base_config(args)
    seeds = list(range(args.seed, args.seed + config.runs))
    with RunDirectory(output_root(args.out), f"reproduce-{args.table}", config, seeds) as run:
        if args.table == "table1":
            reproduce_table1(config, run, args.seed, workers=args.workers)
        elif args.table == "table2":
            models = [_load_weights(p) for p in args.weights or ()]
            reproduce_table2(config, run, args.seed, models)
        else:
            reproduce_fig3(config, run, args.seed)
        run.finish()
    comparison = run.path / "comparison.md"
    if comparison.exists():
        print(comparison.read_text(), end="")
    print(run.path)
    return run.path


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment configuration")
    common.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    common.add_argument("--scale", choices=["full", "quick"], default="full", help="quick: 300 generations, one repetition")
    common.add_argument("--out", help="output root (default $MM_OUTPUT_ROOT or ./runs)")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    parser = argparse.ArgumentParser(prog="mutation-models", description="Train mutation policies from evolution histories and generate mazes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", parents=[common], help="run one evolution and train its model(s)")
    p.add_argument("--preset", help="assisted-2, normal-2, normal-4 or normal-8")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("generate", parents=[common], help="generate levels from noise with a trained model")
    p.add_argument("weights", help="weights file")
    p.add_argument("-n", type=int, help="number of levels (default from config, 100)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", parents=[common], help="recompute metrics and expressive range from an outcomes.csv")
    p.add_argument("outcomes", help="generate run directory or outcomes.csv")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", parents=[common], help="wall-clock inference against evolution until connected")
    p.add_argument("weights", help="weights file")
    p.add_argument("-n", type=int, help="inference episodes (default from config, 100)")
    p.add_argument("--evolution-runs", type=int, help="evolution runs (default: same as -n)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("reproduce", parents=[common], help="run a published experiment and compare")
    p.add_argument("table", choices=["table1", "table2", "fig3"])
    p.add_argument("--workers", type=int, default=1, help="processes for level generation (table1)")
    p.add_argument("--weights", nargs="*", help="table2: use these models instead of evolving new ones")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    for name in ("n", "evolution_runs", "workers"):
        value = getattr(args, name, None)
        if value is not None and value < 1:
            parser.error(f"--{name.replace('_', '-')} must be positive")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WeightsFormatError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
