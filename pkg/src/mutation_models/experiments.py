"""Experiment orchestration: run directories, manifests and the reproduction presets."""
from __future__ import annotations

import csv
import datetime as dt
import itertools
import json
import logging
import os
import tempfile
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bench import summarize, time_evolution, time_network, write_benchmark_csv
from .config import ExperimentConfig
from .dataset import extract_dataset, save_dataset
from .evolution import EvolutionResult, Mode, rank, run_evolution, training_seed
from .inference import GenerationOutcome, batch_generate
from .metrics import BatchMetrics, compute_batch_metrics, emit_era_csv, emit_era_svg, expressive_range, mean_ci95
from .policy import PolicyWeights, TrainHyperparams, save_weights, train

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "MM_OUTPUT_ROOT"
DIVERSITY_NOTE = "diversity = distinct (path_length, empty_tiles) pairs / successful levels"

# published reference values: (mean, 95% CI half-width), percentages for rates
PUBLISHED_TABLE1 = {
    "assisted-2": {"success": (99.67, 0.49), "diversity": (86.83, 3.8), "iterations": (18.21, 18.57)},
    "normal-2": {"success": (30.17, 32.7), "diversity": (28.5, 30.62), "iterations": (61.7, 47.22)},
    "normal-4": {"success": (66.83, 49.22), "diversity": (59.33, 43.69), "iterations": (23.55, 48.59)},
    "normal-8": {"success": (65.17, 48.37), "diversity": (60.0, 44.59), "iterations": (31.78, 23.84)},
}
PUBLISHED_TABLE2 = {
    "network": {"success": (99.67, 0.49), "diversity": (86.83, 3.8), "wall_time_s": (0.6612, 2.3874)},
    "evolution": {"success": (100.0, None), "diversity": (96.0, None), "wall_time_s": (12.6957, 2.2571)},
}


def output_root(explicit=None) -> Path:
    return Path(explicit or os.environ.get(OUTPUT_ROOT_ENV) or "runs")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path, payload) -> None:
    """Write JSON through a temporary file and rename, so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_jsonable(payload), fh, indent=2, sort_keys=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RunDirectory:
    """A fresh output directory owning a manifest of everything written into it.

    Existing directories are never reused; a numeric suffix is added instead.
    """

    def __init__(self, root, command: str, config: Optional[ExperimentConfig] = None, seeds: Sequence[int] = ()) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        base = f"{command}-{dt.datetime.now().strftime('%Y%m%d-%H%M%S')}"
        for k in itertools.count():
            path = root / (base if k == 0 else f"{base}-{k}")
            try:
                path.mkdir()
                break
            except FileExistsError:
                continue
        self.path = path
        self.manifest = {
            "run_id": path.name,
            "command": command,
            "status": "running",
            "started": _now(),
            "finished": None,
            "config": config.as_dict() if config is not None else None,
            "seeds": list(seeds),
            "artifacts": [],
        }
        self.save()

    def file(self, relative: str) -> Path:
        """Register ``relative`` as an artifact and return its absolute path."""
        target = self.path / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        if relative not in self.manifest["artifacts"]:
            self.manifest["artifacts"].append(relative)
        return target

    def save(self) -> None:
        write_json(self.path / "manifest.json", self.manifest)

    def finish(self, status: str = "complete", **extra) -> None:
        self.manifest.update(extra)
        self.manifest["status"] = status
        self.manifest["finished"] = _now()
        self.save()

    def __enter__(self) -> "RunDirectory":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            if self.manifest["status"] == "running":
                self.finish()
        else:
            self.finish("failed", error=f"{exc_type.__name__}: {exc}")


def _hyper(config: ExperimentConfig, epochs: Optional[int] = None) -> TrainHyperparams:
    return replace(config.training, epochs=config.epochs if epochs is None else epochs)


def train_final(population, config: ExperimentConfig, epochs: int):
    """Fit a fresh model on the final top-X histories, as the end-of-run training does."""
    evo = config.evolution
    top = rank(population, evo.prefer_offspring)[: evo.top_x]
    data = extract_dataset(top, crop_size=config.crop_size, provenance=f"seed={evo.seed} gen={evo.generations}")
    hyper = replace(config.training, epochs=epochs, seed=training_seed(evo.seed, evo.generations))
    weights, losses = train(data, hyper, config.crop_size)
    return weights, losses, data


def write_stats_csv(path, stats) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "best_fitness", "mean_top10_fitness", "dataset_size", "history_similarity"])
        for s in stats:
            writer.writerow([s.generation, f"{s.best_fitness:.6f}", f"{s.mean_top10_fitness:.6f}", s.dataset_size, f"{s.history_similarity:.6f}"])


def evolve(config: ExperimentConfig, run: RunDirectory, prefix: str = "", train_at_end: bool = True) -> EvolutionResult:
    """Evolve and persist stats, per-event datasets and weights, and the final top-X.

    Normal mode trains once at the end (when ``train_at_end``); Assisted mode
    stores one dataset and weights file per training event.
    """
    evo = config.evolution

    def on_training(generation, data, weights, losses):
        save_dataset(data, run.file(f"{prefix}datasets/gen{generation}.ds"))
        save_weights(weights, run.file(f"{prefix}weights/gen{generation}.mmw"))

    result = run_evolution(
        evo,
        config.mode,
        _hyper(config),
        on_training=on_training if config.mode is Mode.ASSISTED else None,
        train_at_end=False,
        crop_size=config.crop_size,
    )
    if config.mode is Mode.NORMAL and train_at_end:
        weights, losses, data = train_final(result.population, config, config.epochs)
        save_dataset(data, run.file(f"{prefix}datasets/gen{evo.generations}.ds"))
        save_weights(weights, run.file(f"{prefix}weights/gen{evo.generations}.mmw"))
        result.weights = weights
        result.training_events.append(evo.generations)
        result.loss_curves[evo.generations] = losses

    write_stats_csv(run.file(f"{prefix}stats.csv"), result.stats)
    top = rank(result.population, evo.prefer_offspring)[: evo.top_x]
    for k, chrom in enumerate(top):
        chrom.current_level.save(run.file(f"{prefix}top/{k}.txt"))
    save_dataset(extract_dataset(top, crop_size=config.crop_size, provenance=f"final top-{evo.top_x}"), run.file(f"{prefix}top/histories.ds"))
    if result.training_events:
        run.manifest.setdefault("final_weights", {})[prefix or "."] = f"{prefix}weights/gen{result.training_events[-1]}.mmw"
    return result


def write_outcomes(outcomes: Sequence[GenerationOutcome], run: RunDirectory, prefix: str = "") -> BatchMetrics:
    """Persist generated levels, their outcomes, the ERA artifacts and the metrics report."""
    with open(run.file(f"{prefix}outcomes.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "success", "iterations", "path_length", "empty_tiles", "wall_time_ms"])
        for i, o in enumerate(outcomes):
            o.final_level.save(run.file(f"{prefix}levels/{i}.txt"))
            writer.writerow([i, int(o.success), o.iterations, "" if o.path_length is None else o.path_length, "" if o.empty_tiles is None else o.empty_tiles, f"{o.wall_time_ms:.3f}"])
    return write_analysis(outcomes, run, prefix)


def write_analysis(outcomes, run: RunDirectory, prefix: str = "", extra: Optional[dict] = None) -> BatchMetrics:
    metrics = compute_batch_metrics(outcomes)
    era = expressive_range(outcomes)
    emit_era_csv(era, run.file(f"{prefix}era.csv"))
    emit_era_svg(era, run.file(f"{prefix}era.svg"))
    report = {"metrics": asdict(metrics), "diversity_definition": DIVERSITY_NOTE, "config": run.manifest["config"], "run_id": run.manifest["run_id"]}
    report.update(extra or {})
    write_json(run.file(f"{prefix}report.json"), report)
    return metrics


def generate(weights: PolicyWeights, config: ExperimentConfig, run: RunDirectory, n: int, seed: int, prefix: str = "", workers: int = 1):
    evo = config.evolution
    outcomes = batch_generate(weights, n, seed, workers=workers, width=evo.width, height=evo.height, noise=evo.noise, max_passes=config.max_passes)
    return outcomes, write_outcomes(outcomes, run, prefix)


class _Row:
    __slots__ = ("success", "iterations", "path_length", "empty_tiles")

    def __init__(self, success, iterations, path_length, empty_tiles):
        self.success, self.iterations, self.path_length, self.empty_tiles = success, iterations, path_length, empty_tiles


def read_outcomes(path) -> list:
    """Read an outcomes.csv written by :func:`write_outcomes`."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"success", "iterations", "path_length", "empty_tiles"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                ok = bool(int(rec["success"]))
                rows.append(
                    _Row(ok, int(rec["iterations"]), int(rec["path_length"]) if ok else None, int(rec["empty_tiles"]) if ok else None)
                )
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed outcome row") from None
    return rows


def _aggregate(per_run: list[BatchMetrics]) -> dict:
    def stat(values):
        values = [v for v in values if v is not None]
        if not values:
            return (None, None)
        return mean_ci95(values)

    return {
        "success": stat([m.success_rate for m in per_run]),
        "diversity": stat([m.diversity for m in per_run]),
        "iterations": stat([m.mean_iterations for m in per_run]),
    }


def _fmt(pair, digits=2) -> str:
    mean, ci = pair
    if mean is None:
        return "n/a"
    return f"{mean:.{digits}f}" if ci is None else f"{mean:.{digits}f} ± {ci:.{digits}f}"


def reproduce_table1(config: ExperimentConfig, run: RunDirectory, base_seed: int = 0, workers: int = 1) -> dict:
    """Assisted-2 against Normal-2/4/8 over ``config.runs`` repetitions.

    Each repetition runs one Normal evolution and trains its three models
    from the same final population; seeds are ``base_seed + repetition``.
    """
    labels = ["assisted-2", "normal-2", "normal-4", "normal-8"]
    per_run: dict[str, list[BatchMetrics]] = {k: [] for k in labels}
    for r in range(config.runs):
        seed = base_seed + r
        assisted = replace(config, mode=Mode.ASSISTED, epochs=2).with_seed(seed)
        log.info("repetition %d: assisted evolution (seed %d)", r, seed)
        res = evolve(assisted, run, prefix=f"rep{r}/assisted-2/")
        _, m = generate(res.weights, assisted, run, config.inference_levels, seed, prefix=f"rep{r}/assisted-2/", workers=workers)
        per_run["assisted-2"].append(m)

        normal = replace(config, mode=Mode.NORMAL).with_seed(seed)
        log.info("repetition %d: normal evolution (seed %d)", r, seed)
        res = evolve(normal, run, prefix=f"rep{r}/normal/", train_at_end=False)
        for epochs in (2, 4, 8):
            weights, _, _ = train_final(res.population, normal, epochs)
            save_weights(weights, run.file(f"rep{r}/normal-{epochs}/weights.mmw"))
            _, m = generate(weights, normal, run, config.inference_levels, seed, prefix=f"rep{r}/normal-{epochs}/", workers=workers)
            per_run[f"normal-{epochs}"].append(m)
        run.save()

    summary = {}
    with open(run.file("table1.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "mean", "ci95", "published_mean", "published_ci95"])
        for label in labels:
            agg = _aggregate(per_run[label])
            summary[label] = {"measured": agg, "published": PUBLISHED_TABLE1[label], "per_run": [asdict(m) for m in per_run[label]]}
            for metric in ("success", "diversity", "iterations"):
                writer.writerow([label, metric, *agg[metric], *PUBLISHED_TABLE1[label][metric]])

    lines = ["| method | success (%) | diversity (%) | iterations | published success | published diversity | published iterations |", "|---|---|---|---|---|---|---|"]
    for label in labels:
        m, p = summary[label]["measured"], PUBLISHED_TABLE1[label]
        lines.append(
            f"| {label} | {_fmt(m['success'])} | {_fmt(m['diversity'])} | {_fmt(m['iterations'])} | "
            f"{_fmt(p['success'])} | {_fmt(p['diversity'])} | {_fmt(p['iterations'])} |"
        )
    lines.append("")
    lines.append(f"{config.runs} repetition(s), {config.inference_levels} levels each, seeds {base_seed}..{base_seed + config.runs - 1}; {DIVERSITY_NOTE}.")
    run.file("comparison.md").write_text("\n".join(lines) + "\n")
    write_json(run.file("report.json"), {"table": "table1", "summary": summary, "diversity_definition": DIVERSITY_NOTE})
    return summary


def reproduce_table2(config: ExperimentConfig, run: RunDirectory, base_seed: int = 0, weights: Sequence[PolicyWeights] = ()) -> dict:
    """Inference wall time of Assisted-2 models against evolution until connected.

    Without ``weights``, ``config.runs`` Assisted-2 models are evolved first.
    Each model generates ``inference_levels`` levels; evolution runs
    ``inference_levels`` times. Everything is timed single-threaded.
    """
    models = list(weights)
    if not models:
        for r in range(config.runs):
            assisted = replace(config, mode=Mode.ASSISTED, epochs=2).with_seed(base_seed + r)
            log.info("model %d: assisted evolution (seed %d)", r, base_seed + r)
            models.append(evolve(assisted, run, prefix=f"model{r}/").weights)
    net_outcomes, net_times = [], []
    for r, w in enumerate(models):
        outcomes, times = time_network(w, config.inference_levels, config.evolution, seed=base_seed + r, max_passes=config.max_passes)
        net_outcomes += outcomes
        net_times += times
    log.info("timing %d evolution runs", config.inference_levels)
    evo_outcomes, evo_times = time_evolution(config.inference_levels, config.evolution, seed=base_seed, max_generations=config.evolution.generations)
    write_benchmark_csv(run.file("benchmark.csv"), net_outcomes, net_times, evo_outcomes, evo_times)
    report = summarize(net_outcomes, net_times, evo_outcomes, evo_times)
    per_model = [compute_batch_metrics(net_outcomes[i : i + config.inference_levels]) for i in range(0, len(net_outcomes), config.inference_levels)]
    summary = {
        "measured": report.as_dict(),
        "network_per_model": [asdict(m) for m in per_model],
        "published": PUBLISHED_TABLE2,
        "published_ratio": PUBLISHED_TABLE2["evolution"]["wall_time_s"][0] / PUBLISHED_TABLE2["network"]["wall_time_s"][0],
    }
    lines = [
        "| method | success (%) | diversity (%) | wall time (s) | published wall time (s) |",
        "|---|---|---|---|---|",
        f"| network | {report.network_success_rate:.2f} | {report.network_diversity:.2f} | {report.network_mean_s:.4f} ± {report.network_ci95_s:.4f} | 0.6612 ± 2.3874 |",
        f"| evolution | {report.evolution_success_rate:.2f} | {report.evolution_diversity:.2f} | {report.evolution_mean_s:.4f} ± {report.evolution_ci95_s:.4f} | 12.6957 ± 2.2571 |",
        "",
        f"speedup (evolution mean / network time per successful level): {report.speedup:.1f}x, published {summary['published_ratio']:.1f}x",
    ]
    run.file("comparison.md").write_text("\n".join(lines) + "\n")
    write_json(run.file("report.json"), {"table": "table2", "summary": summary})
    return summary


def reproduce_fig3(config: ExperimentConfig, run: RunDirectory, base_seed: int = 0) -> dict:
    """Fitness, dataset size and history similarity curves for both modes."""
    curves = {}
    with open(run.file("fig3.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "repetition", "generation", "best_fitness", "mean_top10_fitness", "dataset_size", "history_similarity"])
        for mode in (Mode.NORMAL, Mode.ASSISTED):
            for r in range(config.runs):
                cfg = replace(config, mode=mode, epochs=2).with_seed(base_seed + r)
                log.info("%s evolution, repetition %d", mode.value, r)
                res = evolve(cfg, run, prefix=f"{mode.value}/rep{r}/", train_at_end=False)
                for s in res.stats:
                    writer.writerow([mode.value, r, s.generation, f"{s.best_fitness:.6f}", f"{s.mean_top10_fitness:.6f}", s.dataset_size, f"{s.history_similarity:.6f}"])
                last = res.stats[-1]
                curves.setdefault(mode.value, []).append(
                    {"best_fitness": last.best_fitness, "dataset_size": last.dataset_size, "history_similarity": last.history_similarity}
                )
                run.save()
    write_json(run.file("report.json"), {"figure": "fig3", "final_generation": curves})
    return curves

