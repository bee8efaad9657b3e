"""Command line entry point: ``fedle {run,compare,sweep-clusters,calibrate}``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 calibration failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import calibration, report
from .config import ExperimentConfig, format_config, parse_config
from .engine import ExperimentHistory, run_experiment
from .errors import CalibrationFailedError, FedLEError, FormatError
from .selection import STRATEGIES


EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_CALIBRATION = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seeds", type=_int_list, default=[0], help="e.g. 0,1,2,3,4")
    common.add_argument("--parallel", type=int, default=None,
                        help="worker processes (default: available cores)")
    src = common.add_mutually_exclusive_group()
    src.add_argument("--synthetic", action="store_true", help="use the synthetic dataset")
    src.add_argument("--mnist-images", type=Path)
    common.add_argument("--mnist-labels", type=Path)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fedle", description="Battery-constrained federated learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="one strategy over a seed list")
    run.add_argument("--strategy", choices=STRATEGIES)
    sub.add_parser("compare", parents=[common], help="all strategies over a seed list")
    sweep = sub.add_parser("sweep-clusters", parents=[common], help="FedLE over several k")
    sweep.add_argument("--k-values", type=_int_list, required=True)
    sub.add_parser("calibrate", parents=[common], help="search battery cost scales")
    return parser


def load_config(args) -> ExperimentConfig:
    overrides = {}
    if args.synthetic:
        overrides["dataset"] = "synthetic"
    if args.mnist_images or args.mnist_labels:
        if not (args.mnist_images and args.mnist_labels):
            raise UsageError("--mnist-images and --mnist-labels must be given together")
        overrides.update(
            dataset="mnist", mnist_images=str(args.mnist_images), mnist_labels=str(args.mnist_labels)
        )
    if getattr(args, "strategy", None):
        overrides["strategy"] = args.strategy
    if args.config is not None:
        cfg = parse_config(args.config, **overrides)
    else:
        cfg = ExperimentConfig(**overrides)
    if cfg.dataset == "mnist":
        for path in (cfg.mnist_images, cfg.mnist_labels, cfg.mnist_test_images, cfg.mnist_test_labels):
            if path and not Path(path).is_file():
                raise FileNotFoundError(2, "dataset file not found", path)
    return cfg


def _run_one(cfg: ExperimentConfig) -> ExperimentHistory:
    return run_experiment(cfg)


def run_many(configs: list[ExperimentConfig], parallel: int | None) -> list[ExperimentHistory]:
    """Run configs, possibly in worker processes; results keep input order."""
    workers = parallel or os.cpu_count() or 1
    workers = min(workers, len(configs))
    if workers <= 1:
        return [_run_one(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, configs))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_history(out: Path, stem: str, history: ExperimentHistory) -> None:
    _write(out / "histories" / f"{stem}.json", history.to_json())
    _write(out / "rounds" / f"{stem}.csv", history.rounds_csv())


def write_diagnostics(out: Path, stem: str, history: ExperimentHistory) -> None:
    sim = history.similarity
    if not sim:
        return
    if "initial_matrix" in sim:
        _write(out / "diagnostics" / f"{stem}_heatmap.svg",
               report.render_similarity_heatmap(sim["initial_matrix"]))
    if "final_matrix" in sim:
        _write(out / "diagnostics" / f"{stem}_heatmap_final.svg",
               report.render_similarity_heatmap(sim["final_matrix"], title="Similarity matrix (final)"))
    if "points" in sim:
        _write(out / "diagnostics" / f"{stem}_embedding.svg",
               report.render_embedding_scatter(sim["points"], sim["labels"], sim["anchor_pair"]))


def _write_summary(out: Path, histories, column=None) -> str:
    table = report.rounds_table(histories) if column is None else report.rounds_table(histories, column)
    _write(out / "rounds_table.csv", report.rounds_table_csv(table))
    return report.render_rounds_table(table)


def _write_chart(out: Path, comparison: report.ComparisonSet) -> None:
    if any(r.test_accuracy is not None for hs in comparison.groups.values() for h in hs for r in h.rounds):
        _write(out / "accuracy_chart.svg", report.render_accuracy_chart(comparison))


def cmd_run(cfg: ExperimentConfig, args) -> int:
    configs = [cfg.replace(seed=s) for s in args.seeds]
    histories = run_many(configs, args.parallel)
    for seed, h in zip(args.seeds, histories):
        stem = f"{cfg.strategy}_seed{seed}"
        write_history(args.out, stem, h)
        write_diagnostics(args.out, stem, h)
        print(f"{stem}: rounds_lasted={h.rounds_lasted} final_accuracy={h.final_accuracy} "
              f"stop={h.stop_reason}")
    _write_chart(args.out, report.ComparisonSet.by_strategy(histories))
    print(_write_summary(args.out, histories), end="")
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    keys = [(strategy, seed) for strategy in STRATEGIES for seed in args.seeds]
    configs = [cfg.replace(strategy=st, seed=s) for st, s in keys]
    histories = run_many(configs, args.parallel)
    comparison = report.ComparisonSet()
    for (strategy, seed), h in zip(keys, histories):
        write_history(args.out, f"{strategy}_seed{seed}", h)
        comparison.add(strategy, h)
    _write_chart(args.out, comparison)
    print(_write_summary(args.out, histories), end="")
    return EXIT_OK


def cmd_sweep_clusters(cfg: ExperimentConfig, args) -> int:
    if any(k < 1 for k in args.k_values):
        raise UsageError("--k-values: every k must be >= 1")
    keys = [(k, seed) for k in args.k_values for seed in args.seeds]
    # only cluster_count varies, so partition, battery and training streams match across k
    configs = [cfg.replace(strategy="fedle", cluster_count=k, seed=s) for k, s in keys]
    histories = run_many(configs, args.parallel)
    comparison = report.ComparisonSet()
    for (k, seed), h in zip(keys, histories):
        write_history(args.out, f"fedle_k{k}_seed{seed}", h)
        comparison.add(f"k={k}", h)
    _write_chart(args.out, comparison)
    print(_write_summary(args.out, histories, lambda h: f"k={h.config['cluster_count']}"), end="")
    return EXIT_OK


def cmd_calibrate(cfg: ExperimentConfig, args) -> int:
    try:
        best, candidates = calibration.calibrate(cfg, seeds=args.seeds, grid=calibration.DEFAULT_GRID)
    except CalibrationFailedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    lines = ["r_scale,s_scale,a_scale,fedavg_b,fedbo,score,feasible"]
    lines += [
        f"{c.scales[0]!r},{c.scales[1]!r},{c.scales[2]!r},{c.fedavg_b},{c.fedbo},{c.score},{c.feasible}"
        for c in candidates
    ]
    _write(args.out / "calibration.csv", "\n".join(lines) + "\n")
    chosen = cfg.replace(r_scale=best.scales[0], s_scale=best.scales[1], a_scale=best.scales[2])
    header = (
        f"# calibrated for low_power_fraction = {cfg.low_power_fraction!r}, seeds {args.seeds}\n"
        f"# median rounds lasted: fedavg_b {best.fedavg_b}, fedbo {best.fedbo} (score {best.score})\n"
    )
    fragment = header + format_config(chosen, keys=("r_scale", "s_scale", "a_scale"))
    _write(args.out / "calibrated.cfg", fragment)
    print(fragment, end="")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "sweep-clusters": cmd_sweep_clusters,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        where = exc.filename or ""
        print(f"error: {where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, FedLEError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
