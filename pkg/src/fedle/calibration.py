"""Grid search for battery cost scales that reproduce a target lifespan.

The published cost ranges drain every client within a handful of rounds, so
the (r, s, a) ranges are multiplied by scale factors. The search looks for
the scales whose median FedAvg-B and FedBO lifespans sit closest (L1) to the
target, subject to:

* FedAvg-B median within ``avgb_window``;
* FedBO median equal to ``max_rounds``;
* the FedLE bootstrap upload (one ``r`` plus one ``a``) cannot kill the
  weakest possible low-power client.

Lifespan does not depend on model quality for these two strategies, so
candidates run in energy-only mode.
"""

from __future__ import annotations

import itertools
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

from .config import ExperimentConfig
from .energy import COMM_RANGE, LOW_B0, STANDBY_RANGE
from .engine import run_experiment
from .errors import CalibrationFailedError

TARGET = (44, 50)
AVGB_WINDOW = (40, 46)

DEFAULT_GRID = (
    (0.001, 0.002, 0.004, 0.006, 0.008),
    (0.01, 0.02, 0.03, 0.05, 0.08, 0.12, 0.2, 0.3, 0.4),
    (0.005, 0.01, 0.02, 0.05, 0.08),
)


@dataclass(frozen=True)
class Candidate:
    scales: tuple[float, float, float]
    fedavg_b: float
    fedbo: float
    score: float
    feasible: bool


def survives_bootstrap(scales, delta: float) -> bool:
    r_scale, _, a_scale = scales
    worst_cost = STANDBY_RANGE[1] * r_scale + COMM_RANGE[1] * a_scale
    return LOW_B0[0] - worst_cost > delta


def median_lifespan(cfg: ExperimentConfig, strategy: str, seeds: Sequence[int]) -> float:
    return statistics.median(
        run_experiment(cfg.replace(strategy=strategy, seed=s, energy_only=True)).rounds_lasted
        for s in seeds
    )


def evaluate_point(cfg, scales, seeds, target=TARGET, window=AVGB_WINDOW) -> Candidate:
    point = cfg.replace(r_scale=scales[0], s_scale=scales[1], a_scale=scales[2])
    avgb = median_lifespan(point, "fedavg_b", seeds)
    bo = median_lifespan(point, "fedbo", seeds)
    score = abs(avgb - target[0]) + abs(bo - target[1])
    feasible = (
        window[0] <= avgb <= window[1]
        and bo == cfg.max_rounds
        and survives_bootstrap(scales, cfg.delta)
    )
    return Candidate(tuple(scales), avgb, bo, score, feasible)


def calibrate(
    cfg: ExperimentConfig,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    grid: Iterable[Sequence[float]] = DEFAULT_GRID,
    target=TARGET,
    window=AVGB_WINDOW,
) -> tuple[Candidate, list[Candidate]]:
    """Best feasible grid point (ties: first in grid order) and every candidate."""
    candidates = [
        evaluate_point(cfg, scales, seeds, target, window)
        for scales in itertools.product(*grid)
    ]
    feasible = [c for c in candidates if c.feasible]
    if not feasible:
        best = min(candidates, key=lambda c: c.score)
        raise CalibrationFailedError(
            f"no feasible scales in grid; best candidate {best.scales} gives "
            f"FedAvg-B={best.fedavg_b}, FedBO={best.fedbo} (score {best.score})",
            best,
        )
    return min(feasible, key=lambda c: c.score), candidates
