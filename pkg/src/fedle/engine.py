"""Synchronous federated training loop with battery-constrained clients.

A :class:`Simulation` owns one run: the data partition, every client's battery,
the global model and the random streams. Each round it selects clients,
trains them from the current global model, averages their updates, charges
batteries and evaluates the new global model on a fixed test set. The run
ends at ``max_rounds``, when too many clients are dead, or when fewer than
``m`` clients remain.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np

from . import energy, nn
from .config import ExperimentConfig
from .data import Dataset, gen_synthetic, load_mnist, partition_noniid, train_test_split
from .energy import BatteryParams, BatteryState
from .errors import ContractViolation, InsufficientClientsError
from .selection import SelectionContext, capacities, select
from .similarity import (
    ClusterModel,
    SimilarityMatrix,
    build_similarity_matrix,
    client_vectors,
    cluster_clients,
)
from .training import aggregate, local_train

logger = logging.getLogger(__name__)

HISTORY_SCHEMA_VERSION = 1

# distinct tag for the diagnostic rebuild so it never reuses a training stream
_DIAGNOSTIC_ROUND = 2**31 - 1


@dataclass
class RoundRecord:
    round: int
    selected: list[int]
    test_accuracy: float | None
    alive_count: int
    battery_snapshot: list[float]
    deaths: list[int] = field(default_factory=list)
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        # timings vary run to run and would break byte-identical histories
        out.pop("wall_time")
        return out


@dataclass
class ExperimentHistory:
    config: dict[str, Any]
    rounds: list[RoundRecord]
    rounds_lasted: int
    final_accuracy: float | None
    stop_reason: str
    low_power: list[int]
    battery_params: list[dict[str, float]]
    final_battery: list[float]
    charged: list[float]
    death_rounds: list[int | None]
    similarity: dict[str, Any] | None = None

    def accuracy_curve(self) -> list[float]:
        return [r.test_accuracy for r in self.rounds]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": HISTORY_SCHEMA_VERSION,
            "config": self.config,
            "rounds_lasted": self.rounds_lasted,
            "final_accuracy": self.final_accuracy,
            "stop_reason": self.stop_reason,
            "low_power": self.low_power,
            "battery_params": self.battery_params,
            "final_battery": self.final_battery,
            "charged": self.charged,
            "death_rounds": self.death_rounds,
            "similarity": self.similarity,
            "rounds": [r.to_dict() for r in self.rounds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentHistory":
        return cls(
            config=data["config"],
            rounds=[RoundRecord(**r) for r in data["rounds"]],
            rounds_lasted=data["rounds_lasted"],
            final_accuracy=data["final_accuracy"],
            stop_reason=data["stop_reason"],
            low_power=data["low_power"],
            battery_params=data["battery_params"],
            final_battery=data["final_battery"],
            charged=data["charged"],
            death_rounds=data["death_rounds"],
            similarity=data.get("similarity"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentHistory":
        return cls.from_dict(json.loads(text))

    def rounds_csv(self) -> str:
        lines = ["round,selected,test_accuracy,alive_count,deaths"]
        for r in self.rounds:
            acc = "" if r.test_accuracy is None else repr(r.test_accuracy)
            sel = " ".join(str(c) for c in r.selected)
            dead = " ".join(str(c) for c in r.deaths)
            lines.append(f"{r.round},{sel},{acc},{r.alive_count},{dead}")
        return "\n".join(lines) + "\n"


@lru_cache(maxsize=8)
def _synthetic_split(classes, dim, per_class, spread, data_seed, test_fraction):
    full = gen_synthetic(classes, dim, per_class, spread, data_seed)
    return train_test_split(full, test_fraction, data_seed)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Training and central test set for a config."""
    if cfg.dataset == "synthetic":
        return _synthetic_split(
            cfg.synthetic_classes, cfg.synthetic_dim, cfg.synthetic_per_class,
            cfg.synthetic_spread, cfg.data_seed, cfg.test_fraction,
        )
    train = load_mnist(cfg.mnist_images, cfg.mnist_labels)
    if cfg.mnist_test_images and cfg.mnist_test_labels:
        return train, load_mnist(cfg.mnist_test_images, cfg.mnist_test_labels)
    return train_test_split(train, cfg.test_fraction, cfg.data_seed)


def assign_roles(client_count: int, low_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of low-power clients, a seeded random subset of exact size."""
    n_low = int(round(client_count * low_fraction))
    low = np.zeros(client_count, dtype=bool)
    low[rng.permutation(client_count)[:n_low]] = True
    return low


class Simulation:
    def __init__(self, cfg: ExperimentConfig, datasets: tuple[Dataset, Dataset] | None = None):
        self.cfg = cfg
        self.m = cfg.clients_per_round
        train, test = datasets if datasets is not None else load_datasets(cfg)
        self.test = test.as_batch()
        self.partition = partition_noniid(
            train, cfg.client_count, cfg.shard_clients, cfg.shard_size,
            cfg.majority_class, cfg.stream_seed("partition"),
        )
        self.client_data = [train.subset(ix) for ix in self.partition.client_indices]
        dims = [train.dim, *cfg.hidden_dims, train.class_count]
        self.model = nn.init_model(dims, cfg.stream_seed("init"))
        self.initial_model = self.model

        battery_rng = np.random.default_rng(cfg.stream_seed("battery"))
        self.low_power = assign_roles(cfg.client_count, cfg.low_power_fraction, battery_rng)
        self.params: list[BatteryParams] = [
            energy.draw_battery_params("low" if low else "high", cfg.battery_scales, battery_rng)
            for low in self.low_power
        ]
        self.states: list[BatteryState] = [energy.initial_state(p, cfg.delta) for p in self.params]
        self.charged = np.zeros(cfg.client_count)
        self.capacities = capacities(self.params, cfg.delta)
        self.selection_rng = np.random.default_rng(cfg.stream_seed("selection"))
        self.train_seed = cfg.stream_seed("train")
        self.records: list[RoundRecord] = []
        self.matrix: SimilarityMatrix | None = None
        self.clusters: ClusterModel | None = None
        self._bootstrapped = False

    # -- helpers ---------------------------------------------------------
    def _train_rng(self, round_no: int, client: int) -> np.random.Generator:
        return np.random.default_rng([self.train_seed, round_no, client])

    def levels(self) -> np.ndarray:
        return np.array([st.level for st in self.states])

    def alive_clients(self) -> list[int]:
        return [c for c, st in enumerate(self.states) if st.alive]

    def _charge(self, client: int, selected: bool, extra: int, round_no: int) -> None:
        st = self.states[client]
        new = energy.step_battery(st, self.params[client], selected, extra, self.cfg.delta)
        self.charged[client] += st.level - new.level
        if not new.alive:
            new = BatteryState(new.level, False, round_no)
        self.states[client] = new

    def similarity_snapshot(self, model: nn.ModelParams, round_no: int) -> SimilarityMatrix:
        """Matrix from every client training one epoch on ``model``; no battery cost."""
        cfg = self.cfg
        rngs = [self._train_rng(round_no, c) for c in range(cfg.client_count)]
        vectors = client_vectors(
            self.client_data, model, rngs, 1, cfg.learning_rate, cfg.batch_size,
            cfg.partial_weights,
        )
        return build_similarity_matrix(vectors, cfg.metric)

    # -- protocol --------------------------------------------------------
    def bootstrap(self) -> tuple[SimilarityMatrix, ClusterModel]:
        """One-time similarity matrix and clustering; charges r + a per client once."""
        if self._bootstrapped:
            return self.matrix, self.clusters
        if self.records:
            raise ContractViolation("bootstrap must run before the first round")
        if not all(st.alive for st in self.states):
            raise ContractViolation("every client must be alive for the bootstrap upload")
        cfg = self.cfg
        self.matrix = self.similarity_snapshot(self.model, 0)
        self.clusters = cluster_clients(
            self.matrix, cfg.cluster_count, cfg.stream_seed("cluster"), cfg.cluster_space
        )
        for c in range(cfg.client_count):
            self._charge(c, selected=False, extra=1, round_no=0)
        self._bootstrapped = True
        return self.matrix, self.clusters

    def network_alive(self) -> bool:
        return energy.network_alive(self.states, self.cfg.delta, self.cfg.dead_fraction_stop)

    def run_round(self) -> RoundRecord:
        cfg = self.cfg
        round_no = len(self.records) + 1
        started = time.perf_counter()
        alive = self.alive_clients()
        snapshot = self.levels()
        ctx = SelectionContext(
            round=round_no,
            alive=alive,
            battery_levels=snapshot,
            battery_params=self.params,
            clusters=self.clusters,
            m=self.m,
            delta=cfg.delta,
            w_maj=cfg.w_maj,
            capacities=self.capacities,
        )
        selected = sorted(select(cfg.strategy, ctx, self.selection_rng))

        accuracy = None
        if not cfg.energy_only:
            updates = [
                local_train(
                    self.client_data[c], self.model, cfg.local_epochs, cfg.learning_rate,
                    cfg.batch_size, self._train_rng(round_no, c),
                )
                for c in selected
            ]
            self.model = aggregate(updates)
            accuracy = nn.evaluate(self.model, self.test)

        chosen = set(selected)
        deaths = []
        for c in alive:
            self._charge(c, c in chosen, 0, round_no)
            if not self.states[c].alive:
                deaths.append(c)
        record = RoundRecord(
            round=round_no,
            selected=selected,
            test_accuracy=accuracy,
            alive_count=len(alive),
            battery_snapshot=[float(v) for v in snapshot],
            deaths=deaths,
            wall_time=time.perf_counter() - started,
        )
        self.records.append(record)
        return record

    def run(self) -> ExperimentHistory:
        cfg = self.cfg
        initial_matrix = None
        if cfg.strategy == "fedle":
            initial_matrix, _ = self.bootstrap()
        elif cfg.diagnostics:
            initial_matrix = self.similarity_snapshot(self.initial_model, 0)

        stop_reason = "max_rounds"
        while len(self.records) < cfg.max_rounds:
            if not self.network_alive():
                stop_reason = "network_death"
                break
            try:
                self.run_round()
            except InsufficientClientsError as exc:
                logger.info("stopping: %s", exc)
                stop_reason = "insufficient_clients"
                break
        if stop_reason == "max_rounds" and not self.network_alive():
            stop_reason = "network_death"

        similarity = None
        if self.clusters is not None or cfg.diagnostics:
            similarity = {}
            if initial_matrix is not None:
                similarity["initial_matrix"] = initial_matrix.scores.tolist()
                similarity["initial_row_sums"] = initial_matrix.row_sums.tolist()
            if self.clusters is not None:
                similarity["labels"] = self.clusters.labels.tolist()
                similarity["majority_cluster"] = self.clusters.majority_cluster
                similarity["anchor_pair"] = list(self.clusters.anchor_pair)
                similarity["points"] = self.clusters.points.tolist()
            if cfg.diagnostics:
                final = self.similarity_snapshot(self.model, _DIAGNOSTIC_ROUND)
                similarity["final_matrix"] = final.scores.tolist()

        if self.records and self.records[-1].test_accuracy is not None:
            final_accuracy = self.records[-1].test_accuracy
        elif cfg.energy_only:
            final_accuracy = None
        else:
            final_accuracy = nn.evaluate(self.model, self.test)

        return ExperimentHistory(
            config=cfg.to_dict(),
            rounds=self.records,
            rounds_lasted=len(self.records),
            final_accuracy=final_accuracy,
            stop_reason=stop_reason,
            low_power=[int(c) for c in np.flatnonzero(self.low_power)],
            battery_params=[asdict(p) for p in self.params],
            final_battery=[float(v) for v in self.levels()],
            charged=[float(v) for v in self.charged],
            death_rounds=[st.death_round for st in self.states],
            similarity=similarity,
        )


def run_experiment(cfg: ExperimentConfig, datasets=None) -> ExperimentHistory:
    return Simulation(cfg, datasets).run()
