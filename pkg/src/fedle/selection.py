"""Client selection policies: FedAvg-B, FedBO and FedLE.

All three draw ``m`` distinct clients from the alive set without replacement
and are pure functions of the context and the supplied generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .energy import BatteryParams
from .errors import InsufficientClientsError, InvalidConfigError
from .similarity import ClusterModel

STRATEGIES = ("fedavg_b", "fedbo", "fedle")

# floor weight so zero-capacity / zero-headroom clients stay drawable
EPS = 1e-6


@dataclass
class SelectionContext:
    round: int
    alive: list[int]
    battery_levels: np.ndarray
    battery_params: Sequence[BatteryParams] = ()
    clusters: ClusterModel | None = None
    m: int = 2
    delta: float = 0.2
    w_maj: float = 0.2
    capacities: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.m < 1:
            raise InvalidConfigError(f"m must be >= 1, got {self.m}")
        if not 0.0 <= self.w_maj <= 1.0:
            raise InvalidConfigError(f"w_maj must be in [0, 1], got {self.w_maj}")


def _check_enough(ctx: SelectionContext) -> None:
    if len(ctx.alive) < ctx.m:
        raise InsufficientClientsError(
            f"round {ctx.round}: {len(ctx.alive)} alive clients, {ctx.m} required"
        )


def weighted_index(rng: np.random.Generator, weights: np.ndarray) -> int:
    """One draw from the categorical distribution proportional to ``weights``."""
    cdf = np.cumsum(weights)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), len(weights) - 1)


def weighted_sample_without_replacement(
    rng: np.random.Generator, items: Sequence[int], weights: Sequence[float], m: int
) -> list[int]:
    """Successive sampling: draw, remove, renormalise, repeat ``m`` times."""
    items = list(items)
    weights = np.asarray(weights, dtype=np.float64).copy()
    chosen = []
    for _ in range(m):
        i = weighted_index(rng, weights)
        chosen.append(items.pop(i))
        weights = np.delete(weights, i)
    return chosen


def select_uniform(ctx: SelectionContext, rng: np.random.Generator) -> list[int]:
    _check_enough(ctx)
    picks = rng.choice(len(ctx.alive), size=ctx.m, replace=False)
    return [ctx.alive[i] for i in picks]


def capacity(params: BatteryParams, delta: float) -> int:
    """Selected rounds a client could afford from its initial level."""
    cost = params.round_cost
    if cost <= 0:
        raise InvalidConfigError("round cost must be positive to define capacity")
    # tiny slack so exact multiples are not lost to float rounding
    return max(0, math.floor((params.b0 - delta) / cost + 1e-9))


def capacities(params: Sequence[BatteryParams], delta: float) -> np.ndarray:
    return np.array([capacity(p, delta) for p in params], dtype=np.int64)


def select_battery_only(
    ctx: SelectionContext, capacities: np.ndarray, rng: np.random.Generator
) -> list[int]:
    _check_enough(ctx)
    caps = np.asarray([capacities[c] for c in ctx.alive], dtype=np.float64)
    if not np.any(caps > 0):
        return select_uniform(ctx, rng)
    weights = np.where(caps > 0, caps, EPS)
    return weighted_sample_without_replacement(rng, ctx.alive, weights, ctx.m)


def select_fedle(ctx: SelectionContext, rng: np.random.Generator) -> list[int]:
    """Pick a cluster, then a client inside it, ``m`` times.

    The majority cluster carries weight ``w_maj`` and every other non-empty
    cluster weight 1. Inside a cluster a client's weight is its headroom
    above the critical level.
    """
    if ctx.clusters is None:
        raise InvalidConfigError("FedLE selection needs a cluster model")
    _check_enough(ctx)
    labels = ctx.clusters.labels
    pools: dict[int, list[int]] = {}
    for cid in ctx.alive:
        pools.setdefault(int(labels[cid]), []).append(cid)
    chosen = []
    for _ in range(ctx.m):
        open_clusters = sorted(c for c, members in pools.items() if members)
        cw = np.array(
            [ctx.w_maj if c == ctx.clusters.majority_cluster else 1.0 for c in open_clusters]
        )
        if cw.sum() <= 0:
            cw = np.ones_like(cw)
        cluster = open_clusters[weighted_index(rng, cw)]
        members = pools[cluster]
        headroom = np.array([ctx.battery_levels[c] - ctx.delta for c in members])
        pick = members.pop(weighted_index(rng, np.maximum(headroom, EPS)))
        chosen.append(pick)
    return chosen


def select(strategy: str, ctx: SelectionContext, rng: np.random.Generator) -> list[int]:
    if strategy == "fedavg_b":
        return select_uniform(ctx, rng)
    if strategy == "fedbo":
        caps = ctx.capacities
        if caps is None:
            caps = capacities(ctx.battery_params, ctx.delta)
        return select_battery_only(ctx, caps, rng)
    if strategy == "fedle":
        return select_fedle(ctx, rng)
    raise InvalidConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
