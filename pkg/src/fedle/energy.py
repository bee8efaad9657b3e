"""Per-client battery accounting.

Each round a client's level drops by its standby cost ``r``; a client that
uploads a model also pays ``s`` (upload) and ``a`` (download and other
traffic). A client whose level is at or below the critical level is dead and
takes no further part.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation, InvalidConfigError

DEFAULT_DELTA = 0.2

LOW_B0 = (0.245, 0.265)
HIGH_B0 = (0.895, 0.905)
STANDBY_RANGE = (0.1, 0.15)
UPLOAD_RANGE = (0.4, 0.5)
COMM_RANGE = (0.24, 0.25)


@dataclass(frozen=True)
class BatteryParams:
    b0: float
    r: float
    s: float
    a: float

    def __post_init__(self):
        for name in ("b0", "r", "s", "a"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidConfigError(f"battery parameter {name}={value} outside [0, 1]")

    @property
    def round_cost(self) -> float:
        """Cost of one round in which the client is selected."""
        return self.r + self.s + self.a


@dataclass(frozen=True)
class BatteryState:
    level: float
    alive: bool = True
    death_round: int | None = None


def draw_battery_params(role: str, scale=(1.0, 1.0, 1.0), rng=None) -> BatteryParams:
    """Draw one client's parameters; ``scale`` multiplies the (r, s, a) ranges."""
    r_scale, s_scale, a_scale = scale
    if min(scale) <= 0:
        raise InvalidConfigError(f"battery scales must be > 0, got {scale}")
    if role == "low":
        b_range = LOW_B0
    elif role == "high":
        b_range = HIGH_B0
    else:
        raise InvalidConfigError(f"role must be 'low' or 'high', got {role!r}")
    rng = rng if rng is not None else np.random.default_rng()
    b0 = rng.uniform(*b_range)
    r = rng.uniform(*STANDBY_RANGE) * r_scale
    s = rng.uniform(*UPLOAD_RANGE) * s_scale
    a = rng.uniform(*COMM_RANGE) * a_scale
    return BatteryParams(float(b0), float(r), float(s), float(a))


def initial_state(params: BatteryParams, delta: float = DEFAULT_DELTA) -> BatteryState:
    alive = params.b0 > delta
    return BatteryState(params.b0, alive, None if alive else 0)


def charge(params: BatteryParams, selected: bool, extra_comm_events: int = 0) -> float:
    cost = params.r
    if selected:
        cost += params.s + params.a
    return cost + extra_comm_events * params.a


def step_battery(
    state: BatteryState,
    params: BatteryParams,
    selected: bool,
    extra_comm_events: int = 0,
    delta: float = DEFAULT_DELTA,
) -> BatteryState:
    """Advance one round. ``death_round`` is left for the caller to fill in."""
    if not state.alive:
        raise ContractViolation("cannot step a dead client")
    if extra_comm_events < 0:
        raise InvalidConfigError("extra_comm_events must be >= 0")
    level = max(0.0, state.level - charge(params, selected, extra_comm_events))
    return BatteryState(level, level > delta, state.death_round)


def network_alive(states: Sequence[BatteryState], delta: float, dead_fraction_stop: float) -> bool:
    if not len(states):
        raise InvalidConfigError("network has no clients")
    dead = sum(1 for st in states if st.level <= delta)
    return dead / len(states) < dead_fraction_stop
