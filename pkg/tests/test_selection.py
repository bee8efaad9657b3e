import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedle.energy import BatteryParams
from fedle.errors import InsufficientClientsError, InvalidConfigError
from fedle.selection import (
    SelectionContext,
    capacity,
    select,
    select_battery_only,
    select_fedle,
    select_uniform,
    weighted_sample_without_replacement,
)
from fedle.similarity import ClusterModel

from selection_oracle import ORACLES, empirical, fedle_dist, max_deviation, random_context


def clusters_of(labels, majority):
    labels = np.asarray(labels)
    return ClusterModel(labels, np.zeros((labels.max() + 1, 2)), majority)


def ctx_with(alive, levels, m=1, **kw):
    return SelectionContext(round=1, alive=list(alive), battery_levels=np.asarray(levels, float), m=m, **kw)


def test_uniform_forced_and_error():
    assert select_uniform(ctx_with([3], [0, 0, 0, 0.5]), np.random.default_rng(0)) == [3]
    with pytest.raises(InsufficientClientsError):
        select_uniform(ctx_with([3], [0, 0, 0, 0.5], m=2), np.random.default_rng(0))


def test_uniform_marginals():
    ctx = ctx_with(range(4), [0.5] * 4, m=2)
    rng = np.random.default_rng(0)
    counts = np.zeros(4)
    for _ in range(10_000):
        counts[select_uniform(ctx, rng)] += 1
    assert np.all(np.abs(counts / 10_000 - 0.5) <= 0.02)


@pytest.mark.parametrize(
    "b0, cost, expected", [(0.9, 0.00725, 96), (0.2, 0.01, 0), (0.25, 0.06, 0), (0.3, 0.05, 2)]
)
def test_capacity(b0, cost, expected):
    assert capacity(BatteryParams(b0, cost, 0.0, 0.0), 0.2) == expected


def test_battery_only_ratio():
    ctx = ctx_with([0, 1], [0.9, 0.9])
    rng = np.random.default_rng(0)
    picks = [select_battery_only(ctx, np.array([90, 10]), rng)[0] for _ in range(10_000)]
    assert picks.count(0) / 10_000 == pytest.approx(0.9, abs=0.02)


def test_battery_only_all_zero_falls_back_to_uniform():
    ctx = ctx_with([0, 1, 2], [0.3] * 3, m=2)
    a = select_battery_only(ctx, np.zeros(3, dtype=int), np.random.default_rng(4))
    b = select_uniform(ctx, np.random.default_rng(4))
    assert a == b


def test_battery_only_single_client():
    assert select_battery_only(ctx_with([5], [0] * 5 + [0.8]), np.arange(6), np.random.default_rng(0)) == [5]


def test_fedle_first_draw_cluster_probabilities():
    labels = [0] * 6 + [1, 1, 2, 2]
    ctx = ctx_with(range(10), [0.6] * 10, clusters=clusters_of(labels, 0), w_maj=0.2)
    dist = fedle_dist(ctx)
    p_cluster = [sum(p for s, p in dist.items() if labels[next(iter(s))] == k) for k in range(3)]
    assert p_cluster == pytest.approx([0.2 / 2.2, 1 / 2.2, 1 / 2.2], abs=1e-12)
    rng = np.random.default_rng(0)
    hits = np.zeros(3)
    for _ in range(10_000):
        hits[labels[select_fedle(ctx, rng)[0]]] += 1
    assert hits / 10_000 == pytest.approx([0.0909, 0.4545, 0.4545], abs=0.02)


def test_fedle_within_cluster_headroom():
    ctx = ctx_with([0, 1], [0.9, 0.3], clusters=clusters_of([0, 0], 0), delta=0.2)
    exact = fedle_dist(ctx)
    assert exact[frozenset([0])] == pytest.approx(0.875)
    rng = np.random.default_rng(1)
    share = sum(select_fedle(ctx, rng)[0] == 0 for _ in range(10_000)) / 10_000
    assert share == pytest.approx(0.875, abs=0.02)


def test_fedle_majority_only_still_selectable():
    ctx = ctx_with([0, 1, 2], [0.5, 0.5, 0.5, 0.0, 0.0], m=2,
                   clusters=clusters_of([0, 0, 0, 1, 1], 0), w_maj=0.0)
    chosen = select_fedle(ctx, np.random.default_rng(0))
    assert len(set(chosen)) == 2 and set(chosen) <= {0, 1, 2}


def test_fedle_needs_clusters():
    with pytest.raises(InvalidConfigError):
        select_fedle(ctx_with([0, 1], [0.5, 0.5]), np.random.default_rng(0))


def test_fedle_cluster_mass_independent_of_battery():
    # cluster 1 all high battery, cluster 2 all low: the rule gives both the same
    # cluster weight, so their total selection frequencies are equal
    labels = [0, 0, 0, 1, 1, 2, 2]
    levels = [0.6, 0.6, 0.6, 0.9, 0.85, 0.25, 0.3]
    ctx = ctx_with(range(7), levels, m=1, clusters=clusters_of(labels, 0))
    exact = fedle_dist(ctx)
    mass = lambda members: sum(exact[frozenset([c])] for c in members)
    assert mass([3, 4]) == pytest.approx(mass([5, 6]), abs=1e-12)
    assert max_deviation(exact, empirical("fedle", ctx, 10_000, 0)) <= 0.02


def test_fedle_protects_low_battery_members_of_mixed_cluster():
    labels = [0, 0, 0, 1, 1, 1, 1]
    levels = [0.6, 0.6, 0.6, 0.9, 0.85, 0.25, 0.3]
    ctx = ctx_with(range(7), levels, m=2, clusters=clusters_of(labels, 0))
    exact = fedle_dist(ctx)
    freq = lambda c: sum(p for s, p in exact.items() if c in s)
    assert min(freq(3), freq(4)) > max(freq(5), freq(6))
    obs = empirical("fedle", ctx, 10_000, 0)
    assert max_deviation(exact, obs) <= 0.02
    hits = lambda c: sum(p for s, p in obs.items() if c in s)
    assert min(hits(3), hits(4)) > max(hits(5), hits(6))


def test_unknown_strategy():
    with pytest.raises(InvalidConfigError):
        select("random", ctx_with([0], [0.5]), np.random.default_rng(0))


def test_context_validation():
    with pytest.raises(InvalidConfigError):
        ctx_with([0], [0.5], m=0)
    with pytest.raises(InvalidConfigError):
        ctx_with([0], [0.5], w_maj=1.5)


def test_weighted_sample_distinct():
    out = weighted_sample_without_replacement(np.random.default_rng(0), [7, 8, 9], [1, 0, 1], 3)
    assert sorted(out) == [7, 8, 9]


@pytest.mark.parametrize("strategy", list(ORACLES))
def test_distribution_matches_enumeration(strategy):
    rng = np.random.default_rng(11)
    for trial in range(4):
        ctx = random_context(rng)
        exact = ORACLES[strategy](ctx)
        assert sum(exact.values()) == pytest.approx(1.0)
        assert max_deviation(exact, empirical(strategy, ctx, 4000, trial)) <= 0.03


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(ORACLES)))
def test_selection_returns_m_distinct_alive(seed, strategy):
    rng = np.random.default_rng(seed)
    ctx = random_context(rng, k_max=10, m_max=4)
    chosen = select(strategy, ctx, rng)
    assert len(chosen) == ctx.m == len(set(chosen))
    assert all(ctx.battery_levels[c] > ctx.delta for c in chosen)
    assert set(chosen) <= set(ctx.alive)


def test_selection_deterministic():
    ctx = random_context(np.random.default_rng(5))
    for strategy in ORACLES:
        a = select(strategy, ctx, np.random.default_rng(9))
        b = select(strategy, ctx, np.random.default_rng(9))
        assert a == b
