import json

import numpy as np
import pytest

from fedle import engine, nn
from fedle.config import ExperimentConfig
from fedle.engine import ExperimentHistory, Simulation, assign_roles, run_experiment
from fedle.errors import ContractViolation, InvalidInputError, ShapeError
from fedle.nn import Batch, ModelParams
from fedle.training import aggregate, local_train


def scalar_model(v):
    return ModelParams(((np.array([[float(v)]]), np.array([0.0])),))


def tiny_batch(n=10):
    rng = np.random.default_rng(0)
    return Batch(rng.random((n, 3)), rng.integers(0, 2, n))


def test_local_train_zero_epochs_returns_global():
    model = nn.init_model([3, 4, 2], 0)
    out, n = local_train(tiny_batch(), model, 0, 0.1, 5, np.random.default_rng(0))
    assert out is model and n == 10


def test_local_train_step_count(monkeypatch):
    calls = []
    real = nn.sgd_step
    monkeypatch.setattr(nn, "sgd_step", lambda *a: calls.append(1) or real(*a))
    local_train(tiny_batch(10), nn.init_model([3, 2], 0), 1, 0.1, 5, np.random.default_rng(0))
    assert len(calls) == 2


def test_local_train_deterministic_and_pure():
    model = nn.init_model([3, 4, 2], 0)
    before = nn.flatten(model).copy()
    a, _ = local_train(tiny_batch(), model, 2, 0.1, 3, np.random.default_rng(7))
    b, _ = local_train(tiny_batch(), model, 2, 0.1, 3, np.random.default_rng(7))
    assert np.array_equal(nn.flatten(a), nn.flatten(b))
    assert np.array_equal(nn.flatten(model), before)


def test_local_train_empty_partition():
    with pytest.raises(ContractViolation):
        local_train(Batch(np.zeros((0, 3)), np.zeros(0, dtype=int)), nn.init_model([3, 2], 0), 1,
                    0.1, 5, np.random.default_rng(0))


def test_aggregate_examples():
    m = nn.init_model([3, 4, 2], 0)
    assert np.array_equal(nn.flatten(aggregate([(m, 5)])), nn.flatten(m))
    assert aggregate([(scalar_model(0), 1), (scalar_model(4), 3)]).layers[0][0][0, 0] == 3.0
    neg = m.map(lambda a: -a)
    assert np.allclose(nn.flatten(aggregate([(m, 2), (neg, 2)])), 0.0)


def test_aggregate_errors():
    with pytest.raises(InvalidInputError):
        aggregate([])
    with pytest.raises(ShapeError):
        aggregate([(nn.init_model([3, 2], 0), 1), (nn.init_model([3, 3], 0), 1)])


def test_assign_roles_exact_count():
    low = assign_roles(40, 0.3, np.random.default_rng(0))
    assert low.sum() == 12


def test_energy_contract_per_round(small_cfg):
    for strategy in ("fedavg_b", "fedbo", "fedle"):
        sim = Simulation(small_cfg.replace(strategy=strategy))
        if strategy == "fedle":
            sim.bootstrap()
        before = sim.levels()
        alive = set(sim.alive_clients())
        rec = sim.run_round()
        after = sim.levels()
        for c, p in enumerate(sim.params):
            if c not in alive:
                assert after[c] == before[c]
                continue
            expected = max(0.0, before[c] - p.r - ((p.s + p.a) if c in rec.selected else 0.0))
            assert after[c] == pytest.approx(expected, abs=1e-15)


def test_bootstrap_charges_once(small_cfg):
    sim = Simulation(small_cfg)
    start = sim.levels()
    first = sim.bootstrap()
    charged = start - sim.levels()
    assert np.allclose(charged, [p.r + p.a for p in sim.params], atol=1e-15)
    again = sim.bootstrap()
    assert again[0] is first[0] and again[1] is first[1]
    assert np.array_equal(start - sim.levels(), charged)


def test_bootstrap_after_first_round_rejected(small_cfg):
    sim = Simulation(small_cfg.replace(strategy="fedavg_b"))
    sim.run_round()
    with pytest.raises(ContractViolation):
        sim.bootstrap()


def test_ledger_exact(small_cfg):
    for strategy in ("fedavg_b", "fedbo", "fedle"):
        h = run_experiment(small_cfg.replace(strategy=strategy, max_rounds=30))
        b0 = np.array([p["b0"] for p in h.battery_params])
        assert np.max(np.abs(b0 - np.array(h.final_battery) - np.array(h.charged))) <= 1e-12


def test_selected_clients_were_alive(small_cfg):
    for strategy in ("fedavg_b", "fedbo", "fedle"):
        h = run_experiment(small_cfg.replace(strategy=strategy, max_rounds=50))
        for rec in h.rounds:
            assert len(rec.selected) == small_cfg.clients_per_round
            assert all(rec.battery_snapshot[c] > small_cfg.delta for c in rec.selected)
            assert rec.alive_count == sum(v > small_cfg.delta for v in rec.battery_snapshot)


def test_dead_clients_stay_dead(small_cfg):
    h = run_experiment(small_cfg.replace(strategy="fedavg_b", max_rounds=50))
    for c, died in enumerate(h.death_rounds):
        if died is None:
            continue
        later = [r for r in h.rounds if r.round > died]
        assert all(c not in r.selected for r in later)
        assert len({r.battery_snapshot[c] for r in later}) <= 1


def test_fedavg_b_never_touches_similarity(small_cfg, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("similarity used")

    for name in ("client_vectors", "build_similarity_matrix", "cluster_clients"):
        monkeypatch.setattr(engine, name, boom)
    h = run_experiment(small_cfg.replace(strategy="fedavg_b"))
    assert h.similarity is None


def test_evaluation_uses_fixed_test_set(small_cfg, monkeypatch):
    seen = []
    real = nn.evaluate
    monkeypatch.setattr(nn, "evaluate", lambda model, test: seen.append(id(test)) or real(model, test))
    run_experiment(small_cfg.replace(strategy="fedavg_b"))
    assert len(seen) == small_cfg.max_rounds and len(set(seen)) == 1


def test_max_rounds_one(small_cfg):
    h = run_experiment(small_cfg.replace(max_rounds=1))
    assert h.rounds_lasted == 1 and len(h.rounds) == 1


def test_history_bitwise_deterministic(small_cfg):
    a = run_experiment(small_cfg).to_json()
    b = run_experiment(small_cfg).to_json()
    assert a == b


def test_history_round_trip(small_cfg):
    h = run_experiment(small_cfg)
    again = ExperimentHistory.from_json(h.to_json())
    assert again.to_json() == h.to_json()
    data = json.loads(h.to_json())
    assert data["schema_version"] == 1
    assert "wall_time" not in data["rounds"][0]


def test_rounds_csv(small_cfg):
    h = run_experiment(small_cfg)
    lines = h.rounds_csv().splitlines()
    assert lines[0] == "round,selected,test_accuracy,alive_count,deaths"
    assert len(lines) == h.rounds_lasted + 1


def test_energy_only_matches_full_lifespan(small_cfg):
    for strategy in ("fedavg_b", "fedbo", "fedle"):
        for seed in range(3):
            cfg = small_cfg.replace(strategy=strategy, seed=seed, max_rounds=50)
            full = run_experiment(cfg)
            light = run_experiment(cfg.replace(energy_only=True))
            assert light.rounds_lasted == full.rounds_lasted
            assert [r.selected for r in light.rounds] == [r.selected for r in full.rounds]
            assert light.final_accuracy is None


def test_stop_on_network_death(small_cfg):
    cfg = small_cfg.replace(strategy="fedavg_b", s_scale=1.0, a_scale=1.0, max_rounds=50)
    h = run_experiment(cfg)
    assert h.stop_reason == "network_death" and h.rounds_lasted < 50
    dead = sum(v <= cfg.delta for v in h.final_battery)
    assert dead / cfg.client_count >= cfg.dead_fraction_stop


def test_stop_on_insufficient_clients(small_cfg):
    cfg = small_cfg.replace(strategy="fedavg_b", fraction=1.0, dead_fraction_stop=1.0,
                            s_scale=1.0, a_scale=1.0, max_rounds=50)
    h = run_experiment(cfg)
    assert h.stop_reason == "insufficient_clients"


def test_fedle_similarity_diagnostics(small_cfg):
    h = run_experiment(small_cfg.replace(diagnostics=True))
    sim = h.similarity
    k = small_cfg.client_count
    assert np.array(sim["initial_matrix"]).shape == (k, k)
    assert np.array(sim["final_matrix"]).shape == (k, k)
    assert len(sim["labels"]) == k and len(sim["points"]) == k
    a, b = sim["anchor_pair"]
    assert a < b


def test_default_fedbo_reaches_cap():
    h = run_experiment(ExperimentConfig(strategy="fedbo", energy_only=True))
    assert h.rounds_lasted == 50


def test_sweep_seed_isolation(small_cfg):
    # changing k only changes clustering: partition, roles and batteries match
    a = Simulation(small_cfg.replace(cluster_count=2))
    b = Simulation(small_cfg.replace(cluster_count=4))
    assert a.params == b.params
    assert all(np.array_equal(x, y) for x, y in zip(a.partition.client_indices, b.partition.client_indices))
    ma, _ = a.bootstrap()
    mb, _ = b.bootstrap()
    assert np.array_equal(ma.scores, mb.scores)
