import numpy as np
import pytest

from fedle.config import ExperimentConfig
from fedle.nn import ModelParams


def finite_difference_grads(loss_fn, model: ModelParams, eps: float = 1e-5) -> ModelParams:
    """Central differences of ``loss_fn`` w.r.t. every parameter of ``model``."""
    layers = []
    for li, (w, b) in enumerate(model.layers):
        out = []
        for which, arr in enumerate((w, b)):
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                vals = []
                for sign in (1, -1):
                    bumped = [(ww.copy(), bb.copy()) for ww, bb in model.layers]
                    bumped[li][which][idx] += sign * eps
                    vals.append(loss_fn(ModelParams(tuple(bumped))))
                g[idx] = (vals[0] - vals[1]) / (2 * eps)
            out.append(g)
        layers.append(tuple(out))
    return ModelParams(tuple(layers))


@pytest.fixture
def small_cfg():
    """A fast setup: 10 clients, short runs."""
    return ExperimentConfig(
        client_count=10, fraction=0.2, shard_clients=5, max_rounds=6,
        synthetic_per_class=40, synthetic_dim=20, hidden_dims=(8,), cluster_count=2,
    )


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
