import pytest

from fedle.config import (
    CALIBRATED_BY_FRACTION,
    ExperimentConfig,
    format_config,
    parse_config,
    parse_config_text,
)
from fedle.errors import InvalidConfigError


def test_empty_config_gives_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    cfg = parse_config(path)
    assert cfg == ExperimentConfig()
    assert (cfg.client_count, cfg.fraction, cfg.delta, cfg.max_rounds) == (40, 0.05, 0.2, 50)
    assert (cfg.cluster_count, cfg.w_maj, cfg.metric, cfg.local_epochs) == (3, 0.2, "cosine", 1)
    assert cfg.clients_per_round == 2


def test_zero_fraction_cites_range():
    with pytest.raises(InvalidConfigError, match=r"C ∈ \(0,1\]"):
        parse_config_text("fraction = 0")


def test_unknown_key_named():
    with pytest.raises(InvalidConfigError, match="colour"):
        parse_config_text("colour = red")


def test_parse_types_and_comments():
    cfg = parse_config_text(
        "# comment\nclient_count = 20  # inline\nhidden_dims = 32, 16\n"
        "diagnostics = yes\nshard_size = none\nstrategy = fedbo\nlearning_rate=0.1\n"
    )
    assert cfg.client_count == 20 and cfg.hidden_dims == (32, 16)
    assert cfg.diagnostics is True and cfg.shard_size is None
    assert cfg.strategy == "fedbo" and cfg.learning_rate == 0.1


@pytest.mark.parametrize(
    "text, key",
    [
        ("client_count = many", "client_count"),
        ("client_count = 1", "client_count"),
        ("max_rounds = 0", "max_rounds"),
        ("strategy = greedy", "strategy"),
        ("learning_rate = nan", "learning_rate"),
        ("diagnostics = maybe", "diagnostics"),
        ("cluster_count = 41", "cluster_count"),
        ("dataset = mnist", "mnist_images"),
    ],
)
def test_errors_name_key(text, key):
    with pytest.raises(InvalidConfigError, match=key):
        parse_config_text(text)


def test_missing_equals():
    with pytest.raises(InvalidConfigError, match="line 1"):
        parse_config_text("client_count 40")


def test_overrides_win():
    assert parse_config_text("seed = 3", seed=9).seed == 9


def test_format_round_trip():
    cfg = ExperimentConfig(hidden_dims=(10, 5), shard_size=12, seed=4, diagnostics=True)
    assert parse_config_text(format_config(cfg)) == cfg


def test_stream_seeds_distinct_and_overridable():
    cfg = ExperimentConfig(seed=1)
    seeds = {cfg.stream_seed(n) for n in ("partition", "init", "battery", "selection", "train", "cluster")}
    assert len(seeds) == 6
    assert cfg.replace(battery_seed=5).stream_seed("battery") == 5
    assert ExperimentConfig(seed=2).stream_seed("init") != cfg.stream_seed("init")


def test_calibrated_presets():
    for frac, scales in CALIBRATED_BY_FRACTION.items():
        cfg = ExperimentConfig(low_power_fraction=frac).with_calibrated_scales()
        assert cfg.battery_scales == scales
    with pytest.raises(InvalidConfigError):
        ExperimentConfig(low_power_fraction=0.4).with_calibrated_scales()
