import pytest

from tpmdp.config import ConfigError, ExperimentConfig, config_from_dict, load_config


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.n_parties == 1000 and cfg.t_abs == 500
    assert cfg.delta_value == pytest.approx(1e-4)
    assert cfg.n_repetitions == 100
    lin = ExperimentConfig(query="linreg")
    assert lin.n_parties == 50_000 and lin.n_repetitions == 20


@pytest.mark.parametrize(
    "raw",
    [
        {"bogus": 1},
        {"query": "mean"},
        {"t": 1.5},
        {"t": 10, "n": 10},
        {"f_C": 0.8, "f_M": 0.5},
        {"eps_C": 0.5, "eps_M": 0.2},
        {"active": "some"},
        {"active": [0]},
        {"mechanisms": ["G", "magic"]},
        {"delta": 0},
    ],
)
def test_rejects_bad_configs(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_yaml_roundtrip(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("query: count\nn: 40\nt: 0.25\nactive: [1, 2]\nseed: 3\n")
    cfg = load_config(path)
    assert cfg.t_abs == 10 and cfg.active == (1, 2) and cfg.seed == 3
    assert config_from_dict(cfg.to_dict()) == cfg


def test_unparsable_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("query: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)
