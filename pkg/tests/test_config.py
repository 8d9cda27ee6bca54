import pytest

from bbm_yaglom.config import DEFAULT_REPLICAS, EXPERIMENTS, ConfigError, ExperimentConfig, load_config, parse_config


def test_defaults():
    cfg = parse_config("")
    assert cfg.params.rho == 2.0 and cfg.eps_list == [0.2, 0.1, 0.05]
    assert cfg.n_replicas("coupling-check") == 1000
    assert set(DEFAULT_REPLICAS) == set(EXPERIMENTS)
    assert "threads" not in cfg.echo() and "output_dir" not in cfg.echo()


def test_values_are_read():
    cfg = parse_config("seed: 4\nreplicas: 10\nparams:\n  rho: 3.0\nqsd:\n  s: 0.25\n")
    assert cfg.seed == 4 and cfg.n_replicas("qsd-check") == 10
    assert cfg.params.rho == 3.0 and cfg.qsd.s == 0.25


@pytest.mark.parametrize("text,needle", [
    ("seed: 1\nbogus: 2\n", "<config>:2: bogus: unknown key"),
    ("params:\n  rho: 2.0\n  speed: 1\n", "<config>:3: params.speed: unknown key"),
    ("seed: -1\n", "<config>:1: seed:"),
    ("t_grid: [2, 1]\n", "t_grid"),
    ("eps_list: [0.1, 0.1]\n", "eps_list"),
    ("coupling:\n  rho: 1.0\n", "coupling.rho"),
    ("seed: [1\n", "malformed YAML"),
    ("- 1\n- 2\n", "top level must be a mapping"),
])
def test_errors_name_key_and_line(text, needle):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert needle in str(err.value)


def test_load_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 9\n")
    assert load_config(p).seed == 9
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_frozen():
    cfg = ExperimentConfig()
    with pytest.raises(Exception):
        cfg.seed = 3


def test_example_config_lists_the_defaults():
    from pathlib import Path

    example = Path(__file__).resolve().parents[1] / "configs" / "example.yaml"
    assert load_config(example) == ExperimentConfig()
