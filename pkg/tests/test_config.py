import os

import pytest

from dplsvm.config import (
    RunConfig,
    default_run_config,
    env_flag,
    env_log_level,
    load_process_env,
    load_run_config,
    parse_overrides,
)
from dplsvm.errors import ConfigError


def test_defaults_are_valid():
    cfg = load_run_config(None, {}, environ={})
    assert cfg == RunConfig()
    assert cfg.seed == 20200101
    assert cfg.density_grid == (0.12, 0.15, 0.18, 0.2, 0.25)


def test_set_overrides():
    cfg = load_run_config(None, {"M": "2.5", "density_grid": "0.1,0.2", "standardize": "false"}, environ={})
    assert cfg.M == 2.5
    assert cfg.density_grid == (0.1, 0.2)
    assert cfg.standardize is False


def test_precedence(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("n_iter=300\nburn_in=100\nthin=3\n")
    environ = {"DPLSVM_THIN": "4", "DPLSVM_M": "3", "HOME": "/root"}

    cfg = load_run_config(str(path), {"n_iter": "500"}, environ=environ)
    assert cfg.n_iter == 500
    assert cfg.burn_in == 100
    assert cfg.thin == 4
    assert cfg.M == 3.0


def test_to_lines_reloads(tmp_path):
    cfg = default_run_config(M=0.5, prior_mode="global", window_grid=(10, 15), plot_data=True)
    path = tmp_path / "config.env"
    path.write_text(cfg.to_lines())

    assert load_run_config(str(path), {}, environ={}) == cfg


def test_unknown_key():
    with pytest.raises(ConfigError):
        load_run_config(None, {"not_a_key": "1"}, environ={})

    with pytest.raises(ConfigError):
        load_run_config(None, {}, environ={"DPLSVM_NOPE": "1"})


def test_bad_values():
    with pytest.raises(ConfigError):
        load_run_config(None, {"M": "abc"}, environ={})

    with pytest.raises(ConfigError):
        load_run_config(None, {"n_iter": "100", "burn_in": "100"}, environ={})

    with pytest.raises(ConfigError):
        load_run_config(None, {"prior_mode": "horseshoe"}, environ={})

    with pytest.raises(ConfigError):
        load_run_config(None, {"density_grid": "0.2,0.1"}, environ={})

    with pytest.raises(ConfigError):
        load_run_config(None, {"standardize": "maybe"}, environ={})


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "absent.env"), {}, environ={})


def test_parse_overrides():
    assert parse_overrides(["a1=2", "adjust=bonferroni", "x=a=b"]) == {
        "a1": "2",
        "adjust": "bonferroni",
        "x": "a=b",
    }
    with pytest.raises(ConfigError):
        parse_overrides(["a1"])


def test_hyperparameters():
    cfg = default_run_config(M=2.0, prior_mode="independent", n_iter=100, burn_in=10, thin=3)
    hyper = cfg.hyperparameters()
    assert hyper.M == 2.0
    assert hyper.prior_mode == "independent"
    assert hyper.n_records == 30


def test_process_keys_are_not_run_keys():
    environ = {"DPLSVM_LOG_LEVEL": "DEBUG", "DPLSVM_DEBUG": "1", "DPLSVM_THREADS": "3"}
    cfg = load_run_config(None, {}, environ=environ)
    assert cfg.threads == 3


def test_env_flag_and_log_level():
    assert env_flag("DEBUG", {"DPLSVM_DEBUG": "true"})
    assert not env_flag("DEBUG", {"DPLSVM_DEBUG": "0"})
    assert not env_flag("DEBUG", {})
    assert env_log_level({}) == "INFO"
    assert env_log_level({"DPLSVM_LOG_LEVEL": "debug"}) == "DEBUG"
    with pytest.raises(ConfigError):
        env_log_level({"DPLSVM_LOG_LEVEL": "chatty"})


def test_load_process_env(tmp_path, monkeypatch):
    path = tmp_path / "process.env"
    path.write_text("DPLSVM_SENTRY_DSN=https://key@example.invalid/1\nDPLSVM_COLOR_LOG=1\n")
    monkeypatch.delenv("DPLSVM_SENTRY_DSN", raising=False)
    monkeypatch.setenv("DPLSVM_COLOR_LOG", "0")
    monkeypatch.chdir(tmp_path)

    assert os.path.realpath(load_process_env("process.env")) == os.path.realpath(path)
    assert os.environ["DPLSVM_SENTRY_DSN"] == "https://key@example.invalid/1"
    # already set in the environment
    assert os.environ["DPLSVM_COLOR_LOG"] == "0"

    with pytest.raises(ConfigError):
        load_process_env("missing.env")
