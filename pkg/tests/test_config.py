import pytest

from wikiflu import config
from wikiflu.config import ConfigError

BASE = """
country = "IT"
language = "it"
seasons = ["2015-2016", "2016-2017"]
seed = 3

[lasso]
optimizer = "proximal_sgd"
"""


def write(tmp_path, text=BASE):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


def test_defaults_and_seed_propagation(tmp_path):
    cfg = config.load(write(tmp_path))
    assert cfg.lasso.seed == 3 and cfg.lasso.optimizer == "proximal_sgd"
    assert cfg.evaluate_seasons == cfg.seasons
    assert cfg.ranking.cyclerank_k == 4


def test_flag_overrides_win(tmp_path):
    cfg = config.load(write(tmp_path), {"lasso.optimizer": "coordinate_descent", "jobs": 2, "methods": None})
    assert cfg.lasso.optimizer == "coordinate_descent" and cfg.jobs == 2
    assert cfg.methods == ["categories", "cyclerank", "ppagerank"]


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        config.load(write(tmp_path, BASE + "\n[ranking]\nalpha = 1\n"))


def test_bad_toml(tmp_path):
    with pytest.raises(ConfigError):
        config.load(write(tmp_path, "country = "))


def test_validate_paths(tmp_path):
    cfg = config.load(write(tmp_path))
    with pytest.raises(ConfigError, match="paths.weekly"):
        cfg.validate()
    cfg.validate(check_paths=False)


def test_validate_seasons(tmp_path):
    cfg = config.load(write(tmp_path), {"evaluate_seasons": ["2019-2020"]})
    with pytest.raises(ConfigError, match="evaluate_seasons"):
        cfg.validate(check_paths=False)


def test_digest_tracks_content(tmp_path):
    a = config.load(write(tmp_path))
    b = config.load(write(tmp_path), {"seed": 4})
    assert a.digest() != b.digest() and len(a.digest()) == 12
    assert a.stamp() == f"wikiflu 0.1.0 config={a.digest()}"
