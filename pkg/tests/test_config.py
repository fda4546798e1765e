from pathlib import Path

import pytest

from liqgame.config import (ConfigError, ExponentialCoefficient, LinearCoefficient, load_config,
                            parse_config)
from liqgame.dist import Empirical, ExpMixture
from liqgame.model import VariantMode

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_describe_the_constant_cost_scenario():
    cfg = parse_config("")
    assert cfg.params.T == 1.0 and cfg.params.eta == 5.0 and cfg.params.lam == 5.0
    assert cfg.params.kappa == 10.0
    assert isinstance(cfg.distribution, ExpMixture)
    assert cfg.modes == (VariantMode.TRADING,)


@pytest.mark.parametrize("name", ["fig1.yaml", "fig2.yaml", "empty_market.yaml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.source.endswith(name)


def test_fig1_modes_and_representatives():
    cfg = load_config(CONFIGS / "fig1.yaml")
    assert len(cfg.modes) == 3 and len(cfg.representatives) == 6


def test_nplayer_quantile_positions():
    cfg = load_config(CONFIGS / "fig2.yaml")
    assert cfg.game.kind == "nplayer" and cfg.game.players == (7, 15, 100)
    d = cfg.nplayer_distribution(7)
    assert d.n == 7 and (d.x < 0).sum() == 1


def test_explicit_player_positions():
    cfg = parse_config("game:\n  type: nplayer\n  players: [3]\n  positions: [-1, 0.5, 2]\n")
    assert isinstance(cfg.nplayer_distribution(3), Empirical)
    with pytest.raises(ConfigError):
        cfg.nplayer_distribution(4)


def test_time_varying_coefficients():
    cfg = parse_config("costs:\n  lambda: {family: linear, start: 5, slope: -2.5}\n"
                       "  eta: {family: exponential, scale: 5, rate: 0.1}\n")
    assert isinstance(cfg.params.lam, LinearCoefficient)
    assert isinstance(cfg.params.eta, ExponentialCoefficient)
    assert cfg.params.eta_dot(0.0) == pytest.approx(0.5)


@pytest.mark.parametrize("text, line, fragment", [
    ("horizon: 1\ncosts:\n  eta: -5\n", 3, "positive"),
    ("horizon: 1\nbogus: 3\n", 2, "unknown key"),
    ("modes: [trading, sideways]\n", 1, "sideways"),
    ("grid:\n  n: 8\n", 2, "at least 16"),
    ("distribution:\n  type: empirical\n", 2, "positions"),
    ("costs:\n  lambda: {family: linear, start: 1, slope: -5}\n", 2, "non-negative"),
    ("horizon: [1\n", 2, "YAML"),
    ("distribution:\n  type: gamma\n", 2, "gamma"),
    ("game:\n  type: nplayer\n", 2, "players"),
])
def test_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config(text, "s.yaml")
    assert err.value.line == line
    assert str(err.value).startswith(f"s.yaml:{line}:")
    assert fragment in str(err.value)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.yaml")
