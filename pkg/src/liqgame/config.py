"""Scenario configuration files (YAML) with line-numbered diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dist import Empirical, ExpMixture, PortfolioDistribution
from .model import CostParams, VariantMode


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class LinearCoefficient:
    """start + slope * t"""

    start: float
    slope: float

    def __call__(self, t):
        return self.start + self.slope * np.asarray(t, dtype=float)

    def derivative(self):
        return ConstantCoefficient(self.slope)


@dataclass(frozen=True)
class ExponentialCoefficient:
    """scale * exp(rate * t)"""

    scale: float
    rate: float

    def __call__(self, t):
        return self.scale * np.exp(self.rate * np.asarray(t, dtype=float))

    def derivative(self):
        return ExponentialCoefficient(self.scale * self.rate, self.rate)


@dataclass(frozen=True)
class ConstantCoefficient:
    value: float

    def __call__(self, t):
        return np.full(np.shape(t), self.value, dtype=float)


@dataclass
class GameSetup:
    kind: str = "mfg"  # "mfg" or "nplayer"
    players: tuple = ()
    positions: str | tuple = "quantiles"


@dataclass
class ScenarioConfig:
    params: CostParams
    distribution: PortfolioDistribution
    modes: tuple = (VariantMode.TRADING,)
    grid_n: int = 2001
    refinement: float = 4.0
    tol: float = 1e-10
    strata: int = 512
    representatives: tuple = ()
    game: GameSetup = field(default_factory=GameSetup)
    samples: int = 100
    seed: int = 0
    out_dir: str = "out"
    source: str = "<config>"

    def nplayer_distribution(self, n: int) -> PortfolioDistribution:
        if isinstance(self.game.positions, tuple):
            if len(self.game.positions) != n:
                raise ConfigError(f"{len(self.game.positions)} positions given for N={n}",
                                  source=self.source)
            return Empirical(tuple(float(v) for v in self.game.positions))
        if isinstance(self.distribution, ExpMixture):
            return Empirical.from_quantiles(self.distribution, n)
        raise ConfigError("quantile positions need a continuous distribution", source=self.source)


_TOP_KEYS = {"horizon", "grid", "costs", "modes", "game", "distribution", "representatives",
             "tolerance", "strata", "output", "verification"}


class _Reader:
    """Walks the composed YAML node tree so errors can point at a line."""

    def __init__(self, text: str, source: str):
        self.source = source
        try:
            self.root = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", line,
                              source) from None
        if self.root is None:
            self.root = yaml.MappingNode("tag:yaml.org,2002:map", [])
        if not isinstance(self.root, yaml.MappingNode):
            raise ConfigError("top level must be a mapping", self.line(self.root), source)
        self.loader = yaml.SafeLoader("")

    @staticmethod
    def line(node):
        return node.start_mark.line + 1 if node is not None else None

    def error(self, msg, node):
        return ConfigError(msg, self.line(node), self.source)

    def mapping(self, node, allowed):
        if not isinstance(node, yaml.MappingNode):
            raise self.error("expected a mapping", node)
        out = {}
        for k, v in node.value:
            key = k.value
            if key not in allowed:
                raise self.error(f"unknown key {key!r} (allowed: {', '.join(sorted(allowed))})", k)
            out[key] = v
        return out

    def value(self, node):
        return self.loader.construct_object(node, deep=True)

    def number(self, node, *, positive=False, nonneg=False, integer=False):
        v = self.value(node)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(f"expected a number, got {v!r}", node)
        if integer and not float(v).is_integer():
            raise self.error(f"expected an integer, got {v!r}", node)
        if not math.isfinite(v):
            raise self.error("value must be finite", node)
        if positive and not v > 0:
            raise self.error(f"value must be positive, got {v!r}", node)
        if nonneg and v < 0:
            raise self.error(f"value must be non-negative, got {v!r}", node)
        return int(v) if integer else float(v)

    def number_list(self, node):
        if not isinstance(node, yaml.SequenceNode):
            raise self.error("expected a list", node)
        return tuple(self.number(item) for item in node.value)


def _coefficient(r: _Reader, node, name, positive):
    """Constant or one of the named families; returns (coefficient, derivative)."""
    if isinstance(node, yaml.ScalarNode):
        v = r.number(node, positive=positive, nonneg=not positive)
        return v, None
    entry = r.mapping(node, {"family", "start", "slope", "scale", "rate", "value"})
    if "family" not in entry:
        raise r.error(f"{name}: missing 'family'", node)
    family = r.value(entry["family"])

    def need(key):
        if key not in entry:
            raise r.error(f"{name}: family {family!r} needs {key!r}", node)
        return r.number(entry[key])

    if family == "constant":
        return need("value"), None
    if family == "linear":
        coef = LinearCoefficient(need("start"), need("slope"))
    elif family == "exponential":
        coef = ExponentialCoefficient(need("scale"), need("rate"))
    else:
        raise r.error(f"{name}: unknown family {family!r}", entry["family"])
    return coef, coef.derivative()


def _check_coefficient(r, node, name, coef, T, positive):
    if not callable(coef):
        return
    vals = coef(np.linspace(0.0, T, 1001))
    if positive and np.any(vals <= 0):
        raise r.error(f"{name} must stay positive on [0, T]", node)
    if not positive and np.any(vals < 0):
        raise r.error(f"{name} must stay non-negative on [0, T]", node)


def _distribution(r: _Reader, node):
    entry = r.mapping(node, {"type", "seller_mass", "seller_rate", "buyer_mass", "buyer_rate",
                            "positions"})
    kind = r.value(entry["type"]) if "type" in entry else "exp_mixture"
    if kind == "exp_mixture":
        kw = {}
        for key in ("seller_mass", "seller_rate", "buyer_mass", "buyer_rate"):
            if key in entry:
                kw[key] = r.number(entry[key], nonneg=True)
        if "positions" in entry:
            raise r.error("'positions' only applies to type: empirical", entry["positions"])
        try:
            return ExpMixture(**kw)
        except ValueError as exc:
            raise r.error(str(exc), node) from None
    if kind == "empirical":
        if "positions" not in entry:
            raise r.error("empirical distribution needs 'positions'", node)
        pos = r.number_list(entry["positions"])
        if not pos:
            raise r.error("empirical distribution needs at least one position", entry["positions"])
        return Empirical(pos)
    raise r.error(f"unknown distribution type {kind!r}", entry.get("type", node))


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    r = _Reader(text, source)
    top = r.mapping(r.root, _TOP_KEYS)
    T = r.number(top["horizon"], positive=True) if "horizon" in top else 1.0

    grid_n, refinement = 2001, 4.0
    if "grid" in top:
        g = r.mapping(top["grid"], {"n", "refinement"})
        if "n" in g:
            grid_n = r.number(g["n"], integer=True)
            if grid_n < 16:
                raise r.error("grid.n must be at least 16", g["n"])
        if "refinement" in g:
            refinement = r.number(g["refinement"])
            if refinement < 1:
                raise r.error("grid.refinement must be at least 1", g["refinement"])

    eta, eta_dot, lam, kappa = 5.0, None, 5.0, 10.0
    if "costs" in top:
        c = r.mapping(top["costs"], {"eta", "lambda", "kappa"})
        if "eta" in c:
            eta, eta_dot = _coefficient(r, c["eta"], "eta", positive=True)
            _check_coefficient(r, c["eta"], "eta", eta, T, positive=True)
        if "lambda" in c:
            lam, _ = _coefficient(r, c["lambda"], "lambda", positive=False)
            _check_coefficient(r, c["lambda"], "lambda", lam, T, positive=False)
        if "kappa" in c:
            kappa = r.number(c["kappa"], positive=True)
    params = CostParams(T=T, eta=eta, lam=lam, kappa=kappa, eta_dot=eta_dot)

    modes = (VariantMode.TRADING,)
    if "modes" in top:
        node = top["modes"]
        items = node.value if isinstance(node, yaml.SequenceNode) else [node]
        parsed = []
        for item in items:
            try:
                parsed.append(VariantMode.parse(r.value(item)))
            except ValueError as exc:
                raise r.error(str(exc), item) from None
        modes = tuple(parsed)

    dist = _distribution(r, top["distribution"]) if "distribution" in top else ExpMixture()

    game = GameSetup()
    if "game" in top:
        gs = r.mapping(top["game"], {"type", "players", "positions"})
        kind = r.value(gs["type"]) if "type" in gs else "mfg"
        if kind not in ("mfg", "nplayer"):
            raise r.error(f"game.type must be mfg or nplayer, got {kind!r}", gs["type"])
        players = ()
        if "players" in gs:
            players = tuple(int(v) for v in r.number_list(gs["players"]))
            if any(n < 1 for n in players):
                raise r.error("player counts must be positive", gs["players"])
        positions = "quantiles"
        if "positions" in gs:
            node = gs["positions"]
            if isinstance(node, yaml.ScalarNode):
                if r.value(node) != "quantiles":
                    raise r.error("positions must be 'quantiles' or a list", node)
            else:
                positions = r.number_list(node)
        if kind == "nplayer" and not players:
            raise r.error("nplayer game needs 'players'", top["game"])
        game = GameSetup(kind, players, positions)

    reps = r.number_list(top["representatives"]) if "representatives" in top else ()
    tol = r.number(top["tolerance"], positive=True) if "tolerance" in top else 1e-10
    strata = r.number(top["strata"], positive=True, integer=True) if "strata" in top else 512
    out_dir = str(r.value(top["output"])) if "output" in top else "out"
    samples, seed = 100, 0
    if "verification" in top:
        v = r.mapping(top["verification"], {"samples", "seed"})
        if "samples" in v:
            samples = r.number(v["samples"], positive=True, integer=True)
        if "seed" in v:
            seed = r.number(v["seed"], nonneg=True, integer=True)
    return ScenarioConfig(params, dist, modes, grid_n, refinement, tol, strata, reps, game,
                          samples, seed, out_dir, source)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    return parse_config(text, str(path))
