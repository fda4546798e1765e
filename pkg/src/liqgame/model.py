"""Market primitives, time grids and solver variants."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


class VariantMode(str, enum.Enum):
    """Which trading restriction the population obeys."""

    TRADING = "trading"  # no change of direction
    DROPOUT = "dropout"  # exit at zero, direction changes allowed before that
    UNCONSTRAINED = "unconstrained"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "trading": cls.TRADING,
            "trading_constraint": cls.TRADING,
            "tradingconstraint": cls.TRADING,
            "dropout": cls.DROPOUT,
            "drop_out": cls.DROPOUT,
            "unconstrained": cls.UNCONSTRAINED,
        }
        if key not in aliases:
            raise ValueError(f"unknown variant mode {value!r}")
        return aliases[key]


def _sample(coef, t):
    t = np.asarray(t, dtype=float)
    if callable(coef):
        out = np.asarray(coef(t), dtype=float)
        return np.broadcast_to(out, t.shape).astype(float)
    return np.full(t.shape, float(coef))


@dataclass(frozen=True)
class CostParams:
    """Cost coefficients of the liquidation game.

    ``eta`` and ``lam`` are either constants or vectorised callables of time.
    A callable ``eta`` needs an explicit ``eta_dot``.
    """

    T: float = 1.0
    eta: Coefficient = 5.0
    lam: Coefficient = 5.0
    kappa: float = 10.0
    delta: float = 0.0
    eta_dot: Coefficient | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if callable(self.eta) and self.eta_dot is None:
            raise ValueError("a time-varying eta requires eta_dot")
        if not callable(self.eta) and not float(self.eta) > 0:
            raise ValueError("eta must be positive")
        if not callable(self.lam) and float(self.lam) < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def constant(self) -> bool:
        return not callable(self.eta) and not callable(self.lam)

    def eta_at(self, t):
        return _sample(self.eta, t)

    def eta_dot_at(self, t):
        if self.eta_dot is None:
            return np.zeros(np.shape(t))
        return _sample(self.eta_dot, t)

    def lam_at(self, t):
        return _sample(self.lam, t)

    def with_delta(self, delta: float) -> "CostParams":
        return CostParams(self.T, self.eta, self.lam, self.kappa, delta, self.eta_dot)

    @classmethod
    def for_players(cls, n_players: int, **kw) -> "CostParams":
        if n_players < 1:
            raise ValueError("need at least one player")
        return cls(delta=1.0 / n_players, **kw)


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray
    refinement_factor: float = 1.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("grid must start at 0 and increase strictly")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    def refined(self) -> np.ndarray:
        """Nodes with all interval midpoints interleaved (length 2n-1)."""
        fine = np.empty(2 * self.n - 1)
        fine[0::2] = self.nodes
        fine[1::2] = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        return fine


def build_grid(T: float = 1.0, n: int = 2001, refinement_factor: float = 4.0,
               allow_small: bool = False) -> TimeGrid:
    """Grid on [0, T] whose spacings shrink geometrically towards T.

    ``refinement_factor`` is the ratio between the first and the last spacing,
    so a factor of 1 gives the uniform partition.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if n < 16 and not (allow_small and n >= 2):
        raise ValueError("grid needs at least 16 nodes")
    if refinement_factor < 1:
        raise ValueError("refinement factor must be >= 1")
    m = n - 1
    if refinement_factor == 1 or m == 1:
        steps = np.ones(m)
    else:
        ratio = refinement_factor ** (-1.0 / (m - 1))
        steps = ratio ** np.arange(m)
    nodes = np.concatenate([[0.0], np.cumsum(steps)])
    nodes *= T / nodes[-1]
    nodes[-1] = T
    return TimeGrid(nodes, float(refinement_factor))


@dataclass
class ParamDiagnostics:
    small_lambda: bool
    monotone_lambda_eta: bool
    messages: list = field(default_factory=list)

    @property
    def certificate(self) -> str:
        if self.monotone_lambda_eta:
            return "ConditionII"
        if self.small_lambda:
            return "ConditionI"
        return "NumericCheck"

    @property
    def needs_numeric_check(self) -> bool:
        return not (self.small_lambda or self.monotone_lambda_eta)


def validate_params(params: CostParams, samples: int = 4001) -> ParamDiagnostics:
    """Check positivity and the two sufficient conditions for a decreasing entry kernel.

    (i) ``max(lam) * (int_0^T 1/eta_tilde)^2 / 2 < min(1/eta)`` with
    ``eta_tilde = eta * exp(-int delta*kappa/eta)``; (ii) ``lam*eta`` non-decreasing.
    """
    t = np.linspace(0.0, params.T, samples)
    eta = params.eta_at(t)
    lam = params.lam_at(t)
    if np.any(~np.isfinite(eta)) or np.any(eta <= 0):
        raise ValueError("eta must be finite and positive on [0, T]")
    if np.any(~np.isfinite(lam)) or np.any(lam < 0):
        raise ValueError("lambda must be finite and non-negative on [0, T]")
    inv_eta = 1.0 / eta
    dt = np.diff(t)
    cum_inv = np.concatenate([[0.0], np.cumsum(0.5 * dt * (inv_eta[1:] + inv_eta[:-1]))])
    inv_eta_tilt = inv_eta * np.exp(params.delta * params.kappa * cum_inv)
    total = float(np.sum(0.5 * dt * (inv_eta_tilt[1:] + inv_eta_tilt[:-1])))
    small = bool(lam.max() * 0.5 * total**2 < inv_eta.min())
    prod = lam * eta
    scale = max(1.0, float(np.abs(prod).max()))
    monotone = bool(np.all(np.diff(prod) >= -1e-12 * scale))
    msgs = []
    if small:
        msgs.append("risk penalty small enough for a decreasing entry kernel")
    if monotone:
        msgs.append("lambda*eta non-decreasing")
    if not (small or monotone):
        msgs.append("no sufficient condition certified; entry kernel monotonicity checked numerically")
    return ParamDiagnostics(small, monotone, msgs)
