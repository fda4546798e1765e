"""Mean-field and N-player optimal liquidation with no change of trading direction."""
from .dist import Empirical, ExpMixture, PortfolioDistribution
from .equilibrium import (EquilibriumSolution, NoBracketError, find_equilibrium,
                          fixed_point_selfcheck, solve)
from .kernels import EntryExitKernels, MonotonicityError, entry_time, exit_time
from .model import CostParams, TimeGrid, VariantMode, build_grid, validate_params
from .paths import PlayerPath, aggregate_F, evaluate_cost, player_path
from .riccati import RiccatiBundle, solve_A

__all__ = [
    "CostParams", "TimeGrid", "VariantMode", "build_grid", "validate_params",
    "PortfolioDistribution", "ExpMixture", "Empirical",
    "RiccatiBundle", "solve_A",
    "EntryExitKernels", "MonotonicityError", "entry_time", "exit_time",
    "EquilibriumSolution", "NoBracketError", "find_equilibrium", "fixed_point_selfcheck", "solve",
    "PlayerPath", "aggregate_F", "evaluate_cost", "player_path",
]
