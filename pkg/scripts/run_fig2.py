"""Finite-player equilibria converging to the mean-field rate."""
import argparse
from pathlib import Path

from liqgame.cli import sweep_n
from liqgame.config import load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "fig2.yaml", type=Path)
    ap.add_argument("--out-dir", default=ROOT / "out" / "fig2", type=Path)
    ap.add_argument("--N", default=None, help="comma-separated player counts")
    args = ap.parse_args()

    cfg = load_config(args.config)
    players = [int(v) for v in args.N.split(",")] if args.N else list(cfg.game.players)
    res = sweep_n(cfg, players, args.out_dir)
    for n, sol in res.comparisons.items():
        gap = abs(sol.mu - res.solution.mu).max()
        print(f"N={n:4d}  theta={sol.theta:.6f}  c={sol.c:.6f}  sup gap={gap:.4e}")
    print(f"gap decreasing in N: {res.ok}")


if __name__ == "__main__":
    main()
