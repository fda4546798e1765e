"""Three-mode comparison and trajectory data for the constant-cost scenario."""
import argparse
from pathlib import Path

from liqgame.cli import compare_modes, run, verify
from liqgame.config import load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "fig1.yaml", type=Path)
    ap.add_argument("--out-dir", default=ROOT / "out" / "fig1", type=Path)
    ap.add_argument("--skip-verify", action="store_true")
    args = ap.parse_args()

    cfg = load_config(args.config)
    res = run(cfg, args.out_dir)
    for mode, sol in res.comparisons.items():
        print(f"{mode.value:>13}: theta={sol.theta:.6f} c={sol.c:.6f} "
              f"psi(0)={sol.kernels.psi_at_0:.6f} mass={sol.mass():.8f}")
    cmp = compare_modes(cfg, args.out_dir)
    print(f"modes agree on total volume: {cmp.ok}")
    if not args.skip_verify:
        ver = verify(cfg, args.out_dir)
        print("\n".join(ver.verification))


if __name__ == "__main__":
    main()
