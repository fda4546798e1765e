"""Command-line scenario runner.

    python -m liqgame solve    configs/fig1.yaml
    python -m liqgame verify   configs/fig1.yaml
    python -m liqgame compare  configs/fig1.yaml
    python -m liqgame sweep-n  configs/fig2.yaml --N 7,15,100
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config
from .equilibrium import EquilibriumSolution, fixed_point_selfcheck, solve
from .model import CostParams, VariantMode, build_grid
from .oracle import best_response_qp, nash_deviation_test, sensitivity_check
from .paths import PlayerPath, evaluate_cost, player_path
from .riccati import solve_A

log = logging.getLogger("liqgame")

FLOAT_FMT = "%.17g"


class StageError(RuntimeError):
    """A solver failure annotated with the stage it happened in."""


@dataclass
class ScenarioResult:
    solution: EquilibriumSolution | None = None
    sample_paths: list = field(default_factory=list)
    comparisons: dict = field(default_factory=dict)
    verification: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    ok: bool = True


# --- output helpers

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: Path, header, columns) -> Path:
    rows = [",".join(header)]
    for row in zip(*columns):
        rows.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(rows) + "\n")
    return path


def read_csv(path) -> tuple[list, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return header, data


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_summary(path: Path, entries: dict, files: list) -> Path:
    lines = [f"{k}={_fmt(v)}" for k, v in entries.items()]
    lines += [f"sha256.{f.name}={_digest(f)}" for f in sorted(files, key=lambda p: p.name)]
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def read_summary(path, check: bool = True) -> dict:
    """Parse a summary file; with ``check`` the recorded file digests must match."""
    path = Path(path)
    out = {}
    for ln in path.read_text().splitlines():
        if not ln.strip():
            continue
        key, _, val = ln.partition("=")
        out[key] = val
    if check:
        for key, val in out.items():
            if key.startswith("sha256."):
                target = path.parent / key[len("sha256."):]
                if not target.exists() or _digest(target) != val:
                    raise ValueError(f"{target.name} does not match {path.name}; stale outputs")
    return out


# --- stages

def _stage(name, timing, fn, *args, **kw):
    t0 = time.perf_counter()
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError(f"stage '{name}' failed: {exc}") from exc
    finally:
        timing[name] = time.perf_counter() - t0


def _bundle(cfg: ScenarioConfig, params: CostParams):
    grid = build_grid(params.T, cfg.grid_n, cfg.refinement)
    return solve_A(params, grid)


def _solve_modes(cfg: ScenarioConfig, modes, result: ScenarioResult):
    bundle = _stage("riccati", result.timing, _bundle, cfg, cfg.params)
    sols = {}
    for mode in modes:
        sols[mode] = _stage(f"equilibrium.{mode.value}", result.timing, solve, cfg.params,
                            cfg.distribution, mode, tol=cfg.tol, bundle=bundle)
    return sols


def _mode_entries(sol: EquilibriumSolution, strata: int) -> dict:
    m = sol.mode.value
    scale = float(np.max(np.abs(sol.mu))) if not sol.trivial else 1.0
    e = {
        f"{m}.theta": sol.theta * sol.sign,
        f"{m}.c": sol.c,
        f"{m}.psi0": sol.kernels.psi_at_0,
        f"{m}.phiT": sol.kernels.phi_at_T,
        f"{m}.mass": sol.mass(),
        f"{m}.expected_position": sol.original_dist.mean if sol.original_dist else sol.dist.mean,
        f"{m}.trivial": sol.trivial,
    }
    for k, v in sol.residuals.items():
        e[f"{m}.residual.{k}"] = v
    e[f"{m}.fixed_point_error"] = fixed_point_selfcheck(sol, strata=strata) / scale
    for i, note in enumerate(sol.notes):
        e[f"{m}.note{i}"] = note.replace("\n", " ")
    return e


def _write_mode(out: Path, sol: EquilibriumSolution) -> Path:
    return write_csv(out / f"mu_{sol.mode.value}.csv", ["t", "mu", "eta_mu"],
                     [sol.t, sol.mu, sol.mu * sol.params.eta_at(sol.t)])


def _write_paths(out: Path, sol: EquilibriumSolution, reps) -> tuple[list, list]:
    files, paths = [], []
    for i, x0 in enumerate(reps):
        pth = player_path(float(x0), sol)
        paths.append(pth)
        files.append(write_csv(out / f"path_{sol.mode.value}_{i}.csv", ["t", "X", "Y", "xi"],
                               [pth.t, pth.X, pth.Y, pth.xi]))
    if reps:
        files.append(write_csv(out / f"paths_{sol.mode.value}.csv",
                               ["x0", "sigma", "tau", "cost"],
                               [[p.x0 for p in paths], [p.sigma for p in paths],
                                [p.tau for p in paths], [p.cost for p in paths]]))
    return files, paths


def run(cfg: ScenarioConfig, out_dir: Path | None = None) -> ScenarioResult:
    """Solve every configured mode and write the plot-ready files."""
    out = Path(out_dir or cfg.out_dir)
    result = ScenarioResult()
    sols = _solve_modes(cfg, cfg.modes, result)
    first = sols[cfg.modes[0]]
    result.solution = first
    result.comparisons = sols
    entries = {"modes": ",".join(m.value for m in cfg.modes), "grid_n": cfg.grid_n,
               "horizon": cfg.params.T, "tolerance": cfg.tol, "strata": cfg.strata}
    files = []
    for mode, sol in sols.items():
        entries.update(_mode_entries(sol, cfg.strata))
        files.append(_write_mode(out, sol))
        pfiles, paths = _write_paths(out, sol, cfg.representatives)
        files += pfiles
        if sol is first:
            result.sample_paths = paths
    files.append(write_csv(out / "kernels.csv", ["t", "psi", "phi"],
                           [first.t, first.sign * first.kernels.psi,
                            first.sign * first.kernels.phi]))
    if first.trivial:
        entries["note"] = "zero expected position: trivial equilibrium with mu = 0"
    files.append(write_summary(out / "summary.txt", entries, files))
    result.files = files
    return result


def verify(cfg: ScenarioConfig, out_dir: Path | None = None, seed: int | None = None):
    out = Path(out_dir or cfg.out_dir)
    seed = cfg.seed if seed is None else seed
    result = ScenarioResult()
    mode = cfg.modes[0]
    sol = _solve_modes(cfg, [mode], result)[mode]
    result.solution = sol
    lines = [f"mode={mode.value}", f"seed={seed}"]
    ok = True
    if sol.trivial:
        lines.append("trivial equilibrium: nothing to verify")
    else:
        scale = float(np.max(np.abs(sol.mu)))
        fp = fixed_point_selfcheck(sol, strata=cfg.strata) / scale
        ok &= fp < 1e-3
        lines.append(f"check=fixed_point relative_error={fp:.6e} "
                     f"status={'PASS' if fp < 1e-3 else 'FAIL'}")
        reps = cfg.representatives or (-0.5, 0.5)
        worst = 0.0
        for x0 in reps:
            qp = best_response_qp(float(x0), sol.t, sol.mu, sol.params)
            J = player_path(float(x0), sol).cost
            rel = abs(qp.objective - J) / max(abs(J), 1e-300)
            worst = max(worst, rel)
            lines.append(f"qp x0={x0:.17g} objective={qp.objective:.17g} analytic={J:.17g} "
                         f"relative_gap={rel:.3e} kkt={qp.kkt_residual:.3e}")
        ok &= worst < 1e-3
        lines.append(f"check=qp worst_relative_gap={worst:.6e} "
                     f"status={'PASS' if worst < 1e-3 else 'FAIL'}")
        rep = _stage("nash.mfg", result.timing, nash_deviation_test, sol, cfg.samples, seed,
                     players=[float(x) for x in reps if x != 0])
        ok &= rep.passed
        lines += [f"check=nash {ln}" for ln in rep.lines()]
        if sol.sign > 0 and sol.mode is VariantMode.TRADING:
            sens = _stage("sensitivity", result.timing, sensitivity_check, sol.bundle,
                          sol.params, sol.dist, sol.theta, sol.c)
            ok &= sens.passed
            lines += [f"check=sensitivity {ln}" for ln in sens.lines()]
        for n in cfg.game.players if cfg.game.kind == "nplayer" else ():
            params_n = dataclasses.replace(cfg.params, delta=1.0 / n)
            dist_n = cfg.nplayer_distribution(n)
            sol_n = _stage(f"equilibrium.N{n}", result.timing, solve, params_n, dist_n, mode,
                           tol=cfg.tol, bundle=_bundle(cfg, params_n))
            if sol_n.trivial:
                continue
            rep = nash_deviation_test(sol_n, cfg.samples, seed, n_players=n)
            ok &= rep.passed
            lines += [f"check=nash {ln}" for ln in rep.lines()]
    lines.append(f"overall={'PASS' if ok else 'FAIL'}")
    path = out / "verification.txt"
    _atomic_write(path, "\n".join(lines) + "\n")
    result.verification = lines
    result.files = [path]
    result.ok = bool(ok)
    return result


def compare_modes(cfg: ScenarioConfig, out_dir: Path | None = None) -> ScenarioResult:
    out = Path(out_dir or cfg.out_dir)
    result = ScenarioResult()
    modes = [VariantMode.TRADING, VariantMode.DROPOUT, VariantMode.UNCONSTRAINED]
    sols = _solve_modes(cfg, modes, result)
    result.comparisons = sols
    result.solution = sols[VariantMode.TRADING]
    t = result.solution.t
    mus = [sols[m].mu for m in modes]
    files = [write_csv(out / "compare.csv", ["t"] + [f"mu_{m.value}" for m in modes], [t] + mus)]
    masses = [sols[m].mass() for m in modes]
    ref = max(abs(v) for v in masses) or 1.0
    spread = (max(masses) - min(masses)) / ref
    entries = {f"{m.value}.mass": v for m, v in zip(modes, masses)}
    entries["mass_spread_relative"] = spread
    entries["mass_consistent"] = bool(spread < 1e-3)
    tr, uc = mus[0], mus[2]
    entries["trading_below_unconstrained_at_0"] = bool(tr[0] <= uc[0])
    above = np.flatnonzero(tr > uc)
    entries["overtake_time"] = float(t[above[0]]) if above.size and tr[0] <= uc[0] else float("nan")
    entries["sup_gap_trading_dropout"] = float(np.max(np.abs(mus[0] - mus[1])))
    entries["sup_gap_trading_unconstrained"] = float(np.max(np.abs(mus[0] - mus[2])))
    files.append(write_summary(out / "compare_summary.txt", entries, files))
    result.files = files
    result.ok = bool(spread < 1e-3)
    return result


def sweep_n(cfg: ScenarioConfig, players, out_dir: Path | None = None) -> ScenarioResult:
    out = Path(out_dir or cfg.out_dir)
    result = ScenarioResult()
    mode = cfg.modes[0]
    mfg = _solve_modes(cfg, [mode], result)[mode]
    result.solution = mfg
    t = mfg.t
    gaps, thetas, cs, cols = [], [], [], []
    for n in players:
        params_n = dataclasses.replace(cfg.params, delta=1.0 / n)
        dist_n = cfg.nplayer_distribution(n)
        sol_n = _stage(f"equilibrium.N{n}", result.timing, solve, params_n, dist_n, mode,
                       tol=cfg.tol, bundle=_bundle(cfg, params_n))
        result.comparisons[n] = sol_n
        gaps.append(float(np.max(np.abs(sol_n.mu - mfg.mu))))
        thetas.append(sol_n.theta * sol_n.sign)
        cs.append(sol_n.c)
        cols.append(sol_n.mu)
    files = [
        write_csv(out / "nplayer_convergence.csv", ["N", "sup_gap", "theta", "c"],
                  [list(players), gaps, thetas, cs]),
        write_csv(out / "mu_nplayer.csv", ["t", "mu_mfg"] + [f"mu_N{n}" for n in players],
                  [t, mfg.mu] + cols),
    ]
    order = np.argsort(players)
    sorted_gaps = np.asarray(gaps)[order]
    decreasing = bool(np.all(np.diff(sorted_gaps) < 0))
    entries = {"players": ",".join(str(n) for n in players), "gap_decreasing": decreasing}
    files.append(write_summary(out / "nplayer_summary.txt", entries, files))
    result.files = files
    result.ok = decreasing
    return result


# --- argument handling

def _players(text: str):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("player counts must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liqgame", description="Equilibrium liquidation with no change of trading direction")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", type=Path)
    common.add_argument("--grid-n", type=int, help="number of time nodes")
    common.add_argument("--tol", type=float, help="root-finding tolerance")
    common.add_argument("--out-dir", type=Path, help="directory for output files")
    common.add_argument("--seed", type=int, help="seed for random deviations")
    sub.add_parser("solve", parents=[common], help="solve each configured mode")
    sub.add_parser("verify", parents=[common], help="run the independent checks")
    sub.add_parser("compare", parents=[common], help="compare the three variants")
    sw = sub.add_parser("sweep-n", parents=[common], help="N-player games against the MFG")
    sw.add_argument("--N", type=_players, help="comma-separated player counts")
    return parser


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    changes = {}
    if args.grid_n is not None:
        if args.grid_n < 16:
            raise ConfigError("--grid-n must be at least 16", source="command line")
        changes["grid_n"] = args.grid_n
    if args.tol is not None:
        changes["tol"] = args.tol
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out_dir is not None:
        changes["out_dir"] = str(args.out_dir)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "solve":
            res = run(cfg)
        elif args.command == "verify":
            res = verify(cfg)
            print("\n".join(res.verification))
        elif args.command == "compare":
            res = compare_modes(cfg)
        else:
            players = args.N or list(cfg.game.players)
            if not players:
                raise ConfigError("no player counts: pass --N or set game.players",
                                  source=str(args.config))
            res = sweep_n(cfg, players)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for f in res.files:
        print(f"wrote {f}")
    for stage, secs in res.timing.items():
        log.info("%s: %.3f s", stage, secs)
    return 0 if res.ok else 1


if __name__ == "__main__":
    sys.exit(main())
