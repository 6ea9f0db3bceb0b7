"""Command-line entry point: ``python -m minemfg {solve,refine,simulate,best-response}``.

Exit codes: 0 success, 2 bad config, 3 solver did not converge or failed
(artifacts still written where possible), 4 missing equilibrium artifacts.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import platform
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .core import GridError, HashRateFlow, MassLeakError, PolicyTable, kolmogorov_forward
from .equilibrium import EquilibriumResult, Game, best_response_value_gap, solve
from .limit import refinement_study
from .nplayer import (
    empirical_exploitability,
    simulate_population,
    wealth_statistics,
    write_trajectory_csv,
)

log = logging.getLogger("minemfg")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MISSING = 0, 2, 3, 4


def _fmt(v) -> str:
    return repr(float(v))


def _write_rows(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _grid_table(path: Path, header: str, times, xs, table) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        xs_s = [_fmt(x) for x in xs]
        for k, row in enumerate(table):
            t = _fmt(times[k])
            fh.writelines(f"{k},{t},{xs_s[i]},{_fmt(row[i])}\n" for i in range(len(xs_s)))


def write_solve_artifacts(out: Path, game: Game, res: EquilibriumResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    times = game.time.times()
    xs = game.grid.points
    _write_rows(out / "eta_bar.csv", "k,t,eta_bar",
                ((str(k), _fmt(times[k]), _fmt(e)) for k, e in enumerate(res.eta.eta_bar)))
    _grid_table(out / "policy.csv", "k,t,x,a_star", times, xs, res.policy.actions)
    _grid_table(out / "value.csv", "k,t,x,v", times, xs, res.values.values)
    _grid_table(out / "distribution.csv", "k,t,x,mass", times, xs, res.flow.mu)
    _write_rows(out / "trace.csv", "iter,residual",
                ((str(i), _fmt(r)) for i, r in enumerate(res.residual_trace)))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, artifacts, extra: Optional[dict] = None):
    import numba
    import scipy

    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "seed": cfg.simulation.seed,
        "versions": {
            "minemfg": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
        },
        "artifacts": {name: _sha256(out / name) for name in sorted(artifacts) if (out / name).exists()},
    }
    if extra:
        manifest["run"] = extra
    # solve and refine own their directory; the other commands add a sibling
    name = "manifest.yaml" if command in ("solve", "refine") else f"manifest-{command}.yaml"
    with open(out / name, "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)


def _result_summary(res: EquilibriumResult) -> dict:
    return {
        "converged": bool(res.converged),
        "iterations": int(res.iterations),
        "consistency_residual": float(res.consistency_residual),
        "consistency_bound": float(res.consistency_bound),
        "eta_min": float(res.eta.eta_bar.min()) if len(res.eta) else 0.0,
        "eta_positive": res.positive,
        "clamped_mass": float(res.flow.clamped_mass),
        "wall_time_s": round(float(res.wall_time), 3),
    }


SOLVE_FILES = ("eta_bar.csv", "policy.csv", "value.csv", "distribution.csv", "trace.csv")


def run_solve(cfg: ExperimentConfig, out: Path) -> int:
    game = cfg.game()
    try:
        res = solve(game, cfg.solver_config(),
                    callback=lambda it, ch, lo, hi: log.debug("iter %d change %.3e eta [%.4g, %.4g]", it, ch, lo, hi))
    except (GridError, MassLeakError) as exc:
        log.error("solver failed: %s", exc)
        return EXIT_SOLVER
    write_solve_artifacts(out, game, res)
    summary = _result_summary(res)
    write_manifest(out, cfg, "solve", SOLVE_FILES, summary)
    log.info("solve: %s", summary)
    return EXIT_OK if res.converged else EXIT_SOLVER


def run_refine(cfg: ExperimentConfig, out: Path, n_min: int, n_max: int) -> int:
    if not 0 <= n_min <= n_max:
        raise ConfigError("need 0 <= n_min <= n_max")
    out.mkdir(parents=True, exist_ok=True)
    game = cfg.game(n_min)

    def dump(n, res):
        sub = out / f"n{n}"
        write_solve_artifacts(sub, game.with_time(cfg.time_grid(n)), res)

    study = refinement_study(game, cfg.solver_config(), range(n_min, n_max + 1),
                             warm_start=cfg.refine.warm_start, on_result=dump)
    study.to_csv(out / "refinement_study.csv")
    rows = [dataclasses.asdict(r) for r in study.rows]
    for r in rows:
        r["L1_distance_to_next"] = None if np.isnan(r["L1_distance_to_next"]) else float(r["L1_distance_to_next"])
        r["wall_time_s"] = round(float(r["wall_time_s"]), 3)
    write_manifest(out, cfg, "refine", ["refinement_study.csv"], {"rows": rows})
    ok = all(r.converged for r in study.rows)
    return EXIT_OK if ok else EXIT_SOLVER


def _read_long_table(path: Path, K: int, m: int, col: int = 3) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != K * m:
        raise ValueError(f"{path.name} has {data.shape[0]} rows, expected {K * m}")
    return data[:, col].reshape(K, m)


def load_equilibrium(src: Path, game: Game):
    """Read ``(eta, policy)`` written by a previous solve."""
    K, m = game.time.K, len(game.grid)
    eta = np.loadtxt(src / "eta_bar.csv", delimiter=",", skiprows=1, ndmin=2)
    if eta.shape[0] != K:
        raise ValueError(f"eta_bar.csv has {eta.shape[0]} rows, expected {K}")
    pol = _read_long_table(src / "policy.csv", K, m)
    return HashRateFlow(eta[:, 2]), PolicyTable(pol)


def _equilibrium_or_exit(cfg: ExperimentConfig, game: Game, src: Path):
    try:
        return load_equilibrium(src, game)
    except (OSError, ValueError) as exc:
        log.error("no usable equilibrium artifacts in %s: %s", src, exc)
        return None


def run_simulate(cfg: ExperimentConfig, out: Path, src: Optional[Path] = None) -> int:
    game = cfg.game()
    K, m = game.time.K, len(game.grid)
    if cfg.simulation.policy == "zero":
        eta, policy = HashRateFlow(np.zeros(K)), PolicyTable.zeros(K, m)
    else:
        loaded = _equilibrium_or_exit(cfg, game, src or out)
        if loaded is None:
            return EXIT_MISSING
        eta, policy = loaded
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.solver_config()
    flow = kolmogorov_forward(policy, eta, game.mu0, game.grid, game.params, game.time, sc.scheme,
                              max_clamped=sc.max_clamped)
    times = game.time.times()
    xs = game.grid.points
    # mass per node over the node's dual cell
    edges = np.concatenate(([xs[0]], 0.5 * (xs[1:] + xs[:-1]), [xs[-1]]))
    width = np.diff(edges)
    _grid_table(out / "wealth_evolution.csv", "k,t,x,density", times, xs, flow.mu / width)
    _grid_table(out / "control_surface.csv", "k,t,x,a_star", times, xs, policy.actions)

    sim = cfg.simulation
    traj = simulate_population(sim.N, policy, eta, game, sim.seed, sim.mode, sim.include_self, lattice=sim.lattice)
    st = wealth_statistics(traj)
    cm = traj.control_mean
    rows = []
    for k in range(K + 1):
        tail = (_fmt(cm[k]), _fmt(eta.eta_bar[k])) if k < K else ("", "")
        rows.append((str(k), _fmt(times[k]), _fmt(st.mean[k]), _fmt(st.variance[k]), _fmt(st.skewness[k]),
                     _fmt(st.gini[k]), _fmt(st.dropout[k])) + tail)
    _write_rows(out / "stats.csv",
                "k,t,mean,variance,skewness,gini,dropout_fraction,empirical_control_mean,eta_bar", rows)
    write_trajectory_csv(traj, out / "population.csv", st)
    files = ["wealth_evolution.csv", "control_surface.csv", "stats.csv", "population.csv"]
    write_manifest(out, cfg, "simulate", files, {
        "N": sim.N, "mode": sim.mode,
        "gini_0": float(st.gini[0]), "gini_T": float(st.gini[-1]),
        "dropout_0": float(st.dropout[0]), "dropout_T": float(st.dropout[-1]),
    })
    return EXIT_OK


def run_best_response(cfg: ExperimentConfig, out: Path, src: Optional[Path] = None) -> int:
    game = cfg.game()
    loaded = _equilibrium_or_exit(cfg, game, src or out)
    if loaded is None:
        return EXIT_MISSING
    eta, policy = loaded
    sc = cfg.solver_config()
    gap = best_response_value_gap(eta, policy, game, sc)
    sim = cfg.simulation
    traj = simulate_population(sim.N, policy, eta, game, sim.seed, sim.mode, sim.include_self, lattice=sim.lattice)
    emp = empirical_exploitability(traj, game, sc)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "best_response.csv", "quantity,value",
                [("value_gap", _fmt(gap)), ("empirical_exploitability", _fmt(emp))])
    write_manifest(out, cfg, "best-response", ["best_response.csv"],
                   {"value_gap": float(gap), "empirical_exploitability": float(emp)})
    print(f"value_gap={gap:.6g} empirical_exploitability={emp:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minemfg", description="Mean-field mining game solver")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "refine", "simulate", "best-response"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, default=None, help="output directory (overrides output.dir)")
        s.add_argument("--seed", type=int, default=None, help="master seed (overrides simulation.seed)")
        if name == "refine":
            s.add_argument("--n-min", type=int, default=None)
            s.add_argument("--n-max", type=int, default=None)
        if name in ("simulate", "best-response"):
            s.add_argument("--equilibrium", type=Path, default=None,
                           help="directory of a previous solve (default: --out)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.simulation.seed = args.seed
        if args.out is not None:
            cfg.output.dir = str(args.out)
        if args.command == "refine":
            if args.n_min is not None:
                cfg.refine.n_min = args.n_min
            if args.n_max is not None:
                cfg.refine.n_max = args.n_max
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output.dir)
    try:
        if args.command == "solve":
            return run_solve(cfg, out)
        if args.command == "refine":
            return run_refine(cfg, out, cfg.refine.n_min, cfg.refine.n_max)
        if args.command == "simulate":
            return run_simulate(cfg, out, args.equilibrium)
        return run_best_response(cfg, out, args.equilibrium)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GridError, MassLeakError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
