"""Command-line experiment runner.

Each subcommand reads one YAML config (the shipped default when ``--config``
is omitted), runs the corresponding library experiment, and writes one or
more CSV tables plus a JSON summary that embeds the resolved config.  With
``output.formats`` containing ``dat`` the tables are also written as
whitespace-separated files with a ``#`` header; with ``png`` a figure is
rendered next to them.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .cbo import run_optimize, simulate
from .config import SCHEMA_VERSION, SUBCOMMANDS, ExperimentConfig, default_config_path, load_config
from .core import check_assumptions, laplace_value
from .errors import ConfigError, DomainError, NumericalError, PreconditionError
from .meanfield import TestFunction, fphi_scaling_experiment, increment_probe, w2_convergence
from .pde1d import GridDensity, PdeParams, pde_vs_particles, stable_dt
from .pso import pso_fourth_moments, pso_simulate

logger = logging.getLogger("cbomf")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class Table:
    name: str
    header: list[str]
    rows: list[Sequence] = field(default_factory=list)


@dataclass
class Report:
    tables: list[Table]
    summary: dict
    figure: Optional[Callable[[Path], object]] = None


def write_table(table: Table, out: Path, formats: Sequence[str]) -> list[Path]:
    paths = []
    if "csv" in formats:
        p = out / f"{table.name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.header)
            w.writerows([_fmt(v) for v in row] for row in table.rows)
        paths.append(p)
    if "dat" in formats:
        p = out / f"{table.name}.dat"
        with open(p, "w") as fh:
            fh.write("# " + " ".join(table.header) + "\n")
            for row in table.rows:
                fh.write(" ".join(_fmt(v) for v in row) + "\n")
        paths.append(p)
    return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_report(report: Report, cfg: ExperimentConfig, subcommand: str, out: Path, summary_name: str = "summary") -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    formats = cfg.output.formats
    paths = []
    for t in report.tables:
        paths += write_table(t, out, formats)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "subcommand": subcommand,
        "results": _jsonable(report.summary),
        "config": cfg.resolved(),
    }
    p = out / f"{summary_name}.json"
    p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths.append(p)
    if "png" in formats and report.figure is not None:
        # figures import matplotlib lazily; it is slow to load
        paths.append(report.figure(out / f"{subcommand}.png"))
    return paths


# --- subcommands -------------------------------------------------------------


def cmd_optimize(cfg: ExperimentConfig, threads: int = 1) -> Report:
    cost, params = cfg.make_cost(), cfg.sim_params()
    res = run_optimize(cost, params, cfg.experiment.success_radius, init_law=cfg.init_law(), threads=threads)
    traj = res.trajectory
    d = params.dim
    header = ["t", *[f"x_alpha_{k + 1}" for k in range(d)], "variance", "ess"]
    rows = [[t, *xa, v, e] for t, xa, v, e in zip(traj.time_grid, traj.x_alpha, res.variance_history, traj.ess)]
    summary = {"best_point": res.best_point, "best_value": res.best_value, "success": res.success}

    def fig(path):
        from .plotting import plot_optimize

        dist = None if cost.minimizer is None else np.linalg.norm(traj.x_alpha - cost.minimizer, axis=1)
        return plot_optimize(path, traj.time_grid, res.variance_history, dist)

    return Report([Table("history", header, rows)], summary, fig)


def _phi(cfg: ExperimentConfig) -> TestFunction:
    c = np.broadcast_to(np.asarray(cfg.experiment.phi.center, dtype=float), (cfg.sim.dim,))
    return TestFunction(c.copy(), cfg.experiment.phi.radius)


def cmd_fphi_scaling(cfg: ExperimentConfig, threads: int = 1) -> Report:
    cfg.require("n_list", "replicas")
    e = cfg.experiment
    res = fphi_scaling_experiment(cfg.make_cost(), cfg.sim_params(), e.n_list, e.replicas, _phi(cfg),
                                  init_law=cfg.init_law(), threads=threads)
    rows = [[n, m, s] for n, m, s in zip(res.n_list, res.mean_sq, res.stderr)]
    intercept = None
    if not res.degenerate:
        intercept = float(np.mean(np.log(res.mean_sq)) - res.slope * np.mean(np.log(res.n_list)))
    summary = {"slope": res.slope, "slope_stderr": res.slope_stderr, "intercept": intercept,
               "degenerate": res.degenerate, "replicas": e.replicas}

    def fig(path):
        from .plotting import plot_fphi

        return plot_fphi(path, res.n_list, res.mean_sq, res.stderr, res.slope, intercept)

    return Report([Table("fphi", ["N", "mean_sq", "stderr"], rows)], summary, fig)


def cmd_meanfield_converge(cfg: ExperimentConfig, threads: int = 1) -> Report:
    cfg.require("n_list", "seeds")
    e = cfg.experiment
    res = w2_convergence(cfg.make_cost(), cfg.sim_params(), e.n_list, e.seeds, reference=e.reference,
                         reference_n=e.reference_n, reference_seed=e.reference_seed, init_law=cfg.init_law(),
                         picard_iters=e.max_iters, picard_tol=e.tol, threads=threads)
    med = res.medians()
    summary = {"medians": med, "reference": res.reference, "reference_n": res.reference_n,
               "cross_check": res.cross_check, "picard_iterations": res.picard_iterations}

    def fig(path):
        from .plotting import plot_convergence

        return plot_convergence(path, res.rows, med, r"$W_2(\mu^N_T, \mathrm{ref}_T)$")

    return Report([Table("w2", ["N", "seed", "w2"], res.rows)], summary, fig)


def cmd_laplace(cfg: ExperimentConfig, threads: int = 1) -> Report:
    """Laplace bracket on cost values of initial-law samples, one vector per replica."""
    cfg.require("alphas", "replicas")
    e = cfg.experiment
    cost, law, seed = cfg.make_cost(), cfg.init_law(), cfg.sim.seed
    log_n = math.log(e.n_points)

    def one(r):
        c = cost(law.sample(e.n_points, cfg.sim.dim, seed, (r,)))
        lo = float(c.min())
        return [(r, a, lo, laplace_value(c, a), lo + log_n / a) for a in e.alphas]

    rows = [row for block in rng.parallel_map(one, range(e.replicas), threads) for row in block]
    table = [[r, a, lo, lv, up, lv - lo, lo <= lv <= up] for r, a, lo, lv, up in rows]
    violation = max(max(lo - lv, lv - up, 0.0) for _, _, lo, lv, up in rows)
    summary = {"all_within": all(t[-1] for t in table), "max_violation": violation,
               "finite": bool(all(math.isfinite(t[3]) for t in table))}

    def fig(path):
        from .plotting import plot_laplace

        gaps = np.array([t[5] for t in table]).reshape(e.replicas, len(e.alphas))
        return plot_laplace(path, e.alphas, gaps, e.n_points)

    header = ["replica", "alpha", "min", "laplace", "upper_bound", "gap", "within_bracket"]
    return Report([Table("laplace", header, table)], summary, fig)


def cmd_pde_compare(cfg: ExperimentConfig, threads: int = 1) -> Report:
    cfg.require("n_list", "seeds", "grid")
    e, g = cfg.experiment, cfg.experiment.grid
    if cfg.sim.dim != 1:
        raise ConfigError("pde-compare is one-dimensional; set sim.dim = 1")
    law, sim = cfg.init_law(), cfg.sim_params()
    rho0 = GridDensity.from_law(law, g.x_min, g.x_max, g.n_cells)
    dt_pde = g.dt_pde
    if dt_pde is None:
        # consensus stays inside the hull of the initial support
        support = rho0.centers[rho0.masses > 0]
        dt_pde = stable_dt(rho0, sim.lam, sim.sigma, [support.min(), support.max()])
    pde = PdeParams(sim.lam, sim.sigma, sim.alpha, dt_pde, "self_consistent")
    cost = cfg.make_cost()
    res = pde_vs_particles(cost, sim, pde, (g.x_min, g.x_max, g.n_cells), e.n_list, e.seeds,
                           init_law=law, coarsen=g.coarsen, threads=threads)
    med = res.medians()
    final = res.solution.final
    summary = {"medians": med, "max_boundary_mass": res.solution.max_boundary_mass,
               "max_mass_drift": res.solution.max_mass_drift, "dt_pde": dt_pde,
               "consensus_final": float(res.solution.consensus[-1])}
    tables = [Table("pde_compare", ["N", "seed", "l1"], res.rows),
              Table("density", ["cell_center", "mass"], final.to_rows())]

    def fig(path):
        from .plotting import plot_density

        n = max(e.n_list)
        p = replace(sim, n_particles=n, seed=e.seeds[0])
        x = simulate(cost, p, p.n_steps, init_law=law, stream=(n,)).positions[-1][:, 0]
        coarse = final.coarsen(g.coarsen)
        return plot_density(path, coarse.centers, coarse.masses, coarse.h, x, coarse.edges)

    return Report(tables, summary, fig)


def cmd_pso(cfg: ExperimentConfig, threads: int = 1) -> Report:
    cost, params = cfg.make_cost(), cfg.pso_params()
    traj = pso_simulate(cost, params, position_law=cfg.init_law(), velocity_law=cfg.velocity_law(), threads=threads)
    m4 = pso_fourth_moments(traj)
    d = params.dim
    header = ["t", *[f"x_alpha_{k + 1}" for k in range(d)], "m4_joint"]
    rows = [[t, *xa, m] for t, xa, m in zip(traj.time_grid, traj.x_alpha, m4)]
    best = traj.x_alpha[-1]
    summary = {"sup_m4_joint": float(m4.max()), "final_x_alpha": best, "final_value": cost(best),
               "m": params.m, "gamma": params.gamma}

    def fig(path):
        from .plotting import plot_pso

        return plot_pso(path, traj.time_grid, m4, traj.x_alpha)

    return Report([Table("pso", header, rows)], summary, fig)


def cmd_assumptions(cfg: ExperimentConfig, threads: int = 1) -> Report:
    e = cfg.experiment
    cost = cfg.make_cost()
    rep = check_assumptions(cost, e.box_radius, e.n_samples, cfg.sim.seed)
    values = {
        "bounded_below": rep.min_value,
        "local_lipschitz": rep.lipschitz_estimate,
        "upper_growth": rep.cu_ratio_max,
        "lower_growth": rep.cl_ratio_min,
    }
    gc = cost.growth_constants
    bound = {"bounded_below": cost.lower_bound, "local_lipschitz": math.nan,
             "upper_growth": gc.c_u if gc else math.nan, "lower_growth": gc.c_l if gc else math.nan}
    rows = [[k, rep.status[k], values[k], bound[k]] for k in ("bounded_below", "local_lipschitz", "upper_growth", "lower_growth")]
    summary = {"cost": rep.cost_name, "passed": rep.passed, "status": rep.status, "n_far": rep.n_far,
               "n_samples": rep.n_samples, "box_radius": rep.box_radius}

    def fig(path):
        from .plotting import plot_growth

        g = rng.generator(cfg.sim.seed, (rng.PROBE,))
        x = g.uniform(-e.box_radius, e.box_radius, size=(e.n_samples, cost.dim))
        r = np.linalg.norm(x, axis=1)
        return plot_growth(path, r, cost(x) - cost.lower_bound, gc.c_u if gc else None,
                           gc.c_l if gc else None, gc.m if gc else None)

    return Report([Table("assumptions", ["check", "status", "value", "constant"], rows)], summary, fig)


def cmd_increment_probe(cfg: ExperimentConfig, threads: int = 1) -> Report:
    cfg.require("deltas", "replicas")
    e = cfg.experiment
    params = cfg.sim_params()
    deltas = [k * params.dt for k in e.deltas]
    rep = increment_probe(cfg.make_cost(), params, deltas, e.replicas, probe_time=e.probe_time,
                          init_law=cfg.init_law(), threads=threads)
    rows = [[d, m, s, rep.c_fit * (math.sqrt(d) + d)] for d, m, s in zip(rep.deltas, rep.mean_sq, rep.stderr)]
    summary = {"probe_time": rep.probe_time, "c_fit": rep.c_fit, "exponent": rep.exponent, "regime": rep.regime,
               "moment_constant": rep.moment_constant, "theory_constant": rep.theory_constant,
               "within_theory": rep.c_fit <= rep.theory_constant}

    def fig(path):
        from .plotting import plot_increments

        return plot_increments(path, rep.deltas, rep.mean_sq, rep.stderr, rep.c_fit)

    return Report([Table("increments", ["delta", "mean_sq", "stderr", "fitted_bound"], rows)], summary, fig)


COMMANDS: dict[str, tuple[Callable[[ExperimentConfig, int], Report], str]] = {
    "optimize": (cmd_optimize, "result"),
    "fphi-scaling": (cmd_fphi_scaling, "summary"),
    "meanfield-converge": (cmd_meanfield_converge, "summary"),
    "laplace": (cmd_laplace, "summary"),
    "pde-compare": (cmd_pde_compare, "summary"),
    "pso": (cmd_pso, "summary"),
    "assumptions": (cmd_assumptions, "summary"),
    "increment-probe": (cmd_increment_probe, "summary"),
}
assert set(COMMANDS) == set(SUBCOMMANDS)

HELP = {
    "optimize": "run the particle system and report the consensus minimizer",
    "fphi-scaling": "weak-form residual E|F_phi|^2 against N and its log-log slope",
    "meanfield-converge": "W2 distance of finite-N clouds to a mean-field reference",
    "laplace": "check the Laplace-principle bracket on sampled cost vectors",
    "pde-compare": "histogram L1 between particles and the 1D mean-field PDE",
    "pso": "second-order swarm dynamics and its joint fourth moment",
    "assumptions": "probe boundedness, local Lipschitz and growth conditions of a cost",
    "increment-probe": "second-moment increments E|X_{t+delta} - X_t|^2",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbomf", description="Consensus-based optimization experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", type=Path, help="YAML config (default: the shipped config for this subcommand)")
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    return parser


def run(subcommand: str, config: Optional[Path] = None, out: Optional[Path] = None, threads: int = 1) -> int:
    try:
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(config if config is not None else default_config_path(subcommand))
        if cfg.subcommand is not None and cfg.subcommand != subcommand:
            raise ConfigError(f"config is for {cfg.subcommand!r}, not {subcommand!r}")
        out_dir = out or (Path(cfg.output.dir) if cfg.output.dir else Path("cbomf-out") / subcommand)
        fn, summary_name = COMMANDS[subcommand]
        report = fn(cfg, threads)
        paths = write_report(report, cfg, subcommand, out_dir, summary_name)
    except (ConfigError, PreconditionError, DomainError) as err:
        logger.error("configuration error: %s", err)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as err:
        logger.error("numerical failure: %s", err)
        return EXIT_NUMERICAL
    for p in paths:
        print(p)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return run(args.subcommand, args.config, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
