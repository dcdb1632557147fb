"""Finite-volume solver for the one-dimensional mean-field CBO equation.

    d/dt mu = (sigma^2/2) d^2/dx^2 ((x - b)^2 mu) + lam d/dx ((x - b) mu)

with ``b`` either prescribed (the linear equation) or the consensus point of
``mu`` itself.  The scheme is explicit and conservative on a uniform
cell-centered mesh: upwind advective fluxes, central diffusive fluxes, and
zero flux through both domain ends.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import rng
from .cbo import simulate
from .core import ConsensusTrajectory, CostFunction, SimParams, _consensus
from .errors import ConfigError, PreconditionError, SchemeError
from .laws import InitialLaw
from .meanfield import TestFunction
from .metrics import histogram_l1

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12
NEGATIVE_TOL = 1e-14


@dataclass(frozen=True)
class GridDensity:
    """Cell masses of a probability measure on ``[x_min, x_max]``."""

    x_min: float
    x_max: float
    n_cells: int
    masses: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if not self.x_max > self.x_min or self.n_cells < 1:
            raise ConfigError("grid needs x_max > x_min and at least one cell")
        if m.shape != (self.n_cells,):
            raise PreconditionError(f"expected {self.n_cells} masses, got shape {m.shape}")
        if np.any(m < -NEGATIVE_TOL):
            raise SchemeError(f"negative cell mass {m.min():.3e}")
        if abs(m.sum() - 1.0) > 1e-9:
            raise PreconditionError(f"cell masses sum to {m.sum():.15f}, not 1")
        object.__setattr__(self, "masses", m)

    @classmethod
    def from_law(cls, law: InitialLaw, x_min: float, x_max: float, n_cells: int) -> "GridDensity":
        """Exact cell integrals of ``law``; mass outside the domain is renormalized away."""
        edges = np.linspace(x_min, x_max, n_cells + 1)
        m = law.cell_masses(edges)
        lost = 1.0 - m.sum()
        if lost > 1e-8:
            logger.warning("initial law puts mass %.3e outside [%g, %g]", lost, x_min, x_max)
        return cls(x_min, x_max, n_cells, m / m.sum())

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.h

    def mean(self) -> float:
        return float(self.masses @ self.centers)

    def centered_moment(self, b: float, p: int = 2) -> float:
        return float(self.masses @ (self.centers - b) ** p)

    def expect(self, f) -> float:
        """``<f, mu>`` with cell centers as quadrature nodes."""
        return float(self.masses @ np.asarray(f(self.centers[:, None]), dtype=float))

    def boundary_mass(self, cells: int = 1) -> float:
        return float(self.masses[:cells].sum() + self.masses[-cells:].sum())

    def coarsen(self, factor: int) -> "GridDensity":
        if factor < 1 or self.n_cells % factor:
            raise PreconditionError(f"coarsening factor {factor} must divide {self.n_cells}")
        m = self.masses.reshape(-1, factor).sum(axis=1)
        return GridDensity(self.x_min, self.x_max, self.n_cells // factor, m, self.t)

    def to_rows(self) -> list[tuple[float, float]]:
        return list(zip(self.centers.tolist(), self.masses.tolist()))


Consensus = Union[float, ConsensusTrajectory, str]


@dataclass(frozen=True)
class PdeParams:
    """``consensus`` is a constant, a prescribed path, or ``"self_consistent"``."""

    lam: float = 1.0
    sigma: float = 0.5
    alpha: float = 10.0
    dt_pde: float = 1e-4
    consensus: Consensus = "self_consistent"

    def __post_init__(self):
        if self.lam < 0 or self.sigma < 0 or self.alpha < 0:
            raise ConfigError("lambda, sigma and alpha must be nonnegative")
        if not self.dt_pde > 0:
            raise ConfigError("dt_pde must be positive")
        if isinstance(self.consensus, str) and self.consensus != "self_consistent":
            raise ConfigError(f"unknown consensus mode {self.consensus!r}")

    @property
    def self_consistent(self) -> bool:
        return isinstance(self.consensus, str)


def grid_consensus(density: GridDensity, cost: CostFunction, alpha: float) -> float:
    """Consensus point of the grid measure, with cell centers as atoms."""
    x = density.centers[:, None]
    with np.errstate(divide="ignore"):
        log_mass = np.log(density.masses)
    return float(_consensus(x, cost(x), alpha, log_mass).x_alpha[0])


def consensus_value(density: GridDensity, params: PdeParams, cost: Optional[CostFunction] = None) -> float:
    c = params.consensus
    if params.self_consistent:
        if cost is None:
            raise PreconditionError("self-consistent mode needs a cost function")
        return grid_consensus(density, cost, params.alpha)
    if isinstance(c, ConsensusTrajectory):
        return float(c.at(density.t)[0])
    return float(c)


def cfl_rate(density: GridDensity, lam: float, sigma: float, b: float) -> float:
    """Largest admissible ``1/dt``: advective plus diffusive outflow rate of any cell."""
    h = density.h
    adv = lam * max(abs(density.x_min - b), abs(density.x_max - b)) / h
    y2 = np.max((density.centers - b) ** 2)
    return adv + sigma**2 * y2 / h**2


def stable_dt(density: GridDensity, lam: float, sigma: float, b_values: Sequence[float], safety: float = 0.9) -> float:
    """A step satisfying the CFL bound for every consensus value in ``b_values``."""
    rate = max(cfl_rate(density, lam, sigma, b) for b in b_values)
    return safety / rate


def pde_step(density: GridDensity, params: PdeParams, cost: Optional[CostFunction] = None, dt: Optional[float] = None) -> GridDensity:
    """Advance the cell masses by one explicit step.

    Raises
    ------
    ConfigError
        When the step violates the CFL bound ``dt * cfl_rate <= 1``.
    SchemeError
        When a mass drops below ``-1e-14`` or total mass drifts beyond 1e-12.
    """
    dt = params.dt_pde if dt is None else dt
    b = consensus_value(density, params, cost)
    rate = cfl_rate(density, params.lam, params.sigma, b)
    if dt * rate > 1.0:
        raise ConfigError(f"CFL violated: dt={dt:.3e} exceeds {1.0 / rate:.3e} at t={density.t:.4g}")
    m = density.masses
    h = density.h
    xc = density.centers
    faces = density.edges[1:-1]
    # advective flux, velocity -lam (x - b), upwinded
    u = -params.lam * (faces - b)
    upwind = np.where(u > 0, m[:-1], m[1:])
    flux = u * upwind / h
    # diffusive flux of (sigma^2/2) d/dx((x - b)^2 rho)
    g = (xc - b) ** 2 * m
    flux -= 0.5 * params.sigma**2 * (g[1:] - g[:-1]) / h**2
    full = np.concatenate(([0.0], flux, [0.0]))
    new = m - dt * (full[1:] - full[:-1])
    if np.any(new < -NEGATIVE_TOL):
        raise SchemeError(f"negative mass {new.min():.3e} at t={density.t:.4g}")
    new = np.maximum(new, 0.0)
    drift = abs(new.sum() - m.sum())
    if drift > MASS_TOL:
        raise SchemeError(f"mass changed by {drift:.3e} in one step")
    return GridDensity(density.x_min, density.x_max, density.n_cells, new, density.t + dt)


@dataclass
class PdeSolution:
    final: GridDensity
    times: np.ndarray
    consensus: np.ndarray
    max_boundary_mass: float
    max_mass_drift: float
    snapshots: list[GridDensity] = field(default_factory=list, repr=False)


def pde_solve(
    density: GridDensity,
    params: PdeParams,
    t_final: float,
    cost: Optional[CostFunction] = None,
    snapshot_times: Sequence[float] = (),
) -> PdeSolution:
    """Step from ``density.t`` to ``t_final`` with ``ceil(T/dt_pde)`` equal steps.

    Boundary mass (outer cell on each side) and per-step mass drift are
    monitored and returned.
    """
    span = t_final - density.t
    if span < 0:
        raise PreconditionError("t_final lies before the density time")
    n = int(math.ceil(span / params.dt_pde - 1e-9)) if span > 0 else 0
    dt = span / n if n else 0.0
    t0 = density.t
    want = sorted(snapshot_times)
    snaps, times, bs = [], [], []
    boundary, drift = density.boundary_mass(), 0.0
    cur = density
    for k in range(n):
        while want and want[0] <= cur.t + 1e-12:
            snaps.append(cur)
            want.pop(0)
        times.append(cur.t)
        bs.append(consensus_value(cur, params, cost))
        nxt = pde_step(cur, params, cost, dt)
        drift = max(drift, abs(nxt.masses.sum() - cur.masses.sum()))
        cur = replace(nxt, t=t0 + (k + 1) * dt)
        boundary = max(boundary, cur.boundary_mass())
    while want:
        snaps.append(cur)
        want.pop(0)
    times.append(cur.t)
    bs.append(consensus_value(cur, params, cost))
    if boundary > 1e-8:
        logger.warning("boundary cells reached mass %.3e; enlarge the domain", boundary)
    return PdeSolution(cur, np.array(times), np.array(bs), boundary, drift, snaps)


@dataclass
class PdeComparison:
    rows: list[tuple[int, int, float]]
    solution: PdeSolution = field(repr=False)

    def medians(self) -> dict[int, float]:
        by_n: dict[int, list[float]] = {}
        for n, _, v in self.rows:
            by_n.setdefault(n, []).append(v)
        return {n: float(np.median(v)) for n, v in sorted(by_n.items())}


def pde_vs_particles(
    cost: CostFunction,
    sim: SimParams,
    pde: PdeParams,
    grid: tuple[float, float, int],
    n_list: Sequence[int],
    seeds: Sequence[int],
    *,
    init_law: Optional[InitialLaw] = None,
    coarsen: int = 1,
    threads: int = 1,
) -> PdeComparison:
    """Histogram L1 distance at ``sim.t_final`` between particle runs and the PDE.

    The PDE starts from the exact cell integrals of ``init_law`` and runs once
    in self-consistent mode; particle runs of size ``N`` with seed ``s`` use
    substream ``(N,)``.  Both are compared on the mesh coarsened by ``coarsen``.
    """
    if sim.dim != 1:
        raise PreconditionError("particle-PDE comparison is one-dimensional")
    law = init_law or InitialLaw()
    x_min, x_max, n_cells = grid
    rho0 = GridDensity.from_law(law, x_min, x_max, n_cells)
    sol = pde_solve(rho0, replace(pde, lam=sim.lam, sigma=sim.sigma, alpha=sim.alpha), sim.t_final, cost)
    target = sol.final.coarsen(coarsen)

    def one(job):
        n, s = job
        p = replace(sim, n_particles=n, seed=s)
        x_t = simulate(cost, p, p.n_steps, init_law=law, stream=(n,)).positions[-1]
        return histogram_l1(x_t, target)

    jobs = [(n, s) for n in n_list for s in seeds]
    vals = rng.parallel_map(one, jobs, threads)
    return PdeComparison([(n, s, float(v)) for (n, s), v in zip(jobs, vals)], sol)


@dataclass(frozen=True)
class DualityResult:
    lhs: float
    rhs: float
    mc_stderr: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def _affine_flow(b: ConsensusTrajectory, t0: float, n_paths: int, lam: float, sigma: float, dt: float, seed: int):
    """Euler flow map ``x -> A x + c`` of the linear SDE for each Brownian path.

    With the drift point frozen within a step, ``X' - b = (X - b)(1 - lam dt + sigma sqrt(dt) xi)``,
    so each path acts affinely on its starting point.
    """
    n = int(round(t0 / dt))
    a = np.ones(n_paths)
    c = np.zeros(n_paths)
    for k in range(n):
        xi = rng.normal_block(seed, (rng.NOISE, 0), k, (n_paths,))
        mult = 1.0 - lam * dt + sigma * math.sqrt(dt) * xi
        bk = float(b.at(k * dt)[0])
        a = mult * a
        c = mult * c + bk * (1.0 - mult)
    return a, c


def duality_pairing_check(
    b: ConsensusTrajectory,
    psi: TestFunction,
    t0: float,
    mc_samples: int,
    *,
    rho0: GridDensity,
    lam: float,
    sigma: float,
    dt_pde: Optional[float] = None,
    dt_mc: Optional[float] = None,
    seed: int = 0,
    chunk: int = 4096,
) -> DualityResult:
    """Compare ``<psi, mu_t0>`` from the grid solver with ``<h_0, mu_0>``.

    ``h_0(x) = E[psi(X_t0)]`` for the linear SDE started at ``x`` at time 0,
    estimated from ``mc_samples`` Brownian paths; because the flow is affine
    in ``x`` per path, every path is evaluated from every cell center, and
    the pairing with the initial masses is exact for each path.  The standard
    error is over paths.
    """
    if rho0.t != 0.0:
        raise PreconditionError("the initial density must sit at t = 0")
    if t0 == 0:
        v = rho0.expect(psi.eval)
        return DualityResult(v, v, 0.0)
    if dt_pde is None:
        bs = [float(b.at(t)[0]) for t in np.linspace(0.0, t0, 51)]
        dt_pde = stable_dt(rho0, lam, sigma, bs)
    params = PdeParams(lam=lam, sigma=sigma, alpha=0.0, dt_pde=dt_pde, consensus=b)
    lhs = pde_solve(rho0, params, t0).final.expect(psi.eval)

    dt_mc = dt_mc if dt_mc is not None else t0 / 1000
    if abs(round(t0 / dt_mc) * dt_mc - t0) > 1e-9 * t0:
        raise PreconditionError("t0 must be a multiple of dt_mc")
    a, c = _affine_flow(b, t0, mc_samples, lam, sigma, dt_mc, seed)
    live = rho0.masses > 0
    xc, mass = rho0.centers[live], rho0.masses[live]
    per_path = np.empty(mc_samples)
    for s in range(0, mc_samples, chunk):
        end = a[s : s + chunk, None] * xc[None, :] + c[s : s + chunk, None]
        per_path[s : s + chunk] = psi.eval(end[..., None]) @ mass
    rhs = float(per_path.mean())
    se = float(per_path.std(ddof=1) / math.sqrt(mc_samples)) if mc_samples > 1 else math.nan
    return DualityResult(lhs, rhs, se)
