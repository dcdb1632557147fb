"""Second-order (position-velocity) particle swarm dynamics.

    dX = V dt
    dV = -(gamma/m) V dt + (lam/m)(x_alpha - X) dt + (sigma/m) D(x_alpha - X) dB

with friction ``gamma = 1 - m`` and ``x_alpha`` the consensus point of the
spatial marginal.  Noise only enters the velocity channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .cbo import _checked_consensus, _chunks
from .core import ConsensusPoint, CostFunction, consensus_point
from .errors import ConfigError, IntegrationError, PreconditionError
from .laws import InitialLaw

DEFAULT_POSITION_LAW = InitialLaw("uniform", low=-3.0, high=3.0)
DEFAULT_VELOCITY_LAW = InitialLaw("gaussian", mean=0.0, std=1.0)


@dataclass(frozen=True)
class PsoParams:
    m: float = 0.5
    gamma: Optional[float] = None
    lam: float = 1.0
    sigma: float = 0.5
    alpha: float = 10.0
    dt: float = 1e-2
    t_final: float = 1.0
    n_particles: int = 100
    dim: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.m <= 1:
            raise ConfigError(f"inertia m must lie in (0, 1], got {self.m}")
        gamma = 1.0 - self.m
        if self.gamma is None:
            object.__setattr__(self, "gamma", gamma)
        elif not math.isclose(self.gamma, gamma, rel_tol=0, abs_tol=1e-15):
            raise ConfigError(f"friction must equal 1 - m = {gamma}, got {self.gamma}")
        if self.lam < 0 or self.sigma < 0 or self.alpha < 0:
            raise ConfigError("lambda, sigma and alpha must be nonnegative")
        if not (0 < self.dt <= self.t_final):
            raise ConfigError("need 0 < dt <= t_final")
        ratio = self.t_final / self.dt
        if abs(ratio - round(ratio)) > 1e-12 * ratio:
            raise ConfigError(f"t_final/dt = {ratio!r} is not an integer step count")
        if self.n_particles < 1 or self.dim < 1:
            raise ConfigError("n_particles and dim must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass(frozen=True)
class PsoEnsembleState:
    t: float
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.velocities, dtype=float)
        if x.ndim != 2 or x.shape != v.shape:
            raise PreconditionError(f"positions {x.shape} and velocities {v.shape} must share an (N, d) shape")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise IntegrationError("non-finite PSO state")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)


def pso_consensus(state: PsoEnsembleState, cost: CostFunction, alpha: float) -> ConsensusPoint:
    """Consensus point of the spatial marginal; velocities play no role."""
    return consensus_point(state.positions, cost, alpha, warn=False)


def pso_em_step(
    state: PsoEnsembleState,
    consensus: ConsensusPoint,
    params: PsoParams,
    noise: np.ndarray,
    step_index: Optional[int] = None,
    threads: int = 1,
) -> PsoEnsembleState:
    x, v = state.positions, state.velocities
    if noise.shape != x.shape:
        raise PreconditionError(f"noise shape {noise.shape} does not match ensemble {x.shape}")
    dt, m = params.dt, params.m

    def update(sl):
        pull = consensus.x_alpha - x[sl]
        with np.errstate(over="ignore", invalid="ignore"):
            xn = x[sl] + v[sl] * dt
            vn = (v[sl] - (params.gamma / m) * v[sl] * dt + (params.lam / m) * pull * dt
                  + (params.sigma / m) * pull * math.sqrt(dt) * noise[sl])
        return xn, vn

    if threads <= 1:
        xn, vn = update(slice(None))
    else:
        parts = rng.parallel_map(update, _chunks(x.shape[0], threads), threads)
        xn = np.concatenate([p[0] for p in parts])
        vn = np.concatenate([p[1] for p in parts])
    if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(vn))):
        raise IntegrationError("non-finite PSO coordinate", step_index)
    return PsoEnsembleState(state.t + dt, xn, vn)


@dataclass(frozen=True)
class PsoTrajectory:
    time_grid: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    x_alpha: np.ndarray
    noise_seed: int
    params: PsoParams = field(repr=False)

    def __post_init__(self):
        for name in ("time_grid", "positions", "velocities", "x_alpha"):
            getattr(self, name).setflags(write=False)

    @property
    def snapshots(self) -> list[PsoEnsembleState]:
        return [PsoEnsembleState(float(t), x, v) for t, x, v in zip(self.time_grid, self.positions, self.velocities)]


def pso_simulate(
    cost: CostFunction,
    params: PsoParams,
    record_every: int = 1,
    *,
    position_law: Optional[InitialLaw] = None,
    velocity_law: Optional[InitialLaw] = None,
    init: Optional[tuple[np.ndarray, np.ndarray]] = None,
    stream: Sequence[int] = (),
    noise: Optional[Callable[[int, tuple], np.ndarray]] = None,
    threads: int = 1,
) -> PsoTrajectory:
    """Synchronous Euler-Maruyama run; deterministic in ``(seed, stream)``.

    Positions are drawn from substream ``(*stream, 0)`` and velocities from
    ``(*stream, 1)``; ``threads`` never changes results.
    """
    if record_every < 1 or params.n_steps % record_every:
        raise PreconditionError(f"record_every={record_every} must divide the step count {params.n_steps}")
    if cost.dim != params.dim:
        raise PreconditionError(f"cost dimension {cost.dim} != params.dim {params.dim}")
    n, d = params.n_particles, params.dim
    if init is None:
        x = (position_law or DEFAULT_POSITION_LAW).sample(n, d, params.seed, (*stream, 0))
        v = (velocity_law or DEFAULT_VELOCITY_LAW).sample(n, d, params.seed, (*stream, 1))
    else:
        x, v = (np.array(a, dtype=float).reshape(n, d) for a in init)

    m = params.n_steps // record_every
    times = np.arange(m + 1) * (record_every * params.dt)
    pos = np.empty((m + 1, n, d))
    vel = np.empty((m + 1, n, d))
    xas = np.empty((m + 1, d))
    state = PsoEnsembleState(0.0, x, v)
    noise_stream = (rng.NOISE, *stream)
    for k in range(params.n_steps + 1):
        cp = _checked_consensus(state.positions, cost, params.alpha, k)
        if k % record_every == 0:
            j = k // record_every
            pos[j], vel[j], xas[j] = state.positions, state.velocities, cp.x_alpha
        if k == params.n_steps:
            break
        xi = noise(k, (n, d)) if noise is not None else rng.normal_block(params.seed, noise_stream, k, (n, d))
        state = pso_em_step(state, cp, params, xi, step_index=k, threads=threads)
    return PsoTrajectory(times, pos, vel, xas, params.seed, params)


def pso_fourth_moments(traj: PsoTrajectory) -> np.ndarray:
    """``(1/N) sum_i (|X_i|^4 + |V_i|^4)`` at every recorded time."""
    x4 = np.sum(traj.positions**2, axis=-1) ** 2
    v4 = np.sum(traj.velocities**2, axis=-1) ** 2
    return np.mean(x4 + v4, axis=-1)


def pso_moment_diagnostics(traj: PsoTrajectory) -> float:
    """Supremum over recorded times of the joint fourth moment."""
    return float(np.max(pso_fourth_moments(traj)))
