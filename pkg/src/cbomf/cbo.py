"""Euler-Maruyama integration of the consensus-based optimization system.

Each particle follows

    dX = -lam (X - x_alpha) dt + sigma D(X - x_alpha) dB,

where ``D(y)`` is the diagonal matrix with entries ``y_k``, so every
coordinate is noised in proportion to its own distance from consensus.
The consensus point is recomputed once per step from the current positions
and held fixed while all particles are advanced.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .core import (
    ConsensusPoint,
    ConsensusTrajectory,
    CostFunction,
    EnsembleState,
    SimParams,
    _consensus,
)
from .errors import IntegrationError, PreconditionError
from .laws import InitialLaw

logger = logging.getLogger(__name__)

DEFAULT_INIT = InitialLaw("uniform", low=-3.0, high=3.0)

NoiseFn = Callable[[int, tuple], np.ndarray]


def _frozen(b) -> ConsensusPoint:
    return ConsensusPoint(x_alpha=np.asarray(b, dtype=float), log_z=math.nan, ess=math.nan)


def _checked_consensus(x: np.ndarray, cost: CostFunction, alpha: float, step: int) -> ConsensusPoint:
    """Consensus of finite positions whose costs must also be finite.

    A cost overflow here means the dynamics blew up, not that the caller
    passed bad input, so it surfaces as an integration failure.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        costs = cost(x)
    if not np.all(np.isfinite(costs)):
        raise IntegrationError("cost overflow on the particle ensemble", step)
    return _consensus(x, costs, alpha)


def _chunks(n: int, threads: int) -> list[slice]:
    k = max(1, min(threads, n))
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _advance(x, xa, lam, sigma, dt, noise, threads=1):
    def update(sl):
        y = x[sl] - xa
        return x[sl] - lam * dt * y + sigma * math.sqrt(dt) * y * noise[sl]

    if threads <= 1:
        return update(slice(None))
    return np.concatenate(rng.parallel_map(update, _chunks(x.shape[0], threads), threads))


def em_step(
    state: EnsembleState,
    consensus: ConsensusPoint,
    params: SimParams,
    noise: np.ndarray,
    step_index: Optional[int] = None,
    threads: int = 1,
) -> EnsembleState:
    """One explicit Euler-Maruyama step with the consensus held fixed.

    ``noise`` holds standard normals of shape ``(N, d)``.
    """
    x = state.positions
    if noise.shape != x.shape:
        raise PreconditionError(f"noise shape {noise.shape} does not match ensemble {x.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        xn = _advance(x, consensus.x_alpha, params.lam, params.sigma, params.dt, noise, threads)
    if not np.all(np.isfinite(xn)):
        raise IntegrationError("non-finite particle coordinate", step_index)
    return EnsembleState(t=state.t + params.dt, positions=xn)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Ensemble snapshots and consensus path on a uniform time grid.

    Arrays are read-only; ``positions`` has shape ``(M + 1, N, d)``.
    """

    time_grid: np.ndarray
    positions: np.ndarray
    x_alpha: np.ndarray
    log_z: np.ndarray
    ess: np.ndarray
    noise_seed: int
    params: SimParams = field(repr=False)
    record_every: int = 1

    def __post_init__(self):
        for name in ("time_grid", "positions", "x_alpha", "log_z", "ess"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return self.time_grid.size

    @property
    def snapshots(self) -> list[EnsembleState]:
        return [EnsembleState(float(t), x) for t, x in zip(self.time_grid, self.positions)]

    @property
    def consensus_path(self) -> list[ConsensusPoint]:
        return [ConsensusPoint(xa, float(lz), float(e)) for xa, lz, e in zip(self.x_alpha, self.log_z, self.ess)]

    @property
    def final(self) -> EnsembleState:
        return EnsembleState(float(self.time_grid[-1]), self.positions[-1])


def initial_ensemble(params: SimParams, init_law: Optional[InitialLaw] = None, stream: Sequence[int] = ()) -> np.ndarray:
    law = init_law or DEFAULT_INIT
    return law.sample(params.n_particles, params.dim, params.seed, stream)


def simulate(
    cost: CostFunction,
    params: SimParams,
    record_every: int = 1,
    *,
    init_law: Optional[InitialLaw] = None,
    init: Optional[np.ndarray] = None,
    frozen_consensus: Optional[ConsensusTrajectory] = None,
    stream: Sequence[int] = (),
    noise: Optional[NoiseFn] = None,
    threads: int = 1,
) -> TrajectoryRecord:
    """Integrate the particle system from ``t = 0`` to ``params.t_final``.

    Parameters
    ----------
    cost : CostFunction
    params : SimParams
    record_every : int
        Snapshot stride in steps; must divide the step count.
    init_law, init
        Initial law to sample from, or explicit ``(N, d)`` positions.
    frozen_consensus : ConsensusTrajectory, optional
        Replace ``x_alpha`` by a prescribed path (linear dynamics).
    stream : sequence of int
        Substream label, e.g. ``(replica,)``.  Noise for step ``k`` comes from
        ``(seed, (NOISE, *stream), k)``.
    noise : callable, optional
        ``noise(step, shape)`` overriding the counter-based stream.
    threads : int
        Worker threads for the particle update; never changes results.
    """
    if record_every < 1 or params.n_steps % record_every:
        raise PreconditionError(f"record_every={record_every} must divide the step count {params.n_steps}")
    if cost.dim != params.dim:
        raise PreconditionError(f"cost dimension {cost.dim} != params.dim {params.dim}")
    n, d = params.n_particles, params.dim
    x = initial_ensemble(params, init_law, stream) if init is None else np.array(init, dtype=float).reshape(n, d)
    if frozen_consensus is not None and frozen_consensus.dim != d:
        raise PreconditionError("frozen consensus dimension mismatch")

    m = params.n_steps // record_every
    times = np.arange(m + 1) * (record_every * params.dt)
    pos = np.empty((m + 1, n, d))
    xas = np.empty((m + 1, d))
    log_z = np.empty(m + 1)
    ess = np.empty(m + 1)
    degenerate = 0

    def consensus_at(k: int, xk: np.ndarray) -> ConsensusPoint:
        if frozen_consensus is not None:
            return _frozen(frozen_consensus.at(k * params.dt))
        return _checked_consensus(xk, cost, params.alpha, k)

    state = EnsembleState(0.0, x)
    noise_stream = (rng.NOISE, *stream)
    for k in range(params.n_steps + 1):
        cp = consensus_at(k, state.positions)
        if n >= 2 and cp.ess < 2:
            degenerate += 1
        if k % record_every == 0:
            j = k // record_every
            pos[j] = state.positions
            xas[j] = cp.x_alpha
            log_z[j] = cp.log_z
            ess[j] = cp.ess
        if k == params.n_steps:
            break
        xi = noise(k, (n, d)) if noise is not None else rng.normal_block(params.seed, noise_stream, k, (n, d))
        state = em_step(state, cp, params, xi, step_index=k, threads=threads)
        state = EnsembleState(k * params.dt + params.dt, state.positions)
    if degenerate:
        logger.warning("effective sample size below 2 at %d of %d steps", degenerate, params.n_steps + 1)
    return TrajectoryRecord(times, pos, xas, log_z, ess, params.seed, params, record_every)


@dataclass(frozen=True)
class OptimizationResult:
    best_point: np.ndarray
    best_value: float
    variance_history: np.ndarray
    success: Optional[bool]
    trajectory: Optional[TrajectoryRecord] = field(default=None, repr=False)


def ensemble_variance(positions: np.ndarray) -> np.ndarray:
    """``(1/N) sum_i |x_i - mean|^2`` for each snapshot of a ``(..., N, d)`` array."""
    centered = positions - positions.mean(axis=-2, keepdims=True)
    return np.sum(centered**2, axis=(-2, -1)) / positions.shape[-2]


def run_optimize(
    cost: CostFunction,
    params: SimParams,
    success_radius: float = 0.1,
    record_every: int = 1,
    **sim_kwargs,
) -> OptimizationResult:
    """Run the particle system and report the final consensus point as minimizer.

    ``success`` is ``None`` when the cost has no known minimizer (unless the
    radius is infinite, which makes the criterion vacuous).
    """
    traj = simulate(cost, params, record_every, **sim_kwargs)
    best = np.array(traj.x_alpha[-1])
    if math.isinf(success_radius):
        success: Optional[bool] = True
    elif cost.minimizer is None:
        success = None
    else:
        success = bool(np.linalg.norm(best - cost.minimizer) < success_radius)
    return OptimizationResult(
        best_point=best,
        best_value=cost(best),
        variance_history=ensemble_variance(traj.positions),
        success=success,
        trajectory=traj,
    )
