"""Cost functions, consensus weights and the consensus point.

The consensus point of an ensemble ``x_1..x_N`` is the softmin-weighted mean

    x_alpha = sum_i w_i x_i,   w_i ∝ exp(-alpha E(x_i)),

computed in log space so that large ``alpha * E`` never overflows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .errors import ConfigError, DomainError, PreconditionError

logger = logging.getLogger(__name__)

# pairs closer to the origin than this are skipped by the local-Lipschitz probe
LIPSCHITZ_EXCLUSION = 1e-9
# relative rounding slack when comparing growth ratios with their constants
GROWTH_RTOL = 1e-12


@dataclass(frozen=True)
class GrowthConstants:
    """Constants of the quadratic upper and lower growth conditions.

    ``E(x) - E_lower <= c_u (1 + |x|^2)`` everywhere and
    ``E(x) - E_lower >= c_l |x|^2`` for ``|x| >= m``.
    """

    c_u: float
    c_l: float
    m: float

    def __post_init__(self):
        if not (self.c_u > 0 and self.c_l > 0 and self.m > 0):
            raise ConfigError("growth constants must all be positive")


@dataclass(frozen=True)
class CostFunction:
    """Objective ``E: R^d -> R`` with the metadata the diagnostics rely on.

    ``func`` maps an ``(n, d)`` array to ``n`` values.  Calling the cost
    object accepts either a single point of shape ``(d,)`` (returns a float)
    or a batch of shape ``(n, d)``.
    """

    name: str
    dim: int
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lower_bound: float = 0.0
    known_min: Optional[tuple[np.ndarray, float]] = field(default=None, repr=False)
    growth_constants: Optional[GrowthConstants] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"cost dimension must be positive, got {self.dim}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            if x.shape[0] != self.dim:
                raise PreconditionError(f"{self.name}: expected dimension {self.dim}, got {x.shape[0]}")
            return float(self.func(x[None, :])[0])
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise PreconditionError(f"{self.name}: expected shape (n, {self.dim}), got {x.shape}")
        return np.asarray(self.func(x), dtype=float)

    @property
    def minimizer(self) -> Optional[np.ndarray]:
        return None if self.known_min is None else np.asarray(self.known_min[0], dtype=float)


def _center(dim: int, center) -> np.ndarray:
    if center is None:
        return np.zeros(dim)
    c = np.broadcast_to(np.asarray(center, dtype=float), (dim,)).copy()
    return c


def quadratic(dim: int = 1, center=None) -> CostFunction:
    """``|x - x*|^2 / 2``."""
    c = _center(dim, center)
    r2 = float(c @ c)
    return CostFunction(
        name="quadratic",
        dim=dim,
        func=lambda x: 0.5 * np.sum((x - c) ** 2, axis=1),
        lower_bound=0.0,
        known_min=(c, 0.0),
        # |x-c|^2/2 <= |x|^2 + |c|^2 ; for |x| >= 2|c|, |x-c| >= |x|/2
        growth_constants=GrowthConstants(c_u=max(1.0, r2), c_l=0.125, m=max(2.0 * math.sqrt(r2), 1.0)),
    )


def sphere(dim: int = 1, center=None) -> CostFunction:
    """Shifted sphere ``|x - x*|^2``."""
    c = _center(dim, center)
    r2 = float(c @ c)
    if r2 == 0.0:
        growth = GrowthConstants(c_u=1.0, c_l=1.0, m=1.0)
    else:
        growth = GrowthConstants(c_u=2.0 * max(1.0, r2), c_l=0.25, m=2.0 * math.sqrt(r2))
    return CostFunction(
        name="sphere",
        dim=dim,
        func=lambda x: np.sum((x - c) ** 2, axis=1),
        lower_bound=0.0,
        known_min=(c, 0.0),
        growth_constants=growth,
    )


def rastrigin(dim: int = 2, a: float = 10.0, center=None) -> CostFunction:
    """``sum_k (y_k^2 - a cos(2 pi y_k) + a)`` with ``y = x - x*``.

    Bounded between ``|y|^2`` and ``|y|^2 + 2 a d``.
    """
    c = _center(dim, center)
    growth = None
    if not np.any(c):
        growth = GrowthConstants(c_u=max(1.0, 2.0 * a * dim), c_l=1.0, m=1.0)
    return CostFunction(
        name="rastrigin",
        dim=dim,
        func=lambda x: np.sum((x - c) ** 2 - a * np.cos(2.0 * np.pi * (x - c)) + a, axis=1),
        lower_bound=0.0,
        known_min=(c, 0.0),
        growth_constants=growth,
    )


def ackley(dim: int = 2, a: float = 20.0, b: float = 0.2, c: float = 2.0 * np.pi) -> CostFunction:
    """Ackley function.

    Bounded above by ``a + e``, so it has no quadratic growth at infinity and
    carries no growth constants.  It exists to exercise the assumption
    checker and is not used in mean-field experiments.
    """
    def func(x):
        r = np.sqrt(np.mean(x**2, axis=1))
        return -a * np.exp(-b * r) - np.exp(np.mean(np.cos(c * x), axis=1)) + a + np.e

    return CostFunction(name="ackley", dim=dim, func=func, lower_bound=0.0, known_min=(np.zeros(dim), 0.0))


COST_REGISTRY: dict[str, Callable[..., CostFunction]] = {
    "quadratic": quadratic,
    "sphere": sphere,
    "rastrigin": rastrigin,
    "ackley": ackley,
}


def register_cost(name: str, factory: Callable[..., CostFunction]) -> None:
    COST_REGISTRY[name] = factory


def make_cost(name: str, dim: int, **params) -> CostFunction:
    """Build a registered cost function by name."""
    try:
        factory = COST_REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown cost {name!r}; known: {sorted(COST_REGISTRY)}") from None
    try:
        return factory(dim=dim, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for cost {name!r}: {exc}") from None


@dataclass(frozen=True)
class SimParams:
    """Parameters of one CBO particle simulation."""

    lam: float = 1.0
    sigma: float = 0.5
    alpha: float = 10.0
    dt: float = 1e-2
    t_final: float = 1.0
    n_particles: int = 100
    dim: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if not (self.dt > 0 and self.t_final > 0):
            raise ConfigError("dt and t_final must be positive")
        if self.dt > self.t_final:
            raise ConfigError(f"dt={self.dt} exceeds t_final={self.t_final}")
        ratio = self.t_final / self.dt
        if abs(ratio - round(ratio)) > 1e-12 * ratio:
            raise ConfigError(f"t_final/dt = {ratio!r} is not an integer step count")
        if self.lam * self.dt > 1:
            raise ConfigError(f"lambda*dt = {self.lam * self.dt} > 1 overshoots the consensus point")
        if self.n_particles < 1 or self.dim < 1:
            raise ConfigError("n_particles and dim must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass(frozen=True)
class EnsembleState:
    t: float
    positions: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim != 2:
            raise PreconditionError(f"positions must be (N, d), got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("ensemble positions must be finite")
        object.__setattr__(self, "positions", x)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class ConsensusPoint:
    x_alpha: np.ndarray
    log_z: float
    ess: float


def weights_logsumexp(costs, alpha: float, log_mass=None) -> tuple[np.ndarray, float]:
    """Normalized Gibbs weights ``w_i ∝ m_i exp(-alpha costs_i)``.

    Parameters
    ----------
    costs : array_like, shape (N,)
    alpha : float
        Inverse temperature, ``alpha >= 0``.
    log_mass : array_like, optional
        Log of nonnegative prior masses ``m_i`` (``-inf`` allowed).  Defaults
        to the uniform empirical measure ``m_i = 1/N``.

    Returns
    -------
    weights : ndarray
        Point on the simplex.
    log_z : float
        ``log sum_i m_i exp(-alpha costs_i)``.
    """
    c = np.asarray(costs, dtype=float).ravel()
    if c.size == 0:
        raise DomainError("weights of an empty ensemble are undefined")
    bad = np.flatnonzero(np.isnan(c))
    if bad.size:
        raise DomainError(f"cost is NaN at index {bad[0]}")
    if not np.all(np.isfinite(c)):
        raise DomainError(f"cost is infinite at index {np.flatnonzero(~np.isfinite(c))[0]}")
    if alpha < 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")
    if log_mass is None:
        prior = np.full(c.size, -math.log(c.size))
    else:
        prior = np.asarray(log_mass, dtype=float).ravel()
        if prior.shape != c.shape:
            raise PreconditionError("log_mass and costs differ in length")
    live = prior > -np.inf
    if not np.any(live):
        raise DomainError("all prior masses are zero")
    if alpha == 0:
        a = prior.copy()
        shift = 0.0
    else:
        # subtracting the minimum before scaling keeps E and E + const bitwise equivalent
        base = np.min(c[live])
        a = prior - alpha * (c - base)
        shift = -alpha * base
    top = np.max(a)
    e = np.exp(a - top)
    s = e.sum()
    return e / s, float(shift + top + math.log(s))


def _consensus(x: np.ndarray, costs: np.ndarray, alpha: float, log_mass=None) -> ConsensusPoint:
    w, log_z = weights_logsumexp(costs, alpha, log_mass)
    # a convex combination; clipping only removes rounding outside the hull
    # (and makes the consensus of coincident particles exact)
    live = w > 0
    xa = np.clip(w @ x, x[live].min(axis=0), x[live].max(axis=0))
    return ConsensusPoint(x_alpha=xa, log_z=log_z, ess=float(1.0 / np.sum(w * w)))


def consensus_point(state, cost: CostFunction, alpha: float, *, warn: bool = True) -> ConsensusPoint:
    """Consensus point of an ensemble (an ``EnsembleState`` or an ``(N, d)`` array)."""
    x = state.positions if isinstance(state, EnsembleState) else np.asarray(state, dtype=float)
    if x.ndim != 2 or x.shape[1] != cost.dim:
        raise PreconditionError(f"ensemble shape {x.shape} does not match cost dimension {cost.dim}")
    cp = _consensus(x, cost(x), alpha)
    if warn and x.shape[0] >= 2 and cp.ess < 2:
        logger.warning("consensus weights degenerate: effective sample size %.3f", cp.ess)
    return cp


def laplace_value(costs, alpha: float) -> float:
    """``-(1/alpha) log((1/N) sum_i exp(-alpha costs_i))``.

    Lies in ``[min(costs), min(costs) + log(N)/alpha]``.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    c = np.asarray(costs, dtype=float).ravel()
    weights_logsumexp(c, alpha)  # input validation
    base = float(np.min(c))
    # the minimizer contributes exp(0) = 1, so s lies in [1, N] and both
    # logs are exact enough that the excess never leaves [0, log N / alpha]
    s = float(np.sum(np.exp(-alpha * (c - base))))
    log_n = math.log(c.size)
    excess = min(max((log_n - math.log(s)) / alpha, 0.0), log_n / alpha)
    return base + excess


@dataclass(frozen=True)
class ConsensusTrajectory:
    """A prescribed consensus path ``t -> b_t`` sampled on a time grid.

    Between grid times the path is interpolated linearly per component.
    """

    time_grid: np.ndarray
    b_path: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.time_grid, dtype=float)
        b = np.asarray(self.b_path, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if t.ndim != 1 or b.shape[0] != t.size:
            raise PreconditionError("time grid and consensus path lengths differ")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(b))):
            raise DomainError("consensus path must be finite")
        object.__setattr__(self, "time_grid", t)
        object.__setattr__(self, "b_path", b)

    @classmethod
    def constant(cls, b, t_final: float) -> "ConsensusTrajectory":
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return cls(np.array([0.0, t_final]), np.vstack([b, b]))

    @property
    def dim(self) -> int:
        return self.b_path.shape[1]

    def at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.time_grid, self.b_path[:, k]) for k in range(self.dim)])


@dataclass
class AssumptionReport:
    """Outcome of probing the growth and regularity conditions on samples.

    ``lipschitz_estimate`` is an empirical lower estimate of the local
    Lipschitz constant; no finite probe certifies the true one.
    """

    cost_name: str
    n_samples: int
    box_radius: float
    min_value: float
    lipschitz_estimate: float
    cu_ratio_max: float
    cl_ratio_min: float
    n_far: int
    status: dict[str, str]

    @property
    def passed(self) -> bool:
        return all(s == "pass" for s in self.status.values())


def check_assumptions(cost: CostFunction, box_radius: float, n_samples: int, rng_seed: int = 0) -> AssumptionReport:
    """Probe the three cost conditions on uniform samples in ``[-R, R]^d``."""
    if not box_radius > 0:
        raise DomainError("box_radius must be positive")
    if n_samples < 2:
        raise DomainError("need at least two samples")
    g = rng.generator(rng_seed, (rng.PROBE,))
    x = g.uniform(-box_radius, box_radius, size=(n_samples, cost.dim))
    y = g.uniform(-box_radius, box_radius, size=(n_samples, cost.dim))
    ex, ey = cost(x), cost(y)
    nx, ny = np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)
    denom = (nx + ny) * np.linalg.norm(x - y, axis=1)
    keep = (nx + ny >= LIPSCHITZ_EXCLUSION) & (denom > 0)
    lip = float(np.max(np.abs(ex - ey)[keep] / denom[keep])) if np.any(keep) else float("nan")

    vals = np.concatenate([ex, ey])
    norms = np.concatenate([nx, ny])
    excess = vals - cost.lower_bound
    min_value = float(vals.min())
    cu_ratio = float(np.max(excess / (1.0 + norms**2)))

    status = {
        "bounded_below": "pass" if min_value >= cost.lower_bound else "fail",
        "local_lipschitz": "pass" if np.isfinite(lip) else "untestable",
    }
    gc = cost.growth_constants
    if gc is None:
        status["upper_growth"] = "untestable"
        status["lower_growth"] = "untestable"
        cl_ratio, n_far = float("nan"), 0
    else:
        status["upper_growth"] = "pass" if cu_ratio <= gc.c_u * (1 + GROWTH_RTOL) else "fail"
        far = norms >= gc.m
        n_far = int(far.sum())
        if n_far == 0:
            cl_ratio = float("nan")
            status["lower_growth"] = "untestable"
        else:
            cl_ratio = float(np.min(excess[far] / norms[far] ** 2))
            status["lower_growth"] = "pass" if cl_ratio >= gc.c_l * (1 - GROWTH_RTOL) else "fail"
    return AssumptionReport(
        cost_name=cost.name,
        n_samples=n_samples,
        box_radius=box_radius,
        min_value=min_value,
        lipschitz_estimate=lip,
        cu_ratio_max=cu_ratio,
        cl_ratio_min=cl_ratio,
        n_far=n_far,
        status=status,
    )
