"""Diagnostics of the large-particle limit of the CBO system.

* the weak-form residual ``F_phi`` of the mean-field equation evaluated on an
  empirical trajectory, and its decay in ``N``;
* moment and consensus-point bounds;
* second-moment increment probes;
* a Picard solver for the McKean (mean-field) dynamics, which freezes the
  consensus path, solves the resulting linear SDE on a large sample cloud,
  and re-extracts the path until it is a fixed point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import rng
from .cbo import TrajectoryRecord, simulate
from .core import ConsensusTrajectory, CostFunction, SimParams, _consensus, weights_logsumexp
from .errors import DomainError, PicardConvergenceError, PreconditionError
from .laws import InitialLaw
from .metrics import w2_1d, w2_sliced

logger = logging.getLogger(__name__)

__all__ = [
    "ConsensusTrajectory",
    "TestFunction",
    "FphiResult",
    "fphi_residual",
    "fphi_scaling_experiment",
    "moment_diagnostics",
    "xalpha_bound_check",
    "increment_probe",
    "mckean_picard",
    "w2_convergence",
]

PICARD_STREAM = 5


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported C^2 bump ``(1 - |x-c|^2/r^2)^3`` on the ball ``|x-c| < r``."""

    __test__ = False  # not a pytest class

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not self.radius > 0:
            raise DomainError("test function radius must be positive")

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        y = x - self.center
        s = np.sum(y * y, axis=-1) / self.radius**2
        inside = s < 1.0
        return y, np.where(inside, 1.0 - s, 0.0)

    def eval(self, x) -> np.ndarray:
        _, u = self._parts(x)
        return u**3

    def gradient(self, x) -> np.ndarray:
        y, u = self._parts(x)
        return (-6.0 / self.radius**2) * (u**2)[..., None] * y

    def hessian_diag(self, x) -> np.ndarray:
        y, u = self._parts(x)
        r2 = self.radius**2
        return (-6.0 / r2) * (u**2)[..., None] + (24.0 / r2**2) * u[..., None] * y * y


@dataclass(frozen=True)
class FphiResult:
    """Weak-form residual and its parts.

    ``value = (phi_final - phi_initial) + drift - diffusion``.
    """

    value: float
    phi_final: float
    phi_initial: float
    drift: float
    diffusion: float

    @property
    def boundary(self) -> float:
        return self.phi_final - self.phi_initial


def fphi_residual(traj: TrajectoryRecord, cost: CostFunction, alpha: float, phi: TestFunction) -> FphiResult:
    """Evaluate ``F_phi`` on the empirical measure of a recorded trajectory.

    Ensemble averages replace integrals against the measure; time integrals
    use left-endpoint sums on the simulation grid.  ``lam`` and ``sigma`` come
    from ``traj.params``.
    """
    p = traj.params
    if traj.record_every != 1 or traj.time_grid.size != p.n_steps + 1:
        raise PreconditionError("F_phi needs a trajectory recorded at every step")
    xs = traj.positions
    if phi.center.size != xs.shape[-1]:
        raise PreconditionError("test function dimension does not match the trajectory")
    # X_alpha of each left-endpoint measure
    xa = np.stack([_consensus(x, cost(x), alpha).x_alpha for x in xs[:-1]])
    left = xs[:-1]
    y = left - xa[:, None, :]
    drift_terms = np.mean(np.sum(y * phi.gradient(left), axis=-1), axis=-1)
    diff_terms = np.mean(np.sum(y * y * phi.hessian_diag(left), axis=-1), axis=-1)
    drift = p.lam * p.dt * float(np.sum(drift_terms))
    diffusion = 0.5 * p.sigma**2 * p.dt * float(np.sum(diff_terms))
    phi_final = float(np.mean(phi.eval(xs[-1])))
    phi_initial = float(np.mean(phi.eval(xs[0])))
    return FphiResult(
        value=(phi_final - phi_initial) + drift - diffusion,
        phi_final=phi_final,
        phi_initial=phi_initial,
        drift=drift,
        diffusion=diffusion,
    )


@dataclass
class FphiScaling:
    n_list: list[int]
    mean_sq: np.ndarray
    stderr: np.ndarray
    slope: float
    slope_stderr: float
    degenerate: bool
    values: dict[int, np.ndarray] = field(repr=False, default_factory=dict)


def fphi_scaling_experiment(
    cost: CostFunction,
    base_params: SimParams,
    n_list: Sequence[int],
    replicas: int,
    phi: TestFunction,
    *,
    init_law: Optional[InitialLaw] = None,
    threads: int = 1,
) -> FphiScaling:
    """Monte-Carlo estimate of ``E|F_phi(mu^N)|^2`` for each ``N`` and its log-log slope.

    Replica ``r`` at size ``N`` uses substream ``(N, r)`` of ``base_params.seed``.
    With ``sigma = 0`` the residual is pure discretization error, so the fit
    is skipped and ``degenerate`` is set.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise DomainError("n_list must be strictly increasing")
    if replicas < 30:
        raise DomainError("need at least 30 replicas")

    values = {}
    for n in n_list:
        params = replace(base_params, n_particles=n)

        def one(r, params=params, n=n):
            traj = simulate(cost, params, 1, init_law=init_law, stream=(n, r))
            return fphi_residual(traj, cost, params.alpha, phi).value

        values[n] = np.array(rng.parallel_map(one, range(replicas), threads))
    sq = {n: v**2 for n, v in values.items()}
    mean_sq = np.array([sq[n].mean() for n in n_list])
    stderr = np.array([sq[n].std(ddof=1) / math.sqrt(replicas) for n in n_list])
    degenerate = base_params.sigma == 0 or len(n_list) < 2 or not np.all(mean_sq > 0)
    if degenerate:
        slope = slope_se = math.nan
    else:
        fit = stats.linregress(np.log(n_list), np.log(mean_sq))
        slope, slope_se = float(fit.slope), float(fit.stderr)
    return FphiScaling(n_list, mean_sq, stderr, slope, slope_se, degenerate, values)


@dataclass(frozen=True)
class MomentReport:
    m2: float
    m4: float
    xalpha2: float
    xalpha4: float


def moment_series(traj: TrajectoryRecord) -> dict[str, np.ndarray]:
    r2 = np.sum(traj.positions**2, axis=-1)
    xa2 = np.sum(np.asarray(traj.x_alpha) ** 2, axis=-1)
    return {"m2": r2.mean(axis=-1), "m4": (r2**2).mean(axis=-1), "xalpha2": xa2, "xalpha4": xa2**2}


def moment_diagnostics(traj: TrajectoryRecord) -> MomentReport:
    """Suprema over recorded times of ``m2``, ``m4``, ``|x_alpha|^2`` and ``|x_alpha|^4``."""
    s = moment_series(traj)
    return MomentReport(*(float(np.max(s[k])) for k in ("m2", "m4", "xalpha2", "xalpha4")))


@dataclass
class XalphaBoundReport:
    """Per-snapshot check of ``|x_alpha|^2 <= b1 + b2 m2`` and of the hull bound."""

    time_grid: np.ndarray
    xalpha2: np.ndarray
    m2: np.ndarray
    bound: np.ndarray
    hull: np.ndarray
    passes_bound: np.ndarray
    passes_hull: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.passes_bound) and np.all(self.passes_hull))

    @property
    def ratio(self) -> np.ndarray:
        """``|x_alpha|^2 / (1 + m2)``, a scale-free view of the bound."""
        return self.xalpha2 / (1.0 + self.m2)


def xalpha_bound_check(traj: TrajectoryRecord, b1: float, b2: float) -> XalphaBoundReport:
    s = moment_series(traj)
    r2 = np.sum(traj.positions**2, axis=-1)
    hull = r2.max(axis=-1)
    bound = b1 + b2 * s["m2"]
    slack = 1e-12 * np.maximum(1.0, hull)
    return XalphaBoundReport(
        time_grid=np.asarray(traj.time_grid),
        xalpha2=s["xalpha2"],
        m2=s["m2"],
        bound=bound,
        hull=hull,
        passes_bound=s["xalpha2"] <= bound + slack,
        passes_hull=s["xalpha2"] <= hull + slack,
    )


@dataclass
class IncrementReport:
    """``E|X_{t+delta} - X_t|^2`` at a fixed probe time.

    ``c_fit`` is the smallest ``C`` with ``E <= C (delta^1/2 + delta)`` on all
    probed deltas; ``exponent`` is the log-log slope of the estimates, ``~1``
    for noise-driven and ``~2`` for drift-dominated increments.
    ``theory_constant`` evaluates the a-priori constant built from the
    empirical moment level ``moment_constant``.
    """

    probe_time: float
    deltas: np.ndarray
    mean_sq: np.ndarray
    stderr: np.ndarray
    c_fit: float
    exponent: float
    regime: str
    moment_constant: float
    theory_constant: float


def increment_probe(
    cost: CostFunction,
    params: SimParams,
    delta_list: Sequence[float],
    replicas: int,
    *,
    probe_time: Optional[float] = None,
    init_law: Optional[InitialLaw] = None,
    init: Optional[np.ndarray] = None,
    frozen_consensus: Optional[ConsensusTrajectory] = None,
    threads: int = 1,
) -> IncrementReport:
    """Estimate second-moment increments over replicas and (exchangeable) particles."""
    t_probe = params.t_final / 2 if probe_time is None else float(probe_time)
    k0 = int(round(t_probe / params.dt))
    if abs(k0 * params.dt - t_probe) > 1e-9 * max(1.0, t_probe):
        raise PreconditionError("probe time must lie on the simulation grid")
    steps = []
    for delta in delta_list:
        j = int(round(delta / params.dt))
        if j < 1 or abs(j * params.dt - delta) > 1e-9 * delta:
            raise PreconditionError(f"delta={delta} is not a positive multiple of dt")
        steps.append(j)
    if k0 + max(steps) > params.n_steps:
        raise PreconditionError("probe time plus the largest delta exceeds t_final")

    def one(r):
        traj = simulate(cost, params, 1, init_law=init_law, init=init, frozen_consensus=frozen_consensus, stream=(r,))
        x0 = traj.positions[k0]
        inc = [np.mean(np.sum((traj.positions[k0 + j] - x0) ** 2, axis=-1)) for j in steps]
        ms = moment_series(traj)
        return np.array(inc), ms

    out = rng.parallel_map(one, range(replicas), threads)
    incs = np.array([o[0] for o in out])
    mean_sq = incs.mean(axis=0)
    stderr = incs.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.full(len(steps), math.nan)
    deltas = np.array(steps) * params.dt

    c_fit = float(np.max(mean_sq / (np.sqrt(deltas) + deltas)))
    if np.all(mean_sq == 0):
        exponent, regime = math.nan, "static"
    elif np.all(mean_sq > 0) and len(deltas) > 1:
        exponent = float(stats.linregress(np.log(deltas), np.log(mean_sq)).slope)
        regime = "drift-dominated" if exponent > 1.5 else "diffusive"
    else:
        exponent, regime = math.nan, "mixed"

    # sup_t E[.] with expectations over replicas
    mean_series = {k: np.mean([o[1][k] for o in out], axis=0) for k in ("m2", "m4", "xalpha2", "xalpha4")}
    k_const = float(np.max(mean_series["m2"] + mean_series["m4"]) + np.max(mean_series["xalpha2"] + mean_series["xalpha4"]))
    t = params.t_final
    # (a + b)^2 <= 2a^2 + 2b^2 applied to the drift and martingale parts
    theory = 2.0 * (2.0 * t * k_const * params.lam**2) + 2.0 * params.sigma**2 * math.sqrt(t) * math.sqrt(8.0 * k_const)
    return IncrementReport(t_probe, deltas, mean_sq, stderr, c_fit, exponent, regime, k_const, theory)


def consensus_standard_error(x: np.ndarray, costs: np.ndarray, alpha: float) -> float:
    """Delta-method standard error of the self-normalized consensus estimator."""
    w, _ = weights_logsumexp(costs, alpha)
    xa = w @ x
    return math.sqrt(float(np.sum(w**2 * np.sum((x - xa) ** 2, axis=1))))


@dataclass
class PicardResult:
    consensus: ConsensusTrajectory
    cloud: np.ndarray
    iterations: int
    defects: list[float]
    tolerance: float
    trajectory: TrajectoryRecord = field(repr=False)


def mckean_picard(
    cost: CostFunction,
    params: SimParams,
    n_samples: int = 8192,
    max_iters: int = 50,
    tol: float = 1e-8,
    *,
    init_law: Optional[InitialLaw] = None,
    initial_path: str = "constant",
    noise_floor: bool = True,
    stream: Sequence[int] = (),
    threads: int = 1,
) -> PicardResult:
    """Fixed-point iteration on the consensus path of the McKean dynamics.

    Iteration ``k`` integrates ``n_samples`` copies of the linear SDE driven by
    ``b^(k)`` and sets ``b^(k+1)(t) = x_alpha`` of the cloud at ``t``.  All
    iterations reuse the same Brownian increments, so the defect
    ``sup_t |b^(k+1) - b^(k)|`` is a deterministic function of the path.

    Parameters
    ----------
    initial_path : {"constant", "interacting"}
        ``b^(0)`` is either ``x_alpha`` of the initial cloud at all times, or
        the consensus path of one interacting run on the same cloud.
    noise_floor : bool
        Stop at ``max(tol, 3 * se)`` where ``se`` is the largest standard
        error of the consensus estimator along the path, instead of chasing
        sampling noise.

    Raises
    ------
    PicardConvergenceError
        If the defect is still above tolerance after ``max_iters`` iterations.
    """
    if n_samples < 1000:
        raise DomainError("the Picard reference needs at least 1000 samples")
    if not tol > 0:
        raise DomainError("tol must be positive")
    p = replace(params, n_particles=n_samples)
    stream = (PICARD_STREAM, *stream)
    x0 = (init_law or InitialLaw()).sample(n_samples, p.dim, p.seed, stream)
    grid = np.arange(p.n_steps + 1) * p.dt
    if initial_path == "constant":
        b0 = _consensus(x0, cost(x0), p.alpha).x_alpha
        b = np.tile(b0, (grid.size, 1))
    elif initial_path == "interacting":
        b = np.array(simulate(cost, p, 1, init=x0, stream=stream, threads=threads).x_alpha)
    else:
        raise DomainError(f"unknown initial path {initial_path!r}")

    defects: list[float] = []
    eff_tol = tol
    for it in range(1, max_iters + 1):
        traj = simulate(cost, p, 1, init=x0, frozen_consensus=ConsensusTrajectory(grid, b), stream=stream, threads=threads)
        xs = traj.positions
        costs = [cost(x) for x in xs]
        b_new = np.stack([_consensus(x, c, p.alpha).x_alpha for x, c in zip(xs, costs)])
        defect = float(np.max(np.linalg.norm(b_new - b, axis=1)))
        defects.append(defect)
        if noise_floor:
            se = max(consensus_standard_error(x, c, p.alpha) for x, c in zip(xs, costs))
            eff_tol = max(tol, 3.0 * se)
        if len(defects) >= 3 and defects[-1] > defects[-2] and p.t_final <= 1:
            logger.warning("Picard defect increased at iteration %d: %.3e > %.3e", it, defects[-1], defects[-2])
        b = b_new
        if defect < eff_tol:
            path = ConsensusTrajectory(grid, b)
            return PicardResult(path, np.array(xs[-1]), it, defects, eff_tol, traj)
    raise PicardConvergenceError("Picard iteration did not converge", defects[-1], max_iters)


def _w2(a: np.ndarray, b: np.ndarray, seed: int = 0) -> float:
    if a.shape[1] == 1:
        return w2_1d(a, b)
    return w2_sliced(a, b, n_projections=128, seed=seed)


@dataclass
class ConvergenceResult:
    """Distances of finite-``N`` final clouds to a mean-field reference.

    ``rows`` holds ``(N, seed, w2)``; ``cross_check`` is the distance between
    the Picard cloud and a direct interacting run of the reference size
    (``nan`` when the reference is itself a direct run).
    """

    rows: list[tuple[int, int, float]]
    reference: str
    reference_n: int
    cross_check: float
    picard_iterations: Optional[int] = None

    def medians(self) -> dict[int, float]:
        by_n: dict[int, list[float]] = {}
        for n, _, w in self.rows:
            by_n.setdefault(n, []).append(w)
        return {n: float(np.median(v)) for n, v in sorted(by_n.items())}


def w2_convergence(
    cost: CostFunction,
    params: SimParams,
    n_list: Sequence[int],
    seeds: Sequence[int],
    *,
    reference: str = "picard",
    reference_n: int = 8192,
    reference_seed: Optional[int] = None,
    init_law: Optional[InitialLaw] = None,
    picard_iters: int = 100,
    picard_tol: float = 1e-8,
    threads: int = 1,
) -> ConvergenceResult:
    """W2 between final empirical measures at each ``N`` and a reference law.

    A run of size ``N`` with seed ``s`` uses ``SimParams.seed = s`` and
    substream ``(N,)``; a direct reference run is the same construction at
    ``reference_n`` with ``reference_seed``, so a finite run that coincides
    with it has distance zero.
    """
    ref_seed = params.seed if reference_seed is None else reference_seed
    ref_params = replace(params, n_particles=reference_n, seed=ref_seed)

    def direct(n: int, seed: int) -> np.ndarray:
        p = replace(params, n_particles=n, seed=seed)
        return np.array(simulate(cost, p, p.n_steps, init_law=init_law, stream=(n,), threads=1).positions[-1])

    iterations = None
    if reference == "picard":
        pr = mckean_picard(cost, ref_params, reference_n, picard_iters, picard_tol, init_law=init_law, threads=threads)
        ref_cloud, iterations = pr.cloud, pr.iterations
        cross = _w2(ref_cloud, direct(reference_n, ref_seed))
    elif reference == "large_n":
        ref_cloud = direct(reference_n, ref_seed)
        cross = math.nan
    else:
        raise DomainError(f"unknown reference {reference!r}; expected 'picard' or 'large_n'")

    jobs = [(n, s) for n in n_list for s in seeds]
    dists = rng.parallel_map(lambda job: _w2(direct(*job), ref_cloud), jobs, threads)
    rows = [(n, s, float(w)) for (n, s), w in zip(jobs, dists)]
    return ConvergenceResult(rows, reference, reference_n, float(cross), iterations)
