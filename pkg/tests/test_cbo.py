import math

import numpy as np
import pytest

from cbomf.cbo import em_step, ensemble_variance, run_optimize, simulate
from cbomf.core import ConsensusPoint, ConsensusTrajectory, CostFunction, EnsembleState, SimParams, consensus_point, make_cost
from cbomf.errors import IntegrationError, PreconditionError
from cbomf.laws import InitialLaw


def frozen(b):
    return ConsensusPoint(np.atleast_1d(np.asarray(b, dtype=float)), math.nan, math.nan)


def test_single_euler_step():
    p = SimParams(lam=1.0, sigma=0.0, dt=0.1, t_final=1.0, n_particles=1)
    out = em_step(EnsembleState(0.0, np.array([[1.0]])), frozen(0.0), p, np.zeros((1, 1)))
    assert out.positions[0, 0] == pytest.approx(0.9, abs=1e-15)
    assert out.t == pytest.approx(0.1)


def test_em_step_formula_componentwise(rng):
    p = SimParams(lam=0.7, sigma=1.3, dt=0.01, t_final=1.0, n_particles=4, dim=3)
    x = rng.normal(size=(4, 3))
    xi = rng.normal(size=(4, 3))
    b = np.array([0.5, -1.0, 2.0])
    out = em_step(EnsembleState(0.0, x), frozen(b), p, xi).positions
    np.testing.assert_allclose(out, x - 0.7 * 0.01 * (x - b) + 1.3 * 0.1 * (x - b) * xi, rtol=1e-14)


def test_particle_at_consensus_ignores_noise():
    p = SimParams(sigma=5.0, n_particles=2, dim=2)
    x = np.array([[1.0, 2.0], [1.0, 2.0]])
    out = em_step(EnsembleState(0.0, x), frozen([1.0, 2.0]), p, np.full((2, 2), 40.0))
    np.testing.assert_array_equal(out.positions, x)


def test_em_step_errors():
    p = SimParams(sigma=1e3, dt=0.5, t_final=1.0, lam=1.0, n_particles=1)
    with pytest.raises(PreconditionError):
        em_step(EnsembleState(0.0, np.zeros((1, 1))), frozen(0.0), p, np.zeros((2, 1)))
    with pytest.raises(IntegrationError) as exc:
        em_step(EnsembleState(0.0, np.array([[1e300]])), frozen(-1e300), p, np.full((1, 1), 1e10), step_index=17)
    assert exc.value.step == 17


@pytest.mark.parametrize("dt", [0.1, 0.01, 0.001])
def test_euler_ode_closed_form(dt):
    cost = make_cost("quadratic", 1)
    p = SimParams(lam=1.0, sigma=0.0, dt=dt, t_final=1.0, n_particles=1)
    traj = simulate(cost, p, init=np.array([[1.0]]), frozen_consensus=ConsensusTrajectory.constant([0.0], 1.0))
    x_t = traj.positions[-1, 0, 0]
    assert x_t == pytest.approx((1 - dt) ** p.n_steps, rel=1e-12)
    assert abs(x_t - math.exp(-1.0)) <= dt  # first order in dt


def test_single_particle_stays_put():
    cost = make_cost("rastrigin", 2)
    p = SimParams(sigma=2.0, n_particles=1, dim=2, seed=3)
    traj = simulate(cost, p)
    assert np.all(traj.positions == traj.positions[0])


def test_symmetric_pair_contracts_symmetrically():
    cost = make_cost("quadratic", 1)
    p = SimParams(lam=1.0, sigma=0.0, alpha=30.0, dt=0.01, t_final=2.0, n_particles=2)
    traj = simulate(cost, p, init=np.array([[-1.5], [1.5]]))
    x = traj.positions[:, :, 0]
    assert np.max(np.abs(x[:, 0] + x[:, 1])) <= 1e-12
    assert np.all(np.diff(np.abs(x[:, 1])) < 0)


def test_trajectory_record_layout():
    cost = make_cost("quadratic", 2)
    p = SimParams(n_particles=7, dim=2, dt=0.01, t_final=0.5)
    traj = simulate(cost, p, record_every=5)
    assert traj.positions.shape == (11, 7, 2)
    np.testing.assert_allclose(traj.time_grid, np.arange(11) * 0.05)
    snaps = traj.snapshots
    assert snaps[3].t == traj.time_grid[3]
    # the stored consensus is that of the stored snapshot
    np.testing.assert_array_equal(traj.consensus_path[4].x_alpha, consensus_point(snaps[4], cost, p.alpha).x_alpha)
    with pytest.raises(ValueError):
        traj.positions[0, 0, 0] = 1.0
    with pytest.raises(PreconditionError):
        simulate(cost, p, record_every=3)


def test_deterministic_and_thread_independent():
    cost = make_cost("rastrigin", 3)
    p = SimParams(n_particles=501, dim=3, seed=99, t_final=0.5)
    a = simulate(cost, p, threads=1)
    b = simulate(cost, p, threads=8)
    c = simulate(cost, p, threads=3)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.positions, c.positions)
    assert np.array_equal(a.x_alpha, b.x_alpha)
    d = simulate(cost, SimParams(n_particles=501, dim=3, seed=100, t_final=0.5))
    assert not np.array_equal(a.positions, d.positions)


def test_streams_are_independent_replicas():
    cost = make_cost("quadratic", 1)
    p = SimParams(n_particles=10)
    assert not np.array_equal(simulate(cost, p, stream=(0,)).positions, simulate(cost, p, stream=(1,)).positions)


def test_coincident_particles_stay_coincident():
    cost = make_cost("rastrigin", 2)
    p = SimParams(sigma=1.0, n_particles=5, dim=2)
    traj = simulate(cost, p, init=np.tile([0.3, -0.7], (5, 1)))
    assert np.all(traj.positions == np.array([0.3, -0.7]))


def test_driftless_noise_is_a_martingale():
    # lambda = 0 and consensus frozen at 0: each coordinate is an Euler GBM chain
    cost = make_cost("quadratic", 2)
    p = SimParams(lam=0.0, sigma=0.5, dt=0.01, t_final=1.0, n_particles=20_000, dim=2, seed=5)
    x0 = np.tile([1.0, -2.0], (p.n_particles, 1))
    traj = simulate(cost, p, record_every=100, init=x0, frozen_consensus=ConsensusTrajectory.constant([0.0, 0.0], 1.0))
    x_t = traj.positions[-1]
    se = x_t.std(axis=0, ddof=1) / math.sqrt(p.n_particles)
    assert np.all(np.abs(x_t.mean(axis=0) - x0[0]) <= 3 * se)
    # separate coordinates see separate noise
    assert abs(np.corrcoef(x_t[:, 0], x_t[:, 1])[0, 1]) < 0.05


def test_noiseless_diameter_never_grows(rng):
    cost = make_cost("rastrigin", 2)
    p = SimParams(lam=1.0, sigma=0.0, alpha=5.0, dt=0.05, t_final=3.0, n_particles=30, dim=2)
    traj = simulate(cost, p, init=rng.uniform(-3, 3, (30, 2)))
    x = traj.positions
    diam = [np.max(np.linalg.norm(s[:, None] - s[None], axis=-1)) for s in x]
    assert np.all(np.diff(diam) <= 1e-12)


def test_cost_overflow_is_an_integration_error():
    cost = make_cost("quadratic", 1)
    p = SimParams(lam=1.0, sigma=1000.0, t_final=20.0, n_particles=10)
    with pytest.raises(IntegrationError):
        simulate(cost, p)


def test_initial_law_default_and_custom():
    cost = make_cost("quadratic", 2)
    p = SimParams(n_particles=4000, dim=2, t_final=0.01)
    x0 = simulate(cost, p).positions[0]
    assert x0.min() >= -3 and x0.max() <= 3
    g = simulate(cost, p, init_law=InitialLaw("gaussian", mean=2.0, std=0.5)).positions[0]
    assert abs(g.mean() - 2.0) < 0.05


def test_consensus_formation_quadratic():
    cost = make_cost("quadratic", 2)
    p = SimParams(lam=1.0, sigma=0.2, alpha=50.0, dt=0.01, t_final=10.0, n_particles=200, dim=2, seed=0)
    res = run_optimize(cost, p, success_radius=0.1, record_every=10)
    assert res.success
    assert np.linalg.norm(res.best_point) < 0.1
    assert res.variance_history[-1] < 1e-3
    assert np.all(res.variance_history >= 0)
    assert res.best_value == pytest.approx(cost(res.best_point))


def test_optimize_single_particle_and_radius():
    cost = make_cost("quadratic", 2, center=[1.0, 1.0])
    p = SimParams(n_particles=1, dim=2, seed=4)
    res = run_optimize(cost, p, success_radius=math.inf)
    assert res.success is True
    np.testing.assert_array_equal(res.best_point, res.trajectory.positions[0, 0])


def test_success_none_without_known_minimizer():
    cost = CostFunction("anon", 1, lambda x: np.sum(x**2, axis=1), 0.0)
    assert run_optimize(cost, SimParams(n_particles=5)).success is None


def test_ensemble_variance():
    x = np.array([[[0.0, 0.0], [2.0, 0.0]], [[1.0, 1.0], [1.0, 1.0]]])
    np.testing.assert_allclose(ensemble_variance(x), [1.0, 0.0])
