import numpy as np
import pytest
from scipy import stats

from cbomf.errors import ConfigError, PreconditionError
from cbomf.laws import InitialLaw


def test_uniform_and_gaussian_samples():
    u = InitialLaw("uniform", low=-1.0, high=2.0).sample(20000, 2, seed=1)
    assert u.shape == (20000, 2) and u.min() >= -1 and u.max() <= 2
    assert stats.kstest(u[:, 0], stats.uniform(-1, 3).cdf).pvalue > 1e-3
    g = InitialLaw("gaussian", mean=[1.0, -1.0], std=[0.5, 2.0]).sample(20000, 2, seed=1)
    np.testing.assert_allclose(g.mean(axis=0), [1, -1], atol=0.05)
    np.testing.assert_allclose(g.std(axis=0), [0.5, 2.0], rtol=0.03)


def test_sampling_is_keyed_by_seed_and_stream():
    law = InitialLaw()
    assert np.array_equal(law.sample(10, 1, 3, (4,)), law.sample(10, 1, 3, (4,)))
    assert not np.array_equal(law.sample(10, 1, 3, (4,)), law.sample(10, 1, 3, (5,)))


def test_dirac_and_atoms():
    np.testing.assert_array_equal(InitialLaw("dirac", point=[1.0, 2.0]).sample(3, 2, 0), [[1, 2]] * 3)
    x = InitialLaw("atoms", atoms=[-1.0, 1.0]).sample(6, 1, 0)
    np.testing.assert_array_equal(x[:, 0], [-1, 1, -1, 1, -1, 1])
    with pytest.raises(PreconditionError):
        InitialLaw("atoms", atoms=[[1.0, 2.0, 3.0]]).sample(2, 2, 0)


def test_law_validation():
    for bad in (dict(kind="cauchy"), dict(kind="uniform", low=1.0, high=1.0), dict(kind="gaussian", std=-1.0), dict(kind="atoms")):
        with pytest.raises(ConfigError):
            InitialLaw(**bad)


def test_cell_masses_exact():
    edges = np.linspace(-1.0, 1.0, 5)
    np.testing.assert_allclose(InitialLaw("uniform", low=-1.0, high=1.0).cell_masses(edges), [0.25] * 4)
    m = InitialLaw("gaussian", mean=0.0, std=1.0).cell_masses(edges)
    assert m[1] == pytest.approx(stats.norm.cdf(0) - stats.norm.cdf(-0.5), rel=1e-14)
    np.testing.assert_array_equal(InitialLaw("dirac", point=0.1).cell_masses(edges), [0, 0, 1, 0])
    np.testing.assert_array_equal(InitialLaw("atoms", atoms=[-0.9, 1.0]).cell_masses(edges), [0.5, 0, 0, 0.5])
    # mass outside the edges is dropped
    assert InitialLaw("uniform", low=-2.0, high=2.0).cell_masses(edges).sum() == pytest.approx(0.5)
