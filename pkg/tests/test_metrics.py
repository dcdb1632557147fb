import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cbomf.errors import DomainError, PreconditionError
from cbomf.metrics import histogram_l1, histogram_masses, moments, w2_1d, w2_assignment, w2_sliced
from cbomf.pde1d import GridDensity

coord = st.floats(-100, 100, allow_nan=False)


def cloud(n, d=1):
    return arrays(float, (n, d), elements=coord)


# --- oracles -------------------------------------------------------------------


def test_w2_1d_hand_values():
    assert w2_1d([0.0], [1.0]) == 1.0
    assert w2_1d([0.0, 2.0], [1.0, 3.0]) == 1.0
    assert w2_1d([3.0, 1.0, 2.0], [1.0, 2.0, 3.0]) == 0.0


def test_w2_1d_unequal_sizes_equal_lcm_replication(rng):
    a, b = rng.normal(size=4), rng.normal(size=6)
    rep = w2_1d(np.repeat(np.sort(a), 3), np.repeat(np.sort(b), 2))
    assert w2_1d(a, b) == pytest.approx(rep, abs=1e-12)


def test_w2_assignment_hand_values(rng):
    assert w2_assignment([[0.0, 0.0]], [[3.0, 4.0]]) == 5.0
    x = rng.normal(size=(40, 3))
    assert w2_assignment(x, x[rng.permutation(40)]) == 0.0


def test_assignment_matches_sorting_on_random_1d_pairs(rng):
    for _ in range(100):
        a, b = rng.normal(size=128), rng.normal(1.0, 2.0, size=128)
        assert abs(w2_assignment(a, b) - w2_1d(a, b)) <= 1e-9


def test_sliced_in_1d_is_exact(rng):
    a, b = rng.normal(size=50), rng.normal(size=50)
    assert w2_sliced(a, b, 7, seed=3) == w2_1d(a, b)
    assert w2_sliced(a, a) == 0.0


def test_sliced_shift_against_assignment(rng):
    d, n = 2, 4096
    v = np.array([3.0, -1.5])
    a = rng.normal(size=(n, d))
    b = rng.normal(size=(n, d)) + v
    sliced = w2_sliced(a, b, n_projections=256, seed=1)
    exact = w2_assignment(a[:512], b[:512])
    # a random direction sees |v|^2 / d of the squared shift on average
    assert sliced * math.sqrt(d) == pytest.approx(exact, rel=0.15)
    assert w2_sliced(a, b, 32, seed=5) == w2_sliced(a, b, 32, seed=5)


def test_input_validation():
    with pytest.raises(PreconditionError):
        w2_1d(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(PreconditionError):
        w2_assignment(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(PreconditionError):
        w2_assignment(np.zeros((3000, 1)), np.zeros((3000, 1)))
    with pytest.raises(PreconditionError):
        w2_1d([], [1.0])
    with pytest.raises(DomainError):
        w2_1d([np.nan], [1.0])
    with pytest.raises(DomainError):
        w2_sliced(np.zeros((2, 2)), np.zeros((2, 2)), n_projections=0)
    with pytest.raises(DomainError):
        moments([1.0], orders=(3,))


# --- metric axioms ----------------------------------------------------------------


@given(st.data())
def test_axioms_1d(data):
    n = data.draw(st.integers(1, 20))
    a, b = data.draw(cloud(n)), data.draw(cloud(n))
    assert w2_1d(a, b) == w2_1d(b, a)
    assert w2_1d(a, b) >= 0
    assert w2_1d(a, a[::-1]) == 0


@given(st.data())
def test_axioms_assignment(data):
    n, d = data.draw(st.integers(1, 12)), data.draw(st.integers(1, 3))
    a, b = data.draw(cloud(n, d)), data.draw(cloud(n, d))
    assert w2_assignment(a, b) == pytest.approx(w2_assignment(b, a), abs=1e-9)
    assert w2_assignment(a, b) >= 0


@given(arrays(float, st.tuples(st.integers(1, 15), st.integers(1, 3)), elements=st.integers(-3, 3).map(float)))
def test_zero_only_for_same_multiset(a):
    b = a.copy()
    b[0, 0] += 1.0
    assert w2_assignment(a, a[::-1]) == 0.0
    assert w2_assignment(a, b) > 0.0


def test_triangle_inequality(rng):
    for _ in range(500):
        n = int(rng.integers(1, 30))
        a, b, c = (rng.normal(size=(n, 1)) * rng.uniform(0.1, 5) for _ in range(3))
        assert w2_1d(a, c) <= w2_1d(a, b) + w2_1d(b, c) + 1e-9
        a2, b2, c2 = (rng.normal(size=(min(n, 12), 2)) for _ in range(3))
        assert w2_assignment(a2, c2) <= w2_assignment(a2, b2) + w2_assignment(b2, c2) + 1e-9


@given(st.data())
def test_translation_and_scaling(data):
    n, d = data.draw(st.integers(1, 10)), data.draw(st.integers(1, 2))
    a, b = data.draw(cloud(n, d)), data.draw(cloud(n, d))
    v = data.draw(arrays(float, (d,), elements=st.floats(-10, 10)))
    c = data.draw(st.floats(-5, 5))
    base = w2_assignment(a, b)
    assert w2_assignment(a + v, b + v) == pytest.approx(base, abs=1e-9 * max(1, base))
    assert w2_assignment(c * a, c * b) == pytest.approx(abs(c) * base, abs=1e-9 * max(1, abs(c) * base))
    assert w2_assignment(a, a + v) == pytest.approx(float(np.linalg.norm(v)), abs=1e-9)
    if d == 1:
        assert w2_1d(a + v, b + v) == pytest.approx(w2_1d(a, b), abs=1e-9 * max(1, base))
        assert w2_1d(a, a + v) == pytest.approx(abs(v[0]), abs=1e-9)


# --- histograms and moments ---------------------------------------------------------


def grid(masses, lo=0.0, hi=None):
    masses = np.asarray(masses, dtype=float)
    return GridDensity(lo, float(len(masses)) if hi is None else hi, len(masses), masses)


def test_histogram_oracles():
    g = grid([0.25, 0.5, 0.25, 0.0])
    assert histogram_l1(g.centers[[0, 1, 1, 2]], g) == 0.0
    assert histogram_l1([3.5, 3.2], g) == 2.0
    half = grid([0.5, 0.5, 0.0, 0.0])
    # half the sample mass sits where the density has mass
    assert histogram_l1([1.5, 2.5], half) == pytest.approx(1.0)


def test_histogram_out_of_range_goes_to_boundary(caplog):
    g = grid([0.5, 0.5])
    p, outside = histogram_masses([-10.0, 1.5, 99.0, 0.5], g)
    np.testing.assert_allclose(p, [0.5, 0.5])
    assert outside == 0.5
    assert "outside" in caplog.text


def test_moments_oracles():
    assert moments(np.zeros((5, 2))) == {1: 0.0, 2: 0.0, 4: 0.0}
    assert moments([-1.0, 1.0]) == {1: 1.0, 2: 1.0, 4: 1.0}
    u = (np.arange(1_000_000) + 0.5) / 1_000_000
    assert moments(u, orders=(2,))[2] == pytest.approx(1 / 3, abs=1e-3)
    assert moments([[3.0, 4.0]], orders=(1, 4)) == {1: 5.0, 4: 625.0}
